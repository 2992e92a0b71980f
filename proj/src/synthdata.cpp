#include "disent/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>

namespace disent {

void FactorTuple::validate() const {
  if (glyph_class >= kGlyphClasses)
    throw DomainError("glyph class " + std::to_string(glyph_class) +
                      " out of range");
  if (texture_class >= kTextureClasses)
    throw DomainError("texture class " + std::to_string(texture_class) +
                      " out of range");
  if (location >= kLocations)
    throw DomainError("location " + std::to_string(location) + " out of range");
}

std::size_t joint_label(const FactorTuple& f) {
  f.validate();
  return 10 * f.glyph_class + f.texture_class;
}

std::size_t factor_cardinality(Factor f) {
  switch (f) {
    case Factor::glyph: return kGlyphClasses;
    case Factor::texture: return kTextureClasses;
    case Factor::location: return kLocations;
  }
  throw std::invalid_argument("unknown factor");
}

std::size_t factor_value(const FactorTuple& f, Factor which) {
  switch (which) {
    case Factor::glyph: return f.glyph_class;
    case Factor::texture: return f.texture_class;
    case Factor::location: return f.location;
  }
  throw std::invalid_argument("unknown factor");
}

std::string to_string(Factor f) {
  switch (f) {
    case Factor::glyph: return "DC";
    case Factor::texture: return "BC";
    case Factor::location: return "DL";
  }
  throw std::invalid_argument("unknown factor");
}

VariantKind variant_kind_from_string(const std::string& s) {
  if (s == "DC-BC") return VariantKind::dc_bc;
  if (s == "DC-DL") return VariantKind::dc_dl;
  if (s == "BC-DL") return VariantKind::bc_dl;
  throw std::invalid_argument("unknown dataset variant: " + s);
}

std::string to_string(VariantKind k) {
  switch (k) {
    case VariantKind::dc_bc: return "DC-BC";
    case VariantKind::dc_dl: return "DC-DL";
    case VariantKind::bc_dl: return "BC-DL";
  }
  throw std::invalid_argument("unknown dataset variant");
}

Factor varied_factor(VariantKind k) {
  switch (k) {
    case VariantKind::dc_bc: return Factor::location;
    case VariantKind::dc_dl: return Factor::texture;
    case VariantKind::bc_dl: return Factor::glyph;
  }
  throw std::invalid_argument("unknown dataset variant");
}

std::pair<Factor, Factor> variant_tasks(VariantKind k) {
  switch (k) {
    case VariantKind::dc_bc: return {Factor::glyph, Factor::texture};
    case VariantKind::dc_dl: return {Factor::glyph, Factor::location};
    case VariantKind::bc_dl: return {Factor::texture, Factor::location};
  }
  throw std::invalid_argument("unknown dataset variant");
}

double Image::mean() const {
  if (pix.empty()) return 0.0;
  double sum = 0.0;
  for (std::uint8_t b : pix) sum += b;
  return sum / (255.0 * static_cast<double>(pix.size()));
}

std::vector<GridPoint> location_grid(std::size_t image_size,
                                     std::size_t glyph_size) {
  if (glyph_size == 0) throw DomainError("location_grid: empty glyph");
  if (glyph_size > image_size)
    throw DomainError("location_grid: glyph " + std::to_string(glyph_size) +
                      " larger than image " + std::to_string(image_size));
  std::size_t m = (glyph_size + 1) / 2;
  if (2 * m > image_size)
    throw DomainError("location_grid: glyph margin exceeds image");
  double span = static_cast<double>(image_size) - 2.0 * static_cast<double>(m);
  std::size_t rows[2] = {m, image_size - m};
  std::vector<GridPoint> grid;
  grid.reserve(8);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 4; ++k) {
      auto cx = static_cast<std::size_t>(
          std::llround(static_cast<double>(m) + span * static_cast<double>(k) / 3.0));
      grid.push_back({cx, rows[r]});
    }
  return grid;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Seg {
  double x0, y0, x1, y1;
};

double seg_dist(double px, double py, const Seg& s) {
  double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  double wx = px - s.x0, wy = py - s.y0;
  double len2 = vx * vx + vy * vy;
  double t =
      len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g,
                double& b) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  double c = v * s;
  double hp = h / 60.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0.0, gg = 0.0, bb = 0.0;
  switch (static_cast<int>(hp)) {
    case 0: rr = c; gg = x; break;
    case 1: rr = x; gg = c; break;
    case 2: gg = c; bb = x; break;
    case 3: gg = x; bb = c; break;
    case 4: rr = x; bb = c; break;
    default: rr = c; bb = x; break;
  }
  double m = v - c;
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

}  // namespace

Image render_glyph(std::size_t glyph_class, Rng rng) {
  if (glyph_class >= kGlyphClasses)
    throw DomainError("glyph class " + std::to_string(glyph_class) +
                      " out of range");
  // seven-segment layout on a 28x28 canvas
  constexpr double X0 = 7, X1 = 21, Y0 = 5, Y1 = 14, Y2 = 23;
  static const Seg base[7] = {
      {X0, Y0, X1, Y0},  // top
      {X1, Y0, X1, Y1},  // upper right
      {X1, Y1, X1, Y2},  // lower right
      {X0, Y2, X1, Y2},  // bottom
      {X0, Y1, X0, Y2},  // lower left
      {X0, Y0, X0, Y1},  // upper left
      {X0, Y1, X1, Y1},  // middle
  };
  static const unsigned lit[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66,
                                   0x6D, 0x7D, 0x07, 0x7F, 0x6F};
  double thick = rng.uniform(2.2, 3.4);
  double inten = rng.uniform(0.78, 1.0);
  double dx = rng.uniform(-1.5, 1.5);
  double dy = rng.uniform(-1.5, 1.5);
  Seg segs[7];
  for (int i = 0; i < 7; ++i)
    segs[i] = {base[i].x0 + dx + rng.uniform(-0.8, 0.8),
               base[i].y0 + dy + rng.uniform(-0.8, 0.8),
               base[i].x1 + dx + rng.uniform(-0.8, 0.8),
               base[i].y1 + dy + rng.uniform(-0.8, 0.8)};

  Image img = Image::blank(kGlyphSize, kGlyphSize, 1);
  for (std::size_t y = 0; y < kGlyphSize; ++y)
    for (std::size_t x = 0; x < kGlyphSize; ++x) {
      double best = 0.0;
      for (int i = 0; i < 7; ++i) {
        if (!((lit[glyph_class] >> i) & 1u)) continue;
        double d = seg_dist(static_cast<double>(x), static_cast<double>(y),
                            segs[i]);
        best = std::max(best, std::clamp(0.5 * thick + 0.5 - d, 0.0, 1.0));
      }
      img.byte(0, y, x) = to_byte(inten * best);
    }
  return img;
}

Image render_texture(std::size_t texture_class, Rng rng) {
  if (texture_class >= kTextureClasses)
    throw DomainError("texture class " + std::to_string(texture_class) +
                      " out of range");
  // distinct cycle counts per class: 3 + (7*class mod 10)
  static const int cyc_base[10] = {3, 10, 7, 4, 11, 8, 5, 12, 9, 6};
  double hue = 36.0 * static_cast<double>(texture_class) + rng.uniform(-8.0, 8.0);
  double sat = rng.uniform(0.55, 0.75);
  double theta =
      kPi / 10.0 * static_cast<double>(texture_class) + rng.uniform(-0.06, 0.06);
  double cycles = cyc_base[texture_class] + rng.uniform(-0.3, 0.3);
  double phase1 = rng.uniform(0.0, 2.0 * kPi);
  double phase2 = rng.uniform(0.0, 2.0 * kPi);
  double ct = std::cos(theta), st = std::sin(theta);
  double f1 = 2.0 * kPi * cycles / static_cast<double>(kImageSize);
  double f2 =
      2.0 * kPi * (0.5 * cycles + 1.0) / static_cast<double>(kImageSize);

  Image img = Image::blank(kImageSize, kImageSize, kImageChannels);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      double fx = static_cast<double>(x), fy = static_cast<double>(y);
      double u = ct * fx + st * fy;
      double w = -st * fx + ct * fy;
      double p = 0.5 + 0.25 * std::sin(f1 * u + phase1) +
                 0.15 * std::sin(f2 * w + phase2);
      double val = 0.35 + 0.55 * std::clamp(p, 0.0, 1.0);
      double r, g, b;
      hsv_to_rgb(hue, sat, val, r, g, b);
      img.byte(0, y, x) = to_byte(r);
      img.byte(1, y, x) = to_byte(g);
      img.byte(2, y, x) = to_byte(b);
    }
  return img;
}

Image composite(const Image& glyph, const Image& texture,
                std::size_t location) {
  if (location >= kLocations)
    throw DomainError("location " + std::to_string(location) + " out of range");
  if (glyph.channels != 1 || glyph.height != glyph.width)
    throw ShapeError("composite: glyph must be a square single-channel mask");
  if (texture.height != texture.width)
    throw ShapeError("composite: texture must be square");
  auto grid = location_grid(texture.width, glyph.width);
  std::size_t m = (glyph.width + 1) / 2;
  std::size_t x0 = grid[location].x - m;
  std::size_t y0 = grid[location].y - m;
  Image out = texture;
  for (std::size_t c = 0; c < texture.channels; ++c)
    for (std::size_t y = 0; y < glyph.height; ++y)
      for (std::size_t x = 0; x < glyph.width; ++x) {
        std::uint8_t& dst = out.byte(c, y0 + y, x0 + x);
        dst = std::max(dst, glyph.byte(0, y, x));
      }
  return out;
}

Image block_downsample(const Image& img, std::size_t factor) {
  if (factor == 0 || img.height % factor != 0 || img.width % factor != 0)
    throw ShapeError("block_downsample: image not divisible by factor");
  Image out = Image::blank(img.height / factor, img.width / factor,
                           img.channels);
  double scale = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) {
        double sum = 0.0;
        for (std::size_t yy = 0; yy < factor; ++yy)
          for (std::size_t xx = 0; xx < factor; ++xx)
            sum += img.byte(c, y * factor + yy, x * factor + xx);
        out.byte(c, y, x) =
            static_cast<std::uint8_t>(std::lround(sum * scale));
      }
  return out;
}

// ---- view-pair sampling ----

namespace {

struct ClassIndex {
  std::vector<std::vector<std::size_t>> by_class;

  ClassIndex(const ImageBank& bank, std::size_t classes, const char* what)
      : by_class(classes) {
    for (std::size_t i = 0; i < bank.images.size(); ++i) {
      if (bank.labels[i] >= classes)
        throw DomainError(std::string(what) + " bank label " +
                          std::to_string(bank.labels[i]) + " out of range");
      by_class[bank.labels[i]].push_back(i);
    }
    for (std::size_t c = 0; c < classes; ++c)
      if (by_class[c].empty())
        throw DomainError(std::string(what) + " bank has no instances of class " +
                          std::to_string(c));
  }
};

struct PairSampler {
  DatasetVariant variant;
  const ImageBank* glyph_bank;
  const ImageBank* texture_bank;
  std::optional<ClassIndex> glyph_index, texture_index;

  PairSampler(const DatasetVariant& v, const RenderSources& src)
      : variant(v), glyph_bank(src.glyphs), texture_bank(src.textures) {
    if (glyph_bank) {
      glyph_bank->validate();
      if (glyph_bank->height != kGlyphSize || glyph_bank->width != kGlyphSize ||
          glyph_bank->channels != 1)
        throw ShapeError("glyph bank must hold 28x28 single-channel masks");
      glyph_index.emplace(*glyph_bank, kGlyphClasses, "glyph");
    }
    if (texture_bank) {
      texture_bank->validate();
      if (texture_bank->height != kImageSize ||
          texture_bank->width != kImageSize ||
          texture_bank->channels != kImageChannels)
        throw ShapeError("texture bank must hold 64x64 RGB images");
      texture_index.emplace(*texture_bank, kTextureClasses, "texture");
    }
  }

  Image render_view(const FactorTuple& f, Rng grng, Rng trng) const {
    Image glyph =
        glyph_bank
            ? glyph_bank->images[pick(*glyph_index, f.glyph_class, grng)]
            : render_glyph(f.glyph_class, grng);
    Image tex =
        texture_bank
            ? texture_bank->images[pick(*texture_index, f.texture_class, trng)]
            : render_texture(f.texture_class, trng);
    return composite(glyph, tex, f.location);
  }

  static std::size_t pick(const ClassIndex& idx, std::size_t cls, Rng& rng) {
    const auto& pool = idx.by_class[cls];
    return pool[rng.uniform_below(pool.size())];
  }

  ViewPair sample(Rng rng) const {
    Factor varied = varied_factor(variant.kind);
    std::size_t shared[3] = {0, 0, 0};
    std::size_t v0 = 0, v1 = 0;
    static const Factor order[3] = {Factor::glyph, Factor::texture,
                                    Factor::location};
    for (std::size_t i = 0; i < 3; ++i) {
      std::size_t card = factor_cardinality(order[i]);
      if (order[i] == varied) {
        v0 = rng.uniform_below(card);
        v1 = rng.uniform_below(card);
      } else {
        shared[i] = rng.uniform_below(card);
      }
    }
    auto build = [&](std::size_t vv) {
      FactorTuple t;
      t.glyph_class = varied == Factor::glyph ? vv : shared[0];
      t.texture_class = varied == Factor::texture ? vv : shared[1];
      t.location = varied == Factor::location ? vv : shared[2];
      return t;
    };
    ViewPair p;
    p.factors0 = build(v0);
    p.factors1 = build(v1);
    p.joint = joint_label(p.factors0);
    p.view0 = render_view(p.factors0, rng.child("g0"), rng.child("t0"));
    p.view1 = render_view(p.factors1, rng.child("g1"), rng.child("t1"));
    return p;
  }
};

}  // namespace

ViewPair sample_view_pair(const DatasetVariant& variant, Rng rng,
                          const RenderSources& src) {
  return PairSampler(variant, src).sample(rng);
}

Dataset generate_dataset(const DatasetVariant& variant, std::uint64_t seed,
                         const RenderSources& src) {
  PairSampler sampler(variant, src);
  Dataset ds;
  ds.variant = variant;
  ds.seed = seed;
  ds.train.reserve(variant.train_size);
  ds.test.reserve(variant.test_size);
  Rng train_root(seed, "train-pair");
  Rng test_root(seed, "test-pair");
  for (std::size_t i = 0; i < variant.train_size; ++i)
    ds.train.push_back(sampler.sample(train_root.child(i)));
  for (std::size_t i = 0; i < variant.test_size; ++i)
    ds.test.push_back(sampler.sample(test_root.child(i)));
  return ds;
}

// ---- serialization ----

namespace {

constexpr std::uint32_t kFormatVersion = 1;

struct FileWriter {
  std::ofstream out;
  std::string path;
  std::uint64_t hash = 0xcbf29ce484222325ull;
  bool hashing = false;

  explicit FileWriter(const std::string& p)
      : out(p, std::ios::binary | std::ios::trunc), path(p) {
    if (!out) throw std::runtime_error("cannot open " + p + " for writing");
  }
  void raw(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (hashing) hash = Rng::fnv1a(p, n, hash);
  }
  template <class T>
  void put(T v) {
    raw(&v, sizeof v);
  }
  void finish_with_checksum(std::streampos checksum_pos) {
    std::uint64_t sum = hash;
    out.seekp(checksum_pos);
    raw(&sum, sizeof sum);
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path);
  }
};

struct FileReader {
  std::ifstream in;
  std::string path;
  std::uint64_t hash = 0xcbf29ce484222325ull;
  bool hashing = false;

  explicit FileReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw std::runtime_error("cannot open " + p);
  }
  void raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw DomainError("truncated file " + path);
    if (hashing) hash = Rng::fnv1a(p, n, hash);
  }
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  void expect_magic(const char* magic) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
      throw DomainError("bad magic in " + path);
  }
  void expect_eof() {
    if (in.peek() != std::char_traits<char>::eof())
      throw DomainError("trailing bytes in " + path);
  }
};

void check_image_dims(const Image& img, std::size_t h, std::size_t w,
                      std::size_t c, const std::string& path) {
  if (img.height != h || img.width != w || img.channels != c ||
      img.pix.size() != h * w * c)
    throw DomainError("inconsistent image geometry while writing " + path);
}

void write_pair(FileWriter& fw, const ViewPair& p, std::size_t h,
                std::size_t w, std::size_t c) {
  check_image_dims(p.view0, h, w, c, fw.path);
  check_image_dims(p.view1, h, w, c, fw.path);
  auto put_factors = [&](const FactorTuple& f) {
    fw.put<std::uint8_t>(static_cast<std::uint8_t>(f.glyph_class));
    fw.put<std::uint8_t>(static_cast<std::uint8_t>(f.texture_class));
    fw.put<std::uint8_t>(static_cast<std::uint8_t>(f.location));
  };
  put_factors(p.factors0);
  put_factors(p.factors1);
  fw.put<std::uint8_t>(static_cast<std::uint8_t>(p.joint));
  fw.raw(p.view0.pix.data(), p.view0.pix.size());
  fw.raw(p.view1.pix.data(), p.view1.pix.size());
}

ViewPair read_pair(FileReader& fr, std::size_t h, std::size_t w,
                   std::size_t c) {
  ViewPair p;
  auto get_factors = [&] {
    FactorTuple f;
    f.glyph_class = fr.get<std::uint8_t>();
    f.texture_class = fr.get<std::uint8_t>();
    f.location = fr.get<std::uint8_t>();
    f.validate();
    return f;
  };
  p.factors0 = get_factors();
  p.factors1 = get_factors();
  p.joint = fr.get<std::uint8_t>();
  if (p.joint != joint_label(p.factors0))
    throw DomainError("corrupt pair record in " + fr.path);
  p.view0 = Image::blank(h, w, c);
  p.view1 = Image::blank(h, w, c);
  fr.raw(p.view0.pix.data(), p.view0.pix.size());
  fr.raw(p.view1.pix.data(), p.view1.pix.size());
  return p;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::size_t h = kImageSize, w = kImageSize, c = kImageChannels;
  const ViewPair* first = !ds.train.empty()
                              ? &ds.train.front()
                              : (!ds.test.empty() ? &ds.test.front() : nullptr);
  if (first) {
    h = first->view0.height;
    w = first->view0.width;
    c = first->view0.channels;
  }
  FileWriter fw(path);
  fw.raw("DLDS", 4);
  fw.put<std::uint32_t>(kFormatVersion);
  std::streampos checksum_pos = fw.out.tellp();
  fw.put<std::uint64_t>(0);
  fw.hashing = true;
  fw.put<std::uint8_t>(static_cast<std::uint8_t>(ds.variant.kind));
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(c));
  fw.put<std::uint64_t>(ds.train.size());
  fw.put<std::uint64_t>(ds.test.size());
  fw.put<std::uint64_t>(ds.seed);
  for (const ViewPair& p : ds.train) write_pair(fw, p, h, w, c);
  for (const ViewPair& p : ds.test) write_pair(fw, p, h, w, c);
  fw.hashing = false;
  fw.finish_with_checksum(checksum_pos);
}

Dataset load_dataset(const std::string& path) {
  FileReader fr(path);
  fr.expect_magic("DLDS");
  if (fr.get<std::uint32_t>() != kFormatVersion)
    throw DomainError("unsupported dataset version in " + path);
  std::uint64_t want = fr.get<std::uint64_t>();
  fr.hashing = true;
  std::uint8_t kind = fr.get<std::uint8_t>();
  if (kind > 2) throw DomainError("corrupt variant kind in " + path);
  std::size_t h = fr.get<std::uint32_t>();
  std::size_t w = fr.get<std::uint32_t>();
  std::size_t c = fr.get<std::uint32_t>();
  std::uint64_t train_n = fr.get<std::uint64_t>();
  std::uint64_t test_n = fr.get<std::uint64_t>();
  std::uint64_t seed = fr.get<std::uint64_t>();
  if (h == 0 || w == 0 || c == 0 || h > 4096 || w > 4096 || c > 4 ||
      train_n + test_n > 10'000'000)
    throw DomainError("implausible header in " + path);

  Dataset ds;
  ds.variant.kind = static_cast<VariantKind>(kind);
  ds.variant.train_size = train_n;
  ds.variant.test_size = test_n;
  ds.seed = seed;
  ds.train.reserve(train_n);
  ds.test.reserve(test_n);
  for (std::uint64_t i = 0; i < train_n; ++i)
    ds.train.push_back(read_pair(fr, h, w, c));
  for (std::uint64_t i = 0; i < test_n; ++i)
    ds.test.push_back(read_pair(fr, h, w, c));
  fr.hashing = false;
  if (fr.hash != want) throw DomainError("checksum mismatch in " + path);
  fr.expect_eof();
  return ds;
}

void build_dataset(const DatasetVariant& variant, std::uint64_t seed,
                   const std::string& path, const RenderSources& src) {
  save_dataset(generate_dataset(variant, seed, src), path);
}

void ImageBank::validate() const {
  if (height == 0 || width == 0 || channels == 0)
    throw DomainError("image bank with empty geometry");
  if (labels.size() != images.size())
    throw DomainError("image bank label/image count mismatch");
  for (const Image& img : images)
    if (img.height != height || img.width != width ||
        img.channels != channels || img.pix.size() != height * width * channels)
      throw DomainError("image bank entry geometry mismatch");
}

void save_image_bank(const ImageBank& bank, const std::string& path) {
  bank.validate();
  FileWriter fw(path);
  fw.raw("DLBK", 4);
  fw.put<std::uint32_t>(kFormatVersion);
  std::streampos checksum_pos = fw.out.tellp();
  fw.put<std::uint64_t>(0);
  fw.hashing = true;
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(bank.height));
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(bank.width));
  fw.put<std::uint32_t>(static_cast<std::uint32_t>(bank.channels));
  fw.put<std::uint64_t>(bank.images.size());
  for (std::size_t i = 0; i < bank.images.size(); ++i) {
    fw.put<std::uint8_t>(bank.labels[i]);
    fw.raw(bank.images[i].pix.data(), bank.images[i].pix.size());
  }
  fw.hashing = false;
  fw.finish_with_checksum(checksum_pos);
}

ImageBank load_image_bank(const std::string& path) {
  FileReader fr(path);
  fr.expect_magic("DLBK");
  if (fr.get<std::uint32_t>() != kFormatVersion)
    throw DomainError("unsupported image bank version in " + path);
  std::uint64_t want = fr.get<std::uint64_t>();
  fr.hashing = true;
  ImageBank bank;
  bank.height = fr.get<std::uint32_t>();
  bank.width = fr.get<std::uint32_t>();
  bank.channels = fr.get<std::uint32_t>();
  std::uint64_t count = fr.get<std::uint64_t>();
  if (bank.height == 0 || bank.width == 0 || bank.channels == 0 ||
      bank.height > 4096 || bank.width > 4096 || bank.channels > 4 ||
      count > 10'000'000)
    throw DomainError("implausible header in " + path);
  bank.labels.reserve(count);
  bank.images.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    bank.labels.push_back(fr.get<std::uint8_t>());
    Image img = Image::blank(bank.height, bank.width, bank.channels);
    fr.raw(img.pix.data(), img.pix.size());
    bank.images.push_back(std::move(img));
  }
  fr.hashing = false;
  if (fr.hash != want) throw DomainError("checksum mismatch in " + path);
  fr.expect_eof();
  return bank;
}

// ---- tensor bridging ----

Tensor image_rows(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("image_rows: no images");
  const Image& first = images.front();
  Tensor t(images.size(), first.pix.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (img.pix.size() != first.pix.size() || img.height != first.height ||
        img.channels != first.channels)
      throw ShapeError("image_rows: mixed image geometries");
    for (std::size_t j = 0; j < img.pix.size(); ++j)
      t.at(i, j) = img.pix[j] / 255.0;
  }
  return t;
}

namespace {

const Image& pair_view(const ViewPair& p, std::size_t view) {
  if (view > 1) throw std::invalid_argument("view index must be 0 or 1");
  return view == 0 ? p.view0 : p.view1;
}

}  // namespace

Tensor image_rows(const std::vector<ViewPair>& pairs, std::size_t view) {
  if (pairs.empty()) throw ShapeError("image_rows: no pairs");
  const Image& first = pair_view(pairs.front(), view);
  Tensor t(pairs.size(), first.pix.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Image& img = pair_view(pairs[i], view);
    if (img.pix.size() != first.pix.size())
      throw ShapeError("image_rows: mixed image geometries");
    for (std::size_t j = 0; j < img.pix.size(); ++j)
      t.at(i, j) = img.pix[j] / 255.0;
  }
  return t;
}

Tensor image_rows(const std::vector<ViewPair>& pairs, std::size_t view,
                  const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ShapeError("image_rows: empty index list");
  const Image& first = pair_view(pairs.at(idx.front()), view);
  Tensor t(idx.size(), first.pix.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Image& img = pair_view(pairs.at(idx[i]), view);
    if (img.pix.size() != first.pix.size())
      throw ShapeError("image_rows: mixed image geometries");
    for (std::size_t j = 0; j < img.pix.size(); ++j)
      t.at(i, j) = img.pix[j] / 255.0;
  }
  return t;
}

std::vector<std::size_t> factor_labels(const std::vector<ViewPair>& pairs,
                                       Factor which) {
  std::vector<std::size_t> out;
  out.reserve(pairs.size());
  for (const ViewPair& p : pairs) out.push_back(factor_value(p.factors0, which));
  return out;
}

std::vector<std::size_t> factor_labels(const std::vector<ViewPair>& pairs,
                                       Factor which,
                                       const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx)
    out.push_back(factor_value(pairs.at(i).factors0, which));
  return out;
}

std::vector<std::size_t> joint_labels(const std::vector<ViewPair>& pairs) {
  std::vector<std::size_t> out;
  out.reserve(pairs.size());
  for (const ViewPair& p : pairs) out.push_back(p.joint);
  return out;
}

}  // namespace disent
