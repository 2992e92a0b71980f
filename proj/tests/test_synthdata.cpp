#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "disent/model.hpp"
#include "disent/synthdata.hpp"

using namespace disent;

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

// chi-square statistic against a uniform expectation
double chi2_uniform(const std::vector<std::size_t>& counts, double total) {
  double expect = total / static_cast<double>(counts.size());
  double s = 0.0;
  for (std::size_t c : counts) {
    double d = static_cast<double>(c) - expect;
    s += d * d / expect;
  }
  return s;
}

}  // namespace

TEST_CASE("factor tuples and joint labels") {
  CHECK(joint_label({3, 7, 0}) == 37);
  CHECK(joint_label({3, 7, 5}) == 37);  // location excluded
  CHECK(joint_label({0, 0, 0}) == 0);
  CHECK(joint_label({9, 9, 7}) == 99);
  std::vector<bool> seen(100, false);
  for (std::size_t g = 0; g < 10; ++g)
    for (std::size_t t = 0; t < 10; ++t) seen[joint_label({g, t, 0})] = true;
  CHECK(std::count(seen.begin(), seen.end(), true) == 100);

  CHECK_THROWS_AS(joint_label({10, 0, 0}), DomainError);
  CHECK_THROWS_AS(joint_label({0, 10, 0}), DomainError);
  CHECK_THROWS_AS(joint_label({0, 0, 8}), DomainError);

  CHECK(factor_cardinality(Factor::glyph) == 10);
  CHECK(factor_cardinality(Factor::texture) == 10);
  CHECK(factor_cardinality(Factor::location) == 8);
  FactorTuple f{4, 2, 6};
  CHECK(factor_value(f, Factor::glyph) == 4);
  CHECK(factor_value(f, Factor::texture) == 2);
  CHECK(factor_value(f, Factor::location) == 6);
  CHECK(to_string(Factor::glyph) == "DC");
  CHECK(to_string(Factor::texture) == "BC");
  CHECK(to_string(Factor::location) == "DL");
}

TEST_CASE("variant kinds determine varied factor and tasks") {
  CHECK(variant_kind_from_string("DC-BC") == VariantKind::dc_bc);
  CHECK(variant_kind_from_string("DC-DL") == VariantKind::dc_dl);
  CHECK(variant_kind_from_string("BC-DL") == VariantKind::bc_dl);
  CHECK_THROWS_AS(variant_kind_from_string("DC-XX"), std::invalid_argument);
  for (auto k : {VariantKind::dc_bc, VariantKind::dc_dl, VariantKind::bc_dl})
    CHECK(variant_kind_from_string(to_string(k)) == k);

  CHECK(varied_factor(VariantKind::dc_bc) == Factor::location);
  CHECK(varied_factor(VariantKind::dc_dl) == Factor::texture);
  CHECK(varied_factor(VariantKind::bc_dl) == Factor::glyph);
  CHECK(variant_tasks(VariantKind::dc_bc) ==
        std::pair{Factor::glyph, Factor::texture});
  CHECK(variant_tasks(VariantKind::dc_dl) ==
        std::pair{Factor::glyph, Factor::location});
  CHECK(variant_tasks(VariantKind::bc_dl) ==
        std::pair{Factor::texture, Factor::location});
}

TEST_CASE("location grid matches the 2x4 layout") {
  auto grid = location_grid(64, 28);
  REQUIRE(grid.size() == 8);
  std::size_t cols[4] = {14, 26, 38, 50};
  std::size_t rows[2] = {14, 50};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(grid[4 * r + k].x == cols[k]);
      CHECK(grid[4 * r + k].y == rows[r]);
    }
  // figure cell 3 (1-based numbering; list position 2): row 0, column 2
  CHECK(grid[2] == GridPoint{38, 14});

  // every glyph box fits inside the image
  for (const GridPoint& p : grid) {
    CHECK(p.x >= 14);
    CHECK(p.x + 14 <= 64);
    CHECK(p.y >= 14);
    CHECK(p.y + 14 <= 64);
  }
  CHECK_THROWS_AS(location_grid(27, 28), DomainError);
  CHECK_THROWS_AS(location_grid(64, 0), DomainError);
}

TEST_CASE("glyph rendering is deterministic with bounded ink") {
  Rng root(77, "glyph-test");
  Image a = render_glyph(4, root.child(0));
  Image b = render_glyph(4, root.child(0));
  CHECK(a == b);
  CHECK(a.height == 28);
  CHECK(a.width == 28);
  CHECK(a.channels == 1);
  Image c = render_glyph(4, root.child(1));
  CHECK(a != c);  // instance variation
  CHECK_THROWS_AS(render_glyph(10, root.child(0)), DomainError);

  std::size_t n = 0;
  for (std::size_t cls = 0; cls < 10; ++cls)
    for (std::size_t i = 0; i < 100; ++i) {
      Image m = render_glyph(cls, root.child(1000 * cls + i));
      double mean = m.mean();
      if (mean > 0.02 && mean < 0.6) ++n;
    }
  CHECK(n == 1000);
}

TEST_CASE("texture rendering is deterministic and in range") {
  Rng root(78, "texture-test");
  Image a = render_texture(7, root.child(0));
  CHECK(a == render_texture(7, root.child(0)));
  CHECK(a != render_texture(7, root.child(1)));
  CHECK(a.height == 64);
  CHECK(a.channels == 3);
  CHECK_THROWS_AS(render_texture(11, root.child(0)), DomainError);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        double v = a.value(c, y, x);
        if (v < 0.0 || v > 1.0) FAIL("pixel out of range");
      }
}

TEST_CASE("glyph classes are linearly separable on raw pixels") {
  Rng root(79, "glyph-probe");
  std::vector<Image> train_imgs, test_imgs;
  std::vector<std::size_t> train_y, test_y;
  for (std::size_t cls = 0; cls < 10; ++cls)
    for (std::size_t i = 0; i < 120; ++i) {
      Image m = render_glyph(cls, root.child(cls * 1000 + i));
      if (i < 100) {
        train_imgs.push_back(std::move(m));
        train_y.push_back(cls);
      } else {
        test_imgs.push_back(std::move(m));
        test_y.push_back(cls);
      }
    }
  ProbeConfig cfg;
  cfg.num_classes = 10;
  LinearProbe probe = probe_train(image_rows(train_imgs), train_y, cfg);
  CHECK(probe_accuracy(probe, image_rows(test_imgs), test_y) > 0.95);
}

TEST_CASE("texture classes are separable on 16x16 downsamples") {
  Rng root(80, "texture-probe");
  std::vector<Image> train_imgs, test_imgs;
  std::vector<std::size_t> train_y, test_y;
  for (std::size_t cls = 0; cls < 10; ++cls)
    for (std::size_t i = 0; i < 120; ++i) {
      Image m = block_downsample(render_texture(cls, root.child(cls * 1000 + i)), 4);
      CHECK(m.height == 16);
      if (i < 100) {
        train_imgs.push_back(std::move(m));
        train_y.push_back(cls);
      } else {
        test_imgs.push_back(std::move(m));
        test_y.push_back(cls);
      }
    }
  ProbeConfig cfg;
  cfg.num_classes = 10;
  LinearProbe probe = probe_train(image_rows(train_imgs), train_y, cfg);
  CHECK(probe_accuracy(probe, image_rows(test_imgs), test_y) > 0.80);
}

TEST_CASE("block downsample averages blocks") {
  Image img = Image::blank(4, 4, 1);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      img.byte(0, y, x) = static_cast<std::uint8_t>(16 * (4 * y + x));
  Image down = block_downsample(img, 2);
  CHECK(down.height == 2);
  CHECK(down.byte(0, 0, 0) == 40);   // mean of {0,16,64,80}
  CHECK(down.byte(0, 1, 1) == 200);  // mean of {160,176,224,240}
  CHECK_THROWS_AS(block_downsample(img, 3), ShapeError);
}

TEST_CASE("compositing takes the per-pixel maximum inside the box") {
  Image tex = Image::blank(64, 64, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x)
        tex.byte(c, y, x) = c == 0 ? 77 : 204;  // 0.30, 0.80, 0.80

  Image glyph = Image::blank(28, 28, 1);
  glyph.byte(0, 0, 0) = 255;
  glyph.byte(0, 5, 5) = 51;  // 0.2: loses against 0.8, wins against 0.3

  // figure cell 3 is list position 2: box corner (38-14, 14-14) = (24, 0)
  Image out = composite(glyph, tex, 2);
  CHECK(out.byte(0, 0, 24) == 255);  // bright glyph pixel wins everywhere
  CHECK(out.byte(1, 0, 24) == 255);  // broadcast across channels
  CHECK(out.byte(2, 0, 24) == 255);
  CHECK(out.byte(0, 5, 29) == 77);   // dim glyph pixel loses on red...
  CHECK(out.byte(1, 5, 29) == 204);  // ...and on green
  CHECK(out.byte(0, 1, 24) == 77);   // empty glyph pixel leaves texture

  // all-zero glyph is the identity
  Image zero = Image::blank(28, 28, 1);
  for (std::size_t loc = 0; loc < 8; ++loc) CHECK(composite(zero, tex, loc) == tex);

  // each location lands the glyph at its own box corner
  auto grid = location_grid(64, 28);
  for (std::size_t loc = 0; loc < 8; ++loc) {
    Image o = composite(glyph, tex, loc);
    CHECK(o.byte(0, grid[loc].y - 14, grid[loc].x - 14) == 255);
  }
  CHECK_THROWS_AS(composite(glyph, tex, 8), DomainError);
  CHECK_THROWS_AS(composite(tex, tex, 0), ShapeError);
}

TEST_CASE("view pairs share exactly the variant's fixed factors") {
  struct Case {
    VariantKind kind;
    Factor varied;
  };
  for (auto [kind, varied] : {Case{VariantKind::dc_bc, Factor::location},
                              Case{VariantKind::dc_dl, Factor::texture},
                              Case{VariantKind::bc_dl, Factor::glyph}}) {
    DatasetVariant v;
    v.kind = kind;
    Rng root(91, "pair-test");
    std::size_t varied_diff = 0;
    for (std::size_t i = 0; i < 60; ++i) {
      ViewPair p = sample_view_pair(v, root.child(i));
      auto [ta, tb] = variant_tasks(kind);
      CHECK(factor_value(p.factors0, ta) == factor_value(p.factors1, ta));
      CHECK(factor_value(p.factors0, tb) == factor_value(p.factors1, tb));
      varied_diff +=
          factor_value(p.factors0, varied) != factor_value(p.factors1, varied);
      CHECK(p.joint == joint_label(p.factors0));
      CHECK(p.view0.height == 64);
      CHECK(p.view1.channels == 3);
    }
    CHECK(varied_diff > 20);  // varied factor actually varies across views
  }

  // determinism at the pair level
  DatasetVariant v;
  ViewPair a = sample_view_pair(v, Rng(5, "p").child(3));
  ViewPair b = sample_view_pair(v, Rng(5, "p").child(3));
  CHECK(a.factors0 == b.factors0);
  CHECK(a.view0 == b.view0);
  CHECK(a.view1 == b.view1);
}

TEST_CASE("sampled factor marginals are uniform") {
  DatasetVariant v;
  v.kind = VariantKind::dc_bc;
  Rng root(92, "marginal-test");
  std::vector<std::size_t> loc0(8, 0), loc1(8, 0), glyphs(10, 0), textures(10, 0);
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    ViewPair p = sample_view_pair(v, root.child(i));
    ++loc0[p.factors0.location];
    ++loc1[p.factors1.location];
    ++glyphs[p.factors0.glyph_class];
    ++textures[p.factors0.texture_class];
  }
  // chi-square critical values at p = 0.001
  CHECK(chi2_uniform(loc0, n) < 24.322);      // 7 degrees of freedom
  CHECK(chi2_uniform(loc1, n) < 24.322);
  CHECK(chi2_uniform(glyphs, n) < 27.877);    // 9 degrees of freedom
  CHECK(chi2_uniform(textures, n) < 27.877);
}

TEST_CASE("datasets round-trip through files bit for bit") {
  DatasetVariant v;
  v.kind = VariantKind::dc_dl;
  v.train_size = 24;
  v.test_size = 6;
  Dataset ds = generate_dataset(v, 1234);
  REQUIRE(ds.train.size() == 24);
  REQUIRE(ds.test.size() == 6);

  // regeneration is exact
  Dataset again = generate_dataset(v, 1234);
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(ds.train[i].factors0 == again.train[i].factors0);
    CHECK(ds.train[i].view0 == again.train[i].view0);
    CHECK(ds.train[i].view1 == again.train[i].view1);
  }
  Dataset other = generate_dataset(v, 1235);
  CHECK(ds.train[0].view0 != other.train[0].view0);

  std::string p1 = temp_path("disent_ds_a.bin"), p2 = temp_path("disent_ds_b.bin");
  save_dataset(ds, p1);
  save_dataset(again, p2);
  CHECK(slurp(p1) == slurp(p2));  // same seed -> byte-identical file

  Dataset loaded = load_dataset(p1);
  CHECK(loaded.variant.kind == v.kind);
  CHECK(loaded.variant.train_size == 24);
  CHECK(loaded.seed == 1234);
  REQUIRE(loaded.test.size() == 6);
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    CHECK(loaded.test[i].factors0 == ds.test[i].factors0);
    CHECK(loaded.test[i].factors1 == ds.test[i].factors1);
    CHECK(loaded.test[i].joint == ds.test[i].joint);
    CHECK(loaded.test[i].view0 == ds.test[i].view0);
    CHECK(loaded.test[i].view1 == ds.test[i].view1);
  }

  std::string bytes = slurp(p1);
  std::string tampered = bytes;
  tampered[tampered.size() / 3] ^= 0x20;
  spit(p1, tampered);
  CHECK_THROWS_AS(load_dataset(p1), DomainError);
  spit(p1, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_dataset(p1), DomainError);
  spit(p1, "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_dataset(p1), DomainError);
  CHECK_THROWS_AS(load_dataset(temp_path("no_such_dataset.bin")),
                  std::runtime_error);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("image banks replace the procedural renderers") {
  ImageBank glyphs, textures;
  glyphs.height = 28;
  glyphs.width = 28;
  glyphs.channels = 1;
  textures.height = 64;
  textures.width = 64;
  textures.channels = 3;
  Rng root(31, "bank");
  for (std::size_t cls = 0; cls < 10; ++cls) {
    glyphs.labels.push_back(static_cast<std::uint8_t>(cls));
    glyphs.images.push_back(render_glyph(cls, root.child(cls)));
    textures.labels.push_back(static_cast<std::uint8_t>(cls));
    textures.images.push_back(render_texture(cls, root.child(100 + cls)));
  }

  std::string bp = temp_path("disent_bank.bin");
  save_image_bank(glyphs, bp);
  ImageBank loaded = load_image_bank(bp);
  CHECK(loaded.height == 28);
  REQUIRE(loaded.images.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(loaded.labels[i] == glyphs.labels[i]);
    CHECK(loaded.images[i] == glyphs.images[i]);
  }
  std::string bytes = slurp(bp);
  std::string tampered = bytes;
  tampered[tampered.size() - 3] ^= 0x01;
  spit(bp, tampered);
  CHECK_THROWS_AS(load_image_bank(bp), DomainError);
  std::remove(bp.c_str());

  // with one instance per class, generated views are fully determined
  RenderSources src;
  src.glyphs = &glyphs;
  src.textures = &textures;
  DatasetVariant v;
  v.train_size = 12;
  v.test_size = 0;
  Dataset ds = generate_dataset(v, 99, src);
  for (const ViewPair& p : ds.train) {
    CHECK(p.view0 == composite(glyphs.images[p.factors0.glyph_class],
                               textures.images[p.factors0.texture_class],
                               p.factors0.location));
    CHECK(p.view1 == composite(glyphs.images[p.factors1.glyph_class],
                               textures.images[p.factors1.texture_class],
                               p.factors1.location));
  }

  // a bank missing a class cannot back a sampler
  ImageBank partial = glyphs;
  partial.labels.back() = 0;
  RenderSources bad;
  bad.glyphs = &partial;
  CHECK_THROWS_AS(generate_dataset(v, 99, bad), DomainError);

  RenderSources wrong;
  wrong.glyphs = &textures;
  CHECK_THROWS_AS(generate_dataset(v, 99, wrong), ShapeError);
}

TEST_CASE("tensor bridging flattens images and labels") {
  DatasetVariant v;
  v.kind = VariantKind::bc_dl;
  v.train_size = 5;
  v.test_size = 0;
  Dataset ds = generate_dataset(v, 7);

  Tensor rows = image_rows(ds.train, 0);
  CHECK(rows.rows() == 5);
  CHECK(rows.cols() == 3 * 64 * 64);
  CHECK(rows.at(2, 0) == ds.train[2].view0.pix[0] / 255.0);
  CHECK(rows.at(4, 12287) == ds.train[4].view0.pix[12287] / 255.0);
  Tensor rows1 = image_rows(ds.train, 1);
  CHECK(rows1.at(3, 100) == ds.train[3].view1.pix[100] / 255.0);
  CHECK_THROWS_AS(image_rows(ds.train, 2), std::invalid_argument);

  std::vector<std::size_t> idx{4, 0, 2};
  Tensor sub = image_rows(ds.train, 0, idx);
  CHECK(sub.rows() == 3);
  CHECK(sub.at(0, 5) == rows.at(4, 5));
  CHECK(sub.at(2, 9) == rows.at(2, 9));

  auto tex_labels = factor_labels(ds.train, Factor::texture);
  auto glyph_labels = factor_labels(ds.train, Factor::glyph, idx);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(tex_labels[i] == ds.train[i].factors0.texture_class);
  CHECK(glyph_labels[1] == ds.train[0].factors0.glyph_class);
  auto joints = joint_labels(ds.train);
  CHECK(joints[3] == ds.train[3].joint);
}
