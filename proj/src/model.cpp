#include "disent/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <type_traits>

#include "disent/rng.hpp"

namespace disent {

EncoderArch encoder_arch_from_string(const std::string& s) {
  if (s == "small-conv") return EncoderArch::small_conv;
  if (s == "mlp") return EncoderArch::mlp;
  throw std::invalid_argument("unknown encoder arch: " + s);
}

std::string to_string(EncoderArch a) {
  switch (a) {
    case EncoderArch::small_conv: return "small-conv";
    case EncoderArch::mlp: return "mlp";
  }
  throw std::invalid_argument("unknown encoder arch");
}

void EncoderConfig::validate() const {
  if (rep_dim == 0 || rep_dim % 2 != 0)
    throw DomainError("encoder: rep_dim must be positive and even");
  if (image_size == 0 || channels == 0)
    throw DomainError("encoder: empty image geometry");
  if (arch == EncoderArch::small_conv) {
    if (conv_channels.empty())
      throw DomainError("encoder: no conv stages configured");
    std::size_t s = image_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      if (s < 2) throw DomainError("encoder: image too small for conv stack");
      s = (s + 1) / 2;  // stride-2, pad-1, kernel-3
    }
  } else if (mlp_hidden.empty()) {
    throw DomainError("encoder: no mlp hidden layers configured");
  }
}

void ProjectionConfig::validate() const {
  if (head_count != 1 && head_count != 2)
    throw DomainError("projection: head_count must be 1 or 2");
  if (out_dim == 0 || hidden_dim == 0)
    throw DomainError("projection: zero layer width");
}

namespace {

Tensor normal_init(Rng rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      t.at(i, j) = stddev * rng.normal();
  return t;
}

Var affine(const Var& x, const Var& w, const Var& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace

Model Model::init(const EncoderConfig& enc, const ProjectionConfig& proj,
                  std::uint64_t seed) {
  enc.validate();
  proj.validate();
  Model m;
  m.enc_ = enc;
  m.proj_ = proj;
  m.seed_ = seed;
  Rng base(seed, "init");

  auto add_layer = [&](const std::string& name, std::size_t in, std::size_t out,
                       double stddev) {
    m.names_.push_back(name + ".w");
    m.params_.push_back(normal_init(base.child(m.names_.back()), in, out, stddev));
    m.names_.push_back(name + ".b");
    m.params_.push_back(Tensor::zeros(1, out));
  };

  if (enc.arch == EncoderArch::small_conv) {
    std::size_t in_c = enc.channels;
    for (std::size_t i = 0; i < enc.conv_channels.size(); ++i) {
      std::size_t fan_in = in_c * 9;
      add_layer("conv" + std::to_string(i), fan_in, enc.conv_channels[i],
                std::sqrt(2.0 / static_cast<double>(fan_in)));
      in_c = enc.conv_channels[i];
    }
    add_layer("rep", in_c, enc.rep_dim,
              std::sqrt(1.0 / static_cast<double>(in_c)));
  } else {
    std::size_t in = enc.input_width();
    for (std::size_t i = 0; i < enc.mlp_hidden.size(); ++i) {
      add_layer("fc" + std::to_string(i), in, enc.mlp_hidden[i],
                std::sqrt(2.0 / static_cast<double>(in)));
      in = enc.mlp_hidden[i];
    }
    add_layer("rep", in, enc.rep_dim, std::sqrt(1.0 / static_cast<double>(in)));
  }
  m.encoder_param_count_ = m.params_.size();

  std::size_t head_out =
      proj.head_count == 2 ? proj.out_dim : proj.z_width();
  std::size_t head_in =
      proj.head_count == 2 ? enc.rep_dim / 2 : enc.rep_dim;
  for (std::size_t h = 0; h < proj.head_count; ++h) {
    std::string prefix = "head" + std::to_string(h);
    add_layer(prefix + ".fc0", head_in, proj.hidden_dim,
              std::sqrt(2.0 / static_cast<double>(head_in)));
    add_layer(prefix + ".fc1", proj.hidden_dim, head_out,
              std::sqrt(1.0 / static_cast<double>(proj.hidden_dim)));
  }
  return m;
}

std::vector<Var> Model::bind_params(bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& t : params_)
    vars.push_back(trainable ? Var::param(t) : Var::constant(t));
  return vars;
}

Var Model::encode(const std::vector<Var>& vars, const Var& images) const {
  if (vars.size() != params_.size())
    throw std::invalid_argument("encode: wrong parameter binding");
  const Tensor& img = images.value();
  if (img.cols() != enc_.input_width())
    throw ShapeError("encode: images " + img.shape_str() + " do not match " +
                     std::to_string(enc_.input_width()) + " inputs");
  std::size_t n = img.rows();
  std::size_t v = 0;
  // center pixel values: raw [0,1] images share one dominant direction, which
  // collapses cosine similarities toward 1 and starves the contrastive losses
  Var centered = add_scalar(images, -0.5);
  if (enc_.arch == EncoderArch::small_conv) {
    Var x = centered;
    std::size_t in_c = enc_.channels, s = enc_.image_size;
    for (std::size_t i = 0; i < enc_.conv_channels.size(); ++i) {
      ConvGeom geom{n, in_c, s, s, 3, 2, 1};
      Var pre = relu(affine(im2col(x, geom), vars[v], vars[v + 1]));
      v += 2;
      std::size_t oh = geom.out_h(), ow = geom.out_w();
      if (i + 1 < enc_.conv_channels.size()) {
        x = conv_rows_to_chw(pre, n, oh, ow, enc_.conv_channels[i]);
      } else {
        x = segment_mean_rows(pre, oh * ow);  // global average pool
      }
      in_c = enc_.conv_channels[i];
      s = oh;
    }
    return affine(x, vars[v], vars[v + 1]);
  }
  Var x = centered;
  for (std::size_t i = 0; i < enc_.mlp_hidden.size(); ++i) {
    x = relu(affine(x, vars[v], vars[v + 1]));
    v += 2;
  }
  return affine(x, vars[v], vars[v + 1]);
}

Model::Projected Model::project(const std::vector<Var>& vars,
                                const Var& r) const {
  if (vars.size() != params_.size())
    throw std::invalid_argument("project: wrong parameter binding");
  if (r.value().cols() != enc_.rep_dim)
    throw ShapeError("project: representations " + r.value().shape_str() +
                     " do not match rep_dim " + std::to_string(enc_.rep_dim));
  Projected out;
  if (proj_.head_count == 2) {
    std::size_t half = enc_.rep_dim / 2;
    std::size_t h0 = head_param_begin(0), h1 = head_param_begin(1);
    Var r0 = slice_cols(r, 0, half);
    Var r1 = slice_cols(r, half, enc_.rep_dim);
    out.z0 = affine(relu(affine(r0, vars[h0], vars[h0 + 1])), vars[h0 + 2],
                    vars[h0 + 3]);
    out.z1 = affine(relu(affine(r1, vars[h1], vars[h1 + 1])), vars[h1 + 2],
                    vars[h1 + 3]);
    out.z = concat_cols({out.z0, out.z1});
  } else {
    std::size_t h = head_param_begin(0);
    out.z = affine(relu(affine(r, vars[h], vars[h + 1])), vars[h + 2],
                   vars[h + 3]);
    out.z0 = slice_cols(out.z, 0, proj_.out_dim);
    out.z1 = slice_cols(out.z, proj_.out_dim, proj_.z_width());
  }
  return out;
}

std::size_t Model::head_param_begin(std::size_t k) const {
  if (k >= proj_.head_count)
    throw std::invalid_argument("head index out of range");
  return encoder_param_count_ + 4 * k;
}

std::vector<Var> split_sub(const Var& v, std::size_t K) {
  std::size_t w = v.value().cols();
  if (K == 0 || w % K != 0)
    throw ShapeError("split_sub: width " + std::to_string(w) +
                     " not divisible into " + std::to_string(K) + " slices");
  std::vector<Var> out;
  std::size_t sw = w / K;
  for (std::size_t k = 0; k < K; ++k)
    out.push_back(slice_cols(v, k * sw, (k + 1) * sw));
  return out;
}

// ---- checkpoint serialization ----

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_sizes(std::string& buf, const std::vector<std::size_t>& v) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.size()));
  for (std::size_t x : v) put<std::uint64_t>(buf, x);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos + sizeof(T) > buf.size())
      throw DomainError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::vector<std::size_t> get_sizes() {
    std::uint32_t n = get<std::uint32_t>();
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = get<std::uint64_t>();
    return v;
  }
  std::string get_str(std::size_t n) {
    if (pos + n > buf.size()) throw DomainError("checkpoint: truncated file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  std::string body;
  const EncoderConfig& e = m.encoder_config();
  const ProjectionConfig& p = m.projection_config();
  put<std::uint8_t>(body, e.arch == EncoderArch::small_conv ? 0 : 1);
  put<std::uint8_t>(body, static_cast<std::uint8_t>(p.head_count));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(e.image_size));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(e.channels));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(e.rep_dim));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(p.out_dim));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(p.hidden_dim));
  put_sizes(body, e.conv_channels);
  put_sizes(body, e.mlp_hidden);
  put<std::uint64_t>(body, m.init_seed());
  put<std::uint64_t>(body, m.param_count());
  for (std::size_t i = 0; i < m.param_count(); ++i) {
    const std::string& name = m.param_names()[i];
    const Tensor& t = m.params()[i];
    put<std::uint32_t>(body, static_cast<std::uint32_t>(name.size()));
    body.append(name);
    put<std::uint64_t>(body, t.rows());
    put<std::uint64_t>(body, t.cols());
    body.append(reinterpret_cast<const char*>(t.data()),
                t.numel() * sizeof(double));
  }

  std::string out;
  out.append(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, Rng::fnv1a(body.data(), body.size()));
  out.append(body);
  write_file(path, out);
}

Model load_checkpoint(const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw DomainError("checkpoint: bad magic in " + path);
  Reader r{buf, 4};
  if (r.get<std::uint32_t>() != kCheckpointVersion)
    throw DomainError("checkpoint: unsupported version in " + path);
  std::uint64_t want = r.get<std::uint64_t>();
  std::uint64_t got = Rng::fnv1a(buf.data() + r.pos, buf.size() - r.pos);
  if (want != got) throw DomainError("checkpoint: checksum mismatch in " + path);

  EncoderConfig e;
  ProjectionConfig p;
  e.arch = r.get<std::uint8_t>() == 0 ? EncoderArch::small_conv
                                      : EncoderArch::mlp;
  p.head_count = r.get<std::uint8_t>();
  e.image_size = r.get<std::uint32_t>();
  e.channels = r.get<std::uint32_t>();
  e.rep_dim = r.get<std::uint32_t>();
  p.out_dim = r.get<std::uint32_t>();
  p.hidden_dim = r.get<std::uint32_t>();
  e.conv_channels = r.get_sizes();
  e.mlp_hidden = r.get_sizes();
  std::uint64_t seed = r.get<std::uint64_t>();
  std::uint64_t count = r.get<std::uint64_t>();

  Model m = Model::init(e, p, seed);
  if (m.param_count() != count)
    throw DomainError("checkpoint: parameter count mismatch in " + path);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t len = r.get<std::uint32_t>();
    std::string name = r.get_str(len);
    std::uint64_t rows = r.get<std::uint64_t>();
    std::uint64_t cols = r.get<std::uint64_t>();
    if (name != m.param_names()[i] || rows != m.params()[i].rows() ||
        cols != m.params()[i].cols())
      throw DomainError("checkpoint: layout mismatch at tensor " + name);
    std::string raw = r.get_str(rows * cols * sizeof(double));
    std::memcpy(m.params()[i].data(), raw.data(), raw.size());
  }
  return m;
}

// ---- linear probe ----

namespace {

// largest eigenvalue of X^T X / n by power iteration; deterministic
double spectral_estimate(const Eigen::MatrixXd& x) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(x.cols()).normalized();
  double lambda = 1.0;
  for (int it = 0; it < 30; ++it) {
    Eigen::VectorXd w =
        x.transpose() * (x * v) / static_cast<double>(x.rows());
    double norm = w.norm();
    if (norm < 1e-12) return 1.0;
    lambda = norm;
    v = w / norm;
  }
  return lambda;
}

}  // namespace

LinearProbe probe_train(const Tensor& x, const std::vector<std::size_t>& labels,
                        const ProbeConfig& cfg) {
  const std::size_t n = x.rows(), dim = x.cols(), c = cfg.num_classes;
  if (n == 0 || dim == 0) throw ShapeError("probe: empty features");
  if (c < 2) throw DomainError("probe: need at least two classes");
  if (labels.size() != n)
    throw ShapeError("probe: " + std::to_string(labels.size()) +
                     " labels for " + x.shape_str());
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= c)
      throw DomainError("probe: label " + std::to_string(labels[i]) +
                        " outside " + std::to_string(c) + " classes");

  // standardize features; folded back into the returned weights
  Eigen::RowVectorXd mu = x.map().colwise().mean();
  Eigen::MatrixXd centered = x.map().rowwise() - mu;
  Eigen::RowVectorXd sd =
      (centered.colwise().squaredNorm() / static_cast<double>(n))
          .cwiseSqrt()
          .cwiseMax(1e-8);
  Eigen::MatrixXd xs = centered * sd.cwiseInverse().asDiagonal();

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, c);
  for (std::size_t i = 0; i < n; ++i) onehot(i, labels[i]) = 1.0;

  double lr = cfg.lr;
  if (lr <= 0.0) lr = 2.0 / spectral_estimate(xs);

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(dim, c);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(c);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    Eigen::MatrixXd logits = (xs * w).rowwise() + b;
    Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
    Eigen::MatrixXd shifted = logits.colwise() - rowmax;
    Eigen::MatrixXd p = shifted.array().exp().matrix();
    Eigen::VectorXd denom = p.rowwise().sum();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      loss += std::log(denom(i)) - shifted(i, labels[i]);
      p.row(i) /= denom(i);
    }
    loss /= static_cast<double>(n);
    if (prev - loss < cfg.tol) break;
    prev = loss;
    Eigen::MatrixXd diff = (p - onehot) / static_cast<double>(n);
    w -= lr * (xs.transpose() * diff);
    b -= lr * diff.colwise().sum();
  }

  LinearProbe probe{Tensor(dim, c), Tensor(1, c)};
  for (std::size_t j = 0; j < dim; ++j)
    for (std::size_t k = 0; k < c; ++k)
      probe.w.at(j, k) = w(j, k) / sd(j);
  for (std::size_t k = 0; k < c; ++k) {
    double shift = 0.0;
    for (std::size_t j = 0; j < dim; ++j) shift += mu(j) * w(j, k) / sd(j);
    probe.b.at(0, k) = b(k) - shift;
  }
  return probe;
}

double probe_accuracy(const LinearProbe& probe, const Tensor& x,
                      const std::vector<std::size_t>& labels) {
  const std::size_t n = x.rows(), c = probe.w.cols();
  if (labels.size() != n)
    throw ShapeError("probe: " + std::to_string(labels.size()) +
                     " labels for " + x.shape_str());
  if (x.cols() != probe.w.rows())
    throw ShapeError("probe: features " + x.shape_str() +
                     " do not match weights " + probe.w.shape_str());
  Eigen::RowVectorXd b = probe.b.map().row(0);
  Eigen::MatrixXd logits = (x.map() * probe.w.map()).rowwise() + b;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace disent
