#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disent/graph.hpp"

namespace disent {

enum class EncoderArch { small_conv, mlp };
EncoderArch encoder_arch_from_string(const std::string& s);
std::string to_string(EncoderArch a);

struct EncoderConfig {
  EncoderArch arch = EncoderArch::small_conv;
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t rep_dim = 64;  // d; subembeddings are its halves, so even
  std::vector<std::size_t> conv_channels{8, 16, 32};  // stride-2 3x3 stages
  std::vector<std::size_t> mlp_hidden{256, 128};

  void validate() const;
  std::size_t input_width() const { return channels * image_size * image_size; }
};

struct ProjectionConfig {
  std::size_t head_count = 2;  // 1 or 2
  std::size_t out_dim = 8;     // per head; one-head mode outputs 2*out_dim
  std::size_t hidden_dim = 64;

  void validate() const;
  std::size_t z_width() const { return 2 * out_dim; }  // both modes
};

// Encoder plus projection head(s). Parameters live in a flat ordered list;
// every training step binds them into a fresh graph via bind_params.
class Model {
 public:
  static Model init(const EncoderConfig& enc, const ProjectionConfig& proj,
                    std::uint64_t seed);

  const EncoderConfig& encoder_config() const { return enc_; }
  const ProjectionConfig& projection_config() const { return proj_; }
  std::uint64_t init_seed() const { return seed_; }

  std::size_t param_count() const { return params_.size(); }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  // fresh Vars over the current parameter values; trainable -> Var::param
  std::vector<Var> bind_params(bool trainable) const;

  // images: [n, channels*image_size^2] -> representations [n, rep_dim]
  Var encode(const std::vector<Var>& vars, const Var& images) const;

  struct Projected {
    Var z;   // [n, 2*out_dim]
    Var z0;  // first half
    Var z1;  // second half
  };
  Projected project(const std::vector<Var>& vars, const Var& r) const;

  // index of the first parameter belonging to head k (two-head mode); used
  // to reason about gradient isolation between heads
  std::size_t head_param_begin(std::size_t k) const;

 private:
  EncoderConfig enc_;
  ProjectionConfig proj_;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::size_t encoder_param_count_ = 0;
};

std::vector<Var> split_sub(const Var& v, std::size_t K);

void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

// Softmax linear classifier over frozen embeddings. Feature standardization
// used during training is folded into the stored weights, so scoring is a
// plain affine map.
struct LinearProbe {
  Tensor w;  // [in_dim, classes]
  Tensor b;  // [1, classes]
};

struct ProbeConfig {
  std::size_t num_classes = 0;
  double lr = 0.0;  // 0 picks a safe step from a spectral estimate of the data
  std::size_t max_iters = 500;
  double tol = 1e-6;  // stop when the loss improves by less than this
};

// full-batch gradient descent on mean cross-entropy from zero init;
// deterministic, never touches the autodiff graph
LinearProbe probe_train(const Tensor& x, const std::vector<std::size_t>& labels,
                        const ProbeConfig& cfg);
double probe_accuracy(const LinearProbe& probe, const Tensor& x,
                      const std::vector<std::size_t>& labels);

}  // namespace disent
