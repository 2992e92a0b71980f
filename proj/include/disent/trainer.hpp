#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/losses.hpp"
#include "disent/model.hpp"
#include "disent/synthdata.hpp"

namespace disent {

enum class PositiveMode { view_pair, joint_label, disjoint_label };
PositiveMode positive_mode_from_string(const std::string& s);
std::string to_string(PositiveMode m);

enum class OptimizerKind { sgd_momentum, adam };
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd-momentum only
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void validate() const;
};

struct OptimizerState {
  OptimizerConfig config;
  std::size_t t = 0;          // completed steps
  std::vector<Tensor> m, v;   // moments (adam) / velocity in m (sgd)
};

OptimizerState make_optimizer(const OptimizerConfig& config);
// in-place update; moment buffers are created lazily on the first call
void optimizer_step(std::vector<Tensor>& params,
                    const std::vector<Tensor>& grads, OptimizerState& state);

struct TrainConfig {
  VariantKind variant = VariantKind::dc_bc;
  PositiveMode positive_mode = PositiveMode::view_pair;
  RegKind reg = RegKind::none;
  double lambda = 0.0;
  double tau = 0.1;
  OptimizerConfig optimizer;
  std::size_t batch_size = 128;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  ProjectionConfig projection;

  void validate() const;
};

struct LossPoint {
  std::size_t step = 0;  // 1-based
  double slice0 = 0.0;
  double slice1 = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
};

struct RunRecord {
  TrainConfig config;
  Model model;  // final parameters
  std::vector<LossPoint> curve;          // one point per step
  std::vector<std::size_t> permutation;  // fixed P for perm-ortho, else empty
  double wall_seconds = 0.0;  // informational; not part of determinism
};

struct DivergenceError : std::runtime_error {
  std::size_t step;       // 1-based step that produced a non-finite value
  LossPoint last_finite;  // zeroed when the first step already diverged

  DivergenceError(std::size_t step_, const LossPoint& last);
};

// SubInfoMax + lambda * regularizer on projected embeddings; positives per
// config.positive_mode (disjoint-label delegates to train_supervised_ideal)
RunRecord train_upstream(const TrainConfig& config, const Dataset& data);

// supervision ceiling: InfoMax on each representation half with that task's
// labels; regularizer and lambda are ignored
RunRecord train_supervised_ideal(const TrainConfig& config,
                                 const Dataset& data);

void write_loss_csv(const RunRecord& record, const std::string& path);
std::vector<LossPoint> read_loss_csv(const std::string& path);

}  // namespace disent
