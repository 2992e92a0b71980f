#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "disent/model.hpp"
#include "disent/synthdata.hpp"

namespace disent {

// classification inputs probed for every task, in report order
enum class ProbeInput { r, r0, r1, z, z0, z1 };
inline constexpr std::array<ProbeInput, 6> kProbeInputs{
    ProbeInput::r, ProbeInput::r0, ProbeInput::r1,
    ProbeInput::z, ProbeInput::z0, ProbeInput::z1};

std::string to_string(ProbeInput in);
ProbeInput probe_input_from_string(const std::string& s);

// accuracy percentages per classification input and task; task order follows
// variant_tasks(variant)
struct ProbeReport {
  VariantKind variant = VariantKind::dc_bc;
  std::array<std::array<double, 2>, 6> accuracy{};

  double at(ProbeInput in, std::size_t task) const;
  double& at(ProbeInput in, std::size_t task);
  void validate() const;  // every entry in [0,100]
};

// |C_t(z0) - C_t(z1)| per task plus the r-level analogue; diagonal_trend is
// true when the better subembedding differs across tasks and both gaps clear
// epsilon
struct GapReport {
  std::array<double, 2> z_gap{};
  std::array<double, 2> r_gap{};
  bool diagonal_trend = false;
  double epsilon = 1.0;
};

struct Diagnosis {
  bool random_embedding = false;  // everything sits at chance
  bool task_difficulty = false;   // one task saturates z, z0 and z1 alike
  bool any() const { return random_embedding || task_difficulty; }
  std::vector<std::string> names() const;  // {"Random", "TaskDifficulty"}
};

// per-task gap lists over a seed campaign with mean and population variance,
// plus diagonal-trend counts with and without the first run
struct ReproStats {
  std::array<std::vector<double>, 2> gaps;
  std::array<double, 2> mean{};
  std::array<double, 2> variance{};
  std::size_t trend_count = 0;
  std::size_t trend_count_tail = 0;
};

struct EvalConfig {
  std::size_t chunk = 256;  // forward-pass rows per graph
  double probe_lr = 0.0;    // 0 = auto step size
  std::size_t probe_iters = 500;
  double probe_tol = 1e-6;
  // row-l2-normalize each probe input before fitting; discards the magnitude
  // component the cosine training objective leaves unconstrained
  bool probe_normalize = false;
};

// each row scaled to unit l2 norm (zero rows stay zero)
Tensor row_l2_normalized(const Tensor& m);

// fresh linear probe per input and task, fit on the train split, scored on
// the test split; the model is never modified
ProbeReport evaluate_run(const Model& model, const Dataset& data,
                         const EvalConfig& config = {});

GapReport gap(const ProbeReport& report, double epsilon = 1.0);

std::array<double, 2> chance_levels(VariantKind kind);  // percent

Diagnosis diagnose_degenerate(const ProbeReport& report,
                              const std::array<double, 2>& chance,
                              double delta = 3.0, double far = 20.0);

ReproStats repro_stats(const std::vector<GapReport>& runs);

double round1(double x);  // table rounding: one decimal, halves up

// on-disk record of one evaluated run
struct RunReport {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  VariantKind variant = VariantKind::dc_bc;
  ProbeReport probe;
  GapReport gaps;
  Diagnosis flags;
  std::vector<std::size_t> permutation;  // fixed P when perm-ortho ran
  std::string loss_curve_path;
};

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

// accuracy table over several runs: one row per classification input, two
// task columns per run, subembedding gap row at the bottom
std::string report_table_csv(const std::vector<RunReport>& runs,
                             const std::vector<std::string>& labels);

}  // namespace disent
