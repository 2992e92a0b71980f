#include "disent/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace disent {

std::string to_string(ProbeInput in) {
  switch (in) {
    case ProbeInput::r: return "r";
    case ProbeInput::r0: return "r0";
    case ProbeInput::r1: return "r1";
    case ProbeInput::z: return "z";
    case ProbeInput::z0: return "z0";
    case ProbeInput::z1: return "z1";
  }
  throw std::invalid_argument("unknown probe input");
}

ProbeInput probe_input_from_string(const std::string& s) {
  for (ProbeInput in : kProbeInputs)
    if (to_string(in) == s) return in;
  throw std::invalid_argument("unknown probe input: " + s);
}

double ProbeReport::at(ProbeInput in, std::size_t task) const {
  if (task >= 2) throw std::invalid_argument("task index out of range");
  return accuracy[static_cast<std::size_t>(in)][task];
}

double& ProbeReport::at(ProbeInput in, std::size_t task) {
  if (task >= 2) throw std::invalid_argument("task index out of range");
  return accuracy[static_cast<std::size_t>(in)][task];
}

void ProbeReport::validate() const {
  for (const auto& row : accuracy)
    for (double a : row)
      if (!(a >= 0.0 && a <= 100.0))
        throw DomainError("probe accuracy outside [0,100]");
}

std::vector<std::string> Diagnosis::names() const {
  std::vector<std::string> out;
  if (random_embedding) out.push_back("Random");
  if (task_difficulty) out.push_back("TaskDifficulty");
  return out;
}

namespace {

// column block of an embedding matrix as its own tensor
Tensor col_block(const Tensor& m, std::size_t c0, std::size_t c1) {
  Tensor out(m.rows(), c1 - c0);
  out.map() = m.map().middleCols(static_cast<Eigen::Index>(c0),
                                 static_cast<Eigen::Index>(c1 - c0));
  return out;
}

struct Embeddings {
  Tensor r, z;
};

Embeddings embed_split(const Model& model, const std::vector<ViewPair>& pairs,
                       std::size_t chunk) {
  if (chunk == 0) throw DomainError("eval chunk size must be positive");
  const auto vars = model.bind_params(false);
  std::size_t n = pairs.size();
  Embeddings e{Tensor::zeros(n, model.encoder_config().rep_dim),
               Tensor::zeros(n, model.projection_config().z_width())};
  for (std::size_t start = 0; start < n; start += chunk) {
    std::size_t count = std::min(chunk, n - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Var images = Var::constant(image_rows(pairs, 0, idx));
    Var r = model.encode(vars, images);
    Model::Projected p = model.project(vars, r);
    auto s = static_cast<Eigen::Index>(start);
    auto c = static_cast<Eigen::Index>(count);
    e.r.map().middleRows(s, c) = r.value().map();
    e.z.map().middleRows(s, c) = p.z.value().map();
  }
  return e;
}

Tensor probe_features(const Embeddings& e, ProbeInput in) {
  std::size_t d = e.r.cols(), zw = e.z.cols();
  switch (in) {
    case ProbeInput::r: return e.r;
    case ProbeInput::r0: return col_block(e.r, 0, d / 2);
    case ProbeInput::r1: return col_block(e.r, d / 2, d);
    case ProbeInput::z: return e.z;
    case ProbeInput::z0: return col_block(e.z, 0, zw / 2);
    case ProbeInput::z1: return col_block(e.z, zw / 2, zw);
  }
  throw std::invalid_argument("unknown probe input");
}

std::vector<std::size_t> task_labels(const std::vector<ViewPair>& pairs,
                                     Factor task) {
  std::vector<std::size_t> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out[i] = factor_value(pairs[i].factors0, task);
  return out;
}

}  // namespace

Tensor row_l2_normalized(const Tensor& m) {
  Tensor out = m;
  for (Eigen::Index i = 0; i < out.map().rows(); ++i) {
    double n = out.map().row(i).norm();
    if (n > 0.0) out.map().row(i) /= n;
  }
  return out;
}

ProbeReport evaluate_run(const Model& model, const Dataset& data,
                         const EvalConfig& config) {
  if (data.train.empty() || data.test.empty())
    throw DomainError("evaluation needs non-empty train and test splits");
  Embeddings train = embed_split(model, data.train, config.chunk);
  Embeddings test = embed_split(model, data.test, config.chunk);

  ProbeReport report;
  report.variant = data.variant.kind;
  auto [task_a, task_b] = variant_tasks(data.variant.kind);
  std::array<Factor, 2> tasks{task_a, task_b};
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<std::size_t> train_labels = task_labels(data.train, tasks[t]);
    std::vector<std::size_t> test_labels = task_labels(data.test, tasks[t]);
    ProbeConfig pc;
    pc.num_classes = factor_cardinality(tasks[t]);
    pc.lr = config.probe_lr;
    pc.max_iters = config.probe_iters;
    pc.tol = config.probe_tol;
    for (ProbeInput in : kProbeInputs) {
      Tensor train_f = probe_features(train, in);
      Tensor test_f = probe_features(test, in);
      if (config.probe_normalize) {
        train_f = row_l2_normalized(train_f);
        test_f = row_l2_normalized(test_f);
      }
      LinearProbe probe = probe_train(train_f, train_labels, pc);
      report.at(in, t) = 100.0 * probe_accuracy(probe, test_f, test_labels);
    }
  }
  report.validate();
  return report;
}

GapReport gap(const ProbeReport& report, double epsilon) {
  GapReport g;
  g.epsilon = epsilon;
  for (std::size_t t = 0; t < 2; ++t) {
    g.z_gap[t] = std::abs(report.at(ProbeInput::z0, t) -
                          report.at(ProbeInput::z1, t));
    g.r_gap[t] = std::abs(report.at(ProbeInput::r0, t) -
                          report.at(ProbeInput::r1, t));
  }
  auto winner = [&](std::size_t t) {
    return report.at(ProbeInput::z0, t) >= report.at(ProbeInput::z1, t) ? 0
                                                                        : 1;
  };
  g.diagonal_trend = winner(0) != winner(1) && g.z_gap[0] > epsilon &&
                     g.z_gap[1] > epsilon;
  return g;
}

std::array<double, 2> chance_levels(VariantKind kind) {
  auto [task_a, task_b] = variant_tasks(kind);
  return {100.0 / static_cast<double>(factor_cardinality(task_a)),
          100.0 / static_cast<double>(factor_cardinality(task_b))};
}

Diagnosis diagnose_degenerate(const ProbeReport& report,
                              const std::array<double, 2>& chance,
                              double delta, double far) {
  constexpr std::array<ProbeInput, 3> z_inputs{ProbeInput::z, ProbeInput::z0,
                                               ProbeInput::z1};
  Diagnosis d;
  d.random_embedding = true;
  for (std::size_t t = 0; t < 2; ++t)
    for (ProbeInput in : z_inputs)
      if (std::abs(report.at(in, t) - chance[t]) > delta)
        d.random_embedding = false;
  for (std::size_t t = 0; t < 2; ++t) {
    double a = report.at(ProbeInput::z, t);
    double b = report.at(ProbeInput::z0, t);
    double c = report.at(ProbeInput::z1, t);
    double spread = std::max({a, b, c}) - std::min({a, b, c});
    if (spread < delta && a > chance[t] + far) d.task_difficulty = true;
  }
  return d;
}

ReproStats repro_stats(const std::vector<GapReport>& runs) {
  if (runs.empty()) throw DomainError("repro_stats needs at least one run");
  ReproStats s;
  double r = static_cast<double>(runs.size());
  for (std::size_t t = 0; t < 2; ++t) {
    for (const GapReport& g : runs) s.gaps[t].push_back(g.z_gap[t]);
    double sum = 0.0;
    for (double g : s.gaps[t]) sum += g;
    s.mean[t] = sum / r;
    double sq = 0.0;
    for (double g : s.gaps[t]) sq += (g - s.mean[t]) * (g - s.mean[t]);
    s.variance[t] = sq / r;  // population variance (divide by run count)
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i].diagonal_trend) continue;
    s.trend_count += 1;
    if (i > 0) s.trend_count_tail += 1;
  }
  return s;
}

double round1(double x) {
  // the small nudge keeps exact halves like 7.55 rounding up despite the
  // binary representation sitting a hair below
  return std::floor(x * 10.0 + 0.5 + 1e-9) / 10.0;
}

namespace {

using nlohmann::json;

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t hash_from_hex(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw DomainError("malformed config hash: " + s);
  return std::stoull(s, nullptr, 16);
}

}  // namespace

std::string report_to_json(const RunReport& report) {
  auto [task_a, task_b] = variant_tasks(report.variant);
  std::array<std::string, 2> task{to_string(task_a), to_string(task_b)};

  json j;
  j["config_hash"] = hash_hex(report.config_hash);
  j["seed"] = report.seed;
  j["variant"] = to_string(report.variant);
  for (ProbeInput in : kProbeInputs)
    for (std::size_t t = 0; t < 2; ++t)
      j["probe"][to_string(in)][task[t]] = report.probe.at(in, t);
  for (std::size_t t = 0; t < 2; ++t) {
    j["gaps"]["z"][task[t]] = report.gaps.z_gap[t];
    j["gaps"]["r"][task[t]] = report.gaps.r_gap[t];
  }
  j["gaps"]["epsilon"] = report.gaps.epsilon;
  j["diagonal_trend"] = report.gaps.diagonal_trend;
  j["flags"] = report.flags.names();
  j["permutation_P"] = report.permutation;
  j["loss_curve_path"] = report.loss_curve_path;
  return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    RunReport r;
    r.config_hash = hash_from_hex(j.at("config_hash").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.variant = variant_kind_from_string(j.at("variant").get<std::string>());
    auto [task_a, task_b] = variant_tasks(r.variant);
    std::array<std::string, 2> task{to_string(task_a), to_string(task_b)};
    r.probe.variant = r.variant;
    for (ProbeInput in : kProbeInputs)
      for (std::size_t t = 0; t < 2; ++t)
        r.probe.at(in, t) =
            j.at("probe").at(to_string(in)).at(task[t]).get<double>();
    for (std::size_t t = 0; t < 2; ++t) {
      r.gaps.z_gap[t] = j.at("gaps").at("z").at(task[t]).get<double>();
      r.gaps.r_gap[t] = j.at("gaps").at("r").at(task[t]).get<double>();
    }
    r.gaps.epsilon = j.at("gaps").at("epsilon").get<double>();
    r.gaps.diagonal_trend = j.at("diagonal_trend").get<bool>();
    for (const auto& f : j.at("flags")) {
      std::string name = f.get<std::string>();
      if (name == "Random")
        r.flags.random_embedding = true;
      else if (name == "TaskDifficulty")
        r.flags.task_difficulty = true;
      else
        throw DomainError("unknown degeneracy flag: " + name);
    }
    r.permutation = j.at("permutation_P").get<std::vector<std::size_t>>();
    r.loss_curve_path = j.at("loss_curve_path").get<std::string>();
    r.probe.validate();
    return r;
  } catch (const json::exception& e) {
    throw DomainError(std::string("malformed run report: ") + e.what());
  }
}

void save_report(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << report_to_json(report);
  if (!out) throw std::runtime_error("write failed for " + path);
}

RunReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return report_from_json(buf.str());
}

std::string report_table_csv(const std::vector<RunReport>& runs,
                             const std::vector<std::string>& labels) {
  if (runs.empty()) throw DomainError("report table needs at least one run");
  if (labels.size() != runs.size())
    throw DomainError("one label per run required");
  for (const RunReport& r : runs)
    if (r.variant != runs.front().variant)
      throw DomainError("report table mixes dataset variants");

  auto [task_a, task_b] = variant_tasks(runs.front().variant);
  std::array<std::string, 2> task{to_string(task_a), to_string(task_b)};
  std::ostringstream out;
  out << "input";
  for (const std::string& label : labels)
    out << ',' << label << ' ' << task[0] << ',' << label << ' ' << task[1];
  out << '\n';

  char cell[32];
  auto put = [&](double v) {
    std::snprintf(cell, sizeof cell, "%.1f", round1(v));
    out << ',' << cell;
  };
  for (ProbeInput in : kProbeInputs) {
    out << to_string(in);
    for (const RunReport& r : runs)
      for (std::size_t t = 0; t < 2; ++t) put(r.probe.at(in, t));
    out << '\n';
  }
  out << "|C(z0)-C(z1)|";
  for (const RunReport& r : runs)
    for (std::size_t t = 0; t < 2; ++t) put(r.gaps.z_gap[t]);
  out << '\n';
  return out.str();
}

}  // namespace disent
