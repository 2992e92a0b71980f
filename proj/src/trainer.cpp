#include "disent/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace disent {

PositiveMode positive_mode_from_string(const std::string& s) {
  if (s == "view-pair") return PositiveMode::view_pair;
  if (s == "joint-label") return PositiveMode::joint_label;
  if (s == "disjoint-label") return PositiveMode::disjoint_label;
  throw std::invalid_argument("unknown positive mode: " + s);
}

std::string to_string(PositiveMode m) {
  switch (m) {
    case PositiveMode::view_pair: return "view-pair";
    case PositiveMode::joint_label: return "joint-label";
    case PositiveMode::disjoint_label: return "disjoint-label";
  }
  throw std::invalid_argument("unknown positive mode");
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd-momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd_momentum: return "sgd-momentum";
    case OptimizerKind::adam: return "adam";
  }
  throw std::invalid_argument("unknown optimizer");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw DomainError("momentum must be in [0,1)");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw DomainError("adam betas must be in (0,1)");
  if (!(eps > 0.0)) throw DomainError("adam epsilon must be positive");
}

void TrainConfig::validate() const {
  encoder.validate();
  projection.validate();
  optimizer.validate();
  if (batch_size < 2) throw DomainError("batch size must be at least 2");
  if (steps == 0) throw DomainError("step count must be positive");
  if (!(tau > 0.0)) throw DomainError("tau must be positive");
  if (lambda < 0.0) throw DomainError("lambda must be nonnegative");
  bool cross_head_reg = reg == RegKind::infomin || reg == RegKind::ortho ||
                        reg == RegKind::perm_ortho;
  if (cross_head_reg && projection.head_count != 2)
    throw DomainError(to_string(reg) +
                      " regularizer requires two projection heads");
  if (reg == RegKind::hessian && projection.head_count != 1)
    throw DomainError("hessian regularizer requires a single projection head");
  if (positive_mode != PositiveMode::view_pair && reg != RegKind::none)
    throw DomainError("label-based positive modes do not combine with "
                      "regularizers");
}

DivergenceError::DivergenceError(std::size_t step_, const LossPoint& last)
    : std::runtime_error(
          "training diverged at step " + std::to_string(step_) +
          (last.step == 0
               ? std::string("; no finite step completed")
               : "; last finite total " + std::to_string(last.total) +
                     " at step " + std::to_string(last.step))),
      step(step_),
      last_finite(last) {}

OptimizerState make_optimizer(const OptimizerConfig& config) {
  config.validate();
  return OptimizerState{config, 0, {}, {}};
}

void optimizer_step(std::vector<Tensor>& params,
                    const std::vector<Tensor>& grads, OptimizerState& state) {
  if (params.size() != grads.size())
    throw ShapeError("optimizer_step: " + std::to_string(grads.size()) +
                     " gradients for " + std::to_string(params.size()) +
                     " parameters");
  const OptimizerConfig& c = state.config;
  bool adam = c.kind == OptimizerKind::adam;
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.push_back(Tensor::zeros(p.rows(), p.cols()));
      if (adam) state.v.push_back(Tensor::zeros(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("optimizer state does not match parameter list");
  state.t += 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape("optimizer_step", params[i], grads[i]);
    require_same_shape("optimizer_step", params[i], state.m[i]);
    auto p = params[i].map();
    auto g = grads[i].map();
    auto m = state.m[i].map();
    if (adam) {
      auto v = state.v[i].map();
      m.array() = c.beta1 * m.array() + (1.0 - c.beta1) * g.array();
      v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
      double corr1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
      double corr2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
      p.array() -=
          c.lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + c.eps);
    } else {
      m.array() = c.momentum * m.array() + g.array();
      p.array() -= c.lr * m.array();
    }
  }
}

namespace {

std::vector<std::size_t> sample_permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i)
    std::swap(p[i - 1], p[rng.uniform_below(i)]);
  return p;
}

// both views of the selected pairs: rows [0,n) are view 0, [n,2n) view 1
Tensor stack_views(const std::vector<ViewPair>& pairs,
                   const std::vector<std::size_t>& idx) {
  Tensor a = image_rows(pairs, 0, idx);
  Tensor b = image_rows(pairs, 1, idx);
  Tensor out(a.rows() + b.rows(), a.cols());
  auto rows_a = static_cast<Eigen::Index>(a.rows());
  auto rows_b = static_cast<Eigen::Index>(b.rows());
  out.map().topRows(rows_a) = a.map();
  out.map().bottomRows(rows_b) = b.map();
  return out;
}

bool finite(const LossPoint& p) {
  return std::isfinite(p.slice0) && std::isfinite(p.slice1) &&
         std::isfinite(p.regularizer) && std::isfinite(p.total);
}

void require_dataset(const TrainConfig& config, const Dataset& data) {
  if (data.variant.kind != config.variant)
    throw std::invalid_argument("dataset variant " +
                                to_string(data.variant.kind) +
                                " does not match configured " +
                                to_string(config.variant));
  if (data.train.empty()) throw DomainError("dataset has no training pairs");
}

// shared loop: batch sampling, divergence guard, optimization, curve logging
template <class StepFn>
RunRecord run_loop(const TrainConfig& config, const Dataset& data,
                   std::vector<std::size_t> perm, StepFn&& make_loss) {
  auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = config;
  rec.model = Model::init(config.encoder, config.projection, config.seed);
  rec.permutation = std::move(perm);
  OptimizerState opt = make_optimizer(config.optimizer);
  Rng batch_root(config.seed, "batches");

  for (std::size_t step = 1; step <= config.steps; ++step) {
    Rng brng = batch_root.child(step);
    std::vector<std::size_t> idx(config.batch_size);
    for (auto& i : idx) i = brng.uniform_below(data.train.size());

    Tensor images = stack_views(data.train, idx);
    auto vars = rec.model.bind_params(true);

    LossPoint pt;
    pt.step = step;
    try {
      Var total =
          make_loss(rec, vars, idx, Var::constant(std::move(images)), pt);
      if (!finite(pt))
        throw DivergenceError(step, step > 1 ? rec.curve.back() : LossPoint{});

      backward(total);
      std::vector<Tensor> grads;
      grads.reserve(vars.size());
      for (const Var& v : vars) grads.push_back(v.grad());
      optimizer_step(rec.model.params(), grads, opt);
      for (const Tensor& p : rec.model.params())
        if (!p.all_finite()) throw DivergenceError(step, pt);
    } catch (const DomainError&) {
      // numeric guards tripping mid-step (log of zero, degenerate norms)
      // are the same event as a non-finite loss: the run blew up
      throw DivergenceError(step, step > 1 ? rec.curve.back() : LossPoint{});
    }

    rec.curve.push_back(pt);
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return rec;
}

void fill_point(LossPoint& pt, const Var& s0, const Var& s1, const Var& reg,
                const Var& total) {
  pt.slice0 = s0.value().item();
  pt.slice1 = s1.value().item();
  pt.regularizer = reg.value().item();
  pt.total = total.value().item();
}

}  // namespace

RunRecord train_upstream(const TrainConfig& config, const Dataset& data) {
  config.validate();
  if (config.positive_mode == PositiveMode::disjoint_label)
    return train_supervised_ideal(config, data);
  require_dataset(config, data);

  std::vector<std::size_t> perm;
  if (config.reg == RegKind::perm_ortho)
    perm = sample_permutation(config.projection.out_dim,
                              Rng(config.seed, "perm"));

  SubLayout layout{2, config.projection.z_width()};
  return run_loop(
      config, data, std::move(perm),
      [&](RunRecord& rec, const std::vector<Var>& vars,
          const std::vector<std::size_t>& idx, const Var& images,
          LossPoint& pt) {
        auto proj = rec.model.project(vars, rec.model.encode(vars, images));
        if (config.positive_mode == PositiveMode::view_pair) {
          ContrastiveBatch b = ContrastiveBatch::view_pairs(
              proj.z, config.batch_size, config.tau);
          LossTerms lt = total_objective(
              b, layout, config.reg, config.lambda,
              rec.permutation.empty() ? nullptr : &rec.permutation);
          fill_point(pt, lt.slice_terms[0], lt.slice_terms[1], lt.regularizer,
                     lt.total);
          return lt.total;
        }
        // joint-label positives on the same sliced objective
        std::vector<std::size_t> labels(2 * config.batch_size);
        for (std::size_t i = 0; i < config.batch_size; ++i)
          labels[i] = labels[i + config.batch_size] = data.train[idx[i]].joint;
        auto [a0, a1] = layout.slice(0);
        auto [b0, b1] = layout.slice(1);
        Var s0 = label_infomax(slice_cols(proj.z, a0, a1), labels, config.tau);
        Var s1 = label_infomax(slice_cols(proj.z, b0, b1), labels, config.tau);
        Var total = add(s0, s1);
        fill_point(pt, s0, s1, Var::constant(0.0), total);
        return total;
      });
}

RunRecord train_supervised_ideal(const TrainConfig& config,
                                 const Dataset& data) {
  config.validate();
  if (config.positive_mode != PositiveMode::disjoint_label)
    throw std::invalid_argument(
        "supervised ideal training requires disjoint-label positives");
  require_dataset(config, data);

  auto [task_a, task_b] = variant_tasks(config.variant);
  std::size_t half = config.encoder.rep_dim / 2;
  return run_loop(
      config, data, {},
      [&, task_a = task_a, task_b = task_b](
          RunRecord& rec, const std::vector<Var>& vars,
          const std::vector<std::size_t>& idx, const Var& images,
          LossPoint& pt) {
        Var r = rec.model.encode(vars, images);
        std::size_t n = config.batch_size;
        std::vector<std::size_t> la(2 * n), lb(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
          const FactorTuple& f = data.train[idx[i]].factors0;
          la[i] = la[i + n] = factor_value(f, task_a);
          lb[i] = lb[i + n] = factor_value(f, task_b);
        }
        Var s0 = label_infomax(slice_cols(r, 0, half), la, config.tau);
        Var s1 = label_infomax(slice_cols(r, half, config.encoder.rep_dim), lb,
                               config.tau);
        Var total = add(s0, s1);
        fill_point(pt, s0, s1, Var::constant(0.0), total);
        return total;
      });
}

void write_loss_csv(const RunRecord& record, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,sub_infomax_slice0,sub_infomax_slice1,regularizer,total\n";
  char line[256];
  for (const LossPoint& p : record.curve) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", p.step,
                  p.slice0, p.slice1, p.regularizer, p.total);
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<LossPoint> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "step,sub_infomax_slice0,sub_infomax_slice1,regularizer,total")
    throw DomainError("unexpected loss-curve header in " + path);
  std::vector<LossPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 5)
      throw DomainError("malformed loss-curve row in " + path);
    try {
      LossPoint p;
      p.step = std::stoull(fields[0]);
      p.slice0 = std::stod(fields[1]);
      p.slice1 = std::stod(fields[2]);
      p.regularizer = std::stod(fields[3]);
      p.total = std::stod(fields[4]);
      out.push_back(p);
    } catch (const std::logic_error&) {
      throw DomainError("malformed loss-curve row in " + path);
    }
  }
  return out;
}

}  // namespace disent
