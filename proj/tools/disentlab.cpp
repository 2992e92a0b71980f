#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "disent/config.hpp"
#include "disent/eval.hpp"
#include "disent/trainer.hpp"

namespace fs = std::filesystem;
using namespace disent;

namespace {

int fail_usage(const std::string& msg) {
  std::cerr << "error: " << msg << '\n';
  return 1;
}

int fail_runtime(const std::string& msg) {
  std::cerr << "error: " << msg << '\n';
  return 2;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  return s;
}

std::string fmt_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("double format failed");
  return std::string(buf, p);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path out_or_default(const std::string& out, const std::string& leaf) {
  if (!out.empty()) return out;
  const char* root = std::getenv("DISENTLAB_OUT");
  if (!root || !*root)
    throw DomainError("no --out given and DISENTLAB_OUT is unset");
  return fs::path(root) / leaf;
}

RunReport build_report(const ExperimentConfig& cfg, const ProbeReport& probe) {
  RunReport rep;
  rep.config_hash = cfg.hash();
  rep.seed = cfg.train.seed;
  rep.variant = cfg.train.variant;
  rep.probe = probe;
  rep.gaps = gap(probe, cfg.trend_epsilon);
  rep.flags = diagnose_degenerate(probe, chance_levels(rep.variant),
                                  cfg.degeneracy_delta);
  return rep;
}

void run_one(const ExperimentConfig& cfg, const fs::path& dir) {
  Dataset data = load_dataset(cfg.data_path);
  fs::create_directories(dir);
  cfg.save((dir / "config.txt").string());
  RunRecord rec = train_upstream(cfg.train, data);
  save_checkpoint(rec.model, (dir / "checkpoint.bin").string());
  write_loss_csv(rec, (dir / "loss_curve.csv").string());
  ProbeReport probe = evaluate_run(rec.model, data, cfg.eval);
  RunReport rep = build_report(cfg, probe);
  rep.permutation = rec.permutation;
  rep.loss_curve_path = "loss_curve.csv";
  save_report(rep, (dir / "report.json").string());
  std::cout << "run " << dir.string() << " hash " << hash_hex(rep.config_hash)
            << " seed " << rep.seed << " final-loss "
            << rec.curve.back().total << " wall " << rec.wall_seconds
            << "s\n";
  std::cout << report_table_csv({rep}, {dir.filename().string()});
}

int cmd_gen(const std::string& variant_s, std::uint64_t seed,
            const std::string& out, std::size_t train, std::size_t test) {
  DatasetVariant v;
  try {
    v.kind = variant_kind_from_string(upper(variant_s));
    if (train == 0 || test == 0)
      throw DomainError("train and test sizes must be positive");
    v.train_size = train;
    v.test_size = test;
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  try {
    build_dataset(v, seed, out);
    std::ifstream in(out, std::ios::binary);
    in.seekg(8);  // container checksum slot
    std::uint64_t sum = 0;
    in.read(reinterpret_cast<char*>(&sum), sizeof sum);
    if (!in) throw std::runtime_error("cannot read back " + out);
    std::cout << "wrote " << out << " (" << train << "+" << test
              << " pairs) checksum " << hash_hex(sum) << '\n';
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out) {
  ExperimentConfig cfg;
  fs::path dir;
  try {
    cfg = ExperimentConfig::load(config_path);
    if (!data_override.empty()) cfg.data_path = data_override;
    if (cfg.data_path.empty())
      throw DomainError(
          "no dataset: set data = PATH in the config or pass --data");
    cfg.train.validate();
    dir = out_or_default(out, "run-" + hash_hex(cfg.hash()) + "-s" +
                                  std::to_string(cfg.train.seed));
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  try {
    run_one(cfg, dir);
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

int cmd_eval(const std::string& run_dir, const std::string& data_path) {
  ExperimentConfig cfg;
  std::uint64_t run_hash = 0;
  fs::path dir;
  try {
    dir = run_dir;
    cfg = ExperimentConfig::load((dir / "config.txt").string());
    run_hash = cfg.hash();  // run identity precedes any --data override
    if (!data_path.empty()) cfg.data_path = data_path;
    if (cfg.data_path.empty())
      throw DomainError("no dataset: pass --data or set data = in the config");
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  try {
    Model model = load_checkpoint((dir / "checkpoint.bin").string());
    Dataset data = load_dataset(cfg.data_path);
    if (data.variant.kind != cfg.train.variant)
      throw DomainError("dataset variant does not match the run config");
    ProbeReport probe = evaluate_run(model, data, cfg.eval);
    RunReport rep = build_report(cfg, probe);
    rep.config_hash = run_hash;
    fs::path report_path = dir / "report.json";
    rep.loss_curve_path = "loss_curve.csv";
    if (fs::exists(report_path)) {
      RunReport old = load_report(report_path.string());
      rep.permutation = old.permutation;  // fixed when the run trained
      rep.loss_curve_path = old.loss_curve_path;
    }
    save_report(rep, report_path.string());
    std::cout << report_table_csv({rep}, {dir.filename().string()});
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

struct Cell {
  ExperimentConfig config;
  fs::path dir;
  std::string label;
};

// grid cells run as child processes of this same binary, up to `jobs` at a
// time; each child's output lands in its run directory
void run_cells(const std::vector<Cell>& cells, std::size_t jobs) {
  if (jobs == 0) jobs = 1;
  std::error_code ec;
  fs::path self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) throw std::runtime_error("cannot resolve own binary path");

  for (const Cell& c : cells) {
    fs::create_directories(c.dir);
    c.config.save((c.dir / "config.txt").string());
  }

  std::map<pid_t, std::string> active;
  std::vector<std::string> failures;
  std::size_t next = 0;
  auto reap = [&] {
    int status = 0;
    pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw std::runtime_error("waitpid failed");
    auto it = active.find(pid);
    if (it == active.end()) return;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      failures.push_back(it->second);
    active.erase(it);
  };
  while (next < cells.size() || !active.empty()) {
    if (next < cells.size() && active.size() < jobs) {
      const Cell& c = cells[next++];
      std::string config_path = (c.dir / "config.txt").string();
      std::string out_path = c.dir.string();
      std::string log_path = (c.dir / "log.txt").string();
      pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
          dup2(fd, 1);
          dup2(fd, 2);
          ::close(fd);
        }
        execl(self.c_str(), self.c_str(), "train", "--config",
              config_path.c_str(), "--out", out_path.c_str(),
              static_cast<char*>(nullptr));
        _exit(127);
      }
      active.emplace(pid, c.label);
    } else {
      reap();
    }
  }
  if (!failures.empty()) {
    std::string msg = "failed runs:";
    for (const auto& f : failures) msg += ' ' + f;
    throw std::runtime_error(msg);
  }
}

std::vector<RunReport> collect_reports(const std::vector<Cell>& cells) {
  std::vector<RunReport> out;
  for (const Cell& c : cells)
    out.push_back(load_report((c.dir / "report.json").string()));
  return out;
}

int cmd_ablate(const std::string& config_path,
               const std::vector<double>& lambdas,
               const std::vector<std::string>& reg_names,
               const std::string& out, std::size_t jobs) {
  std::vector<Cell> cells;
  fs::path dir;
  try {
    ExperimentConfig base = ExperimentConfig::load(config_path);
    if (base.data_path.empty())
      throw DomainError("no dataset: set data = PATH in the config");
    if (lambdas.empty()) throw DomainError("no lambda values given");
    if (reg_names.empty()) throw DomainError("no regularizers given");
    dir = out_or_default(out, "ablate-" + hash_hex(base.hash()));
    for (const std::string& name : reg_names) {
      RegKind reg = reg_kind_from_string(name);
      for (double l : lambdas) {
        Cell c;
        c.config = base;
        c.config.train.positive_mode = PositiveMode::view_pair;
        c.config.train.reg = reg;
        c.config.train.lambda = l;
        c.config.train.projection.head_count =
            reg == RegKind::hessian ? 1 : 2;
        c.config.train.validate();
        c.label = to_string(reg) + " l=" + fmt_double(l);
        c.dir = dir / (to_string(reg) + "_lambda" + fmt_double(l));
        cells.push_back(std::move(c));
      }
    }
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  try {
    run_cells(cells, jobs);
    std::vector<RunReport> reports = collect_reports(cells);
    std::vector<std::string> labels;
    for (const Cell& c : cells) labels.push_back(c.label);
    std::string table = report_table_csv(reports, labels);
    std::ofstream tf(dir / "table.csv", std::ios::trunc);
    tf << table;
    std::cout << table;
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

int cmd_repro(const std::string& config_path, std::size_t seeds,
              const std::string& out, std::size_t jobs) {
  std::vector<Cell> cells;
  fs::path dir;
  VariantKind variant = VariantKind::dc_bc;
  try {
    ExperimentConfig base = ExperimentConfig::load(config_path);
    if (base.data_path.empty())
      throw DomainError("no dataset: set data = PATH in the config");
    if (seeds == 0) throw DomainError("need at least one seed");
    base.train.validate();
    variant = base.train.variant;
    dir = out_or_default(out, "repro-" + hash_hex(base.hash()));
    for (std::size_t i = 0; i < seeds; ++i) {
      Cell c;
      c.config = base;
      c.config.train.seed = base.train.seed + i;  // derived seeds
      c.label = "run" + std::to_string(i);
      c.dir = dir / c.label;
      cells.push_back(std::move(c));
    }
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
  try {
    run_cells(cells, jobs);
    std::vector<RunReport> reports = collect_reports(cells);
    std::vector<std::string> labels;
    for (const Cell& c : cells) labels.push_back(c.label);
    std::string table = report_table_csv(reports, labels);
    std::ofstream tf(dir / "table.csv", std::ios::trunc);
    tf << table;
    std::cout << table;

    std::vector<GapReport> gaps;
    for (const RunReport& r : reports) gaps.push_back(r.gaps);
    ReproStats stats = repro_stats(gaps);
    auto [task_a, task_b] = variant_tasks(variant);
    std::array<std::string, 2> task{to_string(task_a), to_string(task_b)};
    for (std::size_t t = 0; t < 2; ++t) {
      std::cout << task[t] << ": gaps";
      for (double g : stats.gaps[t]) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.1f", round1(g));
        std::cout << buf;
      }
      char tail[64];
      std::snprintf(tail, sizeof tail, " mean %.1f variance %.1f",
                    round1(stats.mean[t]), round1(stats.variance[t]));
      std::cout << tail << '\n';
    }
    std::cout << "diagonal trend: " << stats.trend_count << " of "
              << reports.size() << " runs (" << stats.trend_count_tail
              << " of " << reports.size() - 1 << " excluding run 0)\n";
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

int cmd_report(const std::vector<std::string>& runs, const std::string& format,
               const std::string& out_file) {
  if (format != "csv" && format != "json")
    return fail_usage("unknown report format: " + format);
  try {
    std::string text;
    if (format == "csv") {
      std::vector<RunReport> reports;
      std::vector<std::string> labels;
      for (const std::string& r : runs) {
        fs::path dir(r);
        reports.push_back(load_report((dir / "report.json").string()));
        labels.push_back(dir.filename().string());
      }
      text = report_table_csv(reports, labels);
    } else {
      nlohmann::json arr = nlohmann::json::array();
      for (const std::string& r : runs)
        arr.push_back(nlohmann::json::parse(slurp(fs::path(r) / "report.json")));
      text = arr.dump(2) + "\n";
    }
    std::cout << text;
    if (!out_file.empty()) {
      std::ofstream out(out_file, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open " + out_file);
      out << text;
    }
    return 0;
  } catch (const std::exception& e) {
    return fail_runtime(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale contrastive disentanglement laboratory"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a dataset file");
  std::string gen_variant, gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_train = 20000, gen_test = 2000;
  gen->add_option("--variant", gen_variant, "dc-bc, dc-dl or bc-dl")
      ->required();
  gen->add_option("--seed", gen_seed, "generation seed")->required();
  gen->add_option("--out", gen_out, "output file")->required();
  gen->add_option("--train", gen_train, "training pairs");
  gen->add_option("--test", gen_test, "test pairs");

  auto* train = app.add_subcommand("train", "train and evaluate one run");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config, "experiment config")->required();
  train->add_option("--data", train_data, "dataset file (overrides config)");
  train->add_option("--out", train_out, "run directory");

  auto* eval = app.add_subcommand("eval", "re-evaluate a stored run");
  std::string eval_run, eval_data;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--data", eval_data, "dataset file")->required();

  auto* ablate = app.add_subcommand("ablate", "regularizer / lambda grid");
  std::string ab_config, ab_out;
  std::vector<double> ab_lambdas;
  std::vector<std::string> ab_regs;
  std::size_t ab_jobs = 1;
  ablate->add_option("--config", ab_config, "base experiment config")
      ->required();
  ablate->add_option("--lambdas", ab_lambdas, "comma-separated weights")
      ->delimiter(',')
      ->required();
  ablate->add_option("--regs", ab_regs, "comma-separated regularizers")
      ->delimiter(',')
      ->required();
  ablate->add_option("--out", ab_out, "grid directory");
  ablate->add_option("--jobs", ab_jobs, "concurrent runs");

  auto* repro = app.add_subcommand("repro", "multi-seed reproducibility");
  std::string rp_config, rp_out;
  std::size_t rp_seeds = 6, rp_jobs = 1;
  repro->add_option("--config", rp_config, "base experiment config")
      ->required();
  repro->add_option("--seeds", rp_seeds, "number of seeds");
  repro->add_option("--out", rp_out, "campaign directory");
  repro->add_option("--jobs", rp_jobs, "concurrent runs");

  auto* report = app.add_subcommand("report", "merge stored run reports");
  std::vector<std::string> rep_runs;
  std::string rep_format = "csv", rep_out;
  report->add_option("--runs", rep_runs, "run directories")->required();
  report->add_option("--format", rep_format, "csv or json");
  report->add_option("--out", rep_out, "also write to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (app.got_subcommand(gen))
    return cmd_gen(gen_variant, gen_seed, gen_out, gen_train, gen_test);
  if (app.got_subcommand(train))
    return cmd_train(train_config, train_data, train_out);
  if (app.got_subcommand(eval)) return cmd_eval(eval_run, eval_data);
  if (app.got_subcommand(ablate))
    return cmd_ablate(ab_config, ab_lambdas, ab_regs, ab_out, ab_jobs);
  if (app.got_subcommand(repro))
    return cmd_repro(rp_config, rp_seeds, rp_out, rp_jobs);
  if (app.got_subcommand(report))
    return cmd_report(rep_runs, rep_format, rep_out);
  return fail_usage("no subcommand given");
}
