#include "disent/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "disent/rng.hpp"

namespace disent {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
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

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
  throw DomainError("invalid value for " + key + ": " + v);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') bad_value(key, v);
    return n;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  bad_value(key, v);
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    std::size_t comma = v.find(',', pos);
    out.push_back(parse_size(key, trim(v.substr(pos, comma - pos))));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <class F>
auto parse_enum(const std::string& key, const std::string& v, F&& f) {
  try {
    return f(v);
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.variant =
             parse_enum("variant", upper(v), variant_kind_from_string);
       }},
      {"positive_mode",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.positive_mode =
             parse_enum("positive_mode", v, positive_mode_from_string);
       }},
      {"reg",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.reg = parse_enum("reg", v, reg_kind_from_string);
       }},
      {"lambda",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.lambda = parse_double("lambda", v);
       }},
      {"tau",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.tau = parse_double("tau", v);
       }},
      {"optimizer",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.kind =
             parse_enum("optimizer", v, optimizer_kind_from_string);
       }},
      {"lr",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.lr = parse_double("lr", v);
       }},
      {"momentum",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.momentum = parse_double("momentum", v);
       }},
      {"beta1",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.beta1 = parse_double("beta1", v);
       }},
      {"beta2",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.beta2 = parse_double("beta2", v);
       }},
      {"adam_eps",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.optimizer.eps = parse_double("adam_eps", v);
       }},
      {"batch_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.batch_size = parse_size("batch_size", v);
       }},
      {"steps",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.steps = parse_size("steps", v);
       }},
      {"seed",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.seed = parse_u64("seed", v);
       }},
      {"arch",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.arch = parse_enum("arch", v, encoder_arch_from_string);
       }},
      {"image_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.image_size = parse_size("image_size", v);
       }},
      {"channels",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.channels = parse_size("channels", v);
       }},
      {"rep_dim",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.rep_dim = parse_size("rep_dim", v);
       }},
      {"conv_channels",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.conv_channels = parse_size_list("conv_channels", v);
       }},
      {"mlp_hidden",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.encoder.mlp_hidden = parse_size_list("mlp_hidden", v);
       }},
      {"head_count",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.projection.head_count = parse_size("head_count", v);
       }},
      {"out_dim",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.projection.out_dim = parse_size("out_dim", v);
       }},
      {"hidden_dim",
       [](ExperimentConfig& c, const std::string& v) {
         c.train.projection.hidden_dim = parse_size("hidden_dim", v);
       }},
      {"eval_chunk",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.chunk = parse_size("eval_chunk", v);
       }},
      {"probe_lr",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.probe_lr = parse_double("probe_lr", v);
       }},
      {"probe_iters",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.probe_iters = parse_size("probe_iters", v);
       }},
      {"probe_normalize",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.probe_normalize = parse_bool("probe_normalize", v);
       }},
      {"probe_tol",
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.probe_tol = parse_double("probe_tol", v);
       }},
      {"trend_epsilon",
       [](ExperimentConfig& c, const std::string& v) {
         c.trend_epsilon = parse_double("trend_epsilon", v);
       }},
      {"degeneracy_delta",
       [](ExperimentConfig& c, const std::string& v) {
         c.degeneracy_delta = parse_double("degeneracy_delta", v);
       }},
      {"data",
       [](ExperimentConfig& c, const std::string& v) { c.data_path = v; }},
  };
  return table;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw DomainError("malformed config line: " + t);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end())
      throw DomainError("unknown config key: " + key);
    if (!seen.insert(key).second)
      throw DomainError("duplicate config key: " + key);
    it->second(config, value);
  }
  return config;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ExperimentConfig::canonical_text() const {
  std::map<std::string, std::string> kv;
  kv["adam_eps"] = fmt_double(train.optimizer.eps);
  kv["arch"] = to_string(train.encoder.arch);
  kv["batch_size"] = std::to_string(train.batch_size);
  kv["beta1"] = fmt_double(train.optimizer.beta1);
  kv["beta2"] = fmt_double(train.optimizer.beta2);
  kv["channels"] = std::to_string(train.encoder.channels);
  kv["conv_channels"] = fmt_list(train.encoder.conv_channels);
  kv["data"] = data_path;
  kv["degeneracy_delta"] = fmt_double(degeneracy_delta);
  kv["eval_chunk"] = std::to_string(eval.chunk);
  kv["head_count"] = std::to_string(train.projection.head_count);
  kv["hidden_dim"] = std::to_string(train.projection.hidden_dim);
  kv["image_size"] = std::to_string(train.encoder.image_size);
  kv["lambda"] = fmt_double(train.lambda);
  kv["lr"] = fmt_double(train.optimizer.lr);
  kv["mlp_hidden"] = fmt_list(train.encoder.mlp_hidden);
  kv["momentum"] = fmt_double(train.optimizer.momentum);
  kv["optimizer"] = to_string(train.optimizer.kind);
  kv["out_dim"] = std::to_string(train.projection.out_dim);
  kv["positive_mode"] = to_string(train.positive_mode);
  kv["probe_iters"] = std::to_string(eval.probe_iters);
  kv["probe_lr"] = fmt_double(eval.probe_lr);
  kv["probe_normalize"] = eval.probe_normalize ? "1" : "0";
  kv["probe_tol"] = fmt_double(eval.probe_tol);
  kv["reg"] = to_string(train.reg);
  kv["rep_dim"] = std::to_string(train.encoder.rep_dim);
  kv["seed"] = std::to_string(train.seed);
  kv["steps"] = std::to_string(train.steps);
  kv["tau"] = fmt_double(train.tau);
  kv["trend_epsilon"] = fmt_double(trend_epsilon);
  kv["variant"] = lower(to_string(train.variant));
  std::string out;
  for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const {
  std::string text = canonical_text();
  return Rng::fnv1a(text.data(), text.size());
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << canonical_text();
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace disent
