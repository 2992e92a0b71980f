#pragma once

#include <cstdint>
#include <string>

#include "disent/eval.hpp"
#include "disent/trainer.hpp"

namespace disent {

// flat key = value experiment description; parsing rejects unknown keys and
// hashing goes through a canonical rendering so key order never matters
struct ExperimentConfig {
  TrainConfig train;
  EvalConfig eval;
  double trend_epsilon = 1.0;     // diagonal-trend margin in points
  double degeneracy_delta = 3.0;  // chance / spread band in points
  std::string data_path;          // dataset file backing the run

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string canonical_text() const;  // every key, sorted, one per line
  std::uint64_t hash() const;
  void save(const std::string& path) const;
};

}  // namespace disent
