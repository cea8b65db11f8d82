#pragma once

// Run configuration: flat "dotted.key = value" text.
//
// Lines are trimmed; blank lines and lines starting with '#' are skipped.
// Every key has a default, unknown or repeated keys are rejected, and the
// manifest lists every key with its resolved value (it parses back to the
// same config).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "upa/attack.hpp"
#include "upa/dataset.hpp"
#include "upa/policy.hpp"

namespace upa::config {

struct EvalSpec {
  std::size_t count = 20;
  std::uint64_t seed = 200;
  std::size_t placements = 5;
  std::optional<double> theta_act;  // unset: half the RMS clean action norm
};

struct AnalysisSpec {
  std::size_t pairs = 100;
  std::uint64_t seed = 300;
  std::size_t cca_k = 8;
};

struct RunConfig {
  policy::PolicySpec surrogate = policy::PolicySpec::surrogate_default();
  policy::PolicySpec victim = policy::PolicySpec::victim_default();
  attack::AttackConfig attack;
  std::string probe_set = "combined";    // combined | action | direction | custom
  std::vector<std::string> probe_phrases;  // resolved list; required for custom
  data::DatasetSpec train;
  EvalSpec eval;
  AnalysisSpec analysis;
  std::string output_dir = "upa_out";

  data::DatasetSpec eval_dataset() const;
  data::DatasetSpec analysis_dataset() const;
};

// Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Fills derived values and checks every invariant except model distinctness.
void resolve(RunConfig& cfg);
// Surrogate and victim seeds must differ for any transfer experiment.
void require_distinct_models(const RunConfig& cfg);

std::string manifest(const RunConfig& cfg);
std::vector<std::string> keys();

// FNV-1a 64 of the manifest with the output directory blanked, as 16 lowercase hex digits.
std::string config_hash(const RunConfig& cfg);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace upa::config
