#pragma once

#include "blend/blending.hpp"
#include "blend/pipeline.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace blend::cli {

inline constexpr const char* kVersion = "1.0.0";

// Analysis settings shared by the data subcommands. Read from a JSON config;
// any flag given on the command line replaces the matching key.
struct RunConfig {
  std::string data;
  std::vector<std::string> auxiliary;
  std::vector<std::string> binary;
  std::vector<std::string> outcomes;
  // Response model: either a column of known r_i in the data, or a file of
  // nonrespondents with the variables listed in response_vars. Neither means
  // every selected unit responded.
  std::optional<std::string> response_column;
  std::optional<std::string> nonrespondents;
  std::vector<std::string> response_vars;
  // Empty lists fall back to `auxiliary`.
  std::vector<std::string> propensity_vars;
  std::vector<std::string> calibration_vars;
  Scheme scheme = Scheme::SPS;
  Kappa kappa = kAutoKappa;
  double trim_pct = 0.01;
  VarianceMethod variance = VarianceMethod::Linearization;
  int groups = 40;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  BenchmarkSource benchmark_source = BenchmarkSource::HtEstimated;
  std::optional<std::string> benchmarks;
  CalibrationInit init = CalibrationInit::PropensityWeights;
  std::vector<std::string> estimands;
  int workers = 1;
  std::string out_dir = ".";
};

// Throws BadSpec on unknown keys or malformed values.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
// Canonical JSON echo (stable key order).
std::string config_json(const RunConfig& config);

// Checks the config against the loaded data: referenced variables exist and
// the jackknife has at least two groups. Throws UnknownVariable / BadSpec.
void validate(const RunConfig& config, const Dataset& data);

BlendData load_inputs(const RunConfig& config);
BlendOptions blend_options(const RunConfig& config);

// Entry point behind the executable. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace blend::cli
