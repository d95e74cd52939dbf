#pragma once
// Run configuration: a flat JSON object whose keys mirror the fields below.
// Unknown keys are rejected; command-line flags are applied afterwards.

#include <filesystem>
#include <string>

#include "hfmf/model_config.hpp"
#include "hfmf/training.hpp"

namespace hfmf {

struct RunConfig {
  TrainConfig train;
  ModelDims dims;
  int n_bins = 15;
  int n_per_class = 1000;
  std::string data_dir = "data";
  std::string out_dir = "runs";

  /// Throws ConfigurationError on inconsistent values.
  void validate() const;
};

/// Parses and validates. ConfigurationError names the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key, so that parse_run_config(run_config_json(c)) reproduces c.
std::string run_config_json(const RunConfig& config);

}  // namespace hfmf
