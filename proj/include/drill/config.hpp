// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "drill/data.hpp"
#include "drill/model.hpp"
#include "drill/training.hpp"

namespace drill {

/// One output-layer variant of an ablation or benchmark, e.g.
/// `drill:k=4:res=on`. `label` names the row in result tables.
struct Variant {
  std::string label;
  OutputConfig output;
};

/// Parses `kind[:key=value]...` on top of `base`.
///
/// Keys: k (depth), res (interlayer residual on/off), skip (input skip
/// on/off), act (activation), dropout (none/standard/variational), rate,
/// dj (joint size). Drill rows are labelled `drill-k<k>` plus `+res`,
/// `-noskip`, `-nodrop`, `-<act>`, `-<mode>` or `-p<rate>` for each option
/// given explicitly.
Variant parse_variant(std::string_view spec, const OutputConfig& base);

struct DataPaths {
  std::filesystem::path train;
  std::filesystem::path valid;
  std::filesystem::path test;
  std::int64_t min_count = 1;
};

/// Everything a command needs, read from a sectioned key = value file.
struct RunConfig {
  DataPaths data;
  EncoderConfig encoder{1, 128, 128, 0, 0.0};
  OutputConfig output;
  TrainConfig training;
  EvalOptions eval;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir = "runs";
  std::vector<std::string> ablate_kinds;
  std::vector<std::int64_t> band_boundaries = kDefaultBandBoundaries;
  BandWeighting band_weighting = BandWeighting::token;
  std::vector<std::string> bench_kinds{"weight_tying", "drill:k=4"};
  Index bench_repetitions = 3;
  Index bench_max_windows = 0;  ///< 0 means the whole training split
};

/// Parses config text; relative data paths resolve against `base_dir`.
/// Unknown sections or keys and malformed values raise ConfigError.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Throws ConfigError naming the first data path that does not exist.
void validate_paths(const RunConfig& cfg);

/// Canonical text form; parse_run_config(render_run_config(c)) == c.
std::string render_run_config(const RunConfig& cfg);

ModelConfig model_config(const RunConfig& cfg, Index vocab_size);

/// `model.*`, `encoder.*` and `output.*` lines describing a model.
std::string render_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

}  // namespace drill
