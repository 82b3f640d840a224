// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "drill/config.hpp"
#include "drill/data.hpp"
#include "drill/evaluation.hpp"

namespace drill {

/// Settings shared by every command, usually from global CLI flags.
struct CommandOptions {
  std::optional<std::filesystem::path> out_dir;  ///< replaces run.out_dir
  std::optional<std::uint64_t> seed;             ///< replaces run.seeds with this single seed
  int threads = 1;
  std::ostream* progress = nullptr;  ///< human-readable progress lines
};

/// Applies overrides and thread settings; returns the effective config.
RunConfig prepare_run(RunConfig cfg, const CommandOptions& options);

struct Dataset {
  Vocab vocab;
  std::vector<TokenId> train;
  std::vector<TokenId> valid;
  std::vector<TokenId> test;

  std::span<const TokenId> split(std::string_view name) const;  ///< "train", "valid" or "test"
};

/// Builds the vocabulary from the training split and encodes all three.
Dataset load_dataset(const RunConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  Real best_val_ppl = 0.0;
  Real test_ppl = 0.0;
  Index best_epoch = 0;
};

Real median(std::vector<Real> values);

/// Trains one model per seed. Writes `log_seed<N>.csv`, `best_seed<N>.ckpt`
/// and `summary.csv` (one row per seed plus a median row) into run.out_dir.
std::vector<SeedResult> cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr);

struct AblationRow {
  std::string variant;
  std::int64_t output_params = 0;
  Real val_ppl = 0.0;   ///< median over seeds
  Real test_ppl = 0.0;  ///< median over seeds
  std::vector<SeedResult> runs;
};

/// Trains every `ablate.kinds` variant for every seed with identical data
/// and encoder. Writes `ablation.csv` (variant,output_params,val_ppl,test_ppl),
/// `ablation_runs.csv` and per-run logs and checkpoints under
/// `<out_dir>/<variant>/`.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Per-band comparison of two checkpoints on one split. Both checkpoints and
/// the configured data must share one vocabulary hash. Writes `csv_path`.
BandReport cmd_bands(const RunConfig& cfg, const std::filesystem::path& baseline,
                     const std::filesystem::path& comparison, const std::string& split,
                     const std::filesystem::path& csv_path);

struct BenchRow {
  std::string variant;
  Real seconds_per_epoch = 0.0;  ///< mean over timed repetitions
  Real ratio = 0.0;              ///< relative to the weight_tying row
  std::vector<Real> repetitions;
};

/// Epoch-time benchmark over `bench.kinds`: one warm-up epoch, then
/// `bench.repetitions` timed epochs per variant. Writes `bench.csv`.
std::vector<BenchRow> cmd_bench(const RunConfig& cfg, std::ostream* progress = nullptr);
void write_bench_table(const std::vector<BenchRow>& rows, std::ostream& out);

struct EvalResult {
  Real perplexity = 0.0;
  std::size_t scored_tokens = 0;
};

/// Perplexity of a checkpoint on one split; optionally exports the
/// per-token losses as `position,target_id,nll`.
EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::string& split,
                    const std::optional<std::filesystem::path>& losses_csv = std::nullopt);

/// Parameter report of the configured model. Writes `params.csv`.
ParamReport cmd_params(const RunConfig& cfg);

/// `# `-prefixed copy of the effective config, placed at the top of every CSV.
std::string config_comment(const RunConfig& cfg);

}  // namespace drill
