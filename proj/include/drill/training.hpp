// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "drill/evaluation.hpp"
#include "drill/model.hpp"

namespace drill {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  Real lr = 20.0;
  Real lr_decay_factor = 0.25;
  Index patience = 1;
  Real clip_norm = 0.25;
  Index epochs = 10;
  Index bptt_len = 35;
  Index batch_size = 20;
  std::uint64_t seed = 0;
};

/// Throws ConfigError naming the first invalid field.
void validate(const TrainConfig& cfg);

/// Named optimizer state tensors, e.g. Adam moments.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual OptimizerKind kind() const = 0;
  virtual void step(std::span<Parameter* const> params, Real lr) = 0;
  virtual std::int64_t steps() const = 0;
  virtual NamedTensors state() const = 0;
  virtual void load_state(std::int64_t steps, const NamedTensors& state) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind);

/// Rescales all gradients so their global L2 norm is at most `clip_norm`.
/// Returns the applied factor (1 when no clipping happened).
Real clip_gradients(std::span<Parameter* const> params, Real clip_norm);

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// observations fail to improve on the best seen so far.
class PlateauSchedule {
 public:
  PlateauSchedule(Real lr, Real factor, Index patience);

  /// Records a validation metric (lower is better). Returns true if the
  /// learning rate was decayed by this observation.
  bool observe(Real metric);
  Real lr() const { return lr_; }
  Real best() const { return best_; }
  Index decays() const { return decays_; }

 private:
  Real lr_;
  Real factor_;
  Index patience_;
  Real best_;
  Index stale_ = 0;
  Index decays_ = 0;
};

struct EpochRecord {
  Index epoch = 0;
  Real train_loss = 0.0;
  Real val_ppl = 0.0;
  Real lr = 0.0;
  Real seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  Real best_val_ppl = 0.0;
  Index best_epoch = 0;
  Real total_seconds = 0.0;

  /// epoch,train_loss,val_ppl,lr,seconds
  void write_csv(std::ostream& out) const;
};

struct TrainOptions {
  /// Written whenever validation perplexity improves.
  std::optional<std::filesystem::path> checkpoint_path;
  std::string config_echo;
  std::string vocab_hash;
  EvalOptions eval;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// One pass over `windows` in train mode with threaded, detached state.
/// Returns the mean window loss. Throws DivergenceError on a non-finite loss.
Real train_epoch(LanguageModel& model, std::span<const Window> windows, Optimizer& optimizer, Real lr,
                 Real clip_norm, Rng& rng);

/// Full training run: epochs of `train_epoch`, validation perplexity,
/// plateau learning-rate decay and checkpointing of the best model.
TrainingLog train(LanguageModel& model, std::span<const TokenId> train_ids, std::span<const TokenId> valid_ids,
                  const TrainConfig& cfg, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string config_echo;
  std::string vocab_hash;
  Index epoch = 0;
  Real best_val_ppl = 0.0;
};

struct Checkpoint {
  CheckpointMeta meta;
  ModelConfig model_config;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::int64_t optimizer_steps = 0;
  NamedTensors parameters;
  NamedTensors optimizer_state;
};

/// Text manifest (version, metadata, config echo, tensor directory) followed
/// by the raw little-endian float64 arrays in directory order.
void save_checkpoint(const std::filesystem::path& path, LanguageModel& model, const CheckpointMeta& meta,
                     const Optimizer* optimizer = nullptr);

/// Parses and fully validates a checkpoint file. Throws LoadError.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into `model`. Throws ShapeError naming the
/// first parameter whose name or shape disagrees; `model` is untouched then.
void restore_parameters(LanguageModel& model, const Checkpoint& ckpt);

/// Rebuilds the model described by the checkpoint and restores its weights.
LanguageModel load_checkpoint(const std::filesystem::path& path);

}  // namespace drill
