// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "drill/data.hpp"
#include "drill/encoder.hpp"
#include "drill/output_layer.hpp"

namespace drill {

struct ModelConfig {
  Index vocab_size = 0;
  EncoderConfig encoder;
  OutputConfig output;
};

/// Embedding table, recurrent context encoder and a pluggable output layer.
class LanguageModel {
 public:
  /// Weights uniform in [-0.1, 0.1] drawn from `seed`; biases zero.
  LanguageModel(const ModelConfig& config, std::uint64_t seed);

  LanguageModel(LanguageModel&&) = default;
  LanguageModel& operator=(LanguageModel&&) = default;

  const ModelConfig& config() const { return config_; }
  Index vocab_size() const { return config_.vocab_size; }

  EmbeddingTable& embedding() { return embedding_; }
  const EmbeddingTable& embedding() const { return embedding_; }
  LstmStack& encoder() { return encoder_; }
  const LstmStack& encoder() const { return encoder_; }
  OutputLayer& output() { return output_; }
  const OutputLayer& output() const { return output_; }

  /// Logits ((steps*batch) x |V|) for a window, time-major rows.
  ///
  /// The label side is encoded once for the whole window, so variational
  /// masks stay locked across its time steps. `cached_labels`, when given,
  /// replaces that encoding (eval-mode reuse across windows).
  Var window_logits(Tape& tape, const Window& window, RecurrentState& state, Mode mode, Rng& rng,
                    const Tensor* cached_labels = nullptr) const;

  /// Mean NLL per target token of the window. `state` is advanced.
  Var window_loss(Tape& tape, const Window& window, RecurrentState& state, Mode mode, Rng& rng) const;

  /// Eval-mode label matrix g_out(E), constant for fixed parameters.
  Tensor encoded_labels() const;

  /// All parameters: embedding, encoder, output layer.
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> embedding_parameters();
  std::vector<Parameter*> encoder_parameters();
  std::vector<Parameter*> output_parameters();

 private:
  struct Streams;
  static Streams init_streams(std::uint64_t seed);
  LanguageModel(const ModelConfig& config, Streams&& streams);

  ModelConfig config_;
  EmbeddingTable embedding_;
  LstmStack encoder_;
  OutputLayer output_;
};

}  // namespace drill
