// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "drill/output_layer.hpp"
#include "drill/tape.hpp"

namespace drill {

/// Input embedding E (|V| x d). The same Parameter is read by the encoder
/// input lookup and by every output layer that reuses E, so both uses
/// accumulate into one gradient buffer.
class EmbeddingTable {
 public:
  EmbeddingTable(Index vocab, Index dim, Rng& init);

  Parameter& table() { return *table_; }
  const Parameter& table() const { return *table_; }
  Index vocab() const { return table_->value.rows(); }
  Index dim() const { return table_->value.cols(); }

  /// E itself as a leaf on `tape`.
  Var leaf(Tape& tape) const { return tape.parameter(*table_); }
  /// Rows of E for `ids` as an (n x d) value on `tape`.
  Var lookup(Tape& tape, std::span<const TokenId> ids) const;

 private:
  std::unique_ptr<Parameter> table_;
};

/// Plain row lookup: one (d x 1) column per token.
std::vector<Tensor> embed(const EmbeddingTable& table, std::span<const TokenId> tokens);

struct EncoderConfig {
  Index layers = 1;
  Index embed_size = 0;   ///< d
  Index hidden_size = 0;  ///< width of every layer but the last
  Index output_size = 0;  ///< width of the last layer (d_h); 0 means hidden_size
  Real dropout = 0.0;     ///< standard dropout on each layer input and on the output

  Index final_size() const { return output_size > 0 ? output_size : hidden_size; }
};

/// Hidden and cell state of one LSTM layer, one row per batch entry.
struct LayerState {
  Tensor h;
  Tensor c;
};
using RecurrentState = std::vector<LayerState>;

/// Stack of 1-3 LSTM layers (gate order i, f, g, o).
///
/// Sequences are processed time-major: an input of `steps * batch` rows
/// holds step t in rows [t * batch, (t + 1) * batch).
class LstmStack {
 public:
  struct Layer {
    Index input_size;
    Index hidden_size;
    std::unique_ptr<Parameter> w_input;   // (input x 4h)
    std::unique_ptr<Parameter> w_hidden;  // (h x 4h)
    std::unique_ptr<Parameter> bias;      // (1 x 4h)
  };

  LstmStack(const EncoderConfig& config, Rng& init);

  RecurrentState zero_state(Index batch) const;
  Index output_size() const { return layers_.back().hidden_size; }
  const EncoderConfig& config() const { return config_; }

  /// Runs the stack over stacked inputs ((steps*batch) x d). Returns the
  /// stacked top-layer outputs and the final state, detached from the tape.
  std::pair<Var, RecurrentState> encode(Var inputs, Index steps, const RecurrentState& state_in, Mode mode,
                                        Rng& rng) const;

  /// Sequence form: one (batch x d) value per step.
  std::pair<std::vector<Var>, RecurrentState> encode_sequence(std::span<const Var> inputs,
                                                              const RecurrentState& state_in, Mode mode,
                                                              Rng& rng) const;

  std::vector<Parameter*> parameters();
  std::vector<Layer>& layers() { return layers_; }

 private:
  EncoderConfig config_;
  std::vector<Layer> layers_;
};

}  // namespace drill
