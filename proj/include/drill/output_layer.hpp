// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "drill/tape.hpp"

namespace drill {

enum class OutputKind { full_softmax, weight_tying, bilinear, dual_nonlinear, drill };

OutputKind parse_output_kind(std::string_view name);
std::string_view to_string(OutputKind kind);

enum class Mode { train, eval };

enum class DropoutMode { none, standard, variational };

DropoutMode parse_dropout_mode(std::string_view name);
std::string_view to_string(DropoutMode mode);

struct DropoutSpec {
  DropoutMode mode = DropoutMode::none;
  Real rate = 0.0;

  /// True when the spec can change its input in train mode.
  bool active() const { return mode != DropoutMode::none && rate > 0.0; }
};

/// Inverted-dropout mask of shape (rows x cols).
///
/// Survivors carry 1/(1-p) and dropped entries 0. Standard mode draws every
/// entry independently; variational mode draws a single (1 x cols) row and
/// replicates it over all rows, so every label shares one locked mask.
Tensor sample_mask(const DropoutSpec& spec, Index rows, Index cols, Rng& rng);

/// Applies `spec` to `x` in train mode; identity in eval mode or when inactive.
Var apply_dropout(Var x, const DropoutSpec& spec, Mode mode, Rng& rng);

/// Hyperparameters of an output layer, independent of model dimensions.
struct OutputConfig {
  OutputKind kind = OutputKind::weight_tying;
  Index depth = 1;          ///< label encoder layers (drill)
  Index joint_dim = 0;      ///< d_j (dual_nonlinear); 0 means "use d"
  Activation activation = Activation::tanh;
  DropoutSpec dropout;
  bool input_skip = true;
  bool interlayer_residual = false;
};

struct OutputDims {
  Index vocab = 0;   ///< |V|
  Index embed = 0;   ///< d, columns of E
  Index hidden = 0;  ///< d_h, size of the context vector
};

/// Dedicated output-layer parameters, excluding E and including all biases.
///
///   full_softmax    d_h|V| + |V|
///   weight_tying    |V|
///   bilinear        d d_h + |V|
///   dual_nonlinear  d d_j + d_j + d_j d_h + d_j + |V|
///   drill           k (d d + d) + |V|
std::int64_t param_count(OutputKind kind, Index vocab, Index embed, Index hidden, Index joint, Index depth);

/// Deep residual label encoder: a stack of k square projections of the
/// label embeddings with dropout after each nonlinearity and skip
/// connections back to E (and optionally to the previous layer).
class LabelEncoder {
 public:
  struct Layer {
    std::unique_ptr<Parameter> weight;  // (d x d)
    std::unique_ptr<Parameter> bias;    // (1 x d)
  };

  LabelEncoder(Index depth, Index dim, Activation activation, DropoutSpec dropout, bool input_skip,
               bool interlayer_residual, Rng& init);

  /// E^(k) for the label matrix `E` (|V| x d). Masks are drawn per layer,
  /// once per call, so the result is locked for one forward/backward pass.
  Var encode(Var E, Mode mode, Rng& rng) const;

  Index depth() const { return static_cast<Index>(layers_.size()); }
  Index dim() const { return dim_; }
  Activation activation() const { return activation_; }
  const DropoutSpec& dropout() const { return dropout_; }
  bool input_skip() const { return input_skip_; }
  bool interlayer_residual() const { return interlayer_residual_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  Index dim_;
  Activation activation_;
  DropoutSpec dropout_;
  bool input_skip_;
  bool interlayer_residual_;
  std::vector<Layer> layers_;
};

/// Maps label embeddings and context vectors to vocabulary logits.
///
/// Every kind is evaluated in the shared form
///   logits = g_in(H) · g_out(E)^T + b
/// where H stacks context vectors as rows (N x d_h). The label side g_out(E)
/// is computed once and can be reused across all rows of a window.
class OutputLayer {
 public:
  struct FullSoftmax {
    std::unique_ptr<Parameter> weight;  // W (d_h x |V|)
  };
  struct WeightTying {};
  struct Bilinear {
    std::unique_ptr<Parameter> weight;  // W_l (d x d_h)
  };
  struct DualNonlinear {
    std::unique_ptr<Parameter> label_weight;    // U (d x d_j)
    std::unique_ptr<Parameter> label_bias;      // b_u (1 x d_j)
    std::unique_ptr<Parameter> context_weight;  // V (d_j x d_h)
    std::unique_ptr<Parameter> context_bias;    // b_v (1 x d_j)
    Activation activation;
  };
  struct Drill {
    LabelEncoder encoder;
  };
  using Params = std::variant<FullSoftmax, WeightTying, Bilinear, DualNonlinear, Drill>;

  /// Weights uniform in [-0.1, 0.1] from `init`; biases zero.
  /// Throws ConfigError when the dimensions violate the kind's constraints.
  static OutputLayer build(const OutputConfig& config, const OutputDims& dims, Rng& init);

  OutputKind kind() const { return config_.kind; }
  const OutputConfig& config() const { return config_; }
  const OutputDims& dims() const { return dims_; }

  /// g_out(E): (|V| x j) label matrix. Draws dropout masks in train mode.
  Var encode_labels(Var E, Mode mode, Rng& rng) const;
  /// g_in(H): (N x j) projected contexts.
  Var project_context(Var H) const;
  /// (N x |V|) logits from an encoded label matrix and context rows.
  Var logits(Var labels, Var H) const;
  /// Convenience single-step form: E (|V| x d), h_t (d_h x 1) -> (|V| x 1).
  Tensor logits(const Tensor& E, const Tensor& h_t, Mode mode, Rng& rng) const;

  /// Dedicated parameters in a stable order (bias first).
  std::vector<Parameter*> parameters();
  std::int64_t num_parameters() const;

  Parameter& bias() { return *bias_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

 private:
  OutputLayer(OutputConfig config, OutputDims dims, std::unique_ptr<Parameter> bias, Params params);

  OutputConfig config_;
  OutputDims dims_;
  std::unique_ptr<Parameter> bias_;  // b (1 x |V|)
  Params params_;
};

}  // namespace drill
