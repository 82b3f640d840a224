// SPDX-License-Identifier: Apache-2.0
#include "drill/output_layer.hpp"

#include <type_traits>

#include "drill/error.hpp"

namespace drill {

namespace {

constexpr Real kInitScale = 0.1;

std::unique_ptr<Parameter> uniform_param(std::string name, Index rows, Index cols, Rng& init) {
  return std::make_unique<Parameter>(std::move(name), Tensor::uniform(rows, cols, -kInitScale, kInitScale, init));
}

std::unique_ptr<Parameter> zero_param(std::string name, Index rows, Index cols) {
  return std::make_unique<Parameter>(std::move(name), Tensor(rows, cols));
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void validate_dropout(const DropoutSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(spec.rate));
  }
}

}  // namespace

OutputKind parse_output_kind(std::string_view name) {
  if (name == "full_softmax") return OutputKind::full_softmax;
  if (name == "weight_tying") return OutputKind::weight_tying;
  if (name == "bilinear") return OutputKind::bilinear;
  if (name == "dual_nonlinear") return OutputKind::dual_nonlinear;
  if (name == "drill") return OutputKind::drill;
  throw ConfigError("unknown output kind '" + std::string(name) +
                    "' (expected full_softmax, weight_tying, bilinear, dual_nonlinear or drill)");
}

std::string_view to_string(OutputKind kind) {
  switch (kind) {
    case OutputKind::full_softmax: return "full_softmax";
    case OutputKind::weight_tying: return "weight_tying";
    case OutputKind::bilinear: return "bilinear";
    case OutputKind::dual_nonlinear: return "dual_nonlinear";
    case OutputKind::drill: return "drill";
  }
  throw ConfigError("invalid output kind value");
}

DropoutMode parse_dropout_mode(std::string_view name) {
  if (name == "none") return DropoutMode::none;
  if (name == "standard") return DropoutMode::standard;
  if (name == "variational") return DropoutMode::variational;
  throw ConfigError("unknown dropout mode '" + std::string(name) + "' (expected none, standard or variational)");
}

std::string_view to_string(DropoutMode mode) {
  switch (mode) {
    case DropoutMode::none: return "none";
    case DropoutMode::standard: return "standard";
    case DropoutMode::variational: return "variational";
  }
  throw ConfigError("invalid dropout mode value");
}

// ---------------------------------------------------------------------------
// Dropout

Tensor sample_mask(const DropoutSpec& spec, Index rows, Index cols, Rng& rng) {
  validate_dropout(spec);
  if (spec.mode == DropoutMode::none) throw ConfigError("sample_mask: dropout mode is none");
  if (spec.rate == 0.0) return Tensor::ones(rows, cols);
  const Real keep = 1.0 / (1.0 - spec.rate);
  std::bernoulli_distribution drop(spec.rate);
  Tensor mask(rows, cols);
  if (spec.mode == DropoutMode::standard) {
    for (Real& v : mask.values()) v = drop(rng) ? 0.0 : keep;
  } else {
    Matrix row(1, cols);
    for (Index c = 0; c < cols; ++c) row(0, c) = drop(rng) ? 0.0 : keep;
    mask.mat().rowwise() = row.row(0);
  }
  return mask;
}

Var apply_dropout(Var x, const DropoutSpec& spec, Mode mode, Rng& rng) {
  if (mode == Mode::eval || !spec.active()) return x;
  Var mask = x.tape()->constant(sample_mask(spec, x.rows(), x.cols(), rng));
  return hadamard(x, mask);
}

// ---------------------------------------------------------------------------
// Capacity

std::int64_t param_count(OutputKind kind, Index vocab, Index embed, Index hidden, Index joint, Index depth) {
  if (vocab <= 0 || embed <= 0 || hidden <= 0) throw ConfigError("param_count: dimensions must be positive");
  const std::int64_t V = vocab, d = embed, dh = hidden, dj = joint, k = depth;
  switch (kind) {
    case OutputKind::full_softmax: return dh * V + V;
    case OutputKind::weight_tying:
      if (d != dh) throw ConfigError("param_count: weight_tying requires d == d_h");
      return V;
    case OutputKind::bilinear: return d * dh + V;
    case OutputKind::dual_nonlinear:
      if (dj <= 0) throw ConfigError("param_count: dual_nonlinear requires d_j > 0");
      return d * dj + dj + dj * dh + dj + V;
    case OutputKind::drill:
      if (d != dh) throw ConfigError("param_count: drill requires d == d_h");
      if (k <= 0) throw ConfigError("param_count: drill requires depth k >= 1");
      return k * (d * d + d) + V;
  }
  throw ConfigError("param_count: invalid kind");
}

// ---------------------------------------------------------------------------
// LabelEncoder

LabelEncoder::LabelEncoder(Index depth, Index dim, Activation activation, DropoutSpec dropout, bool input_skip,
                           bool interlayer_residual, Rng& init)
    : dim_(dim),
      activation_(activation),
      dropout_(dropout),
      input_skip_(input_skip),
      interlayer_residual_(interlayer_residual) {
  if (depth < 1) throw ConfigError("label encoder depth k must be >= 1, got " + std::to_string(depth));
  if (dim < 1) throw ConfigError("label encoder dimension must be positive");
  validate_dropout(dropout);
  layers_.reserve(static_cast<std::size_t>(depth));
  for (Index i = 1; i <= depth; ++i) {
    const std::string prefix = "output.label." + std::to_string(i);
    Layer layer;
    layer.weight = uniform_param(prefix + ".U", dim, dim, init);
    layer.bias = zero_param(prefix + ".b_u", 1, dim);
    layers_.push_back(std::move(layer));
  }
}

Var LabelEncoder::encode(Var E, Mode mode, Rng& rng) const {
  if (E.cols() != dim_) {
    throw ShapeError("encode_labels: E " + shape_string(E.value()) + " needs " + std::to_string(dim_) + " columns");
  }
  Tape& tape = *E.tape();
  Var prev = E;
  for (const Layer& layer : layers_) {
    Var f = drill::activation(add_row_bias(matmul(prev, tape.parameter(*layer.weight)), tape.parameter(*layer.bias)),
                       activation_);
    Var out = apply_dropout(f, dropout_, mode, rng);
    if (interlayer_residual_) out = add(out, prev);
    if (input_skip_) out = add(out, E);
    prev = out;
  }
  return prev;
}

// ---------------------------------------------------------------------------
// OutputLayer

OutputLayer::OutputLayer(OutputConfig config, OutputDims dims, std::unique_ptr<Parameter> bias, Params params)
    : config_(config), dims_(dims), bias_(std::move(bias)), params_(std::move(params)) {}

OutputLayer OutputLayer::build(const OutputConfig& config, const OutputDims& dims, Rng& init) {
  if (dims.vocab <= 0 || dims.embed <= 0 || dims.hidden <= 0) {
    throw ConfigError("output layer dimensions |V|, d, d_h must be positive");
  }
  validate_dropout(config.dropout);
  const bool needs_square = config.kind == OutputKind::weight_tying || config.kind == OutputKind::drill;
  if (needs_square && dims.embed != dims.hidden) {
    throw ConfigError(std::string(to_string(config.kind)) + ": d must equal d_h (d=" + std::to_string(dims.embed) +
                      ", d_h=" + std::to_string(dims.hidden) + ")");
  }
  OutputConfig cfg = config;
  auto bias = zero_param("output.b", 1, dims.vocab);
  switch (config.kind) {
    case OutputKind::full_softmax:
      return OutputLayer(cfg, dims, std::move(bias),
                         FullSoftmax{uniform_param("output.W", dims.hidden, dims.vocab, init)});
    case OutputKind::weight_tying:
      return OutputLayer(cfg, dims, std::move(bias), WeightTying{});
    case OutputKind::bilinear:
      return OutputLayer(cfg, dims, std::move(bias),
                         Bilinear{uniform_param("output.W_l", dims.embed, dims.hidden, init)});
    case OutputKind::dual_nonlinear: {
      if (cfg.joint_dim < 0) throw ConfigError("dual_nonlinear: d_j must be positive");
      if (cfg.joint_dim == 0) cfg.joint_dim = dims.embed;
      const Index dj = cfg.joint_dim;
      DualNonlinear p;
      p.label_weight = uniform_param("output.U", dims.embed, dj, init);
      p.label_bias = zero_param("output.b_u", 1, dj);
      p.context_weight = uniform_param("output.V", dj, dims.hidden, init);
      p.context_bias = zero_param("output.b_v", 1, dj);
      p.activation = cfg.activation;
      return OutputLayer(cfg, dims, std::move(bias), std::move(p));
    }
    case OutputKind::drill:
      if (cfg.depth < 1) throw ConfigError("drill: depth k must be >= 1");
      return OutputLayer(cfg, dims, std::move(bias),
                         Drill{LabelEncoder(cfg.depth, dims.embed, cfg.activation, cfg.dropout, cfg.input_skip,
                                            cfg.interlayer_residual, init)});
  }
  throw ConfigError("invalid output kind");
}

Var OutputLayer::encode_labels(Var E, Mode mode, Rng& rng) const {
  if (E.rows() != dims_.vocab || E.cols() != dims_.embed) {
    throw ShapeError("output layer expects E of shape " + shape_string(dims_.vocab, dims_.embed) + ", got " +
                     shape_string(E.value()));
  }
  Tape& tape = *E.tape();
  return std::visit(overloaded{
                        [&](const FullSoftmax& p) { return transpose(tape.parameter(*p.weight)); },
                        [&](const WeightTying&) { return E; },
                        [&](const Bilinear&) { return E; },
                        [&](const DualNonlinear& p) {
                          return activation(add_row_bias(matmul(E, tape.parameter(*p.label_weight)),
                                                         tape.parameter(*p.label_bias)),
                                            p.activation);
                        },
                        [&](const Drill& p) { return p.encoder.encode(E, mode, rng); },
                    },
                    params_);
}

Var OutputLayer::project_context(Var H) const {
  if (H.cols() != dims_.hidden) {
    throw ShapeError("output layer expects context rows with d_h=" + std::to_string(dims_.hidden) + ", got " +
                     shape_string(H.value()));
  }
  Tape& tape = *H.tape();
  return std::visit(overloaded{
                        [&](const Bilinear& p) { return matmul_nt(H, tape.parameter(*p.weight)); },
                        [&](const DualNonlinear& p) {
                          return activation(add_row_bias(matmul_nt(H, tape.parameter(*p.context_weight)),
                                                         tape.parameter(*p.context_bias)),
                                            p.activation);
                        },
                        [&](const auto&) { return H; },
                    },
                    params_);
}

Var OutputLayer::logits(Var labels, Var H) const {
  Var context = project_context(H);
  if (context.cols() != labels.cols()) {
    throw ShapeError("logits: context " + shape_string(context.value()) + " and labels " +
                     shape_string(labels.value()) + " live in different joint spaces");
  }
  return matmul_nt_bias(context, labels, labels.tape()->parameter(*bias_));
}

Tensor OutputLayer::logits(const Tensor& E, const Tensor& h_t, Mode mode, Rng& rng) const {
  if (h_t.cols() != 1) throw ShapeError("logits: h_t must be a column vector, got " + shape_string(h_t));
  Tape tape;
  Var labels = encode_labels(tape.constant(E), mode, rng);
  Var out = logits(labels, tape.constant(h_t.transposed()));
  return out.value().transposed();
}

std::vector<Parameter*> OutputLayer::parameters() {
  std::vector<Parameter*> out{bias_.get()};
  std::visit(overloaded{
                 [&](FullSoftmax& p) { out.push_back(p.weight.get()); },
                 [&](WeightTying&) {},
                 [&](Bilinear& p) { out.push_back(p.weight.get()); },
                 [&](DualNonlinear& p) {
                   out.insert(out.end(), {p.label_weight.get(), p.label_bias.get(), p.context_weight.get(),
                                          p.context_bias.get()});
                 },
                 [&](Drill& p) {
                   for (auto& layer : p.encoder.layers()) {
                     out.push_back(layer.weight.get());
                     out.push_back(layer.bias.get());
                   }
                 },
             },
             params_);
  return out;
}

std::int64_t OutputLayer::num_parameters() const {
  std::int64_t n = bias_->value.size();
  std::visit(overloaded{
                 [&](const FullSoftmax& p) { n += p.weight->value.size(); },
                 [&](const WeightTying&) {},
                 [&](const Bilinear& p) { n += p.weight->value.size(); },
                 [&](const DualNonlinear& p) {
                   n += p.label_weight->value.size() + p.label_bias->value.size() + p.context_weight->value.size() +
                        p.context_bias->value.size();
                 },
                 [&](const Drill& p) {
                   for (const auto& layer : p.encoder.layers()) n += layer.weight->value.size() + layer.bias->value.size();
                 },
             },
             params_);
  return n;
}

}  // namespace drill
