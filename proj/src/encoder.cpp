// SPDX-License-Identifier: Apache-2.0
#include "drill/encoder.hpp"

#include <string>

#include "drill/error.hpp"

namespace drill {

namespace {

constexpr Real kInitScale = 0.1;

/// LSTM recurrence over precomputed input projections `xp` ((steps*batch)
/// x 4H, bias included) as one tape node. Gate order i, f, g, o.
/// Backward runs truncated BPTT inside the window and forms dW_h with a
/// single product over all steps.
std::pair<Var, LayerState> recurrence(Var xp, Var w_hidden, const LayerState& s0, Index steps) {
  Tape& tape = *xp.tape();
  const Index batch = s0.h.rows();
  const Index H = s0.h.cols();
  const Index rows = steps * batch;
  const Matrix& W = w_hidden.value().mat();

  Matrix gates(rows, 4 * H);   // post-activation i, f, g, o
  Matrix cells(rows, H);
  Matrix cell_tanh(rows, H);
  Matrix out(rows, H);
  Matrix h_prev = s0.h.mat();
  Matrix c_prev = s0.c.mat();
  Matrix pre(batch, 4 * H);
  for (Index t = 0; t < steps; ++t) {
    const Index r = t * batch;
    pre = xp.value().mat().middleRows(r, batch);
    pre.noalias() += h_prev * W;
    auto g = gates.middleRows(r, batch);
    g.leftCols(2 * H) = sigmoid_of(pre.leftCols(2 * H));
    g.middleCols(2 * H, H) = tanh_of(pre.middleCols(2 * H, H));
    g.rightCols(H) = sigmoid_of(pre.rightCols(H));
    cells.middleRows(r, batch) = g.middleCols(H, H).cwiseProduct(c_prev) + g.leftCols(H).cwiseProduct(g.middleCols(2 * H, H));
    cell_tanh.middleRows(r, batch) = tanh_of(cells.middleRows(r, batch));
    out.middleRows(r, batch) = g.rightCols(H).cwiseProduct(cell_tanh.middleRows(r, batch));
    h_prev = out.middleRows(r, batch);
    c_prev = cells.middleRows(r, batch);
  }
  LayerState last{Tensor(h_prev), Tensor(c_prev)};

  const std::size_t ix = xp.id(), iw = w_hidden.id();
  Var hidden = tape.record(
      "lstm", Tensor(std::move(out)), {xp, w_hidden},
      [ix, iw, steps, batch, H, gates = std::move(gates), cells = std::move(cells),
       cell_tanh = std::move(cell_tanh), h0 = s0.h.mat(), c0 = s0.c.mat()](Tape& tp, std::size_t self) {
        const Matrix& up = tp.upstream(self);
        const Matrix& W = tp.value_of(iw).mat();
        const Index rows = steps * batch;
        Matrix dpre(rows, 4 * H);
        Matrix dh = Matrix::Zero(batch, H);
        Matrix dc = Matrix::Zero(batch, H);
        for (Index t = steps; t-- > 0;) {
          const Index r = t * batch;
          const auto g = gates.middleRows(r, batch).array();
          const auto i = g.leftCols(H), f = g.middleCols(H, H), c_hat = g.middleCols(2 * H, H), o = g.rightCols(H);
          const auto tc = cell_tanh.middleRows(r, batch).array();
          const Matrix& c_before = t == 0 ? c0 : cells;
          const auto c_prev = (t == 0 ? c_before.middleRows(0, batch) : c_before.middleRows(r - batch, batch)).array();
          dh += up.middleRows(r, batch);
          const auto dha = dh.array();
          dc.array() += dha * o * (1.0 - tc.square());
          auto d = dpre.middleRows(r, batch).array();
          d.leftCols(H) = dc.array() * c_hat * i * (1.0 - i);
          d.middleCols(H, H) = dc.array() * c_prev * f * (1.0 - f);
          d.middleCols(2 * H, H) = dc.array() * i * (1.0 - c_hat.square());
          d.rightCols(H) = dha * tc * o * (1.0 - o);
          dc.array() *= f;
          dh.noalias() = dpre.middleRows(r, batch) * W.transpose();
        }
        if (tp.requires_grad(iw)) {
          // Hidden inputs of every step: h0, then the outputs of steps 0..T-2.
          Matrix h_in(rows, H);
          h_in.topRows(batch) = h0;
          if (steps > 1) h_in.bottomRows(rows - batch) = tp.value_of(self).mat().topRows(rows - batch);
          tp.accumulate(iw, h_in.transpose() * dpre);
        }
        if (tp.requires_grad(ix)) tp.accumulate(ix, dpre);
      });
  return {hidden, std::move(last)};
}

}  // namespace

EmbeddingTable::EmbeddingTable(Index vocab, Index dim, Rng& init) {
  if (vocab <= 0 || dim <= 0) throw ConfigError("embedding table dimensions must be positive");
  table_ = std::make_unique<Parameter>("embedding.E", Tensor::uniform(vocab, dim, -kInitScale, kInitScale, init));
}

Var EmbeddingTable::lookup(Tape& tape, std::span<const TokenId> ids) const {
  return gather_rows(tape.parameter(*table_), ids);
}

std::vector<Tensor> embed(const EmbeddingTable& table, std::span<const TokenId> tokens) {
  const Matrix& E = table.table().value.mat();
  std::vector<Tensor> out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) {
    if (id < 0 || id >= E.rows()) {
      throw IndexError("embed: token id " + std::to_string(id) + " outside [0, " + std::to_string(E.rows()) + ")");
    }
    out.emplace_back(Matrix(E.row(id).transpose()));
  }
  return out;
}

// ---------------------------------------------------------------------------

LstmStack::LstmStack(const EncoderConfig& config, Rng& init) : config_(config) {
  if (config.layers < 1 || config.layers > 3) {
    throw ConfigError("encoder.layers must be 1, 2 or 3, got " + std::to_string(config.layers));
  }
  if (config.embed_size <= 0 || config.hidden_size <= 0 || config.output_size < 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("encoder.dropout must lie in [0, 1)");
  Index in = config.embed_size;
  for (Index l = 0; l < config.layers; ++l) {
    const Index h = l + 1 == config.layers ? config.final_size() : config.hidden_size;
    const std::string prefix = "encoder." + std::to_string(l + 1);
    Layer layer;
    layer.input_size = in;
    layer.hidden_size = h;
    layer.w_input =
        std::make_unique<Parameter>(prefix + ".W_x", Tensor::uniform(in, 4 * h, -kInitScale, kInitScale, init));
    layer.w_hidden =
        std::make_unique<Parameter>(prefix + ".W_h", Tensor::uniform(h, 4 * h, -kInitScale, kInitScale, init));
    layer.bias = std::make_unique<Parameter>(prefix + ".b", Tensor(1, 4 * h));
    layers_.push_back(std::move(layer));
    in = h;
  }
}

RecurrentState LstmStack::zero_state(Index batch) const {
  RecurrentState s;
  for (const Layer& l : layers_) s.push_back({Tensor(batch, l.hidden_size), Tensor(batch, l.hidden_size)});
  return s;
}

std::pair<Var, RecurrentState> LstmStack::encode(Var inputs, Index steps, const RecurrentState& state_in,
                                                 Mode mode, Rng& rng) const {
  if (steps < 1) throw ShapeError("encode: need at least one step");
  if (inputs.rows() % steps != 0) {
    throw ShapeError("encode: " + std::to_string(inputs.rows()) + " input rows do not divide into " +
                     std::to_string(steps) + " steps");
  }
  const Index batch = inputs.rows() / steps;
  if (state_in.size() != layers_.size()) {
    throw ShapeError("encode: state has " + std::to_string(state_in.size()) + " layers, stack has " +
                     std::to_string(layers_.size()));
  }
  Tape& tape = *inputs.tape();
  const DropoutSpec drop{DropoutMode::standard, config_.dropout};

  RecurrentState state_out;
  Var x = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const Index H = layer.hidden_size;
    if (x.cols() != layer.input_size) {
      throw ShapeError("encode: layer " + std::to_string(l + 1) + " expects input width " +
                       std::to_string(layer.input_size) + ", got " + shape_string(x.value()));
    }
    const LayerState& s0 = state_in[l];
    if (s0.h.rows() != batch || s0.h.cols() != H || !s0.c.same_shape(s0.h)) {
      throw ShapeError("encode: layer " + std::to_string(l + 1) + " state " + shape_string(s0.h) +
                       " does not match " + shape_string(batch, H));
    }
    x = apply_dropout(x, drop, mode, rng);
    // Input projections for every step in one product.
    Var projected = add_row_bias(matmul(x, tape.parameter(*layer.w_input)), tape.parameter(*layer.bias));
    auto [hidden, last] = recurrence(projected, tape.parameter(*layer.w_hidden), s0, steps);
    state_out.push_back(std::move(last));
    x = hidden;
  }
  x = apply_dropout(x, drop, mode, rng);
  return {x, std::move(state_out)};
}

std::pair<std::vector<Var>, RecurrentState> LstmStack::encode_sequence(std::span<const Var> inputs,
                                                                       const RecurrentState& state_in, Mode mode,
                                                                       Rng& rng) const {
  if (inputs.empty()) throw ShapeError("encode_sequence: empty input sequence");
  const auto steps = static_cast<Index>(inputs.size());
  const Index batch = inputs.front().rows();
  Var stacked = steps == 1 ? inputs.front() : concat_rows(inputs);
  auto [out, state] = encode(stacked, steps, state_in, mode, rng);
  std::vector<Var> hs;
  hs.reserve(inputs.size());
  for (Index t = 0; t < steps; ++t) hs.push_back(steps == 1 ? out : slice_rows(out, t * batch, batch));
  return {std::move(hs), std::move(state)};
}

std::vector<Parameter*> LstmStack::parameters() {
  std::vector<Parameter*> out;
  for (Layer& l : layers_) out.insert(out.end(), {l.w_input.get(), l.w_hidden.get(), l.bias.get()});
  return out;
}

}  // namespace drill
