// SPDX-License-Identifier: Apache-2.0
#include "drill/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "drill/error.hpp"

namespace drill {

namespace {

std::atomic<bool> g_finite_checks{true};

#if defined(__GLIBC__)
// Every op allocates and frees whole matrices. Keeping freed blocks in the
// heap (instead of unmapping them) avoids a page fault per fresh page on
// each reallocation, which otherwise dominates small-batch training time.
const bool g_heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

Tape& tape_of(Var a, std::string_view op) {
  if (!a.valid()) throw UsageError(std::string(op) + ": operand is not bound to a tape");
  return *a.tape();
}

void require_shape(bool ok, std::string_view op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter / activation helpers

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.rows(), value.cols()) {}

void Parameter::zero_grad() { grad.mat().setZero(); }

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + std::string(name) +
                    "' (expected sigmoid, tanh, relu or linear)");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  throw ConfigError("invalid activation value");
}

Matrix sigmoid_of(const Matrix& x) {
  // exp(-x) may overflow to inf for very negative x; 1 / inf is still the exact limit 0.
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

Matrix tanh_of(const Matrix& x) {
  using RowArray = Eigen::Array<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // Rational form for |x| < 0.625 and 1 - 2 / (exp(2|x|) + 1) beyond,
  // both evaluated on whole arrays so they vectorize.
  const auto a = x.array();
  const RowArray z = a.square();
  const RowArray p = (-9.64399179425052238628e-1 * z - 9.92877231001918586564e1) * z - 1.61468768441708447952e3;
  const RowArray q = ((z + 1.12811678491632931402e2) * z + 2.23548839060100448583e3) * z + 4.84406305325125486048e3;
  const RowArray near_zero = a + a * z * p / q;
  const RowArray e = (2.0 * a.abs().min(40.0)).exp();
  const RowArray far = (1.0 - 2.0 / (e + 1.0)) * a.sign();
  Matrix out(x.rows(), x.cols());
  out.array() = (a.abs() < 0.625).select(near_zero, far);
  return out;
}

Tensor apply_activation(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::sigmoid: return Tensor(sigmoid_of(x.mat()));
    case Activation::tanh: return Tensor(tanh_of(x.mat()));
    case Activation::relu: return Tensor(Matrix(x.mat().cwiseMax(0.0)));
    case Activation::linear: return x;
  }
  throw ConfigError("invalid activation value");
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw UsageError("Var::value on an unbound Var");
  return tape_->value_of(id_);
}

void Tape::set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool Tape::finite_checks() { return g_finite_checks.load(); }

Var Tape::constant(Tensor value) {
  return record("constant", std::move(value), std::span<const Var>{}, nullptr);
}

Var Tape::parameter(Parameter& p) {
  Var v = record("parameter", p.value, std::span<const Var>{}, nullptr);
  nodes_[v.id_].requires_grad = true;
  nodes_[v.id_].param = &p;
  return v;
}

void Tape::check_same_tape(std::span<const Var> inputs, std::string_view op) const {
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw UsageError(std::string(op) + ": operand recorded on a different tape");
  }
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (used_) throw UsageError(std::string(op) + ": tape already consumed by backward");
  check_same_tape(inputs, op);
  if (g_finite_checks.load(std::memory_order_relaxed) && !value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + std::string(op) + "' " +
                       shape_string(value));
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](const Var& v) { return nodes_[v.id_].requires_grad; });
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate_owned(std::size_t id, Matrix&& contribution) {
  Matrix& g = nodes_[id].grad;
  if (g.size() == 0) {
    g = std::move(contribution);
  } else {
    g += contribution;
  }
}

void Tape::backward(Var loss) {
  if (used_) throw UsageError("backward: tape already consumed; record a new forward pass");
  if (loss.tape_ != this) throw UsageError("backward: loss was recorded on a different tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss must be (1 x 1), got " + shape_string(loss.value()));
  }
  used_ = true;
  visited_.clear();
  grad_buffer(loss.id_)(0, 0) += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    visited_.push_back(i);
    if (n.param != nullptr) {
      n.param->grad.mat() += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.grad.size() == 0) return Tensor(n.value.rows(), n.value.cols());
  return Tensor(n.grad);
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, "matmul");
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value().mat() * b.value().mat();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul", Tensor(std::move(out)), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value_of(ib).mat().transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value_of(ia).mat().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, "matmul_nt");
  require_shape(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value().mat() * b.value().mat().transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul_nt", Tensor(std::move(out)), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value_of(ib).mat());
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value_of(ia).mat());
  });
}

Var matmul_nt_bias(Var a, Var b, Var bias) {
  Tape& t = tape_of(a, "matmul_nt_bias");
  require_shape(a.cols() == b.cols(), "matmul_nt_bias", a.value(), b.value());
  if (bias.rows() != 1 || bias.cols() != b.rows()) {
    throw ShapeError("matmul_nt_bias: bias " + shape_string(bias.value()) + " does not match " +
                     shape_string(a.rows(), b.rows()));
  }
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value().mat() * b.value().mat().transpose();
  out.rowwise() += bias.value().mat().row(0);
  const std::size_t ia = a.id(), ib = b.id(), ic = bias.id();
  return t.record("matmul_nt_bias", Tensor(std::move(out)), {a, b, bias},
                  [ia, ib, ic](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value_of(ib).mat());
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value_of(ia).mat());
                    if (tp.requires_grad(ic)) tp.accumulate(ic, g.colwise().sum());
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a, "transpose");
  const std::size_t ia = a.id();
  return t.record("transpose", a.value().transposed(), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.upstream(self).transpose());
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, "add");
  require_shape(a.value().same_shape(b.value()), "add", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("add", Tensor(Matrix(a.value().mat() + b.value().mat())), {a, b},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, "sub");
  require_shape(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("sub", Tensor(Matrix(a.value().mat() - b.value().mat())), {a, b},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
                  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, "hadamard");
  require_shape(a.value().same_shape(b.value()), "hadamard", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("hadamard", Tensor(Matrix(a.value().mat().cwiseProduct(b.value().mat()))), {a, b},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value_of(ib).mat()));
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value_of(ia).mat()));
                  });
}

Var scale(Var a, Real s) {
  Tape& t = tape_of(a, "scale");
  const std::size_t ia = a.id();
  return t.record("scale", Tensor(Matrix(a.value().mat() * s)), {a},
                  [ia, s](Tape& tp, std::size_t self) { tp.accumulate(ia, tp.upstream(self) * s); });
}

Var add_row_bias(Var a, Var bias) {
  Tape& t = tape_of(a, "add_row_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_string(bias.value()) + " does not match rows of " +
                     shape_string(a.value()));
  }
  Matrix out = a.value().mat();
  out.rowwise() += bias.value().mat().row(0);
  const std::size_t ia = a.id(), ib = bias.id();
  return t.record("add_row_bias", Tensor(std::move(out)), {a, bias}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

Var activation(Var a, Activation kind) {
  Tape& t = tape_of(a, "activation");
  const std::size_t ia = a.id();
  Tensor out = apply_activation(a.value(), kind);
  return t.record("activation", std::move(out), {a}, [ia, kind](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& y = tp.value_of(self).mat();
    switch (kind) {
      case Activation::sigmoid:
        tp.accumulate(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
        break;
      case Activation::tanh:
        tp.accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
        break;
      case Activation::relu:
        tp.accumulate(ia, (tp.value_of(ia).mat().array() > 0.0).select(g.array(), 0.0).matrix());
        break;
      case Activation::linear:
        tp.accumulate(ia, g);
        break;
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "sum");
  const std::size_t ia = a.id();
  Tensor out(1, 1);
  out(0, 0) = a.value().mat().sum();
  return t.record("sum", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    tp.grad_buffer(ia).array() += tp.upstream(self)(0, 0);
  });
}

Var gather_rows(Var table, std::span<const TokenId> ids) {
  Tape& t = tape_of(table, "gather_rows");
  const Matrix& src = table.value().mat();
  Matrix out(static_cast<Index>(ids.size()), src.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= src.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(src.rows()) + ")");
    }
    out.row(static_cast<Index>(i)) = src.row(ids[i]);
  }
  const std::size_t it = table.id();
  std::vector<TokenId> idx(ids.begin(), ids.end());
  return t.record("gather_rows", Tensor(std::move(out)), {table},
                  [it, idx = std::move(idx)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    Matrix& gt = tp.grad_buffer(it);
                    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Index>(i));
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = tape_of(parts[0], "concat_rows");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require_shape(p.cols() == cols, "concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> layout;  // (node id, row offset)
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value().mat();
    layout.emplace_back(p.id(), off);
    off += p.rows();
  }
  return t.record("concat_rows", Tensor(std::move(out)), parts,
                  [layout = std::move(layout)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    for (const auto& [id, row] : layout) {
                      if (!tp.requires_grad(id)) continue;
                      Matrix& gi = tp.grad_buffer(id);
                      gi += g.middleRows(row, gi.rows());
                    }
                  });
}

Var slice_rows(Var a, Index begin, Index count) {
  Tape& t = tape_of(a, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(a.value()));
  }
  const std::size_t ia = a.id();
  return t.record("slice_rows", Tensor(Matrix(a.value().mat().middleRows(begin, count))), {a},
                  [ia, begin, count](Tape& tp, std::size_t self) {
                    tp.grad_buffer(ia).middleRows(begin, count) += tp.upstream(self);
                  });
}

Var slice_cols(Var a, Index begin, Index count) {
  Tape& t = tape_of(a, "slice_cols");
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(a.value()));
  }
  const std::size_t ia = a.id();
  return t.record("slice_cols", Tensor(Matrix(a.value().mat().middleCols(begin, count))), {a},
                  [ia, begin, count](Tape& tp, std::size_t self) {
                    tp.grad_buffer(ia).middleCols(begin, count) += tp.upstream(self);
                  });
}

Tensor softmax_rows(const Tensor& logits) {
  Matrix p = logits.mat();
  for (Index r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return Tensor(std::move(p));
}

namespace {

void check_targets(Index rows, Index vocab, std::span<const TokenId> targets, std::string_view op) {
  if (static_cast<Index>(targets.size()) != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " logit rows");
  }
  for (TokenId y : targets) {
    if (y < 0 || y >= vocab) {
      throw IndexError(std::string(op) + ": target " + std::to_string(y) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
}

}  // namespace

std::vector<Real> cross_entropy_rows(const Tensor& logits, std::span<const TokenId> targets) {
  check_targets(logits.rows(), logits.cols(), targets, "cross_entropy_rows");
  std::vector<Real> nll(targets.size());
  const Matrix& z = logits.mat();
  for (Index r = 0; r < z.rows(); ++r) {
    const Real m = z.row(r).maxCoeff();
    const Real lse = m + std::log((z.row(r).array() - m).exp().sum());
    nll[static_cast<std::size_t>(r)] = lse - z(r, targets[static_cast<std::size_t>(r)]);
  }
  return nll;
}

Var softmax_cross_entropy(Var logits, std::span<const TokenId> targets) {
  Tape& t = tape_of(logits, "softmax_cross_entropy");
  const Index n = logits.rows();
  check_targets(n, logits.cols(), targets, "softmax_cross_entropy");
  if (n == 0) throw ShapeError("softmax_cross_entropy: no rows");
  Matrix prob = logits.value().mat();
  Real total = 0.0;
  for (Index r = 0; r < n; ++r) {
    auto row = prob.row(r);
    const Real m = row.maxCoeff();
    row.array() -= m;
    row = row.array().exp().matrix();
    const Real z = row.sum();
    const auto y = targets[static_cast<std::size_t>(r)];
    // NLL = log z - (logit_y - m); row holds exp(logit - m).
    total += std::log(z) - (logits.value()(r, y) - m);
    row /= z;
  }
  Tensor out(1, 1);
  out(0, 0) = total / static_cast<Real>(n);
  const std::size_t il = logits.id();
  std::vector<TokenId> tg(targets.begin(), targets.end());
  return t.record("softmax_cross_entropy", std::move(out), {logits},
                  [il, prob = std::move(prob), tg = std::move(tg)](Tape& tp, std::size_t self) mutable {
                    // Backward runs once per tape, so the probabilities can become the gradient in place.
                    const Real g = tp.upstream(self)(0, 0) / static_cast<Real>(prob.rows());
                    prob *= g;
                    tp.accumulate_owned(il, std::move(prob));
                    Matrix& gl = tp.grad_buffer(il);
                    for (std::size_t r = 0; r < tg.size(); ++r) gl(static_cast<Index>(r), tg[r]) -= g;
                  });
}

}  // namespace drill
