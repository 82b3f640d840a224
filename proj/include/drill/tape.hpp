// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drill/tensor.hpp"

namespace drill {

/// A trainable tensor with its gradient accumulator.
///
/// `grad` always has the shape of `value`. Gradients accumulate across
/// backward passes until `zero_grad` is called, so a parameter that appears
/// several times in one graph (the tied embedding) receives the sum of all
/// its contributions.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

void zero_grads(std::span<Parameter* const> params);

enum class Activation { sigmoid, tanh, relu, linear };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);
/// Elementwise logistic and hyperbolic tangent, vectorized.
Matrix sigmoid_of(const Matrix& x);
Matrix tanh_of(const Matrix& x);
Tensor apply_activation(const Tensor& x, Activation a);

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records differentiable operations in execution order and replays the
/// chain rule in reverse. Single use: `backward` may run once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; backward adds this leaf's gradient into `p.grad`.
  Var parameter(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
  /// Parameter. `loss` must be a 1x1 value recorded on this tape.
  void backward(Var loss);

  bool used() const { return used_; }
  std::size_t size() const { return nodes_.size(); }
  /// Node ids in the order backward visited them.
  const std::vector<std::size_t>& backward_order() const { return visited_; }

  /// Gradient of the last backward w.r.t. `v`; zeros if nothing flowed there.
  Tensor grad(Var v) const;

  // Op-construction interface.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of node `id`, zero-initialized on first touch.
  Matrix& grad_buffer(std::size_t id);
  /// Like `accumulate`, but takes over `contribution`'s storage when the
  /// buffer is still empty.
  void accumulate_owned(std::size_t id, Matrix&& contribution);
  /// Adds `expr` to the gradient of node `id`; the first contribution is
  /// assigned directly instead of being added to a zeroed buffer.
  template <class Expr>
  void accumulate(std::size_t id, const Expr& expr) {
    Matrix& g = nodes_[id].grad;
    if (g.size() == 0) {
      g.noalias() = expr;
    } else {
      g.noalias() += expr;
    }
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Non-finite op outputs raise NumericError while enabled (default on).
  static void set_finite_checks(bool enabled);
  static bool finite_checks();

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  void check_same_tape(std::span<const Var> inputs, std::string_view op) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
  bool used_ = false;
};

// Differentiable ops. All operands must live on the same tape.

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
/// a * b^T + bias, with the (1 x n) `bias` added to every row.
Var matmul_nt_bias(Var a, Var b, Var bias);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, Real s);
/// Adds the (1 x n) `bias` to every row of `a`.
Var add_row_bias(Var a, Var bias);
Var activation(Var a, Activation kind);
/// Sum of all entries, as a (1 x 1) value.
Var sum(Var a);
/// Rows `ids` of `table`; backward scatter-adds into the table.
Var gather_rows(Var table, std::span<const TokenId> ids);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Index begin, Index count);
Var slice_cols(Var a, Index begin, Index count);

/// Mean over rows of -log softmax(logits)[row, targets[row]], computed with
/// the row max subtracted. Returns (1 x 1).
Var softmax_cross_entropy(Var logits, std::span<const TokenId> targets);

/// Row-wise softmax, numerically stabilized.
Tensor softmax_rows(const Tensor& logits);
/// Per-row negative log-likelihood of `targets` under softmax(logits).
std::vector<Real> cross_entropy_rows(const Tensor& logits, std::span<const TokenId> targets);

}  // namespace drill
