// SPDX-License-Identifier: Apache-2.0
#include "drill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "drill/error.hpp"

namespace drill {

namespace {

Real evaluate(const LossBuilder& f) {
  Tape tape;
  Var loss = f(tape);
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw OracleError("finite_difference_check: loss must be (1 x 1), got " + shape_string(loss.value()));
  }
  return loss.value()(0, 0);
}

}  // namespace

Real finite_difference_check(const LossBuilder& f, std::span<Parameter* const> params, Real h) {
  if (!(h > 0)) throw OracleError("finite_difference_check: step h must be positive");

  const Real base = evaluate(f);
  if (evaluate(f) != base) {
    throw OracleError("finite_difference_check: loss is not deterministic (two evaluations at the same point differ)");
  }

  std::vector<Tensor> saved_grads;
  saved_grads.reserve(params.size());
  for (Parameter* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  {
    Tape tape;
    tape.backward(f(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    analytic.push_back(params[i]->grad);
    params[i]->grad = saved_grads[i];
  }

  Real worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i]->value.values();
    const auto grads = analytic[i].values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const Real orig = values[j];
      values[j] = orig + h;
      const Real up = evaluate(f);
      values[j] = orig - h;
      const Real down = evaluate(f);
      values[j] = orig;
      const Real numeric = (up - down) / (2.0 * h);
      const Real err = std::abs(grads[j] - numeric) / std::max(1e-12, std::abs(grads[j]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace drill
