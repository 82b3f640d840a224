// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "drill/error.hpp"
#include "drill/gradcheck.hpp"
#include "drill/tape.hpp"
#include "helpers.hpp"

using namespace drill;
using drill::test::random_tensor;
using drill::test::require_close;

namespace {

Tensor eval_op(Var (*op)(Var, Var), const Tensor& a, const Tensor& b) {
  Tape tape;
  return op(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(eval_op(matmul, a, Tensor::identity(2)) == a);
  CHECK(eval_op(matmul, a, Tensor::zeros(2, 2)) == Tensor::zeros(2, 2));
  CHECK(eval_op(matmul, a, Tensor::from_rows({{5, 6}, {7, 8}})) == Tensor::from_rows({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul shape error names both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor(2, 3));
  Var b = tape.constant(Tensor(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2 x 3)") != std::string::npos);
  }
}

TEST_CASE("matmul is associative at tolerance") {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor A = random_tensor(5, 7, rng), B = random_tensor(7, 4, rng), C = random_tensor(4, 6, rng);
    const Tensor left((A.mat() * B.mat()) * C.mat());
    const Tensor right(A.mat() * (B.mat() * C.mat()));
    CHECK(max_abs_diff(left, right) <= 1e-9 * (1.0 + left.mat().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("add_row_bias examples and bias gradient") {
  CHECK(eval_op(add_row_bias, Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{0, 0}})) ==
        Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(eval_op(add_row_bias, Tensor::from_rows({{0, 0}}), Tensor::from_rows({{5, -5}})) ==
        Tensor::from_rows({{5, -5}}));
  CHECK(eval_op(add_row_bias, Tensor::from_rows({{1, 1}, {2, 2}}), Tensor::from_rows({{10, 20}})) ==
        Tensor::from_rows({{11, 21}, {12, 22}}));

  Tape tape;
  CHECK_THROWS_AS(add_row_bias(tape.constant(Tensor(2, 2)), tape.constant(Tensor(1, 3))), ShapeError);

  // d/d bias of sum(W ⊙ (A + 1 b)) is the column sum of W.
  Parameter bias("b", Tensor::zeros(1, 2));
  const Tensor W = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  Tape t2;
  Var y = add_row_bias(t2.constant(Tensor(3, 2)), t2.parameter(bias));
  t2.backward(sum(hadamard(y, t2.constant(W))));
  CHECK(bias.grad == Tensor::from_rows({{9, 12}}));
}

TEST_CASE("activation examples") {
  CHECK(apply_activation(Tensor::from_rows({{0.0}}), Activation::sigmoid)(0, 0) == 0.5);
  CHECK(apply_activation(Tensor::from_rows({{-1.0, 2.0}}), Activation::relu) == Tensor::from_rows({{0.0, 2.0}}));
  CHECK(apply_activation(Tensor::from_rows({{0.5}}), Activation::tanh)(0, 0) ==
        doctest::Approx(0.462117157260009758).epsilon(1e-15));
  CHECK(apply_activation(Tensor::from_rows({{-3.5, 7.0}}), Activation::linear) == Tensor::from_rows({{-3.5, 7.0}}));
  CHECK_THROWS_AS(parse_activation("softsign"), ConfigError);
  CHECK(parse_activation("tanh") == Activation::tanh);
}

TEST_CASE("fast sigmoid and tanh agree with the math library") {
  Matrix x(1, 4001);
  for (Index i = 0; i < x.cols(); ++i) x(0, i) = -20.0 + 0.01 * static_cast<Real>(i);
  const Matrix s = sigmoid_of(x), t = tanh_of(x);
  for (Index i = 0; i < x.cols(); ++i) {
    CHECK(std::abs(s(0, i) - 1.0 / (1.0 + std::exp(-x(0, i)))) <= 1e-15);
    CHECK(std::abs(t(0, i) - std::tanh(x(0, i))) <= 1e-15);
  }
}

TEST_CASE("softmax cross entropy examples") {
  auto loss = [](std::vector<Real> logits, TokenId target) {
    Tape tape;
    Tensor row(1, static_cast<Index>(logits.size()), logits);
    const TokenId t[] = {target};
    return softmax_cross_entropy(tape.constant(row), t).value()(0, 0);
  };
  CHECK(loss({0, 0, 0}, 0) == doctest::Approx(1.09861228866810969).epsilon(1e-14));
  CHECK(loss({1000, 0}, 0) == doctest::Approx(0.0).epsilon(1e-300));
  CHECK(std::isfinite(loss({1000, 0}, 1)));
  CHECK(loss({1, 2, 3}, 2) == doctest::Approx(0.40760596444438030).epsilon(1e-14));
  CHECK_THROWS_AS(loss({1, 2, 3}, 3), IndexError);
  CHECK_THROWS_AS(loss({1, 2, 3}, -1), IndexError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  const Tensor logits = random_tensor(50, 17, rng, 30.0);
  const Tensor p = softmax_rows(logits);
  for (Index r = 0; r < p.rows(); ++r) {
    CHECK(std::abs(p.mat().row(r).sum() - 1.0) <= 1e-12);
    CHECK(p.mat().row(r).minCoeff() >= 0.0);
    CHECK(p.mat().row(r).maxCoeff() <= 1.0);
  }
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives all-ones") {
    Parameter p("p", Tensor::from_rows({{1, -2}, {3, 4}}));
    Tape tape;
    tape.backward(sum(tape.parameter(p)));
    CHECK(p.grad == Tensor::ones(2, 2));
  }
  SUBCASE("dead branch gives zeros") {
    Parameter p("p", Tensor::from_rows({{1, -2}, {3, 4}}));
    Tape tape;
    tape.backward(sum(scale(tape.parameter(p), 0.0)));
    CHECK(p.grad == Tensor::zeros(2, 2));
  }
  SUBCASE("cross entropy gradient") {
    Parameter p("p", Tensor::from_rows({{1, 2, 3}}));
    Tape tape;
    const TokenId t[] = {2};
    tape.backward(softmax_cross_entropy(tape.parameter(p), t));
    CHECK(p.grad(0, 0) == doctest::Approx(0.0900305731703804580).epsilon(1e-14));
    CHECK(p.grad(0, 1) == doctest::Approx(0.2447284710547976525).epsilon(1e-14));
    CHECK(p.grad(0, 2) == doctest::Approx(-0.3347590442251781105).epsilon(1e-14));
  }
}

TEST_CASE("gradients accumulate and unreachable parameters stay untouched") {
  Parameter p("p", Tensor::from_rows({{0.5, -1.5}}));
  Parameter q("q", Tensor::from_rows({{2.0}}));
  q.grad(0, 0) = 7.0;
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(tape.parameter(p)));
  }
  CHECK(p.grad == Tensor::from_rows({{2.0, 2.0}}));
  CHECK(q.grad(0, 0) == 7.0);
  Parameter* ps[] = {&p, &q};
  zero_grads(ps);
  CHECK(p.grad == Tensor::zeros(1, 2));
  CHECK(q.grad == Tensor::zeros(1, 1));
}

TEST_CASE("backward on a sum of losses equals separately accumulated gradients") {
  Rng rng(11);
  Parameter w("w", random_tensor(3, 4, rng));
  const Tensor x = random_tensor(5, 3, rng);
  const std::vector<TokenId> t1{0, 1, 2, 3, 0}, t2{3, 3, 1, 0, 2};
  {
    Tape tape;
    Var logits = matmul(tape.constant(x), tape.parameter(w));
    tape.backward(add(softmax_cross_entropy(logits, t1), softmax_cross_entropy(logits, t2)));
  }
  const Tensor joint = w.grad;
  w.zero_grad();
  for (const auto* t : {&t1, &t2}) {
    Tape tape;
    tape.backward(softmax_cross_entropy(matmul(tape.constant(x), tape.parameter(w)), *t));
  }
  require_close(joint, w.grad, 1e-14);
}

TEST_CASE("tape is single use and visits nodes in reverse order") {
  Parameter p("p", Tensor::ones(2, 2));
  Tape tape;
  Var a = tape.parameter(p);
  Var b = scale(a, 2.0);
  Var c = activation(b, Activation::tanh);
  Var loss = sum(c);
  tape.backward(loss);
  const std::vector<std::size_t> expected{loss.id(), c.id(), b.id(), a.id()};
  CHECK(tape.backward_order() == expected);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("non-finite op outputs are errors") {
  Tape tape;
  Var big = tape.constant(Tensor::from_rows({{1e300}}));
  CHECK_THROWS_AS(matmul(big, big), NumericError);
}

TEST_CASE("finite difference check") {
  SUBCASE("half squared norm") {
    Rng rng(5);
    Parameter p("p", random_tensor(3, 4, rng));
    Parameter* ps[] = {&p};
    const Real err = finite_difference_check(
        [&](Tape& t) {
          Var v = t.parameter(p);
          return scale(sum(hadamard(v, v)), 0.5);
        },
        ps, 1e-5);
    CHECK(err < 1e-7);
  }
  SUBCASE("non-deterministic function is rejected") {
    Parameter p("p", Tensor::ones(1, 2));
    Parameter* ps[] = {&p};
    int calls = 0;
    CHECK_THROWS_AS(finite_difference_check(
                        [&](Tape& t) { return scale(sum(t.parameter(p)), 1.0 + 1e-3 * ++calls); }, ps, 1e-5),
                    OracleError);
  }
  SUBCASE("non-positive step is rejected") {
    Parameter p("p", Tensor::ones(1, 2));
    Parameter* ps[] = {&p};
    CHECK_THROWS_AS(finite_difference_check([&](Tape& t) { return sum(t.parameter(p)); }, ps, 0.0), OracleError);
  }
}

TEST_CASE("every differentiable op passes the gradient check") {
  Rng rng(2024);
  const Real h = 1e-5;
  for (int rep = 0; rep < 5; ++rep) {
    Parameter a("a", random_tensor(3, 4, rng));
    Parameter b("b", random_tensor(4, 5, rng));
    Parameter c("c", random_tensor(3, 4, rng));
    Parameter bias("bias", random_tensor(1, 5, rng));
    Parameter bt("bt", random_tensor(5, 4, rng));
    Parameter* all[] = {&a, &b, &c, &bias, &bt};
    const Tensor weights = random_tensor(3, 5, rng);
    const std::vector<TokenId> targets{1, 4, 0};
    const std::vector<TokenId> rows{2, 0, 2, 1};

    auto check = [&](const char* name, auto&& build) {
      CAPTURE(name);
      CHECK(finite_difference_check(build, all, h) < 1e-5);
    };
    auto weighted = [&](Var v) {
      return sum(hadamard(v, v.tape()->constant(weights)));
    };
    check("matmul+bias", [&](Tape& t) {
      return weighted(add_row_bias(matmul(t.parameter(a), t.parameter(b)), t.parameter(bias)));
    });
    check("matmul_nt_bias", [&](Tape& t) {
      return weighted(matmul_nt_bias(t.parameter(a), t.parameter(bt), t.parameter(bias)));
    });
    check("matmul_nt+transpose", [&](Tape& t) {
      return weighted(transpose(transpose(matmul_nt(t.parameter(a), t.parameter(bt)))));
    });
    check("add/sub/hadamard/scale", [&](Tape& t) {
      Var x = t.parameter(a), y = t.parameter(c);
      return sum(hadamard(scale(add(x, y), 0.7), sub(x, hadamard(y, y))));
    });
    for (Activation act : {Activation::sigmoid, Activation::tanh, Activation::linear}) {
      check("activation", [&](Tape& t) {
        return weighted(activation(matmul(t.parameter(a), t.parameter(b)), act));
      });
    }
    check("gather/concat/slice", [&](Tape& t) {
      Var g = gather_rows(t.parameter(bt), rows);
      Var parts[] = {slice_rows(g, 1, 3), slice_cols(t.parameter(a), 0, 4)};
      return sum(hadamard(concat_rows(parts), concat_rows(parts)));
    });
    check("softmax cross entropy", [&](Tape& t) {
      return softmax_cross_entropy(matmul(t.parameter(a), t.parameter(b)), targets);
    });
  }
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(99);
  int checked = 0;
  while (checked < 10) {
    Parameter a("a", random_tensor(3, 4, rng));
    Parameter b("b", random_tensor(4, 3, rng));
    const Tensor pre(a.value.mat() * b.value.mat());
    if (pre.mat().cwiseAbs().minCoeff() < 1e-3) continue;  // screen instances near 0
    Parameter* ps[] = {&a, &b};
    const Real err = finite_difference_check(
        [&](Tape& t) {
          Var r = activation(matmul(t.parameter(a), t.parameter(b)), Activation::relu);
          return sum(hadamard(r, r));
        },
        ps, 1e-5);
    CHECK(err < 1e-5);
    ++checked;
  }
}
