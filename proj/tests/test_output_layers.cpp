// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <variant>

#include "drill/error.hpp"
#include "drill/gradcheck.hpp"
#include "drill/output_layer.hpp"
#include "helpers.hpp"

using namespace drill;
using drill::test::random_tensor;
using drill::test::require_close;

namespace {

OutputLayer make_layer(OutputKind kind, Index V, Index d, Index dh, Index k = 1, Activation act = Activation::tanh,
                       Index dj = 0, std::uint64_t seed = 1) {
  OutputConfig cfg;
  cfg.kind = kind;
  cfg.depth = k;
  cfg.activation = act;
  cfg.joint_dim = dj;
  Rng init(seed);
  return OutputLayer::build(cfg, OutputDims{V, d, dh}, init);
}

LabelEncoder make_encoder(Index k, Index d, Activation act, DropoutSpec drop, bool skip, bool res, std::uint64_t seed) {
  Rng init(seed);
  return LabelEncoder(k, d, act, drop, skip, res, init);
}

Tensor encode(const LabelEncoder& enc, const Tensor& E, Mode mode, Rng& rng) {
  Tape tape;
  return enc.encode(tape.constant(E), mode, rng).value();
}

Matrix act_ref(const Matrix& x, Activation a) {
  switch (a) {
    case Activation::sigmoid:
      return x.unaryExpr([](Real v) { return 1.0 / (1.0 + std::exp(-v)); });
    case Activation::tanh:
      return x.unaryExpr([](Real v) { return std::tanh(v); });
    case Activation::relu:
      return x.cwiseMax(0.0);
    case Activation::linear:
      return x;
  }
  return x;
}

}  // namespace

TEST_CASE("build_output_layer examples") {
  OutputLayer tied = make_layer(OutputKind::weight_tying, 10, 4, 4);
  REQUIRE(tied.parameters().size() == 1);
  CHECK(tied.parameters()[0]->value.size() == 10);
  CHECK(tied.num_parameters() == 10);

  OutputLayer drill2 = make_layer(OutputKind::drill, 10, 4, 4, 2);
  CHECK(drill2.parameters().size() == 5);
  CHECK(drill2.num_parameters() == 50);

  try {
    make_layer(OutputKind::drill, 10, 4, 8, 2);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("d must equal d_h") != std::string::npos);
  }
  CHECK_THROWS_AS(make_layer(OutputKind::weight_tying, 10, 4, 8), ConfigError);
  CHECK_NOTHROW(make_layer(OutputKind::bilinear, 10, 4, 8));
  CHECK_NOTHROW(make_layer(OutputKind::full_softmax, 10, 4, 8));
  CHECK_NOTHROW(make_layer(OutputKind::dual_nonlinear, 10, 4, 8, 1, Activation::tanh, 5));
}

TEST_CASE("initialization is uniform in [-0.1, 0.1] with zero biases and seeded") {
  OutputLayer a = make_layer(OutputKind::dual_nonlinear, 30, 6, 5, 1, Activation::tanh, 7, 42);
  OutputLayer b = make_layer(OutputKind::dual_nonlinear, 30, 6, 5, 1, Activation::tanh, 7, 42);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
    CHECK(pa[i]->value.mat().cwiseAbs().maxCoeff() <= 0.1);
    const bool is_bias = pa[i]->value.rows() == 1;
    if (is_bias) CHECK(pa[i]->value.mat().isZero(0.0));
  }
}

TEST_CASE("encode_labels examples") {
  Rng rng(3);
  const Tensor E = random_tensor(4, 3, rng);
  const DropoutSpec none{};

  SUBCASE("zero weights with relu and input skip return E") {
    LabelEncoder enc = make_encoder(1, 3, Activation::relu, none, true, false, 1);
    enc.layers()[0].weight->value = Tensor::zeros(3, 3);
    CHECK(encode(enc, E, Mode::train, rng) == E);
  }
  SUBCASE("identity weights with linear activation give 2E") {
    LabelEncoder enc = make_encoder(1, 3, Activation::linear, none, true, false, 1);
    enc.layers()[0].weight->value = Tensor::identity(3);
    require_close(encode(enc, E, Mode::eval, rng), Tensor(Matrix(2.0 * E.mat())), 1e-15);
  }
  SUBCASE("linear depth one without skip is E U") {
    LabelEncoder enc = make_encoder(1, 3, Activation::linear, none, false, false, 9);
    require_close(encode(enc, E, Mode::eval, rng), Tensor(Matrix(E.mat() * enc.layers()[0].weight->value.mat())),
                  0.0);
  }
  SUBCASE("k=2 tanh matches a straight-line recomputation for every flag combination") {
    for (bool skip : {true, false}) {
      for (bool res : {true, false}) {
        LabelEncoder enc = make_encoder(2, 3, Activation::tanh, none, skip, res, 5);
        for (auto& layer : enc.layers()) layer.bias->value = random_tensor(1, 3, rng);
        Matrix prev = E.mat();
        for (const auto& layer : enc.layers()) {
          Matrix pre = prev * layer.weight->value.mat();
          pre.rowwise() += layer.bias->value.mat().row(0);
          Matrix next = act_ref(pre, Activation::tanh);
          if (res) next += prev;
          if (skip) next += E.mat();
          prev = next;
        }
        require_close(encode(enc, E, Mode::eval, rng), Tensor(prev), 1e-14);
      }
    }
  }
  SUBCASE("wrong width is a shape error") {
    LabelEncoder enc = make_encoder(1, 3, Activation::tanh, none, true, false, 1);
    Tape tape;
    CHECK_THROWS_AS(enc.encode(tape.constant(Tensor(4, 2)), Mode::eval, rng), ShapeError);
  }
}

TEST_CASE("sample_mask semantics") {
  Rng rng(17);
  SUBCASE("zero rate gives all ones") {
    for (DropoutMode mode : {DropoutMode::standard, DropoutMode::variational}) {
      CHECK(sample_mask(DropoutSpec{mode, 0.0}, 5, 4, rng) == Tensor::ones(5, 4));
    }
  }
  SUBCASE("variational rows are identical") {
    const Tensor m = sample_mask(DropoutSpec{DropoutMode::variational, 0.5}, 100, 8, rng);
    for (Index r = 1; r < m.rows(); ++r) CHECK(m.mat().row(r) == m.mat().row(0));
    for (Index c = 0; c < m.cols(); ++c) {
      const Real v = m(0, c);
      CHECK((v == 0.0 || v == 2.0));
    }
  }
  SUBCASE("standard mask zero fraction and row diversity") {
    const Tensor m = sample_mask(DropoutSpec{DropoutMode::standard, 0.5}, 1000, 8, rng);
    const Real zeros = static_cast<Real>((m.mat().array() == 0.0).count()) / static_cast<Real>(m.size());
    CHECK(zeros >= 0.47);
    CHECK(zeros <= 0.53);
    bool differs = false;
    for (Index r = 1; r < m.rows() && !differs; ++r) differs = m.mat().row(r) != m.mat().row(0);
    CHECK(differs);
    CHECK(((m.mat().array() == 0.0) || (m.mat().array() == 2.0)).all());
  }
  SUBCASE("rate one is rejected") {
    CHECK_THROWS_AS(sample_mask(DropoutSpec{DropoutMode::standard, 1.0}, 2, 2, rng), ConfigError);
  }
}

TEST_CASE("dropout is identity in eval mode and inactive with rate zero") {
  Rng rng(8);
  const Tensor E = random_tensor(6, 4, rng);
  for (DropoutMode mode : {DropoutMode::standard, DropoutMode::variational}) {
    LabelEncoder enc = make_encoder(2, 4, Activation::tanh, DropoutSpec{mode, 0.5}, true, false, 3);
    const Tensor a = encode(enc, E, Mode::eval, rng);
    const Tensor b = encode(enc, E, Mode::eval, rng);
    CHECK(a == b);
    LabelEncoder zero = make_encoder(2, 4, Activation::tanh, DropoutSpec{mode, 0.0}, true, false, 3);
    LabelEncoder none = make_encoder(2, 4, Activation::tanh, DropoutSpec{}, true, false, 3);
    CHECK(encode(zero, E, Mode::train, rng) == encode(none, E, Mode::train, rng));
  }
}

TEST_CASE("variational mask is shared by every label row within one call") {
  Rng rng(21);
  const Index V = 7, d = 5;
  // Zero weights and a positive bias make every pre-dropout row identical,
  // so identical output rows mean identical masks.
  LabelEncoder enc = make_encoder(1, d, Activation::sigmoid, DropoutSpec{DropoutMode::variational, 0.5}, false, false, 2);
  enc.layers()[0].weight->value = Tensor::zeros(d, d);
  enc.layers()[0].bias->value = Tensor::ones(1, d);
  for (int call = 0; call < 20; ++call) {
    const Tensor out = encode(enc, random_tensor(V, d, rng), Mode::train, rng);
    for (Index r = 1; r < V; ++r) CHECK(out.mat().row(r) == out.mat().row(0));
  }
}

TEST_CASE("train-mode mean converges to eval output") {
  Rng rng(4);
  const Tensor E = random_tensor(5, 4, rng);
  for (DropoutMode mode : {DropoutMode::standard, DropoutMode::variational}) {
    LabelEncoder enc = make_encoder(1, 4, Activation::tanh, DropoutSpec{mode, 0.3}, true, false, 6);
    const Tensor ev = encode(enc, E, Mode::eval, rng);
    Matrix acc = Matrix::Zero(5, 4);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) acc += encode(enc, E, Mode::train, rng).mat();
    acc /= draws;
    CHECK((acc - ev.mat()).norm() / ev.mat().norm() <= 0.02);
  }
}

TEST_CASE("single-step logits per kind") {
  Rng rng(10);
  SUBCASE("weight tying with identity embedding") {
    OutputLayer tied = make_layer(OutputKind::weight_tying, 3, 3, 3);
    const Tensor h(3, 1, {1, 2, 3});
    CHECK(tied.logits(Tensor::identity(3), h, Mode::eval, rng) == h);
  }
  SUBCASE("each kind matches its closed form") {
    const Index V = 6, d = 4, dh = 4, dj = 3;
    const Tensor E = random_tensor(V, d, rng), h = random_tensor(dh, 1, rng);
    const Tensor b = random_tensor(1, V, rng);

    OutputLayer full = make_layer(OutputKind::full_softmax, V, d, dh);
    full.bias().value = b;
    const Matrix& W = std::get<OutputLayer::FullSoftmax>(full.params()).weight->value.mat();
    require_close(full.logits(E, h, Mode::eval, rng), Tensor(Matrix(W.transpose() * h.mat() + b.mat().transpose())),
                  1e-14);

    OutputLayer bil = make_layer(OutputKind::bilinear, V, d, dh);
    bil.bias().value = b;
    const Matrix& Wl = std::get<OutputLayer::Bilinear>(bil.params()).weight->value.mat();
    require_close(bil.logits(E, h, Mode::eval, rng),
                  Tensor(Matrix(E.mat() * (Wl * h.mat()) + b.mat().transpose())), 1e-14);

    OutputLayer dual = make_layer(OutputKind::dual_nonlinear, V, d, dh, 1, Activation::sigmoid, dj);
    dual.bias().value = b;
    auto& p = std::get<OutputLayer::DualNonlinear>(dual.params());
    p.label_bias->value = random_tensor(1, dj, rng);
    p.context_bias->value = random_tensor(1, dj, rng);
    Matrix lab = E.mat() * p.label_weight->value.mat();
    lab.rowwise() += p.label_bias->value.mat().row(0);
    const Matrix ctx = p.context_weight->value.mat() * h.mat() + p.context_bias->value.mat().transpose();
    require_close(dual.logits(E, h, Mode::eval, rng),
                  Tensor(Matrix(act_ref(lab, Activation::sigmoid) * act_ref(ctx, Activation::sigmoid) +
                                b.mat().transpose())),
                  1e-14);
  }
}

TEST_CASE("reduction identities") {
  Rng rng(12);
  const Index V = 7, d = 4;
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor E = random_tensor(V, d, rng), h = random_tensor(d, 1, rng), b = random_tensor(1, V, rng);

    OutputLayer tied = make_layer(OutputKind::weight_tying, V, d, d);
    tied.bias().value = b;
    const Tensor tied_out = tied.logits(E, h, Mode::eval, rng);

    OutputLayer bil = make_layer(OutputKind::bilinear, V, d, d);
    bil.bias().value = b;
    const Tensor Wl = random_tensor(d, d, rng);
    std::get<OutputLayer::Bilinear>(bil.params()).weight->value = Wl;
    const Tensor bil_out = bil.logits(E, h, Mode::eval, rng);

    OutputConfig dc;
    dc.kind = OutputKind::drill;
    dc.depth = 1;
    dc.activation = Activation::linear;
    dc.input_skip = false;
    Rng init(3);
    OutputLayer drl = OutputLayer::build(dc, OutputDims{V, d, d}, init);
    drl.bias().value = b;
    std::get<OutputLayer::Drill>(drl.params()).encoder.layers()[0].weight->value = Wl;
    require_close(drl.logits(E, h, Mode::eval, rng), bil.logits(E, h, Mode::eval, rng), 1e-12);

    std::get<OutputLayer::Bilinear>(bil.params()).weight->value = Tensor::identity(d);
    require_close(bil.logits(E, h, Mode::eval, rng), tied_out, 1e-12);

    OutputLayer dual = make_layer(OutputKind::dual_nonlinear, V, d, d, 1, Activation::linear, d);
    dual.bias().value = b;
    auto& p = std::get<OutputLayer::DualNonlinear>(dual.params());
    p.label_weight->value = Tensor::identity(d);
    p.context_weight->value = Tensor::identity(d);
    require_close(dual.logits(E, h, Mode::eval, rng), tied_out, 1e-12);
    CHECK(bil_out.rows() == V);
  }
}

TEST_CASE("param_count closed forms and examples") {
  CHECK(param_count(OutputKind::weight_tying, 10000, 400, 400, 400, 1) == 10000);
  CHECK(param_count(OutputKind::drill, 10000, 400, 400, 400, 4) == 651600);
  CHECK(param_count(OutputKind::full_softmax, 10, 4, 6, 0, 1) == 6 * 10 + 10);
  CHECK(param_count(OutputKind::bilinear, 10, 4, 6, 0, 1) == 24 + 10);
  CHECK(param_count(OutputKind::dual_nonlinear, 10, 4, 6, 5, 1) == 20 + 5 + 30 + 5 + 10);
  CHECK_THROWS_AS(param_count(OutputKind::drill, 10, 4, 6, 4, 2), ConfigError);
  CHECK_THROWS_AS(param_count(OutputKind::bilinear, 0, 4, 4, 4, 1), ConfigError);

  for (Index V : {20, 50, 300}) {
    for (Index d : {2, 3, 5}) {
      for (Index dh : {2, 3, 5}) {
        for (OutputKind kind : {OutputKind::full_softmax, OutputKind::weight_tying, OutputKind::bilinear,
                                OutputKind::dual_nonlinear, OutputKind::drill}) {
          if ((kind == OutputKind::weight_tying || kind == OutputKind::drill) && d != dh) continue;
          OutputLayer layer = make_layer(kind, V, d, dh, 3, Activation::tanh, d + 1);
          std::int64_t enumerated = 0;
          for (Parameter* p : layer.parameters()) enumerated += p->value.size();
          CHECK(enumerated == param_count(kind, V, d, dh, d + 1, 3));
        }
      }
    }
  }
}

TEST_CASE("capacity ordering at d=400 and |V|=10000") {
  for (Index d : {100, 200, 400}) {
    for (Index V : {10000, 33278}) {
      const auto tied = param_count(OutputKind::weight_tying, V, d, d, d, 1);
      const auto bil = param_count(OutputKind::bilinear, V, d, d, d, 1);
      const auto dual = param_count(OutputKind::dual_nonlinear, V, d, d, d, 1);
      const auto base = param_count(OutputKind::full_softmax, V, d, d, d, 1);
      CHECK(tied < bil);
      CHECK(bil <= dual);
      CHECK(dual <= base);
    }
  }
}

TEST_CASE("gradient check of DRILL k=2 tanh on a five-word vocabulary") {
  Rng rng(31);
  OutputLayer layer = make_layer(OutputKind::drill, 5, 4, 4, 2, Activation::tanh);
  for (Parameter* p : layer.parameters()) p->value = random_tensor(p->value.rows(), p->value.cols(), rng, 0.5);
  Parameter E("E", random_tensor(5, 4, rng));
  Parameter H("H", random_tensor(3, 4, rng));
  std::vector<Parameter*> params = layer.parameters();
  params.push_back(&E);
  params.push_back(&H);
  const std::vector<TokenId> targets{4, 0, 2};
  const Real err = finite_difference_check(
      [&](Tape& t) {
        Rng unused(0);
        Var labels = layer.encode_labels(t.parameter(E), Mode::eval, unused);
        return softmax_cross_entropy(layer.logits(labels, t.parameter(H)), targets);
      },
      params, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("frozen dropout masks keep the loss deterministic for gradient checks") {
  Rng rng(32);
  OutputConfig cfg;
  cfg.kind = OutputKind::drill;
  cfg.depth = 2;
  cfg.dropout = DropoutSpec{DropoutMode::variational, 0.3};
  Rng init(1);
  OutputLayer layer = OutputLayer::build(cfg, OutputDims{6, 3, 3}, init);
  Parameter E("E", random_tensor(6, 3, rng));
  Parameter H("H", random_tensor(4, 3, rng));
  std::vector<Parameter*> params = layer.parameters();
  params.push_back(&E);
  const std::vector<TokenId> targets{1, 5, 0, 2};
  const Real err = finite_difference_check(
      [&](Tape& t) {
        Rng masks(77);  // reseeded per evaluation: the same masks every time
        Var labels = layer.encode_labels(t.parameter(E), Mode::train, masks);
        return softmax_cross_entropy(layer.logits(labels, t.parameter(H)), targets);
      },
      params, 1e-5);
  CHECK(err < 1e-5);
}
