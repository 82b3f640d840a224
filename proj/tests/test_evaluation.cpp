// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drill/error.hpp"
#include "drill/evaluation.hpp"
#include "drill/synthetic.hpp"
#include "drill/training.hpp"
#include "helpers.hpp"

using namespace drill;
using drill::test::tiny_model;

namespace {

PerTokenLoss constant_losses(std::vector<TokenId> targets, Real value) {
  PerTokenLoss l;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    l.positions.push_back(static_cast<std::int64_t>(i + 1));
    l.targets.push_back(targets[i]);
    l.nll.push_back(value);
  }
  return l;
}

struct SmallTask {
  Vocab vocab;
  std::vector<TokenId> train;
  std::vector<TokenId> valid;
};

SmallTask small_task() {
  SyntheticSpec spec;
  spec.vocab = 60;
  spec.classes = 6;
  const SyntheticCorpus c = generate_corpus(spec, 6000, 30000, 100);
  SmallTask t{Vocab::build(c.train), {}, {}};
  t.train = t.vocab.encode(c.train);
  t.valid = t.vocab.encode(c.valid);
  return t;
}

}  // namespace

TEST_CASE("perplexity of a uniform predictor is the vocabulary size") {
  for (Index V : {2, 10, 37}) {
    LanguageModel model(tiny_model(OutputKind::weight_tying, V, 3), 1);
    for (Parameter* p : model.parameters()) p->value = Tensor::zeros(p->value.rows(), p->value.cols());
    std::vector<TokenId> ids;
    for (int i = 0; i < 50; ++i) ids.push_back(static_cast<TokenId>((i * 7) % V));
    CHECK(perplexity(model, ids) == doctest::Approx(static_cast<Real>(V)).epsilon(1e-14));
  }
}

TEST_CASE("perplexity of a perfect predictor is one") {
  LanguageModel model(tiny_model(OutputKind::weight_tying, 4, 2), 1);
  model.output().bias().value = Tensor::from_rows({{0.0, 0.0, 80.0, 0.0}});
  const std::vector<TokenId> ids(30, 2);
  CHECK(perplexity(model, ids) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(perplexity(model, std::vector<TokenId>{2}), DataError);
  CHECK_THROWS_AS(perplexity(model, std::vector<TokenId>{}), DataError);
}

TEST_CASE("per-token losses agree with perplexity and count scored positions") {
  LanguageModel model(tiny_model(OutputKind::drill, 12, 4, 2), 7);
  std::vector<TokenId> ids;
  for (int i = 0; i < 203; ++i) ids.push_back(static_cast<TokenId>((i * i + 3) % 12));
  for (Index batch : {1, 4}) {
    const EvalOptions opts{batch, 9};
    const PerTokenLoss l = per_token_losses(model, ids, opts);
    const Index strip = static_cast<Index>(ids.size()) / batch;
    CHECK(static_cast<Index>(l.size()) == batch * (strip - 1));
    Real mean = 0.0;
    for (Real v : l.nll) mean += v;
    mean /= static_cast<Real>(l.size());
    CHECK(std::abs(l.mean() - mean) <= 1e-12);
    CHECK(std::abs(std::exp(l.mean()) - perplexity(model, ids, opts)) <= 1e-10 * std::exp(l.mean()));
    for (std::size_t i = 0; i < l.size(); ++i) {
      CHECK(l.targets[i] == ids[static_cast<std::size_t>(l.positions[i])]);
    }
  }
  std::ostringstream csv;
  per_token_losses(model, std::vector<TokenId>{1, 2, 3}).write_csv(csv);
  CHECK(csv.str().rfind("position,target_id,nll\n1,2,", 0) == 0);
}

TEST_CASE("evaluation is deterministic and stable across window lengths") {
  LanguageModel model(tiny_model(OutputKind::dual_nonlinear, 9, 4), 3);
  std::vector<TokenId> ids;
  for (int i = 0; i < 120; ++i) ids.push_back(static_cast<TokenId>((i * 5) % 9));
  const Real a = perplexity(model, ids, EvalOptions{1, 35});
  CHECK(perplexity(model, ids, EvalOptions{1, 35}) == a);
  CHECK(std::abs(perplexity(model, ids, EvalOptions{1, 7}) - a) <= 1e-10 * a);
}

TEST_CASE("perplexity is nearly invariant to evaluation batch size") {
  const SmallTask task = small_task();
  LanguageModel model(tiny_model(OutputKind::weight_tying, task.vocab.size(), 16), 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  cfg.bptt_len = 20;
  train(model, task.train, task.valid, cfg);
  const Real p1 = perplexity(model, task.valid, EvalOptions{1, 35});
  const Real p8 = perplexity(model, task.valid, EvalOptions{8, 35});
  CHECK(std::abs(p1 - p8) / p1 <= 1e-3);
}

TEST_CASE("untrained model is near uniform") {
  LanguageModel model(tiny_model(OutputKind::weight_tying, 10, 8), 4);
  std::vector<TokenId> ids;
  Rng rng(1);
  for (int i = 0; i < 500; ++i) ids.push_back(static_cast<TokenId>(rng() % 10));
  const Real p = perplexity(model, ids);
  CHECK(p >= 8.0);
  CHECK(p <= 12.0);
}

TEST_CASE("band_compare examples") {
  const Vocab v = Vocab::build("a a a a a a a a a a a b\n");  // a:11, b:1, <eos>:1
  const FrequencyBands bands = assign_bands(v);
  const std::vector<TokenId> targets{v.id("a"), v.id("b"), v.id("a"), v.eos_id(), v.id("a")};

  const PerTokenLoss base = constant_losses(targets, 2.0);
  const BandReport self = band_compare(base, base, bands);
  REQUIRE(self.rows.size() == 5);
  for (const BandRow& r : self.rows) {
    if (!r.empty()) CHECK(r.relative_diff_pct == 0.0);
  }

  const BandReport half = band_compare(base, constant_losses(targets, 1.0), bands);
  CHECK(half.rows[0].interval == "[1,10)");
  CHECK(half.rows[0].tokens == 2);  // b and <eos>
  CHECK(half.rows[0].types == 2);
  CHECK(half.rows[1].tokens == 3);  // a
  CHECK(half.rows[1].types == 1);
  for (const BandRow& r : half.rows) {
    if (r.empty()) {
      CHECK(r.tokens == 0);
      CHECK(std::isfinite(r.relative_diff_pct));
    } else {
      CHECK(r.relative_diff_pct == doctest::Approx(50.0));
    }
  }
  CHECK(half.rows[4].empty());

  std::ostringstream csv;
  half.write_csv(csv);
  CHECK(csv.str().find("band,types,tokens,baseline_ce,comparison_ce,relative_diff_pct\n") == 0);
  CHECK(csv.str().find("[10000,inf),0,0,,,") != std::string::npos);
}

TEST_CASE("band_compare token and type weighting") {
  const Vocab v = Vocab::build("a a b c\n");
  const FrequencyBands bands = assign_bands(v);
  const std::vector<TokenId> targets{v.id("a"), v.id("a"), v.id("a"), v.id("b")};
  PerTokenLoss base = constant_losses(targets, 1.0);
  base.nll = {1.0, 1.0, 1.0, 4.0};
  const PerTokenLoss comp = constant_losses(targets, 1.0);
  const BandReport token = band_compare(base, comp, bands, BandWeighting::token);
  const BandReport type = band_compare(base, comp, bands, BandWeighting::type);
  CHECK(token.rows[0].baseline_ce == doctest::Approx(7.0 / 4.0));
  CHECK(type.rows[0].baseline_ce == doctest::Approx((1.0 + 4.0) / 2.0));
}

TEST_CASE("band_compare is antisymmetric in the CE gap") {
  const Vocab v = Vocab::build("x y y z z z w\n");
  const FrequencyBands bands = assign_bands(v, {2, 3});
  Rng rng(5);
  std::vector<TokenId> targets;
  for (int i = 0; i < 40; ++i) targets.push_back(static_cast<TokenId>(rng() % 5));
  PerTokenLoss a = constant_losses(targets, 0.0), b = constant_losses(targets, 0.0);
  std::uniform_real_distribution<Real> u(0.1, 5.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    a.nll[i] = u(rng);
    b.nll[i] = u(rng);
  }
  const BandReport ab = band_compare(a, b, bands), ba = band_compare(b, a, bands);
  for (std::size_t i = 0; i < ab.rows.size(); ++i) {
    CHECK((ab.rows[i].baseline_ce - ab.rows[i].comparison_ce) ==
          -(ba.rows[i].baseline_ce - ba.rows[i].comparison_ce));
  }
}

TEST_CASE("band_compare rejects misaligned records") {
  const Vocab v = Vocab::build("a b\n");
  const FrequencyBands bands = assign_bands(v);
  const PerTokenLoss a = constant_losses({0, 1}, 1.0);
  CHECK_THROWS_AS(band_compare(a, constant_losses({0}, 1.0), bands), DataError);
  CHECK_THROWS_AS(band_compare(a, constant_losses({1, 0}, 1.0), bands), DataError);
}

TEST_CASE("param_report accounting") {
  LanguageModel tied(tiny_model(OutputKind::weight_tying, 30, 5), 1);
  const ParamReport r = param_report(tied);
  CHECK(r.output == 30);
  CHECK(r.embedding == 150);
  CHECK(r.encoder == 4 * 5 * (5 + 5 + 1));
  CHECK(r.total == r.embedding + r.encoder + r.output);
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(csv.str() == "component,parameters\nembedding,150\nencoder,220\noutput_layer,30\ntotal,400\n");

  for (OutputKind kind : {OutputKind::full_softmax, OutputKind::bilinear, OutputKind::dual_nonlinear,
                          OutputKind::drill}) {
    ModelConfig mc = tiny_model(kind, 25, 6, 3);
    mc.output.joint_dim = 4;
    LanguageModel m(mc, 1);
    CHECK(param_report(m).output == param_count(kind, 25, 6, 6, 4, 3));
  }
}

TEST_CASE("DRILL k=4 at d=400 and |V|=10000 has 651,600 output parameters") {
  ModelConfig mc;
  mc.vocab_size = 10000;
  mc.encoder = EncoderConfig{1, 400, 400, 0, 0.0};
  mc.output.kind = OutputKind::drill;
  mc.output.depth = 4;
  LanguageModel m(mc, 1);
  CHECK(param_report(m).output == 651600);
}
