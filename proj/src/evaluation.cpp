// SPDX-License-Identifier: Apache-2.0
#include "drill/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>

#include "drill/error.hpp"

namespace drill {

namespace {

std::string fmt_real(Real v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

Real PerTokenLoss::mean() const {
  if (nll.empty()) throw DataError("mean of an empty loss record");
  // Compensated (Neumaier) summation keeps long evaluation splits free of accumulated rounding.
  Real sum = 0.0, carry = 0.0;
  for (Real v : nll) {
    const Real t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + carry) / static_cast<Real>(nll.size());
}

void PerTokenLoss::write_csv(std::ostream& out) const {
  out << "position,target_id,nll\n";
  char buf[64];
  for (std::size_t i = 0; i < nll.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", nll[i]);
    out << positions[i] << ',' << targets[i] << ',' << buf << '\n';
  }
}

PerTokenLoss per_token_losses(const LanguageModel& model, std::span<const TokenId> ids, const EvalOptions& opts) {
  if (ids.size() < 2) throw DataError("evaluation split needs at least two tokens");
  if (opts.batch_size < 1 || opts.bptt_len < 1) throw ConfigError("eval batch_size and bptt_len must be >= 1");
  const Index batch = std::min<Index>(opts.batch_size, static_cast<Index>(ids.size()) / 2);
  const BatchedCorpus corpus = batchify(ids, batch);
  const Tensor labels = model.encoded_labels();
  RecurrentState state = model.encoder().zero_state(corpus.batch);
  Rng unused(0);

  PerTokenLoss out;
  for (const Window& w : bptt_windows(corpus, opts.bptt_len)) {
    Tape tape;
    Var logits = model.window_logits(tape, w, state, Mode::eval, unused, &labels);
    const std::vector<Real> nll = cross_entropy_rows(logits.value(), w.targets);
    for (Index t = 0; t < w.steps; ++t) {
      for (Index b = 0; b < w.batch; ++b) {
        const auto k = static_cast<std::size_t>(t * w.batch + b);
        out.positions.push_back(b * corpus.length + w.start + t + 1);
        out.targets.push_back(w.targets[k]);
        out.nll.push_back(nll[k]);
      }
    }
  }
  return out;
}

Real perplexity(const LanguageModel& model, std::span<const TokenId> ids, const EvalOptions& opts) {
  if (ids.empty()) throw DataError("perplexity of an empty split");
  return std::exp(per_token_losses(model, ids, opts).mean());
}

// ---------------------------------------------------------------------------

BandReport band_compare(const PerTokenLoss& baseline, const PerTokenLoss& comparison, const FrequencyBands& bands,
                        BandWeighting weighting) {
  if (baseline.size() != comparison.size()) {
    throw DataError("band_compare: loss records differ in length (" + std::to_string(baseline.size()) + " vs " +
                    std::to_string(comparison.size()) + ")");
  }
  if (baseline.targets != comparison.targets) throw DataError("band_compare: loss records have different targets");

  const std::size_t nb = bands.num_bands();
  // Per band, per type: (sum baseline, sum comparison, count).
  struct Acc {
    Real base = 0, comp = 0;
    std::int64_t n = 0;
  };
  std::vector<std::map<TokenId, Acc>> per_type(nb);
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    const TokenId y = baseline.targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= bands.band_of.size()) {
      throw DataError("band_compare: target id " + std::to_string(y) + " outside the band table");
    }
    const int band = bands.band_of[static_cast<std::size_t>(y)];
    if (band < 0) continue;
    Acc& a = per_type[static_cast<std::size_t>(band)][y];
    a.base += baseline.nll[i];
    a.comp += comparison.nll[i];
    ++a.n;
  }

  BandReport report;
  for (std::size_t b = 0; b < nb; ++b) {
    BandRow row;
    row.interval = bands.label(b);
    row.types = static_cast<std::int64_t>(per_type[b].size());
    Real base = 0, comp = 0;
    for (const auto& [id, a] : per_type[b]) {
      row.tokens += a.n;
      if (weighting == BandWeighting::token) {
        base += a.base;
        comp += a.comp;
      } else {
        base += a.base / static_cast<Real>(a.n);
        comp += a.comp / static_cast<Real>(a.n);
      }
    }
    if (row.tokens > 0) {
      const Real denom = weighting == BandWeighting::token ? static_cast<Real>(row.tokens) : static_cast<Real>(row.types);
      row.baseline_ce = base / denom;
      row.comparison_ce = comp / denom;
      row.relative_diff_pct =
          row.baseline_ce == 0.0 ? 0.0 : 100.0 * (row.baseline_ce - row.comparison_ce) / row.baseline_ce;
    }
    report.rows.push_back(row);
  }
  return report;
}

void BandReport::write_csv(std::ostream& out) const {
  out << "band,types,tokens,baseline_ce,comparison_ce,relative_diff_pct\n";
  for (const BandRow& r : rows) {
    out << r.interval << ',' << r.types << ',' << r.tokens << ',';
    if (r.empty()) {
      out << ",,\n";
    } else {
      out << fmt_real(r.baseline_ce) << ',' << fmt_real(r.comparison_ce) << ',' << fmt_real(r.relative_diff_pct, 3)
          << '\n';
    }
  }
}

void BandReport::write_table(std::ostream& out) const {
  out << std::left << std::setw(16) << "band" << std::right << std::setw(8) << "types" << std::setw(10) << "tokens"
      << std::setw(14) << "baseline_ce" << std::setw(14) << "compare_ce" << std::setw(10) << "diff_%" << '\n';
  for (const BandRow& r : rows) {
    out << std::left << std::setw(16) << r.interval << std::right << std::setw(8) << r.types << std::setw(10)
        << r.tokens;
    if (r.empty()) {
      out << std::setw(14) << "-" << std::setw(14) << "-" << std::setw(10) << "empty" << '\n';
    } else {
      out << std::setw(14) << fmt_real(r.baseline_ce, 4) << std::setw(14) << fmt_real(r.comparison_ce, 4)
          << std::setw(10) << fmt_real(r.relative_diff_pct, 2) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

ParamReport param_report(LanguageModel& model) {
  auto count = [](const std::vector<Parameter*>& ps) {
    std::int64_t n = 0;
    for (const Parameter* p : ps) n += p->value.size();
    return n;
  };
  ParamReport r;
  r.embedding = count(model.embedding_parameters());
  r.encoder = count(model.encoder_parameters());
  r.output = count(model.output_parameters());
  r.total = count(model.parameters());
  return r;
}

void ParamReport::write_csv(std::ostream& out) const {
  out << "component,parameters\n"
      << "embedding," << embedding << '\n'
      << "encoder," << encoder << '\n'
      << "output_layer," << output << '\n'
      << "total," << total << '\n';
}

}  // namespace drill
