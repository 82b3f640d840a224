// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drill/data.hpp"
#include "drill/model.hpp"

namespace drill {

struct EvalOptions {
  Index batch_size = 1;
  Index bptt_len = 35;
};

/// Scored target positions of an evaluation split.
///
/// `positions[i]` is the index of the target token in the evaluated stream.
struct PerTokenLoss {
  std::vector<std::int64_t> positions;
  std::vector<TokenId> targets;
  std::vector<Real> nll;

  std::size_t size() const { return nll.size(); }
  Real mean() const;
  void write_csv(std::ostream& out) const;  ///< position,target_id,nll
};

/// Eval-mode NLL of every scored target, with state threaded across windows.
PerTokenLoss per_token_losses(const LanguageModel& model, std::span<const TokenId> ids, const EvalOptions& opts = {});

/// exp(mean NLL per target token). Throws DataError on an empty split.
Real perplexity(const LanguageModel& model, std::span<const TokenId> ids, const EvalOptions& opts = {});

enum class BandWeighting { token, type };

struct BandRow {
  std::string interval;
  std::int64_t types = 0;   ///< distinct target ids scored in the band
  std::int64_t tokens = 0;  ///< scored target positions in the band
  Real baseline_ce = 0.0;
  Real comparison_ce = 0.0;
  Real relative_diff_pct = 0.0;  ///< 100 (baseline - comparison) / baseline; positive favors comparison
  bool empty() const { return tokens == 0; }
};

struct BandReport {
  std::vector<BandRow> rows;
  void write_csv(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

/// Per-band mean cross-entropy of two aligned loss records.
/// Throws DataError when the records differ in length or targets.
BandReport band_compare(const PerTokenLoss& baseline, const PerTokenLoss& comparison, const FrequencyBands& bands,
                        BandWeighting weighting = BandWeighting::token);

struct ParamReport {
  std::int64_t embedding = 0;
  std::int64_t encoder = 0;
  std::int64_t output = 0;
  std::int64_t total = 0;
  void write_csv(std::ostream& out) const;
};

ParamReport param_report(LanguageModel& model);

}  // namespace drill
