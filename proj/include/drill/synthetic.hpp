// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "drill/tensor.hpp"

namespace drill {

/// Parameters of a class-based hidden Markov text source.
///
/// Every word belongs to one latent class. Sentences walk a sparse class
/// transition graph; each step emits a word of the current class with
/// Zipfian weights, so the global word frequencies follow a power law
/// and rare words share their class's context statistics.
struct SyntheticSpec {
  Index vocab = 2000;
  Index classes = 48;
  Index successors = 4;   ///< nonzero entries per class transition row
  Real zipf = 1.05;       ///< exponent of the global frequency ranking
  Real end_prob = 0.08;   ///< per-step probability of ending the sentence
  Index max_sentence = 40;
  std::uint64_t seed = 1234;
};

struct SyntheticCorpus {
  std::string train;
  std::string valid;
  std::string test;
};

/// Draws three splits of roughly the requested token counts (`<eos>`
/// included) from one fixed source. Deterministic in `spec.seed`.
SyntheticCorpus generate_corpus(const SyntheticSpec& spec, Index train_tokens, Index valid_tokens,
                                Index test_tokens);

/// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace drill
