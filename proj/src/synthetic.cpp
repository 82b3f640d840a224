// SPDX-License-Identifier: Apache-2.0
#include "drill/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "drill/error.hpp"

namespace drill {

namespace {

struct Source {
  std::vector<std::vector<Index>> members;          // word ids per class
  std::vector<std::discrete_distribution<Index>> emit;  // over members
  std::vector<std::discrete_distribution<Index>> next;  // over classes
  std::discrete_distribution<Index> first;
};

Source build_source(const SyntheticSpec& spec, Rng& rng) {
  Source s;
  const auto C = static_cast<std::size_t>(spec.classes);
  s.members.resize(C);
  // Spread global frequency ranks over classes so each class mixes
  // frequent and rare words.
  for (Index i = 0; i < spec.vocab; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, C - 1);
    s.members[static_cast<std::size_t>(i) < C ? static_cast<std::size_t>(i) : pick(rng)].push_back(i);
  }
  std::vector<Real> class_mass(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<Real> w;
    for (Index id : s.members[c]) {
      w.push_back(1.0 / std::pow(static_cast<Real>(id + 1), spec.zipf));
      class_mass[c] += w.back();
    }
    s.emit.emplace_back(w.begin(), w.end());
  }
  std::uniform_int_distribution<std::size_t> any(0, C - 1);
  std::gamma_distribution<Real> gamma(0.7, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<Real> row(C, 0.0);
    for (Index k = 0; k < spec.successors; ++k) {
      const std::size_t to = any(rng);
      row[to] += gamma(rng) * std::sqrt(class_mass[to]);
    }
    s.next.emplace_back(row.begin(), row.end());
  }
  s.first = std::discrete_distribution<Index>(class_mass.begin(), class_mass.end());
  return s;
}

std::string sample_split(const SyntheticSpec& spec, Source& s, Index tokens, Rng& rng) {
  std::string out;
  std::bernoulli_distribution stop(spec.end_prob);
  Index emitted = 0;
  while (emitted < tokens) {
    Index c = s.first(rng);
    for (Index len = 0; len < spec.max_sentence; ++len) {
      const auto cs = static_cast<std::size_t>(c);
      const Index word = s.members[cs][static_cast<std::size_t>(s.emit[cs](rng))];
      if (len > 0) out += ' ';
      out += 'w';
      out += std::to_string(word);
      ++emitted;
      if (len > 0 && stop(rng)) break;
      c = s.next[cs](rng);
    }
    out += '\n';
    ++emitted;  // <eos>
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticSpec& spec, Index train_tokens, Index valid_tokens,
                                Index test_tokens) {
  if (spec.vocab < 2 || spec.classes < 1 || spec.classes > spec.vocab || spec.successors < 1) {
    throw ConfigError("synthetic source needs vocab >= 2, 1 <= classes <= vocab and successors >= 1");
  }
  if (!(spec.end_prob > 0.0 && spec.end_prob < 1.0) || spec.max_sentence < 2 || !(spec.zipf > 0.0)) {
    throw ConfigError("synthetic source needs end_prob in (0,1), max_sentence >= 2 and zipf > 0");
  }
  if (train_tokens < 1 || valid_tokens < 1 || test_tokens < 1) throw ConfigError("split sizes must be positive");
  Rng rng(spec.seed);
  Source source = build_source(spec, rng);
  SyntheticCorpus corpus;
  corpus.train = sample_split(spec, source, train_tokens, rng);
  corpus.valid = sample_split(spec, source, valid_tokens, rng);
  corpus.test = sample_split(spec, source, test_tokens, rng);
  return corpus;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::string*> files[] = {
      {"train.txt", &corpus.train}, {"valid.txt", &corpus.valid}, {"test.txt", &corpus.test}};
  for (const auto& [name, text] : files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << *text;
    if (!out) throw DataError("cannot write " + (dir / name).string());
  }
}

}  // namespace drill
