// SPDX-License-Identifier: Apache-2.0
#include "drill/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "drill/error.hpp"

namespace drill {

namespace {

/// Calls `on_token` for every whitespace token and `on_eol` after each line.
template <class OnToken, class OnEol>
void scan_lines(std::string_view text, OnToken&& on_token, OnEol&& on_eol) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      if (j > i) on_token(line.substr(i, j - i));
      i = j;
    }
    on_eol();
    pos = eol + 1;
  }
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Vocab Vocab::build(std::string_view train_text, std::int64_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::map<std::string, std::int64_t, std::less<>> raw;
  std::int64_t total = 0;
  scan_lines(
      train_text,
      [&](std::string_view tok) {
        auto it = raw.find(tok);
        if (it == raw.end()) it = raw.emplace(std::string(tok), 0).first;
        ++it->second;
        ++total;
      },
      [&] { ++raw[std::string(kEosToken)]; });
  if (total == 0) throw DataError("training corpus contains no tokens");

  std::map<std::string, std::int64_t, std::less<>> kept;
  std::int64_t unk = 0;
  for (const auto& [tok, n] : raw) {
    if (tok == kUnkToken) {
      unk += n;
    } else if (n < min_count && tok != kEosToken) {
      unk += n;
    } else {
      kept.emplace(tok, n);
    }
  }
  kept[std::string(kUnkToken)] = unk;

  std::vector<std::pair<std::string, std::int64_t>> order(kept.begin(), kept.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  v.tokens_.reserve(order.size());
  for (auto& [tok, n] : order) {
    const auto id = static_cast<TokenId>(v.tokens_.size());
    v.index_.emplace(tok, id);
    v.tokens_.push_back(tok);
    v.counts_.push_back(n);
  }
  v.unk_ = v.index_.at(std::string(kUnkToken));
  v.eos_ = v.index_.at(std::string(kEosToken));
  return v;
}

Vocab Vocab::build_from_file(const std::filesystem::path& path, std::int64_t min_count) {
  return build(read_text_file(path), min_count);
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw IndexError("vocab id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Vocab::train_count(TokenId id) const {
  if (id < 0 || id >= size()) throw IndexError("vocab id " + std::to_string(id) + " out of range");
  return counts_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  scan_lines(
      text, [&](std::string_view tok) { out.push_back(id(tok)); }, [&] { out.push_back(eos_); });
  return out;
}

std::vector<TokenId> Vocab::encode_file(const std::filesystem::path& path) const {
  return encode(read_text_file(path));
}

void Vocab::write_tsv(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << counts_[i] << '\n';
}

std::string Vocab::hash() const {
  std::ostringstream ss;
  write_tsv(ss);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : ss.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

BatchedCorpus batchify(std::span<const TokenId> ids, Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const auto n = static_cast<Index>(ids.size());
  if (n < 2 * batch_size) {
    throw DataError("token stream of length " + std::to_string(n) + " is too short for batch_size " +
                    std::to_string(batch_size));
  }
  BatchedCorpus bc;
  bc.batch = batch_size;
  bc.length = n / batch_size;
  bc.ids.assign(ids.begin(), ids.begin() + bc.batch * bc.length);
  return bc;
}

std::vector<Window> bptt_windows(const BatchedCorpus& corpus, Index bptt_len) {
  if (bptt_len < 1) throw ConfigError("bptt_len must be >= 1");
  std::vector<Window> out;
  for (Index start = 0; start + 1 < corpus.length; start += bptt_len) {
    Window w;
    w.steps = std::min(bptt_len, corpus.length - 1 - start);
    w.batch = corpus.batch;
    w.start = start;
    w.inputs.resize(static_cast<std::size_t>(w.steps * w.batch));
    w.targets.resize(w.inputs.size());
    for (Index t = 0; t < w.steps; ++t) {
      for (Index b = 0; b < w.batch; ++b) {
        const auto k = static_cast<std::size_t>(t * w.batch + b);
        w.inputs[k] = corpus.at(b, start + t);
        w.targets[k] = corpus.at(b, start + t + 1);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string FrequencyBands::label(std::size_t band) const {
  const std::string hi = band < boundaries.size() ? std::to_string(upper(band)) : "inf";
  return "[" + std::to_string(lower(band)) + "," + hi + ")";
}

FrequencyBands assign_bands(const Vocab& vocab, std::vector<std::int64_t> boundaries) {
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] <= (i == 0 ? 1 : boundaries[i - 1])) {
      throw ConfigError("band boundaries must be strictly increasing and start above 1");
    }
  }
  FrequencyBands bands;
  bands.boundaries = std::move(boundaries);
  bands.band_of.assign(static_cast<std::size_t>(vocab.size()), -1);
  for (TokenId id = 0; id < vocab.size(); ++id) {
    const std::int64_t n = vocab.train_count(id);
    if (n < 1) continue;
    const auto it = std::upper_bound(bands.boundaries.begin(), bands.boundaries.end(), n);
    bands.band_of[static_cast<std::size_t>(id)] = static_cast<int>(it - bands.boundaries.begin());
  }
  return bands;
}

}  // namespace drill
