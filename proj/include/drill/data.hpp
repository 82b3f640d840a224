// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "drill/tensor.hpp"

namespace drill {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEosToken = "<eos>";

/// Token <-> id mapping with training-split counts.
///
/// Ids are dense and ordered by descending training count, ties broken
/// lexicographically. `<unk>` and `<eos>` are always present.
class Vocab {
 public:
  /// Counts whitespace tokens plus one `<eos>` per line; types seen fewer
  /// than `min_count` times are folded into `<unk>`.
  static Vocab build(std::string_view train_text, std::int64_t min_count = 1);
  static Vocab build_from_file(const std::filesystem::path& path, std::int64_t min_count = 1);

  Index size() const { return static_cast<Index>(tokens_.size()); }
  TokenId id(std::string_view token) const;  ///< `<unk>` id for unknown tokens
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::int64_t train_count(TokenId id) const;
  TokenId unk_id() const { return unk_; }
  TokenId eos_id() const { return eos_; }

  /// Ids of `text`, one `<eos>` appended per line.
  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<TokenId> encode_file(const std::filesystem::path& path) const;

  /// `token<TAB>count` per line in id order.
  void write_tsv(std::ostream& out) const;
  /// FNV-1a 64 over the TSV export, as 16 hex digits.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_ = 0;
  TokenId eos_ = 0;
};

/// Whole-file read; throws DataError naming the path on failure.
std::string read_text_file(const std::filesystem::path& path);

/// A token stream cut into `batch` contiguous strips of equal length.
/// `strip(b)[t]` is `ids[b * length + t]` of the source stream.
struct BatchedCorpus {
  Index batch = 0;
  Index length = 0;
  std::vector<TokenId> ids;  // row-major (batch x length)

  TokenId at(Index strip, Index t) const { return ids[static_cast<std::size_t>(strip * length + t)]; }
};

/// Splits `ids` into `batch_size` strips, dropping the remainder.
BatchedCorpus batchify(std::span<const TokenId> ids, Index batch_size);

/// One BPTT slice across all strips, stored time-major:
/// `inputs[t * batch + b]`, targets shifted by one position.
struct Window {
  Index steps = 0;
  Index batch = 0;
  Index start = 0;  ///< strip offset of the first input
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

/// Non-overlapping windows of at most `bptt_len` steps, final short
/// window included.
std::vector<Window> bptt_windows(const BatchedCorpus& corpus, Index bptt_len);

/// Partition of observed vocabulary ids by training count.
///
/// Band i covers [lower(i), upper(i)) where lower(0) = 1 and the last band
/// is unbounded above. Ids with zero training count belong to no band.
struct FrequencyBands {
  std::vector<std::int64_t> boundaries;
  std::vector<int> band_of;  ///< per id; -1 when unobserved

  std::size_t num_bands() const { return boundaries.size() + 1; }
  std::int64_t lower(std::size_t band) const { return band == 0 ? 1 : boundaries[band - 1]; }
  std::int64_t upper(std::size_t band) const {
    return band < boundaries.size() ? boundaries[band] : std::numeric_limits<std::int64_t>::max();
  }
  /// "[1,10)", "[10000,inf)".
  std::string label(std::size_t band) const;
};

inline const std::vector<std::int64_t> kDefaultBandBoundaries{10, 100, 1000, 10000};

FrequencyBands assign_bands(const Vocab& vocab, std::vector<std::int64_t> boundaries = kDefaultBandBoundaries);

}  // namespace drill
