#pragma once

// Deduplicated training-pattern store and the minimum-Hamming-distance scan.
//
// Patterns are kept in one contiguous word array (unique_count x word_count),
// each unique pattern with the number of training samples that produced it.
// The store is immutable after construction and safe for concurrent queries.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "napmon/error.hpp"
#include "napmon/pattern.hpp"

namespace napmon {

struct NearestResult {
  std::size_t distance = 0;
  std::size_t index = 0;  ///< lowest index among the stored minimizers

  friend bool operator==(const NearestResult&, const NearestResult&) = default;
};

namespace detail {

struct WordsHash {
  std::size_t operator()(const std::vector<std::uint64_t>& words) const noexcept {
    // splitmix-style mixing over the words
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ words.size();
    for (auto w : words) {
      h ^= w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h = (h ^ (h >> 31)) * 0xbf58476d1ce4e5b9ULL;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

/// Linear XOR-popcount scan with early exit on an exact match.
template <std::size_t W>
NearestResult scan_fixed(const std::uint64_t* base, std::size_t count, const std::uint64_t* q) noexcept {
  NearestResult best{std::numeric_limits<std::size_t>::max(), 0};
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t* row = base + i * W;
    std::size_t d = 0;
    for (std::size_t w = 0; w < W; ++w) d += std::popcount(row[w] ^ q[w]);
    if (d < best.distance) {
      best = {d, i};
      if (d == 0) break;
    }
  }
  return best;
}

inline NearestResult scan_dynamic(const std::uint64_t* base, std::size_t count, std::size_t n_words,
                                  const std::uint64_t* q) noexcept {
  NearestResult best{std::numeric_limits<std::size_t>::max(), 0};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t d = xor_popcount(base + i * n_words, q, n_words);
    if (d < best.distance) {
      best = {d, i};
      if (d == 0) break;
    }
  }
  return best;
}

}  // namespace detail

class PatternStore {
 public:
  PatternStore() = default;

  /// Merges duplicates, keeping first-occurrence order.
  static PatternStore build(std::span<const BinaryPattern> patterns, std::string layer_name) {
    if (patterns.empty()) {
      throw Error(ErrorKind::empty_input, "cannot build a store for '" + layer_name + "' from no patterns");
    }
    PatternStore s;
    s.layer_name_ = std::move(layer_name);
    s.bit_len_ = patterns.front().bit_len();
    s.word_count_ = words_for_bits(s.bit_len_);
    s.sample_pattern_.reserve(patterns.size());

    std::unordered_map<std::vector<std::uint64_t>, std::uint32_t, detail::WordsHash> seen;
    seen.reserve(patterns.size());
    for (std::size_t i = 0; i < patterns.size(); ++i) {
      const auto& p = patterns[i];
      if (p.bit_len() != s.bit_len_) {
        throw Error(ErrorKind::length_mismatch, "store '" + s.layer_name_ + "': pattern " + std::to_string(i) +
                                                    " has " + std::to_string(p.bit_len()) + " bits, expected " +
                                                    std::to_string(s.bit_len_));
      }
      std::vector<std::uint64_t> key(p.words().begin(), p.words().end());
      auto [it, inserted] = seen.try_emplace(std::move(key), static_cast<std::uint32_t>(s.multiplicities_.size()));
      if (inserted) {
        s.words_.insert(s.words_.end(), p.words().begin(), p.words().end());
        s.multiplicities_.push_back(1);
      } else {
        ++s.multiplicities_[it->second];
      }
      s.sample_pattern_.push_back(it->second);
    }
    s.total_count_ = patterns.size();
    return s;
  }

  /// Reassembles a store from persisted parts. Rejects duplicates, zero
  /// multiplicities and nonzero padding.
  static PatternStore from_parts(std::string layer_name, std::size_t bit_len, std::vector<std::uint64_t> words,
                                 std::vector<std::uint32_t> multiplicities) {
    PatternStore s;
    s.layer_name_ = std::move(layer_name);
    s.bit_len_ = bit_len;
    s.word_count_ = words_for_bits(bit_len);
    const auto unique = multiplicities.size();
    if (unique == 0) throw Error(ErrorKind::empty_input, "store '" + s.layer_name_ + "' has no patterns");
    if (words.size() != unique * s.word_count_) {
      throw Error(ErrorKind::size_mismatch, "store '" + s.layer_name_ + "': word count does not match pattern count");
    }
    std::unordered_map<std::vector<std::uint64_t>, std::uint32_t, detail::WordsHash> seen;
    for (std::size_t i = 0; i < unique; ++i) {
      std::vector<std::uint64_t> key(words.begin() + static_cast<std::ptrdiff_t>(i * s.word_count_),
                                     words.begin() + static_cast<std::ptrdiff_t>((i + 1) * s.word_count_));
      if (s.word_count_ > 0 && (key.back() & ~tail_mask(bit_len)) != 0) {
        throw Error(ErrorKind::invalid_argument, "store '" + s.layer_name_ + "': padding bits set in pattern " +
                                                     std::to_string(i));
      }
      if (multiplicities[i] == 0) {
        throw Error(ErrorKind::invalid_argument, "store '" + s.layer_name_ + "': zero multiplicity");
      }
      if (!seen.try_emplace(std::move(key), static_cast<std::uint32_t>(i)).second) {
        throw Error(ErrorKind::invalid_argument, "store '" + s.layer_name_ + "': duplicate pattern " +
                                                     std::to_string(i));
      }
      s.total_count_ += multiplicities[i];
    }
    s.words_ = std::move(words);
    s.multiplicities_ = std::move(multiplicities);
    return s;
  }

  [[nodiscard]] const std::string& layer_name() const noexcept { return layer_name_; }
  [[nodiscard]] std::size_t bit_len() const noexcept { return bit_len_; }
  [[nodiscard]] std::size_t word_count() const noexcept { return word_count_; }
  [[nodiscard]] std::size_t unique_count() const noexcept { return multiplicities_.size(); }
  [[nodiscard]] std::size_t total_count() const noexcept { return total_count_; }
  [[nodiscard]] std::span<const std::uint32_t> multiplicities() const noexcept { return multiplicities_; }
  [[nodiscard]] std::span<const std::uint64_t> raw_words() const noexcept { return words_; }

  [[nodiscard]] std::span<const std::uint64_t> pattern_words(std::size_t i) const noexcept {
    return std::span<const std::uint64_t>(words_).subspan(i * word_count_, word_count_);
  }

  [[nodiscard]] BinaryPattern pattern(std::size_t i) const {
    auto w = pattern_words(i);
    return BinaryPattern::from_words({w.begin(), w.end()}, bit_len_);
  }

  /// Unique-pattern index of the i-th contributing sample. Only known for
  /// stores built from samples, not for ones loaded from disk.
  [[nodiscard]] std::span<const std::uint32_t> sample_patterns() const noexcept { return sample_pattern_; }

  friend bool operator==(const PatternStore& a, const PatternStore& b) {
    return a.layer_name_ == b.layer_name_ && a.bit_len_ == b.bit_len_ && a.words_ == b.words_ &&
           a.multiplicities_ == b.multiplicities_;
  }

 private:
  std::string layer_name_;
  std::size_t bit_len_ = 0;
  std::size_t word_count_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<std::uint32_t> multiplicities_;
  std::vector<std::uint32_t> sample_pattern_;
  std::size_t total_count_ = 0;
};

[[nodiscard]] inline PatternStore build_store(std::span<const BinaryPattern> patterns, std::string layer_name) {
  return PatternStore::build(patterns, std::move(layer_name));
}

inline void check_query(const PatternStore& store, const BinaryPattern& q) {
  if (q.bit_len() != store.bit_len()) {
    throw Error(ErrorKind::length_mismatch, "query of " + std::to_string(q.bit_len()) + " bits against store '" +
                                                store.layer_name() + "' of " + std::to_string(store.bit_len()) +
                                                " bits");
  }
}

/// Minimum Hamming distance from q to the stored patterns (linear scan).
[[nodiscard]] inline NearestResult nearest_distance(const PatternStore& store, const BinaryPattern& q) {
  check_query(store, q);
  const auto* base = store.raw_words().data();
  const auto* qw = q.words().data();
  const auto n = store.unique_count();
  switch (store.word_count()) {
    case 1: return detail::scan_fixed<1>(base, n, qw);
    case 2: return detail::scan_fixed<2>(base, n, qw);
    case 4: return detail::scan_fixed<4>(base, n, qw);
    case 8: return detail::scan_fixed<8>(base, n, qw);
    case 16: return detail::scan_fixed<16>(base, n, qw);
    default: return detail::scan_dynamic(base, n, store.word_count(), qw);
  }
}

/// Distance from unique pattern `pattern_index` to every other training
/// sample: 0 if the pattern occurs more than once, else the nearest other
/// unique pattern.
[[nodiscard]] inline std::size_t loo_nearest(const PatternStore& store, std::size_t pattern_index) {
  if (store.total_count() < 2) {
    throw Error(ErrorKind::loo_undefined, "store '" + store.layer_name() + "' holds a single sample");
  }
  if (pattern_index >= store.unique_count()) {
    throw Error(ErrorKind::invalid_argument, "pattern index " + std::to_string(pattern_index) + " out of range");
  }
  if (store.multiplicities()[pattern_index] > 1) return 0;
  const auto self = store.pattern_words(pattern_index);
  const auto* base = store.raw_words().data();
  const auto w = store.word_count();
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (std::size_t j = 0; j < store.unique_count(); ++j) {
    if (j == pattern_index) continue;
    best = std::min(best, xor_popcount(base + j * w, self.data(), w));
    if (best == 0) break;
  }
  return best;
}

/// Leave-one-out distance of every contributing sample, in sample order.
[[nodiscard]] inline std::vector<std::size_t> loo_all_samples(const PatternStore& store) {
  const auto per_sample = store.sample_patterns();
  if (per_sample.size() != store.total_count()) {
    throw Error(ErrorKind::invalid_argument, "store '" + store.layer_name() + "' does not know its samples");
  }
  std::vector<std::size_t> per_unique(store.unique_count());
  for (std::size_t u = 0; u < per_unique.size(); ++u) per_unique[u] = loo_nearest(store, u);
  std::vector<std::size_t> out;
  out.reserve(per_sample.size());
  for (auto u : per_sample) out.push_back(per_unique[u]);
  return out;
}

/// Elementwise nearest_distance, optionally split over worker threads.
[[nodiscard]] inline std::vector<std::size_t> batch_nearest(const PatternStore& store,
                                                            std::span<const BinaryPattern> queries,
                                                            unsigned threads = 1) {
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].bit_len() != store.bit_len()) {
      throw Error(ErrorKind::length_mismatch, "query " + std::to_string(i) + " has " +
                                                  std::to_string(queries[i].bit_len()) + " bits, store '" +
                                                  store.layer_name() + "' has " + std::to_string(store.bit_len()));
    }
  }
  std::vector<std::size_t> out(queries.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = nearest_distance(store, queries[i]).distance;
  };
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
  if (threads <= 1) {
    work(0, queries.size());
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (queries.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(queries.size(), b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  pool.clear();  // joins
  return out;
}

}  // namespace napmon
