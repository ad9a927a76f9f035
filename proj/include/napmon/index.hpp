#pragma once

// Exact multi-index hashing over a PatternStore.
//
// The bit string is cut into m disjoint substrings, each hashed into its own
// table. If a stored pattern is within distance d of the query, at least one
// substring is within floor(d / m) of the query's substring, so probing every
// table at substring radius 0, 1, ..., s finds every pattern with
// d < m * (s + 1). The search stops once the best distance found is below that
// bound, or falls back to the linear scan when probing would cost more than
// scanning. Results are identical to nearest_distance, tie index included.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "napmon/error.hpp"
#include "napmon/pattern.hpp"
#include "napmon/store.hpp"

namespace napmon {

class MultiIndexHash {
 public:
  /// The store must outlive the index.
  explicit MultiIndexHash(const PatternStore& store, std::size_t substring_bits = 16)
      : store_(&store), substring_bits_(std::clamp<std::size_t>(substring_bits, 1, 32)) {
    const auto bits = store.bit_len();
    substrings_ = std::max<std::size_t>(1, (bits + substring_bits_ - 1) / substring_bits_);
    tables_.resize(substrings_);
    for (std::size_t i = 0; i < store.unique_count(); ++i) {
      auto w = store.pattern_words(i);
      for (std::size_t j = 0; j < substrings_; ++j) {
        tables_[j][substring(w.data(), j)].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }

  [[nodiscard]] std::size_t substring_count() const noexcept { return substrings_; }

  [[nodiscard]] NearestResult nearest(const BinaryPattern& q) const {
    check_query(*store_, q);
    const auto* qw = q.words().data();
    const auto w = store_->word_count();
    const auto* base = store_->raw_words().data();
    const std::size_t budget = store_->unique_count();

    NearestResult best{std::numeric_limits<std::size_t>::max(), 0};
    std::unordered_set<std::uint32_t> visited;
    std::size_t probes = 0;
    for (std::size_t radius = 0; radius <= substring_bits_; ++radius) {
      for (std::size_t j = 0; j < substrings_; ++j) {
        const auto width = width_of(j);
        if (radius > width) continue;
        const std::uint64_t key = substring(qw, j);
        const std::uint64_t limit = std::uint64_t{1} << width;
        std::uint64_t mask = (std::uint64_t{1} << radius) - 1;
        while (mask < limit) {
          if (++probes > budget) return nearest_distance(*store_, q);
          if (auto it = tables_[j].find(key ^ mask); it != tables_[j].end()) {
            for (auto id : it->second) {
              if (!visited.insert(id).second) continue;
              const auto d = xor_popcount(base + std::size_t{id} * w, qw, w);
              if (d < best.distance || (d == best.distance && id < best.index)) best = {d, id};
            }
          }
          if (mask == 0) break;
          mask = next_same_popcount(mask);
        }
      }
      if (best.distance < substrings_ * (radius + 1)) return best;
    }
    return nearest_distance(*store_, q);
  }

 private:
  [[nodiscard]] std::size_t width_of(std::size_t j) const noexcept {
    const auto lo = j * substring_bits_;
    return std::min(substring_bits_, store_->bit_len() - std::min(lo, store_->bit_len()));
  }

  [[nodiscard]] std::uint64_t substring(const std::uint64_t* words, std::size_t j) const noexcept {
    const auto width = width_of(j);
    if (width == 0) return 0;
    const auto lo = j * substring_bits_;
    const auto word = lo / kWordBits;
    const auto shift = lo % kWordBits;
    std::uint64_t v = words[word] >> shift;
    if (shift + width > kWordBits) v |= words[word + 1] << (kWordBits - shift);
    return width == kWordBits ? v : v & ((std::uint64_t{1} << width) - 1);
  }

  // Gosper's hack: next larger integer with the same popcount.
  static std::uint64_t next_same_popcount(std::uint64_t x) noexcept {
    const std::uint64_t c = x & (~x + 1);
    const std::uint64_t r = x + c;
    return (((r ^ x) >> 2) / c) | r;
  }

  const PatternStore* store_;
  std::size_t substring_bits_;
  std::size_t substrings_ = 0;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>> tables_;
};

}  // namespace napmon
