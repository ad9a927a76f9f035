#pragma once

// Bit-packed binary activation patterns and exact Hamming distance.
//
// Bit j of a pattern lives in word j / 64 at in-word position j % 64, so the
// word sequence written little-endian is the on-disk layout byte for byte.
// Bits at positions >= bit_len are always zero; XOR-popcount over whole words
// therefore never needs a mask on the last word.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "napmon/error.hpp"

namespace napmon {

inline constexpr std::size_t kWordBits = 64;

[[nodiscard]] constexpr std::size_t words_for_bits(std::size_t bit_len) noexcept {
  return (bit_len + kWordBits - 1) / kWordBits;
}

/// Mask of the valid bits in the last word of a bit_len-bit pattern.
[[nodiscard]] constexpr std::uint64_t tail_mask(std::size_t bit_len) noexcept {
  const std::size_t rem = bit_len % kWordBits;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

/// Popcount of a ^ b over equally sized word ranges.
[[nodiscard]] inline std::size_t xor_popcount(const std::uint64_t* a, const std::uint64_t* b,
                                              std::size_t n_words) noexcept {
  std::size_t total = 0;
  for (std::size_t w = 0; w < n_words; ++w) total += std::popcount(a[w] ^ b[w]);
  return total;
}

class BinaryPattern {
 public:
  BinaryPattern() = default;

  /// Adopts words as-is. Throws if the word count is wrong for bit_len or a
  /// padding bit is set.
  static BinaryPattern from_words(std::vector<std::uint64_t> words, std::size_t bit_len) {
    if (words.size() != words_for_bits(bit_len)) {
      throw Error(ErrorKind::invalid_argument,
                  "pattern of " + std::to_string(bit_len) + " bits needs " +
                      std::to_string(words_for_bits(bit_len)) + " words, got " +
                      std::to_string(words.size()));
    }
    if (!words.empty() && (words.back() & ~tail_mask(bit_len)) != 0) {
      throw Error(ErrorKind::invalid_argument, "padding bits beyond bit_len must be zero");
    }
    BinaryPattern p;
    p.words_ = std::move(words);
    p.bit_len_ = bit_len;
    return p;
  }

  [[nodiscard]] std::size_t bit_len() const noexcept { return bit_len_; }
  [[nodiscard]] std::size_t word_count() const noexcept { return words_.size(); }
  [[nodiscard]] std::span<const std::uint64_t> words() const noexcept { return words_; }

  [[nodiscard]] bool test(std::size_t j) const noexcept {
    return (words_[j / kWordBits] >> (j % kWordBits)) & 1U;
  }

  [[nodiscard]] std::size_t popcount() const noexcept {
    std::size_t total = 0;
    for (auto w : words_) total += std::popcount(w);
    return total;
  }

  friend bool operator==(const BinaryPattern&, const BinaryPattern&) = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t bit_len_ = 0;
};

/// Builds a pattern from one 0/1 flag per bit; any nonzero element sets the bit.
template <typename T>
[[nodiscard]] BinaryPattern pack(std::span<const T> bits) {
  std::vector<std::uint64_t> words(words_for_bits(bits.size()), 0);
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j]) words[j / kWordBits] |= std::uint64_t{1} << (j % kWordBits);
  }
  return BinaryPattern::from_words(std::move(words), bits.size());
}

[[nodiscard]] inline BinaryPattern pack(const std::vector<int>& bits) {
  return pack(std::span<const int>(bits));
}

[[nodiscard]] inline std::vector<int> unpack(const BinaryPattern& p) {
  std::vector<int> bits(p.bit_len());
  for (std::size_t j = 0; j < bits.size(); ++j) bits[j] = p.test(j) ? 1 : 0;
  return bits;
}

/// Number of differing bits. Both patterns must come from the same layer.
[[nodiscard]] inline std::size_t hamming(const BinaryPattern& a, const BinaryPattern& b) {
  if (a.bit_len() != b.bit_len()) {
    throw Error(ErrorKind::length_mismatch,
                "incompatible layers: patterns of " + std::to_string(a.bit_len()) + " and " +
                    std::to_string(b.bit_len()) + " bits");
  }
  return xor_popcount(a.words().data(), b.words().data(), a.word_count());
}

}  // namespace napmon
