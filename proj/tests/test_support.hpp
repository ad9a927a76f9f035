#pragma once

// Random generators and brute-force oracles shared by the test suites.
// The oracles work on plain bit vectors and sorted copies; none of them calls
// into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/pattern.hpp"

namespace napmon::testing {

using Bits = std::vector<int>;

inline Bits random_bits(std::size_t n, std::mt19937_64& rng, double p_one = 0.5) {
  std::bernoulli_distribution coin(p_one);
  Bits b(n);
  for (auto& x : b) x = coin(rng) ? 1 : 0;
  return b;
}

inline std::size_t naive_hamming(const Bits& a, const Bits& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

/// (distance, lowest index) over an explicit list, duplicates allowed.
inline std::pair<std::size_t, std::size_t> naive_nearest(const std::vector<Bits>& set, const Bits& q) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::size_t idx = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto d = naive_hamming(set[i], q);
    if (d < best) {
      best = d;
      idx = i;
    }
  }
  return {best, idx};
}

/// ceil(p * n / 100) clamped to [1, n], in integer arithmetic (integer p only).
inline long nearest_rank(long p, long n) { return std::clamp<long>((p * n + 99) / 100, 1, n); }

/// Nearest-rank percentile by full sort (integer p only).
inline float sort_percentile(std::vector<float> v, long p) {
  std::sort(v.begin(), v.end());
  const long rank = nearest_rank(p, static_cast<long>(v.size()));
  return v[static_cast<std::size_t>(rank - 1)];
}

inline std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng, float lo = -1.0F, float hi = 1.0F) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Random floats with no repeated value.
inline std::vector<float> distinct_floats(std::size_t n, std::mt19937_64& rng) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(i) * 0.25F - 3.0F;
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

/// Exact within-group sum of squares of a threshold split, built from
/// deviations: a group contributes sum((n*d - S)^2) / n^2.
struct Frac {
  using u128 = unsigned __int128;
  u128 num, den;
  bool operator<(const Frac& o) const { return num * o.den < o.num * den; }
  bool operator==(const Frac& o) const { return num * o.den == o.num * den; }

  /// Reduced before dividing so the operands stay exactly representable.
  [[nodiscard]] double to_double() const {
    u128 a = num, b = den;
    while (b != 0) {
      const u128 t = a % b;
      a = b;
      b = t;
    }
    const u128 g = a == 0 ? 1 : a;
    return static_cast<double>(static_cast<long double>(num / g) / static_cast<long double>(den / g));
  }
};

inline Frac group_ss(const std::vector<std::size_t>& g) {
  if (g.empty()) return {0, 1};
  const Frac::u128 n = g.size();
  Frac::u128 s = 0;
  for (auto d : g) s += d;
  Frac::u128 acc = 0;
  for (auto d : g) {
    const auto nd = n * d;
    const Frac::u128 dev = nd > s ? nd - s : s - nd;
    acc += dev * dev;
  }
  return {acc, n * n};
}

/// Size-weighted within-group variance of the split {d <= c} / {d > c}.
inline Frac split_objective(const std::vector<std::size_t>& pooled, std::size_t c) {
  std::vector<std::size_t> lo, hi;
  for (auto d : pooled) (d <= c ? lo : hi).push_back(d);
  const auto a = group_ss(lo), b = group_ss(hi);
  return {a.num * b.den + b.num * a.den, a.den * b.den * pooled.size()};
}

struct OtsuOracle {
  std::size_t tau;
  Frac objective;
};

/// Scans every observed value; the first (smallest) minimizer wins.
inline OtsuOracle otsu_oracle(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  auto pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  auto cands = pooled;
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  OtsuOracle best{cands[0], split_objective(pooled, cands[0])};
  for (auto c : cands) {
    const auto o = split_objective(pooled, c);
    if (o < best.objective) best = {c, o};
  }
  return best;
}

/// Pairwise Mann-Whitney AUROC, ties counting one half.
inline double pairwise_auroc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

inline ActivationDump random_dump(const std::vector<LayerSpec>& specs, std::size_t samples, std::mt19937_64& rng) {
  ActivationDump d;
  d.dataset_id = "random";
  d.split = "test";
  for (const auto& s : specs) d.add_layer(s, random_floats(samples * s.element_count(), rng, 0.0F, 2.0F));
  return d;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("napmon-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace napmon::testing
