#pragma once

// Per-layer calibration from a training dump (in-distribution) and a
// validation dump (out-of-distribution).
//
// For every (p, pool) grid cell: binarize both dumps, build the training store,
// take leave-one-out distances of the training samples and nearest distances
// of the validation samples, split them with the variance-minimizing threshold
// and score the split by balanced accuracy. The grid is resolved in two
// stages: p by the hybrid criterion, then the pool type at that p by the
// configured criterion.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/error.hpp"
#include "napmon/extraction.hpp"
#include "napmon/store.hpp"

namespace napmon {

enum class Criterion { accuracy, threshold, hybrid };
enum class VoteScheme { scheme1, scheme2 };

[[nodiscard]] constexpr std::string_view to_string(Criterion c) noexcept {
  switch (c) {
    case Criterion::accuracy: return "accuracy";
    case Criterion::threshold: return "threshold";
    case Criterion::hybrid: return "hybrid";
  }
  return "?";
}

[[nodiscard]] inline Criterion parse_criterion(std::string_view s) {
  if (s == "accuracy") return Criterion::accuracy;
  if (s == "threshold") return Criterion::threshold;
  if (s == "hybrid") return Criterion::hybrid;
  throw Error(ErrorKind::invalid_argument, "unknown criterion '" + std::string(s) + "'");
}

[[nodiscard]] constexpr int scheme_number(VoteScheme s) noexcept { return s == VoteScheme::scheme1 ? 1 : 2; }

[[nodiscard]] inline VoteScheme parse_vote_scheme(int n) {
  if (n == 1) return VoteScheme::scheme1;
  if (n == 2) return VoteScheme::scheme2;
  throw Error(ErrorKind::invalid_argument, "vote scheme must be 1 or 2, got " + std::to_string(n));
}

struct LayerCalibration {
  LayerSpec layer;
  BinarizationConfig cfg;
  std::size_t tau = 0;
  double tau_scaled = 0.0;
  double val_accuracy = 0.0;
  std::size_t bit_len = 0;

  [[nodiscard]] const std::string& name() const noexcept { return layer.name; }

  friend bool operator==(const LayerCalibration&, const LayerCalibration&) = default;
};

struct MonitorConfig {
  std::vector<LayerCalibration> layers;
  VoteScheme scheme = VoteScheme::scheme1;

  [[nodiscard]] std::size_t k() const noexcept { return layers.size(); }

  void validate() const {
    if (layers.empty()) throw Error(ErrorKind::invalid_argument, "monitor needs at least one layer");
    if (scheme == VoteScheme::scheme2 && layers.size() % 2 == 0) {
      throw Error(ErrorKind::invalid_argument, "majority vote requires odd k, got " + std::to_string(layers.size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (std::size_t j = i + 1; j < layers.size(); ++j) {
        if (layers[i].name() == layers[j].name()) {
          throw Error(ErrorKind::invalid_argument, "layer '" + layers[i].name() + "' selected twice");
        }
      }
    }
  }

  friend bool operator==(const MonitorConfig&, const MonitorConfig&) = default;
};

// ---------------------------------------------------------------------------
// Threshold

struct ThresholdFit {
  std::size_t tau = 0;
  /// Size-weighted sum of the within-group variances at tau.
  double objective = 0.0;
};

namespace detail {

using u128 = unsigned __int128;

/// Non-negative fraction compared by cross-multiplication.
struct Ratio {
  u128 num = 0;
  u128 den = 1;
  friend bool operator<(const Ratio& a, const Ratio& b) { return a.num * b.den < b.num * a.den; }
  friend bool operator==(const Ratio& a, const Ratio& b) { return a.num * b.den == b.num * a.den; }
};

}  // namespace detail

/// Threshold minimizing the size-weighted within-group variance of the pooled
/// distances, split into {d <= c} and {d > c}. Candidates are the distinct
/// observed values; the smallest minimizer wins.
///
/// Minimizing the within-group sum of squares is equivalent to maximizing
/// S_lo^2 / n_lo + S_hi^2 / n_hi (group sums S, sizes n), which is evaluated in
/// exact integer arithmetic so ties are detected exactly.
[[nodiscard]] inline ThresholdFit otsu_fit(std::span<const std::size_t> d_in, std::span<const std::size_t> d_out) {
  if (d_in.empty() || d_out.empty()) throw Error(ErrorKind::empty_input, "threshold fit needs both distance sets");
  std::vector<std::uint64_t> pool;
  pool.reserve(d_in.size() + d_out.size());
  pool.insert(pool.end(), d_in.begin(), d_in.end());
  pool.insert(pool.end(), d_out.begin(), d_out.end());
  std::sort(pool.begin(), pool.end());

  const auto n = static_cast<std::uint64_t>(pool.size());
  detail::u128 total_sum = 0;
  detail::u128 total_sq = 0;
  for (auto d : pool) {
    total_sum += d;
    total_sq += detail::u128{d} * d;
  }

  detail::Ratio best_between{};
  std::uint64_t best_tau = pool.front();
  bool have_best = false;
  detail::u128 lo_sum = 0;
  std::uint64_t lo_n = 0;
  for (std::size_t i = 0; i < pool.size();) {
    const auto c = pool[i];
    while (i < pool.size() && pool[i] == c) {
      lo_sum += pool[i];
      ++lo_n;
      ++i;
    }
    const auto hi_n = n - lo_n;
    const auto hi_sum = total_sum - lo_sum;
    detail::Ratio between;
    if (hi_n == 0) {
      between = {lo_sum * lo_sum, lo_n};
    } else {
      between = {lo_sum * lo_sum * hi_n + hi_sum * hi_sum * lo_n, detail::u128{lo_n} * hi_n};
    }
    if (!have_best || best_between < between) {
      best_between = between;
      best_tau = c;
      have_best = true;
    }
  }
  // within = (total_sq - between) / n, kept exact until the final division
  const auto within_num = total_sq * best_between.den - best_between.num;
  const auto within_den = best_between.den * n;
  const long double within = static_cast<long double>(within_num) / static_cast<long double>(within_den);
  return {static_cast<std::size_t>(best_tau), static_cast<double>(within)};
}

[[nodiscard]] inline std::size_t otsu_tau(std::span<const std::size_t> d_in, std::span<const std::size_t> d_out) {
  return otsu_fit(d_in, d_out).tau;
}

/// Balanced accuracy of the rule "d > tau => OOD".
[[nodiscard]] inline double layer_accuracy(std::size_t tau, std::span<const std::size_t> id_distances,
                                           std::span<const std::size_t> ood_distances) {
  if (id_distances.empty() || ood_distances.empty()) {
    throw Error(ErrorKind::empty_input, "accuracy needs both distance sets");
  }
  const auto kept = std::count_if(id_distances.begin(), id_distances.end(), [&](auto d) { return d <= tau; });
  const auto flagged = std::count_if(ood_distances.begin(), ood_distances.end(), [&](auto d) { return d > tau; });
  return 0.5 * (static_cast<double>(kept) / static_cast<double>(id_distances.size()) +
                static_cast<double>(flagged) / static_cast<double>(ood_distances.size()));
}

// ---------------------------------------------------------------------------
// Grid search

/// 0, 10, ..., 90, 95, 99
[[nodiscard]] inline std::vector<double> default_p_grid() {
  return {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 99};
}

struct GridSearchOptions {
  std::vector<double> p_grid = default_p_grid();
  std::vector<PoolType> pools = {PoolType::max, PoolType::avg};
  ThresholdMode mode = ThresholdMode::per_pattern;
  Criterion criterion = Criterion::hybrid;
  /// Rank all (p, pool) cells jointly by the criterion instead of the
  /// two-stage p-then-pool resolution.
  bool joint = false;
};

/// Accuracy slack of the hybrid criterion.
inline constexpr double kHybridAccuracySlack = 0.01;

namespace detail {

inline bool pool_order(PoolType a, PoolType b) { return a == PoolType::max && b == PoolType::avg; }

/// Final tie-breaks shared by all criteria: larger p, then max before avg.
inline bool prefer_cell(const LayerCalibration& a, const LayerCalibration& b) {
  if (a.cfg.p != b.cfg.p) return a.cfg.p > b.cfg.p;
  return pool_order(a.cfg.pool, b.cfg.pool);
}

}  // namespace detail

/// Index of the candidate the criterion ranks best.
[[nodiscard]] inline std::size_t pick_candidate(std::span<const LayerCalibration> cands, Criterion criterion) {
  if (cands.empty()) throw Error(ErrorKind::empty_input, "no grid candidates");
  auto better_accuracy = [](const LayerCalibration& a, const LayerCalibration& b) {
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    if (a.tau_scaled != b.tau_scaled) return a.tau_scaled < b.tau_scaled;
    return detail::prefer_cell(a, b);
  };
  auto better_threshold = [](const LayerCalibration& a, const LayerCalibration& b) {
    if (a.tau_scaled != b.tau_scaled) return a.tau_scaled < b.tau_scaled;
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    return detail::prefer_cell(a, b);
  };
  auto better_hybrid = [](const LayerCalibration& a, const LayerCalibration& b) {
    if (a.tau_scaled != b.tau_scaled) return a.tau_scaled < b.tau_scaled;
    return detail::prefer_cell(a, b);
  };

  std::size_t best = 0;
  if (criterion == Criterion::hybrid) {
    double top = 0.0;
    for (const auto& c : cands) top = std::max(top, c.val_accuracy);
    // tiny epsilon so an exact 1-point gap is not lost to rounding
    const double floor_acc = top - kHybridAccuracySlack - 1e-12;
    bool found = false;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].val_accuracy < floor_acc) continue;
      if (!found || better_hybrid(cands[i], cands[best])) best = i;
      found = true;
    }
    return best;
  }
  for (std::size_t i = 1; i < cands.size(); ++i) {
    const bool better = criterion == Criterion::accuracy ? better_accuracy(cands[i], cands[best])
                                                         : better_threshold(cands[i], cands[best]);
    if (better) best = i;
  }
  return best;
}

/// Precomputed layer vectors (pooled for conv) of a dump, one per sample.
struct LayerVectors {
  std::size_t width = 0;
  std::vector<float> values;  // sample-major

  [[nodiscard]] std::size_t count() const { return width == 0 ? 0 : values.size() / width; }
  [[nodiscard]] std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * width, width);
  }
};

[[nodiscard]] inline LayerVectors layer_vectors(const ActivationDump& dump, const LayerSpec& spec, PoolType pool) {
  const auto& layer = dump.layer(spec.name);
  if (layer.spec != spec) {
    throw Error(ErrorKind::shape_mismatch, "layer '" + spec.name + "' of dump '" + dump.dataset_id +
                                               "' does not match the expected shape");
  }
  LayerVectors lv;
  lv.width = spec.pattern_width();
  lv.values.reserve(dump.sample_count() * lv.width);
  for (std::size_t i = 0; i < dump.sample_count(); ++i) {
    auto v = layer_vector(layer.sample(i), spec, pool, i);
    lv.values.insert(lv.values.end(), v.begin(), v.end());
  }
  return lv;
}

/// Column-wise nearest-rank percentile of precomputed layer vectors.
[[nodiscard]] inline std::vector<float> fit_position_thresholds(const LayerVectors& lv, double p) {
  const auto n = lv.count();
  if (n == 0) throw Error(ErrorKind::empty_input, "cannot fit thresholds on no samples");
  std::vector<float> column(n);
  std::vector<float> thresholds(lv.width);
  for (std::size_t j = 0; j < lv.width; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = lv.values[i * lv.width + j];
    thresholds[j] = percentile_threshold(column, p);
  }
  return thresholds;
}

[[nodiscard]] inline std::vector<BinaryPattern> binarize_all(const LayerVectors& lv, const BinarizationConfig& cfg) {
  std::vector<BinaryPattern> out;
  out.reserve(lv.count());
  for (std::size_t i = 0; i < lv.count(); ++i) out.push_back(binarize(lv.row(i), cfg));
  return out;
}

/// Everything measured for one grid cell.
struct CellEvaluation {
  LayerCalibration calibration;
  std::vector<std::size_t> d_in;   ///< leave-one-out, training samples
  std::vector<std::size_t> d_out;  ///< nearest, validation samples
};

[[nodiscard]] inline CellEvaluation evaluate_cell(const LayerSpec& spec, const LayerVectors& train,
                                                  const LayerVectors& valid, double p, PoolType pool,
                                                  ThresholdMode mode) {
  BinarizationConfig cfg{p, pool, mode, std::nullopt};
  cfg.validate();
  if (mode == ThresholdMode::per_position) cfg.thresholds = fit_position_thresholds(train, p);

  const auto train_patterns = binarize_all(train, cfg);
  const auto valid_patterns = binarize_all(valid, cfg);
  const auto store = build_store(train_patterns, spec.name);

  CellEvaluation ev;
  ev.d_in = loo_all_samples(store);
  ev.d_out = batch_nearest(store, valid_patterns);
  const auto fit = otsu_fit(ev.d_in, ev.d_out);

  auto& cal = ev.calibration;
  cal.layer = spec;
  cal.cfg = std::move(cfg);
  cal.bit_len = store.bit_len();
  cal.tau = fit.tau;
  cal.tau_scaled = cal.bit_len == 0 ? 0.0 : static_cast<double>(cal.tau) / static_cast<double>(cal.bit_len);
  cal.val_accuracy = layer_accuracy(cal.tau, ev.d_in, ev.d_out);
  return ev;
}

struct GridSearchResult {
  LayerCalibration best;
  /// Every evaluated cell in grid order (p outer, pool inner).
  std::vector<LayerCalibration> candidates;
};

/// Pool types actually searched for a layer: pooling only exists for conv.
[[nodiscard]] inline std::vector<PoolType> pools_for(const LayerSpec& spec, const GridSearchOptions& opt) {
  if (opt.pools.empty()) throw Error(ErrorKind::invalid_argument, "no pool types to search");
  if (spec.kind == LayerKind::dense) return {opt.pools.front()};
  return opt.pools;
}

[[nodiscard]] inline GridSearchResult grid_search_layer(const ActivationDump& train, const ActivationDump& valid,
                                                        const LayerSpec& spec, const GridSearchOptions& opt = {}) {
  if (opt.p_grid.empty()) throw Error(ErrorKind::invalid_argument, "empty p grid");
  if (train.sample_count() < 2) {
    throw Error(ErrorKind::empty_input, "calibration needs at least two training samples");
  }
  if (valid.sample_count() == 0) throw Error(ErrorKind::empty_input, "calibration needs validation samples");

  const auto pools = pools_for(spec, opt);
  std::vector<LayerVectors> train_vectors;
  std::vector<LayerVectors> valid_vectors;
  for (auto pool : pools) {
    train_vectors.push_back(layer_vectors(train, spec, pool));
    valid_vectors.push_back(layer_vectors(valid, spec, pool));
  }

  GridSearchResult result;
  for (double p : opt.p_grid) {
    for (std::size_t t = 0; t < pools.size(); ++t) {
      result.candidates.push_back(
          evaluate_cell(spec, train_vectors[t], valid_vectors[t], p, pools[t], opt.mode).calibration);
    }
  }

  if (opt.joint) {
    result.best = result.candidates[pick_candidate(result.candidates, opt.criterion)];
    return result;
  }
  const double chosen_p = result.candidates[pick_candidate(result.candidates, Criterion::hybrid)].cfg.p;
  std::vector<LayerCalibration> at_p;
  for (const auto& c : result.candidates) {
    if (c.cfg.p == chosen_p) at_p.push_back(c);
  }
  result.best = at_p[pick_candidate(at_p, opt.criterion)];
  return result;
}

/// Top-k layers by validation accuracy (ties: deeper layer, then name),
/// returned in network order. `calibrations` must be in network order.
[[nodiscard]] inline MonitorConfig select_layers(std::span<const LayerCalibration> calibrations, std::size_t k,
                                                 VoteScheme scheme) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "k must be at least 1");
  if (scheme == VoteScheme::scheme2 && k % 2 == 0) {
    throw Error(ErrorKind::invalid_argument, "majority vote requires odd k, got " + std::to_string(k));
  }
  if (k > calibrations.size()) {
    throw Error(ErrorKind::invalid_argument, "k = " + std::to_string(k) + " exceeds the " +
                                                 std::to_string(calibrations.size()) + " calibrated layers");
  }
  std::vector<std::size_t> order(calibrations.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = calibrations[a];
    const auto& cb = calibrations[b];
    if (ca.val_accuracy != cb.val_accuracy) return ca.val_accuracy > cb.val_accuracy;
    return a > b;  // network positions are unique, so names never need comparing
  });
  order.resize(k);
  std::sort(order.begin(), order.end());

  MonitorConfig cfg;
  cfg.scheme = scheme;
  for (auto i : order) cfg.layers.push_back(calibrations[i]);
  cfg.validate();
  return cfg;
}

}  // namespace napmon
