#pragma once

// Wall-clock latency of the query path on random data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "napmon/calibration.hpp"
#include "napmon/monitor.hpp"
#include "napmon/pattern.hpp"
#include "napmon/store.hpp"

namespace napmon {

struct LatencyRow {
  std::string kind;  ///< "nearest" or "judge"
  std::size_t size = 0;
  std::size_t bits = 0;
  std::size_t layers = 1;
  double mean_s = 0.0;
  double p99_s = 0.0;
};

[[nodiscard]] inline BinaryPattern random_pattern(std::size_t bits, std::mt19937_64& rng) {
  std::vector<std::uint64_t> words(words_for_bits(bits));
  for (auto& w : words) w = rng();
  if (!words.empty()) words.back() &= tail_mask(bits);
  return BinaryPattern::from_words(std::move(words), bits);
}

[[nodiscard]] inline std::vector<BinaryPattern> random_patterns(std::size_t count, std::size_t bits,
                                                                std::mt19937_64& rng) {
  std::vector<BinaryPattern> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_pattern(bits, rng));
  return out;
}

namespace detail {

inline LatencyRow summarize(std::string kind, std::size_t size, std::size_t bits, std::size_t layers,
                            std::vector<double> samples) {
  LatencyRow row{std::move(kind), size, bits, layers, 0.0, 0.0};
  if (samples.empty()) return row;
  double sum = 0.0;
  for (double s : samples) sum += s;
  row.mean_s = sum / static_cast<double>(samples.size());
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(samples.size())));
  row.p99_s = samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
  return row;
}

}  // namespace detail

/// Single-threaded nearest_distance latency over a random store.
[[nodiscard]] inline LatencyRow bench_nearest(std::size_t size, std::size_t bits, std::size_t queries,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto patterns = random_patterns(std::max<std::size_t>(size, 1), bits, rng);
  const auto store = build_store(patterns, "bench");
  const auto qs = random_patterns(queries, bits, rng);
  std::vector<double> times;
  times.reserve(queries);
  std::size_t sink = 0;
  for (const auto& q : qs) {
    const auto t0 = std::chrono::steady_clock::now();
    sink += nearest_distance(store, q).distance;
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  volatile std::size_t keep = sink;
  (void)keep;
  return detail::summarize("nearest", store.unique_count(), bits, 1, std::move(times));
}

/// Full judge latency (extraction + k store scans + decision) for k dense
/// layers of `bits` units, each backed by a random store of `size` patterns.
[[nodiscard]] inline LatencyRow bench_judge(std::size_t size, std::size_t bits, std::size_t layers,
                                            std::size_t queries, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MonitorConfig cfg;
  cfg.scheme = VoteScheme::scheme1;
  std::vector<PatternStore> stores;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerCalibration cal;
    cal.layer = {"layer" + std::to_string(l), LayerKind::dense, {bits}};
    cal.cfg = {50.0, PoolType::max, ThresholdMode::per_pattern, std::nullopt};
    cal.bit_len = bits;
    cal.tau = bits / 4;
    cal.tau_scaled = static_cast<double>(cal.tau) / static_cast<double>(bits);
    cfg.layers.push_back(cal);
    stores.push_back(build_store(random_patterns(std::max<std::size_t>(size, 1), bits, rng), cal.name()));
  }
  const Monitor monitor(std::move(cfg), std::move(stores));

  std::normal_distribution<float> normal(0.0F, 1.0F);
  std::vector<std::vector<float>> acts(layers, std::vector<float>(bits));
  std::vector<double> times;
  times.reserve(queries);
  std::size_t sink = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    SampleActivations sample;
    for (std::size_t l = 0; l < layers; ++l) {
      for (auto& v : acts[l]) v = normal(rng);
      sample.emplace(monitor.config().layers[l].name(), acts[l]);
    }
    const auto t0 = std::chrono::steady_clock::now();
    sink += monitor.judge(sample).is_ood ? 1 : 0;
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  volatile std::size_t keep = sink;
  (void)keep;
  return detail::summarize("judge", size, bits, layers, std::move(times));
}

/// One nearest row per (size, bits) pair, plus a judge row per pair when
/// judge_layers > 0.
[[nodiscard]] inline std::vector<LatencyRow> bench_latency(const std::vector<std::size_t>& sizes,
                                                           const std::vector<std::size_t>& bits,
                                                           std::size_t queries, std::size_t judge_layers,
                                                           std::uint64_t seed) {
  std::vector<LatencyRow> rows;
  for (auto s : sizes) {
    for (auto b : bits) {
      rows.push_back(bench_nearest(s, b, queries, seed));
      if (judge_layers > 0) rows.push_back(bench_judge(s, b, judge_layers, queries, seed));
    }
  }
  return rows;
}

}  // namespace napmon
