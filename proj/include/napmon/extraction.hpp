#pragma once

// Raw layer activations -> binary activation patterns.
//
// Conv layers are first reduced to one value per channel (max or mean over
// H x W). The resulting vector is binarized against a p-percentile threshold:
// either the percentile of the vector itself (per_pattern) or a per-position
// percentile fitted over a dataset (per_position). A bit is set iff the value
// strictly exceeds its threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/error.hpp"
#include "napmon/pattern.hpp"

namespace napmon {

enum class PoolType { max, avg };
enum class ThresholdMode { per_pattern, per_position };

[[nodiscard]] constexpr std::string_view to_string(PoolType t) noexcept {
  return t == PoolType::max ? "max" : "avg";
}
[[nodiscard]] constexpr std::string_view to_string(ThresholdMode m) noexcept {
  return m == ThresholdMode::per_pattern ? "per-pattern" : "per-position";
}

[[nodiscard]] inline PoolType parse_pool_type(std::string_view s) {
  if (s == "max") return PoolType::max;
  if (s == "avg") return PoolType::avg;
  throw Error(ErrorKind::invalid_argument, "unknown pool type '" + std::string(s) + "'");
}

[[nodiscard]] inline ThresholdMode parse_threshold_mode(std::string_view s) {
  if (s == "per-pattern" || s == "per_pattern") return ThresholdMode::per_pattern;
  if (s == "per-position" || s == "per_position") return ThresholdMode::per_position;
  throw Error(ErrorKind::invalid_argument, "unknown threshold mode '" + std::string(s) + "'");
}

struct BinarizationConfig {
  double p = 50.0;
  PoolType pool = PoolType::max;
  ThresholdMode mode = ThresholdMode::per_pattern;
  /// Fitted P_p^n per position; only present in per_position mode.
  std::optional<std::vector<float>> thresholds;

  void validate() const {
    if (!(p >= 0.0 && p <= 100.0)) {
      throw Error(ErrorKind::invalid_argument, "percentile must lie in [0, 100], got " + std::to_string(p));
    }
  }

  friend bool operator==(const BinarizationConfig&, const BinarizationConfig&) = default;
};

/// Identifies the sample being processed in error messages.
struct SampleContext {
  std::string_view layer = "?";
  std::size_t sample = 0;

  [[nodiscard]] std::string describe() const {
    return "layer '" + std::string(layer) + "', sample " + std::to_string(sample);
  }
};

/// Reduces a C x H x W tensor to C values: max or arithmetic mean per channel.
[[nodiscard]] inline std::vector<float> pool_channels(std::span<const float> tensor, std::size_t channels,
                                                      std::size_t spatial, PoolType type,
                                                      const SampleContext& ctx = {}) {
  if (tensor.size() != channels * spatial || channels == 0 || spatial == 0) {
    throw Error(ErrorKind::shape_mismatch, ctx.describe() + ": expected " + std::to_string(channels) +
                                               "x" + std::to_string(spatial) + " values, got " +
                                               std::to_string(tensor.size()));
  }
  std::vector<float> pooled(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = tensor.subspan(c * spatial, spatial);
    double acc = type == PoolType::max ? static_cast<double>(plane[0]) : 0.0;
    for (float v : plane) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::non_finite, ctx.describe() + ", channel " + std::to_string(c));
      }
      if (type == PoolType::max) {
        acc = std::max(acc, static_cast<double>(v));
      } else {
        acc += v;
      }
    }
    pooled[c] = type == PoolType::max ? static_cast<float>(acc)
                                      : static_cast<float>(acc / static_cast<double>(spatial));
  }
  return pooled;
}

/// 1-based nearest rank of the p-percentile among n values.
[[nodiscard]] inline std::size_t percentile_rank(double p, std::size_t n) noexcept {
  const double raw = std::ceil(p * static_cast<double>(n) / 100.0);
  if (raw < 1.0) return 1;
  if (raw > static_cast<double>(n)) return n;
  return static_cast<std::size_t>(raw);
}

/// Nearest-rank percentile: the value at rank clamp(ceil(p/100 * n), 1, n) in
/// ascending order. Always one of the input values.
[[nodiscard]] inline float percentile_threshold(std::span<const float> values, double p) {
  if (values.empty()) throw Error(ErrorKind::empty_input, "percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) {
    throw Error(ErrorKind::invalid_argument, "percentile must lie in [0, 100], got " + std::to_string(p));
  }
  std::vector<float> scratch(values.begin(), values.end());
  const auto k = percentile_rank(p, scratch.size()) - 1;
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
  return scratch[k];
}

[[nodiscard]] inline BinaryPattern binarize_against(std::span<const float> values, float threshold) {
  std::vector<std::uint64_t> words(words_for_bits(values.size()), 0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] > threshold) words[j / kWordBits] |= std::uint64_t{1} << (j % kWordBits);
  }
  return BinaryPattern::from_words(std::move(words), values.size());
}

[[nodiscard]] inline BinaryPattern binarize_against(std::span<const float> values,
                                                    std::span<const float> thresholds) {
  if (values.size() != thresholds.size()) {
    throw Error(ErrorKind::length_mismatch, "vector of " + std::to_string(values.size()) + " values against " +
                                                std::to_string(thresholds.size()) + " thresholds");
  }
  std::vector<std::uint64_t> words(words_for_bits(values.size()), 0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] > thresholds[j]) words[j / kWordBits] |= std::uint64_t{1} << (j % kWordBits);
  }
  return BinaryPattern::from_words(std::move(words), values.size());
}

[[nodiscard]] inline BinaryPattern binarize(std::span<const float> values, const BinarizationConfig& cfg) {
  if (cfg.mode == ThresholdMode::per_pattern) {
    if (values.empty()) return BinaryPattern{};
    return binarize_against(values, percentile_threshold(values, cfg.p));
  }
  if (!cfg.thresholds) {
    throw Error(ErrorKind::calibration_missing, "per-position binarization needs fitted thresholds");
  }
  return binarize_against(values, std::span<const float>(*cfg.thresholds));
}

/// The vector a layer contributes before binarization: pooled channels for
/// conv layers, the raw (checked) values for dense layers.
[[nodiscard]] inline std::vector<float> layer_vector(std::span<const float> sample, const LayerSpec& spec,
                                                     PoolType pool, std::size_t sample_index = 0) {
  const SampleContext ctx{spec.name, sample_index};
  if (sample.size() != spec.element_count()) {
    throw Error(ErrorKind::shape_mismatch, ctx.describe() + ": expected " +
                                               std::to_string(spec.element_count()) + " values, got " +
                                               std::to_string(sample.size()));
  }
  if (spec.kind == LayerKind::conv) {
    return pool_channels(sample, spec.shape[0], spec.spatial_size(), pool, ctx);
  }
  for (float v : sample) {
    if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, ctx.describe());
  }
  return {sample.begin(), sample.end()};
}

[[nodiscard]] inline BinaryPattern extract_pattern(std::span<const float> sample, const LayerSpec& spec,
                                                   const BinarizationConfig& cfg, std::size_t sample_index = 0) {
  return binarize(layer_vector(sample, spec, cfg.pool, sample_index), cfg);
}

/// Fits the binarization for one layer of a dump. per_position mode stores
/// the column-wise nearest-rank percentile of the layer vectors.
[[nodiscard]] inline BinarizationConfig fit_thresholds(const ActivationDump& dump, const LayerSpec& spec,
                                                       double p, PoolType pool, ThresholdMode mode) {
  BinarizationConfig cfg{p, pool, mode, std::nullopt};
  cfg.validate();
  const auto& layer = dump.layer(spec.name);
  if (layer.spec != spec) {
    throw Error(ErrorKind::shape_mismatch, "layer '" + spec.name + "' in dump does not match the requested spec");
  }
  const auto n = dump.sample_count();
  if (n == 0) throw Error(ErrorKind::empty_input, "cannot fit thresholds for '" + spec.name + "' on an empty dump");
  if (mode == ThresholdMode::per_pattern) return cfg;

  const auto width = spec.pattern_width();
  std::vector<float> columns(width * n);  // position-major
  for (std::size_t i = 0; i < n; ++i) {
    auto v = layer_vector(layer.sample(i), spec, pool, i);
    for (std::size_t j = 0; j < width; ++j) columns[j * n + i] = v[j];
  }
  std::vector<float> thresholds(width);
  for (std::size_t j = 0; j < width; ++j) {
    thresholds[j] = percentile_threshold(std::span<const float>(columns).subspan(j * n, n), p);
  }
  cfg.thresholds = std::move(thresholds);
  return cfg;
}

/// Patterns of every sample of a layer, in sample order.
[[nodiscard]] inline std::vector<BinaryPattern> extract_all(const ActivationDump& dump, const LayerSpec& spec,
                                                            const BinarizationConfig& cfg) {
  const auto& layer = dump.layer(spec.name);
  if (layer.spec != spec) {
    throw Error(ErrorKind::shape_mismatch, "layer '" + spec.name + "' in dump does not match the requested spec");
  }
  std::vector<BinaryPattern> out;
  out.reserve(dump.sample_count());
  for (std::size_t i = 0; i < dump.sample_count(); ++i) {
    out.push_back(extract_pattern(layer.sample(i), spec, cfg, i));
  }
  return out;
}

}  // namespace napmon
