#pragma once

// Runtime OOD decision over k monitored layers.
//
// Scheme 1 sums the scaled distance-minus-threshold of every layer (scaled by
// the layer's bit length) and flags OOD when the sum is positive. Scheme 2 lets
// every layer vote d > tau and takes the majority of an odd number of votes.

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/calibration.hpp"
#include "napmon/error.hpp"
#include "napmon/extraction.hpp"
#include "napmon/store.hpp"

namespace napmon {

struct LayerVerdict {
  std::string layer;
  std::size_t d_min = 0;
  double d_scaled = 0.0;
  bool vote_ood = false;

  friend bool operator==(const LayerVerdict&, const LayerVerdict&) = default;
};

struct Verdict {
  std::vector<LayerVerdict> per_layer;
  std::optional<double> score;  ///< scheme 1 only
  bool is_ood = false;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

[[nodiscard]] inline double scaled(std::size_t bits, std::size_t bit_len) noexcept {
  return bit_len == 0 ? 0.0 : static_cast<double>(bits) / static_cast<double>(bit_len);
}

/// Sum over layers of d_l / L_l - tau_l / L_l.
[[nodiscard]] inline double score_scheme1(std::span<const std::size_t> distances, const MonitorConfig& config) {
  if (distances.size() != config.k()) {
    throw Error(ErrorKind::length_mismatch, std::to_string(distances.size()) + " distances for " +
                                                std::to_string(config.k()) + " monitored layers");
  }
  double score = 0.0;
  for (std::size_t l = 0; l < distances.size(); ++l) {
    const auto& cal = config.layers[l];
    score += scaled(distances[l], cal.bit_len) - cal.tau_scaled;
  }
  return score;
}

/// Majority of an odd number of per-layer OOD votes.
template <std::ranges::sized_range Votes>
[[nodiscard]] bool vote_scheme2(const Votes& votes) {
  const auto k = static_cast<std::size_t>(std::ranges::size(votes));
  if (k % 2 == 0) throw Error(ErrorKind::invalid_argument, "majority vote requires odd k, got " + std::to_string(k));
  std::size_t ood = 0;
  for (bool v : votes) ood += v ? 1 : 0;
  return ood > k / 2;
}

[[nodiscard]] inline bool vote_scheme2(std::initializer_list<bool> votes) {
  return vote_scheme2(std::span<const bool>(votes.begin(), votes.size()));
}

/// Layer name -> that layer's activations for one sample.
using SampleActivations = std::unordered_map<std::string, std::span<const float>>;

/// A deployable detector: frozen calibration plus one training store per
/// monitored layer. Immutable; judge() may be called from many threads.
class Monitor {
 public:
  Monitor() = default;

  Monitor(MonitorConfig config, std::vector<PatternStore> stores)
      : config_(std::move(config)), stores_(std::move(stores)) {
    config_.validate();
    if (stores_.size() != config_.k()) {
      throw Error(ErrorKind::length_mismatch, std::to_string(stores_.size()) + " stores for " +
                                                  std::to_string(config_.k()) + " layers");
    }
    for (std::size_t l = 0; l < stores_.size(); ++l) {
      const auto& cal = config_.layers[l];
      if (stores_[l].layer_name() != cal.name()) {
        throw Error(ErrorKind::missing_layer, "store '" + stores_[l].layer_name() + "' in slot of layer '" +
                                                  cal.name() + "'");
      }
      if (stores_[l].bit_len() != cal.bit_len || cal.bit_len != cal.layer.pattern_width()) {
        throw Error(ErrorKind::length_mismatch, "layer '" + cal.name() + "': store has " +
                                                    std::to_string(stores_[l].bit_len()) + " bits, calibration " +
                                                    std::to_string(cal.bit_len));
      }
    }
  }

  [[nodiscard]] const MonitorConfig& config() const noexcept { return config_; }
  [[nodiscard]] const std::vector<PatternStore>& stores() const noexcept { return stores_; }

  /// Verdict from the per-layer nearest distances, in config order.
  [[nodiscard]] Verdict decide(std::span<const std::size_t> distances) const {
    if (distances.size() != config_.k()) {
      throw Error(ErrorKind::length_mismatch, std::to_string(distances.size()) + " distances for " +
                                                  std::to_string(config_.k()) + " monitored layers");
    }
    Verdict v;
    std::vector<bool> votes;
    for (std::size_t l = 0; l < distances.size(); ++l) {
      const auto& cal = config_.layers[l];
      const bool vote = distances[l] > cal.tau;
      v.per_layer.push_back({cal.name(), distances[l], scaled(distances[l], cal.bit_len), vote});
      votes.push_back(vote);
    }
    if (config_.scheme == VoteScheme::scheme1) {
      v.score = score_scheme1(distances, config_);
      v.is_ood = *v.score > 0.0;
    } else {
      v.is_ood = vote_scheme2(votes);
    }
    return v;
  }

  [[nodiscard]] std::vector<std::size_t> distances(const SampleActivations& sample, std::size_t sample_index = 0) const {
    std::vector<std::size_t> d;
    d.reserve(config_.k());
    for (std::size_t l = 0; l < config_.k(); ++l) {
      const auto& cal = config_.layers[l];
      auto it = sample.find(cal.name());
      if (it == sample.end()) {
        throw Error(ErrorKind::missing_layer, "sample " + std::to_string(sample_index) + " lacks layer '" +
                                                  cal.name() + "'");
      }
      const auto pattern = extract_pattern(it->second, cal.layer, cal.cfg, sample_index);
      d.push_back(nearest_distance(stores_[l], pattern).distance);
    }
    return d;
  }

  [[nodiscard]] Verdict judge(const SampleActivations& sample, std::size_t sample_index = 0) const {
    return decide(distances(sample, sample_index));
  }

  /// Judges sample i of a dump; the dump's layer shapes must match.
  [[nodiscard]] Verdict judge(const ActivationDump& dump, std::size_t i) const {
    return judge(view_of(dump, i), i);
  }

  [[nodiscard]] SampleActivations view_of(const ActivationDump& dump, std::size_t i) const {
    SampleActivations view;
    for (const auto& cal : config_.layers) {
      const auto& layer = dump.layer(cal.name());
      if (layer.spec != cal.layer) {
        throw Error(ErrorKind::shape_mismatch, "layer '" + cal.name() + "' of dump '" + dump.dataset_id +
                                                   "' does not match the calibrated shape");
      }
      if (i >= dump.sample_count()) {
        throw Error(ErrorKind::invalid_argument, "sample index " + std::to_string(i) + " out of range");
      }
      view.emplace(cal.name(), layer.sample(i));
    }
    return view;
  }

  [[nodiscard]] std::vector<Verdict> judge_all(const ActivationDump& dump) const {
    std::vector<Verdict> out;
    out.reserve(dump.sample_count());
    for (std::size_t i = 0; i < dump.sample_count(); ++i) out.push_back(judge(dump, i));
    return out;
  }

 private:
  MonitorConfig config_;
  std::vector<PatternStore> stores_;
};

/// The free-function form of Monitor::judge.
[[nodiscard]] inline Verdict judge(const SampleActivations& sample, const Monitor& monitor) {
  return monitor.judge(sample);
}

struct CalibrationOptions {
  GridSearchOptions grid;
  std::size_t k = 3;
  VoteScheme scheme = VoteScheme::scheme1;
  /// Layers to consider, in network order; empty means every layer of the
  /// training dump.
  std::vector<std::string> layers;
};

struct CalibrationResult {
  Monitor monitor;
  /// Grid-search outcome of every considered layer, in network order.
  std::vector<GridSearchResult> per_layer;
};

/// Store of one calibrated layer built from the full training dump.
[[nodiscard]] inline PatternStore build_layer_store(const ActivationDump& train, const LayerCalibration& cal) {
  const auto patterns = extract_all(train, cal.layer, cal.cfg);
  return build_store(patterns, cal.name());
}

/// Full auto-configuration: grid search every layer against the validation
/// OOD dump, keep the k best layers and build their stores.
[[nodiscard]] inline CalibrationResult calibrate_monitor(const ActivationDump& train, const ActivationDump& valid,
                                                         const CalibrationOptions& opt) {
  std::vector<LayerSpec> specs;
  if (opt.layers.empty()) {
    specs = train.layer_specs();
  } else {
    for (const auto& name : opt.layers) specs.push_back(train.layer(name).spec);
  }
  if (specs.empty()) throw Error(ErrorKind::empty_input, "training dump has no layers");

  CalibrationResult result;
  std::vector<LayerCalibration> best;
  for (const auto& spec : specs) {
    result.per_layer.push_back(grid_search_layer(train, valid, spec, opt.grid));
    best.push_back(result.per_layer.back().best);
  }
  auto config = select_layers(best, opt.k, opt.scheme);
  std::vector<PatternStore> stores;
  for (const auto& cal : config.layers) stores.push_back(build_layer_store(train, cal));
  result.monitor = Monitor(std::move(config), std::move(stores));
  return result;
}

}  // namespace napmon
