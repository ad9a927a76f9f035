#pragma once

// Synthetic activation dumps with controllable separability.
//
// Every layer has one rectified-Gaussian prototype per class and position
// (channel for conv, unit for dense). In-distribution samples are a class
// prototype plus Gaussian noise, rectified at 0. OOD sets draw their own
// prototypes by shifting randomly chosen class prototypes with Gaussian noise
// of scale ood_shift_scale; the validation and test OOD sets use disjoint
// prototype draws.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/error.hpp"

namespace napmon {

struct SyntheticSpec {
  std::size_t classes = 8;
  std::vector<LayerSpec> layers;
  double id_noise_scale = 0.1;
  double ood_shift_scale = 0.5;
  std::size_t train_samples = 2000;
  std::size_t valid_samples = 500;
  std::size_t test_samples = 500;
  /// Prototypes per OOD set; 0 means as many as there are ID classes.
  std::size_t ood_classes = 0;
  std::uint64_t seed = 1;

  void validate() const {
    if (classes == 0) throw Error(ErrorKind::invalid_argument, "synthetic spec needs at least one class");
    if (layers.empty()) throw Error(ErrorKind::invalid_argument, "synthetic spec needs at least one layer");
    if (train_samples == 0 || valid_samples == 0 || test_samples == 0) {
      throw Error(ErrorKind::empty_input, "synthetic spec requests zero samples for a split");
    }
    if (!(id_noise_scale >= 0.0) || !(ood_shift_scale >= 0.0)) {
      throw Error(ErrorKind::invalid_argument, "noise and shift scales must be non-negative");
    }
    for (const auto& l : layers) l.validate();
  }
};

struct SyntheticTriplet {
  ActivationDump train;  ///< D_s, in-distribution
  ActivationDump valid;  ///< D_v, OOD used for calibration
  ActivationDump test;   ///< D_t, OOD held out for testing
};

namespace detail {

/// Per-layer prototype table: prototypes[c * width + j].
using Prototypes = std::vector<std::vector<double>>;

inline Prototypes draw_id_prototypes(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Prototypes protos;
  for (const auto& layer : spec.layers) {
    std::vector<double> p(spec.classes * layer.pattern_width());
    for (auto& v : p) v = std::max(0.0, normal(rng));
    protos.push_back(std::move(p));
  }
  return protos;
}

inline Prototypes draw_ood_prototypes(const SyntheticSpec& spec, const Prototypes& id, std::size_t count,
                                      std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, spec.classes - 1);
  std::vector<std::size_t> bases(count);
  for (auto& b : bases) b = pick(rng);
  Prototypes protos;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto width = spec.layers[l].pattern_width();
    std::vector<double> p(count * width);
    for (std::size_t o = 0; o < count; ++o) {
      for (std::size_t j = 0; j < width; ++j) {
        p[o * width + j] = std::max(0.0, id[l][bases[o] * width + j] + spec.ood_shift_scale * normal(rng));
      }
    }
    protos.push_back(std::move(p));
  }
  return protos;
}

inline ActivationDump sample_split(const SyntheticSpec& spec, const Prototypes& protos, std::size_t proto_count,
                                   std::size_t samples, const std::string& split, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, proto_count - 1);
  std::vector<std::size_t> labels(samples);
  for (auto& c : labels) c = pick(rng);

  ActivationDump dump;
  dump.model_id = "synthetic";
  dump.dataset_id = "synthetic-" + std::to_string(spec.seed);
  dump.split = split;
  dump.capture = "post_relu";
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& layer = spec.layers[l];
    const auto width = layer.pattern_width();
    const auto spatial = layer.spatial_size();
    std::vector<float> values;
    values.reserve(samples * layer.element_count());
    for (std::size_t i = 0; i < samples; ++i) {
      const double* proto = protos[l].data() + labels[i] * width;
      for (std::size_t j = 0; j < width; ++j) {
        for (std::size_t s = 0; s < spatial; ++s) {
          values.push_back(static_cast<float>(std::max(0.0, proto[j] + spec.id_noise_scale * normal(rng))));
        }
      }
    }
    dump.add_layer(layer, std::move(values));
  }
  return dump;
}

}  // namespace detail

/// Deterministic for a fixed spec (same seed => identical values).
[[nodiscard]] inline SyntheticTriplet synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto ood_count = spec.ood_classes == 0 ? spec.classes : spec.ood_classes;

  // Independent streams so changing one split's size leaves the others intact.
  std::seed_seq proto_seed{spec.seed, std::uint64_t{0}};
  std::mt19937_64 proto_rng(proto_seed);
  const auto id = detail::draw_id_prototypes(spec, proto_rng);
  const auto ood_valid = detail::draw_ood_prototypes(spec, id, ood_count, proto_rng);
  const auto ood_test = detail::draw_ood_prototypes(spec, id, ood_count, proto_rng);

  auto split_rng = [&](std::uint64_t tag) {
    std::seed_seq s{spec.seed, tag};
    return std::mt19937_64(s);
  };
  auto r1 = split_rng(1);
  auto r2 = split_rng(2);
  auto r3 = split_rng(3);
  SyntheticTriplet t;
  t.train = detail::sample_split(spec, id, spec.classes, spec.train_samples, "train", r1);
  t.valid = detail::sample_split(spec, ood_valid, ood_count, spec.valid_samples, "valid", r2);
  t.test = detail::sample_split(spec, ood_test, ood_count, spec.test_samples, "test", r3);
  return t;
}

/// The reference triplet: 8 classes, two conv layers and one dense layer,
/// 2000/500/500 samples.
[[nodiscard]] inline SyntheticSpec reference_synthetic_spec() {
  SyntheticSpec s;
  s.classes = 8;
  s.layers = {
      {"conv_a", LayerKind::conv, {32, 4, 4}},
      {"conv_b", LayerKind::conv, {64, 2, 2}},
      {"dense", LayerKind::dense, {128}},
  };
  s.id_noise_scale = 0.1;
  s.ood_shift_scale = 0.5;
  s.train_samples = 2000;
  s.valid_samples = 500;
  s.test_samples = 500;
  s.seed = 20240917;
  return s;
}

}  // namespace napmon
