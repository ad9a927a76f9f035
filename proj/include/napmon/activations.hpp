#pragma once

// In-memory layer descriptions and activation dumps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "napmon/error.hpp"

namespace napmon {

enum class LayerKind { conv, dense };

[[nodiscard]] constexpr std::string_view to_string(LayerKind k) noexcept {
  return k == LayerKind::conv ? "conv" : "dense";
}

[[nodiscard]] inline LayerKind parse_layer_kind(std::string_view s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dense") return LayerKind::dense;
  throw Error(ErrorKind::invalid_argument, "unknown layer kind '" + std::string(s) + "'");
}

/// Shape is [C, H, W] for conv layers and [M] for dense layers.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::dense;
  std::vector<std::size_t> shape;

  [[nodiscard]] std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  /// Width of the pattern extracted from this layer: channels for conv, M for dense.
  [[nodiscard]] std::size_t pattern_width() const { return shape.empty() ? 0 : shape.front(); }

  [[nodiscard]] std::size_t spatial_size() const {
    return kind == LayerKind::conv ? shape[1] * shape[2] : 1;
  }

  void validate() const {
    if (name.empty()) throw Error(ErrorKind::invalid_argument, "layer name must not be empty");
    const std::size_t rank = kind == LayerKind::conv ? 3 : 1;
    if (shape.size() != rank) {
      throw Error(ErrorKind::shape_mismatch,
                  "layer '" + name + "': " + std::string(to_string(kind)) + " shape needs " +
                      std::to_string(rank) + " entries, got " + std::to_string(shape.size()));
    }
    for (auto d : shape) {
      if (d == 0) throw Error(ErrorKind::shape_mismatch, "layer '" + name + "': zero-sized dimension");
    }
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct LayerActivations {
  LayerSpec spec;
  /// sample-major, row-major within a sample
  std::vector<float> values;

  [[nodiscard]] std::size_t sample_count() const {
    const auto n = spec.element_count();
    return n == 0 ? 0 : values.size() / n;
  }

  [[nodiscard]] std::span<const float> sample(std::size_t i) const {
    const auto n = spec.element_count();
    return std::span<const float>(values).subspan(i * n, n);
  }
};

/// Raw per-layer activations of N samples of one dataset split.
class ActivationDump {
 public:
  std::string model_id = "unknown";
  std::string dataset_id = "unknown";
  std::string split = "unknown";
  /// pre_relu, post_relu or unknown; recorded, never interpreted.
  std::string capture = "unknown";

  ActivationDump() = default;

  void add_layer(LayerSpec spec, std::vector<float> values) {
    spec.validate();
    const auto n = spec.element_count();
    if (values.size() % n != 0) {
      throw Error(ErrorKind::size_mismatch, "layer '" + spec.name + "': " +
                                                std::to_string(values.size()) +
                                                " values is not a whole number of samples");
    }
    const auto count = values.size() / n;
    if (!layers_.empty() && count != sample_count_) {
      throw Error(ErrorKind::size_mismatch,
                  "layer '" + spec.name + "' has " + std::to_string(count) +
                      " samples, dump has " + std::to_string(sample_count_));
    }
    if (find(spec.name) != nullptr) {
      throw Error(ErrorKind::invalid_argument, "duplicate layer '" + spec.name + "'");
    }
    sample_count_ = count;
    layers_.push_back(LayerActivations{std::move(spec), std::move(values)});
  }

  [[nodiscard]] std::size_t sample_count() const noexcept { return sample_count_; }
  [[nodiscard]] const std::vector<LayerActivations>& layers() const noexcept { return layers_; }

  [[nodiscard]] const LayerActivations* find(std::string_view name) const noexcept {
    for (const auto& l : layers_) {
      if (l.spec.name == name) return &l;
    }
    return nullptr;
  }

  [[nodiscard]] const LayerActivations& layer(std::string_view name) const {
    if (const auto* l = find(name)) return *l;
    throw Error(ErrorKind::missing_layer,
                "layer '" + std::string(name) + "' absent from dump '" + dataset_id + "/" + split + "'");
  }

  [[nodiscard]] std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> specs;
    specs.reserve(layers_.size());
    for (const auto& l : layers_) specs.push_back(l.spec);
    return specs;
  }

  /// New dump holding the given samples, in the given order, of every layer.
  [[nodiscard]] ActivationDump select(std::span<const std::size_t> indices) const {
    ActivationDump out;
    out.model_id = model_id;
    out.dataset_id = dataset_id;
    out.split = split;
    out.capture = capture;
    for (const auto& l : layers_) {
      const auto n = l.spec.element_count();
      std::vector<float> values;
      values.reserve(indices.size() * n);
      for (auto i : indices) {
        if (i >= sample_count_) {
          throw Error(ErrorKind::invalid_argument, "sample index " + std::to_string(i) + " out of range");
        }
        auto s = l.sample(i);
        values.insert(values.end(), s.begin(), s.end());
      }
      out.add_layer(l.spec, std::move(values));
    }
    return out;
  }

 private:
  std::vector<LayerActivations> layers_;
  std::size_t sample_count_ = 0;
};

}  // namespace napmon
