#pragma once

// On-disk formats.
//
// Activation dump: a directory holding manifest.json and one raw data file per
// layer. Values are 32-bit little-endian IEEE floats, sample-major and
// row-major within a sample, so a data file is exactly
// sample_count * prod(shape) * 4 bytes.
//
// NAPS pattern store (all integers little-endian):
//   "NAPS" | u32 version = 1 | u32 bit_len | u64 unique_count |
//   u8 has_multiplicities | unique_count * ceil(bit_len / 64) u64 words |
//   [unique_count u32 multiplicities]
//
// Monitor bundle: a directory holding monitor.json (calibration of every
// monitored layer) and the NAPS file each layer references.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "napmon/activations.hpp"
#include "napmon/calibration.hpp"
#include "napmon/error.hpp"
#include "napmon/extraction.hpp"
#include "napmon/monitor.hpp"
#include "napmon/odtest.hpp"
#include "napmon/store.hpp"
#include "napmon/synthetic.hpp"

namespace napmon::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::uint32_t kDumpFormatVersion = 1;
inline constexpr std::uint32_t kNapsVersion = 1;
inline constexpr std::uint32_t kMonitorFormatVersion = 1;
inline constexpr std::array<char, 4> kNapsMagic = {'N', 'A', 'P', 'S'};
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kMonitorName = "monitor.json";

// ---------------------------------------------------------------------------
// little-endian helpers

namespace detail {

template <typename T>
T byteswap(T v) noexcept {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
T to_le(T v) noexcept {
  if constexpr (std::endian::native == std::endian::little) return v;
  return byteswap(v);
}

template <typename T>
void put(std::string& out, T v) {
  v = to_le(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

/// Cursor over a byte buffer; running off the end is a truncation error.
class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    if (remaining() < sizeof(T)) throw Error(ErrorKind::truncated, what_);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_le(v);
  }

  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to '" + path.string() + "'");
}

inline json parse_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "malformed document '" + path.string() + "': " + e.what());
  }
}

inline std::string file_stem_for(std::size_t index, const std::string& layer) {
  std::string s = (index < 10 ? "0" : "") + std::to_string(index) + "_";
  for (char c : layer) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    s.push_back(ok ? c : '_');
  }
  return s;
}

/// Rethrows nlohmann type/key errors as format errors naming the document.
template <typename F>
auto with_json_errors(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "invalid document '" + path.string() + "': " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// layer specs

inline json to_json(const LayerSpec& spec) {
  return {{"name", spec.name}, {"kind", std::string(to_string(spec.kind))}, {"shape", spec.shape}};
}

inline LayerSpec layer_spec_from_json(const json& j) {
  LayerSpec s;
  s.name = j.at("name").get<std::string>();
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.shape = j.at("shape").get<std::vector<std::size_t>>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// activation dumps

inline void write_dump(const fs::path& dir, const ActivationDump& dump) {
  fs::create_directories(dir);
  json manifest = {{"format_version", kDumpFormatVersion},
                   {"model_id", dump.model_id},
                   {"dataset_id", dump.dataset_id},
                   {"split", dump.split},
                   {"capture", dump.capture},
                   {"layers", json::array()}};
  for (std::size_t i = 0; i < dump.layers().size(); ++i) {
    const auto& layer = dump.layers()[i];
    const auto file = detail::file_stem_for(i, layer.spec.name) + ".f32";
    std::string bytes;
    bytes.reserve(layer.values.size() * 4);
    for (float v : layer.values) detail::put(bytes, std::bit_cast<std::uint32_t>(v));
    detail::write_file(dir / file, bytes);
    auto entry = to_json(layer.spec);
    entry["sample_count"] = dump.sample_count();
    entry["data_file"] = file;
    entry["value_encoding"] = "f32le";
    manifest["layers"].push_back(std::move(entry));
  }
  detail::write_file(dir / kManifestName, manifest.dump(2) + "\n");
}

/// Reads a dump directory. Data files whose length is a whole number of
/// samples other than the declared count raise size_mismatch; lengths that
/// end mid-sample raise truncated.
[[nodiscard]] inline ActivationDump read_dump(const fs::path& dir) {
  const auto manifest_path = dir / kManifestName;
  const json manifest = detail::parse_json(manifest_path);
  return detail::with_json_errors(manifest_path, [&] {
    const auto version = manifest.at("format_version").get<std::uint32_t>();
    if (version != kDumpFormatVersion) {
      throw Error(ErrorKind::version_mismatch, "dump '" + dir.string() + "' has format version " +
                                                   std::to_string(version) + ", expected " +
                                                   std::to_string(kDumpFormatVersion));
    }
    ActivationDump dump;
    dump.model_id = manifest.value("model_id", "unknown");
    dump.dataset_id = manifest.value("dataset_id", "unknown");
    dump.split = manifest.value("split", "unknown");
    dump.capture = manifest.value("capture", "unknown");
    for (const auto& entry : manifest.at("layers")) {
      auto spec = layer_spec_from_json(entry);
      const auto declared = entry.at("sample_count").get<std::size_t>();
      const auto encoding = entry.value("value_encoding", "f32le");
      if (encoding != "f32le") {
        throw Error(ErrorKind::version_mismatch, "layer '" + spec.name + "': unsupported encoding '" + encoding + "'");
      }
      const auto path = dir / entry.at("data_file").get<std::string>();
      if (!fs::exists(path)) throw Error(ErrorKind::io, "missing data file '" + path.string() + "'");
      const auto bytes = detail::read_file(path);
      const auto sample_bytes = spec.element_count() * 4;
      if (bytes.size() != declared * sample_bytes) {
        const auto kind = bytes.size() % sample_bytes == 0 ? ErrorKind::size_mismatch : ErrorKind::truncated;
        throw Error(kind, "layer '" + spec.name + "': manifest declares " + std::to_string(declared) +
                              " samples (" + std::to_string(declared * sample_bytes) + " bytes), data file holds " +
                              std::to_string(bytes.size()) + " bytes");
      }
      std::vector<float> values(bytes.size() / 4);
      for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t raw;
        std::memcpy(&raw, bytes.data() + i * 4, 4);
        values[i] = std::bit_cast<float>(detail::to_le(raw));
      }
      dump.add_layer(std::move(spec), std::move(values));
    }
    return dump;
  });
}

// ---------------------------------------------------------------------------
// NAPS pattern stores

[[nodiscard]] inline std::string encode_store(const PatternStore& store, bool with_multiplicities = true) {
  std::string out(kNapsMagic.begin(), kNapsMagic.end());
  detail::put(out, kNapsVersion);
  detail::put(out, static_cast<std::uint32_t>(store.bit_len()));
  detail::put(out, static_cast<std::uint64_t>(store.unique_count()));
  detail::put(out, static_cast<std::uint8_t>(with_multiplicities ? 1 : 0));
  for (auto w : store.raw_words()) detail::put(out, w);
  if (with_multiplicities) {
    for (auto m : store.multiplicities()) detail::put(out, m);
  }
  return out;
}

[[nodiscard]] inline PatternStore decode_store(const std::string& bytes, std::string layer_name,
                                               const std::string& what = "NAPS store") {
  if (bytes.size() < kNapsMagic.size() || !std::equal(kNapsMagic.begin(), kNapsMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::bad_magic, what + " does not start with \"NAPS\"");
  }
  detail::Reader r(bytes, what);
  for (std::size_t i = 0; i < kNapsMagic.size(); ++i) (void)r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kNapsVersion) {
    throw Error(ErrorKind::version_mismatch, what + " has version " + std::to_string(version));
  }
  const auto bit_len = r.get<std::uint32_t>();
  const auto unique = r.get<std::uint64_t>();
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) throw Error(ErrorKind::invalid_argument, what + ": bad multiplicity flag");
  const auto n_words = words_for_bits(bit_len);
  const auto need = unique * (n_words * 8 + (flag ? 4 : 0));
  if (unique != 0 && need / unique != n_words * 8 + (flag ? 4 : 0)) throw Error(ErrorKind::truncated, what);
  if (r.remaining() < need) throw Error(ErrorKind::truncated, what + ": records end early");
  if (r.remaining() > need) throw Error(ErrorKind::size_mismatch, what + ": trailing bytes after records");
  std::vector<std::uint64_t> words(unique * n_words);
  for (auto& w : words) w = r.get<std::uint64_t>();
  std::vector<std::uint32_t> mult(unique, 1);
  if (flag) {
    for (auto& m : mult) m = r.get<std::uint32_t>();
  }
  return PatternStore::from_parts(std::move(layer_name), bit_len, std::move(words), std::move(mult));
}

inline void save_store(const fs::path& path, const PatternStore& store) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file(path, encode_store(store));
}

[[nodiscard]] inline PatternStore load_store(const fs::path& path, std::string layer_name = {}) {
  if (layer_name.empty()) layer_name = path.stem().string();
  return decode_store(detail::read_file(path), std::move(layer_name), "'" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// binarization configs and calibrations

inline json to_json(const BinarizationConfig& cfg) {
  json j = {{"p", cfg.p}, {"pool", std::string(to_string(cfg.pool))}, {"mode", std::string(to_string(cfg.mode))}};
  j["thresholds"] = cfg.thresholds ? json(*cfg.thresholds) : json(nullptr);
  return j;
}

inline BinarizationConfig binarization_from_json(const json& j) {
  BinarizationConfig cfg;
  cfg.p = j.at("p").get<double>();
  cfg.pool = parse_pool_type(j.at("pool").get<std::string>());
  cfg.mode = parse_threshold_mode(j.at("mode").get<std::string>());
  if (j.contains("thresholds") && !j.at("thresholds").is_null()) {
    cfg.thresholds = j.at("thresholds").get<std::vector<float>>();
  }
  cfg.validate();
  return cfg;
}

inline json to_json(const LayerCalibration& cal) {
  return {{"layer", to_json(cal.layer)},     {"binarization", to_json(cal.cfg)},
          {"tau", cal.tau},                  {"tau_scaled", cal.tau_scaled},
          {"val_accuracy", cal.val_accuracy}, {"bit_len", cal.bit_len}};
}

inline LayerCalibration calibration_from_json(const json& j) {
  LayerCalibration cal;
  cal.layer = layer_spec_from_json(j.at("layer"));
  cal.cfg = binarization_from_json(j.at("binarization"));
  cal.tau = j.at("tau").get<std::size_t>();
  cal.tau_scaled = j.at("tau_scaled").get<double>();
  cal.val_accuracy = j.at("val_accuracy").get<double>();
  cal.bit_len = j.at("bit_len").get<std::size_t>();
  if (cal.tau > cal.bit_len) {
    throw Error(ErrorKind::invalid_argument, "layer '" + cal.name() + "': tau exceeds bit length");
  }
  if (cal.cfg.mode == ThresholdMode::per_position &&
      (!cal.cfg.thresholds || cal.cfg.thresholds->size() != cal.layer.pattern_width())) {
    throw Error(ErrorKind::calibration_missing, "layer '" + cal.name() + "': per-position thresholds missing");
  }
  return cal;
}

/// Sidecar written next to a NAPS file by `extract`: how the patterns were made.
inline void save_extraction_config(const fs::path& path, const LayerSpec& spec, const BinarizationConfig& cfg) {
  json j = {{"layer", to_json(spec)}, {"binarization", to_json(cfg)}};
  detail::write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// monitor bundles

inline void save_monitor(const fs::path& dir, const Monitor& monitor) {
  fs::create_directories(dir);
  const auto& cfg = monitor.config();
  json doc = {{"format_version", kMonitorFormatVersion},
              {"vote_scheme", scheme_number(cfg.scheme)},
              {"k", cfg.k()},
              {"layers", json::array()}};
  for (std::size_t l = 0; l < cfg.k(); ++l) {
    const auto file = detail::file_stem_for(l, cfg.layers[l].name()) + ".naps";
    save_store(dir / file, monitor.stores()[l]);
    auto entry = to_json(cfg.layers[l]);
    entry["store"] = file;
    doc["layers"].push_back(std::move(entry));
  }
  detail::write_file(dir / kMonitorName, doc.dump(2) + "\n");
}

[[nodiscard]] inline Monitor load_monitor(const fs::path& dir) {
  const auto doc_path = dir / kMonitorName;
  const json doc = detail::parse_json(doc_path);
  return detail::with_json_errors(doc_path, [&] {
    const auto version = doc.at("format_version").get<std::uint32_t>();
    if (version != kMonitorFormatVersion) {
      throw Error(ErrorKind::version_mismatch, "monitor '" + dir.string() + "' has format version " +
                                                   std::to_string(version));
    }
    MonitorConfig cfg;
    cfg.scheme = parse_vote_scheme(doc.at("vote_scheme").get<int>());
    std::vector<PatternStore> stores;
    for (const auto& entry : doc.at("layers")) {
      auto cal = calibration_from_json(entry);
      const auto store_path = dir / entry.at("store").get<std::string>();
      if (!fs::exists(store_path)) {
        throw Error(ErrorKind::dangling_reference, "layer '" + cal.name() + "' references missing store '" +
                                                       store_path.string() + "'");
      }
      stores.push_back(load_store(store_path, cal.name()));
      cfg.layers.push_back(std::move(cal));
    }
    if (doc.at("k").get<std::size_t>() != cfg.k()) {
      throw Error(ErrorKind::size_mismatch, "monitor declares k = " + doc.at("k").dump() + " but lists " +
                                                std::to_string(cfg.k()) + " layers");
    }
    return Monitor(std::move(cfg), std::move(stores));
  });
}

// ---------------------------------------------------------------------------
// single samples, verdicts, reports, synthetic specs

/// A single sample as a JSON document: {"layers": {"<name>": [flat values]}}.
struct SampleFile {
  std::vector<std::pair<std::string, std::vector<float>>> layers;

  [[nodiscard]] SampleActivations view() const {
    SampleActivations v;
    for (const auto& [name, values] : layers) v.emplace(name, values);
    return v;
  }
};

[[nodiscard]] inline SampleFile read_sample_file(const fs::path& path) {
  const json doc = detail::parse_json(path);
  return detail::with_json_errors(path, [&] {
    SampleFile s;
    for (const auto& [name, values] : doc.at("layers").items()) {
      s.layers.emplace_back(name, values.get<std::vector<float>>());
    }
    return s;
  });
}

inline json to_json(const Verdict& v) {
  json layers = json::array();
  for (const auto& l : v.per_layer) {
    layers.push_back({{"layer", l.layer}, {"d_min", l.d_min}, {"d_scaled", l.d_scaled}, {"vote_ood", l.vote_ood}});
  }
  return {{"is_ood", v.is_ood}, {"score", v.score ? json(*v.score) : json(nullptr)}, {"layers", layers}};
}

inline json to_json(const ODTestReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"p", l.p},
                      {"pool", std::string(to_string(l.pool))},
                      {"bit_len", l.bit_len},
                      {"tau", l.tau},
                      {"tau_scaled", l.tau_scaled},
                      {"val_accuracy", l.val_accuracy},
                      {"test_accuracy", l.test_accuracy},
                      {"store_unique", l.store_unique},
                      {"store_total", l.store_total}});
  }
  return {{"train", r.train_id},
          {"valid", r.valid_id},
          {"test", r.test_id},
          {"vote_scheme", scheme_number(r.scheme)},
          {"k", r.k},
          {"val_accuracy", r.val_accuracy},
          {"test_accuracy", r.test_accuracy},
          {"test_auroc", r.test_auroc ? json(*r.test_auroc) : json(nullptr)},
          {"latency_s", r.latency_s},
          {"train_samples", r.train_samples},
          {"id_eval_samples", r.id_eval_samples},
          {"test_id_samples", r.test_id_samples},
          {"test_ood_samples", r.test_ood_samples},
          {"layers", layers}};
}

/// Human-readable report table.
[[nodiscard]] inline std::string format_report(const ODTestReport& r) {
  std::ostringstream os;
  os << "OD-test  train=" << r.train_id << "  valid=" << r.valid_id << "  test=" << r.test_id << '\n';
  os << "scheme " << scheme_number(r.scheme) << ", k=" << r.k << ", train " << r.train_samples << ", id-eval "
     << r.id_eval_samples << ", balanced test " << r.test_id_samples << "+" << r.test_ood_samples << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "val_accuracy  %.4f\ntest_accuracy %.4f\ntest_auroc    %s\nlatency       %.3g s/sample\n",
                r.val_accuracy, r.test_accuracy,
                r.test_auroc ? std::to_string(*r.test_auroc).c_str() : "n/a", r.latency_s);
  os << buf;
  os << "layer                 p  pool  bits   tau  tau_s   val_acc  test_acc  unique/total\n";
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof buf, "%-18s %5.1f  %-4s %5zu %5zu  %.3f  %.4f   %.4f    %zu/%zu\n", l.layer.c_str(),
                  l.p, std::string(to_string(l.pool)).c_str(), l.bit_len, l.tau, l.tau_scaled, l.val_accuracy,
                  l.test_accuracy, l.store_unique, l.store_total);
    os << buf;
  }
  return os.str();
}

inline json to_json(const SyntheticSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) layers.push_back(to_json(l));
  return {{"classes", s.classes},
          {"layers", layers},
          {"id_noise_scale", s.id_noise_scale},
          {"ood_shift_scale", s.ood_shift_scale},
          {"train_samples", s.train_samples},
          {"valid_samples", s.valid_samples},
          {"test_samples", s.test_samples},
          {"ood_classes", s.ood_classes},
          {"seed", s.seed}};
}

[[nodiscard]] inline SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  s.classes = j.at("classes").get<std::size_t>();
  for (const auto& l : j.at("layers")) s.layers.push_back(layer_spec_from_json(l));
  s.id_noise_scale = j.at("id_noise_scale").get<double>();
  s.ood_shift_scale = j.at("ood_shift_scale").get<double>();
  s.train_samples = j.at("train_samples").get<std::size_t>();
  s.valid_samples = j.at("valid_samples").get<std::size_t>();
  s.test_samples = j.at("test_samples").get<std::size_t>();
  s.ood_classes = j.value("ood_classes", std::size_t{0});
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

[[nodiscard]] inline SyntheticSpec read_synthetic_spec(const fs::path& path) {
  const json doc = detail::parse_json(path);
  return detail::with_json_errors(path, [&] { return synthetic_spec_from_json(doc); });
}

}  // namespace napmon::io
