#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include "napmon/io.hpp"
#include "napmon/synthetic.hpp"
#include "test_support.hpp"

using namespace napmon;
using namespace napmon::testing;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::invalid_argument;
}

void truncate_to(const fs::path& p, std::uintmax_t size) { fs::resize_file(p, size); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PatternStore random_store(std::size_t n, std::size_t len, std::mt19937_64& rng, double p_one = 0.5) {
  std::vector<BinaryPattern> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(pack(random_bits(len, rng, p_one)));
  return build_store(v, "layer");
}

}  // namespace

TEST(Dump, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(70);
  TempDir dir("dump");
  auto d = random_dump({{"conv 1", LayerKind::conv, {3, 2, 2}}, {"fc", LayerKind::dense, {5}}}, 9, rng);
  d.model_id = "m";
  d.capture = "pre_relu";
  io::write_dump(dir.path(), d);
  const auto back = io::read_dump(dir.path());
  EXPECT_EQ(back.model_id, "m");
  EXPECT_EQ(back.capture, "pre_relu");
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(back.layer_specs(), d.layer_specs());
  for (const auto& l : d.layers()) EXPECT_EQ(back.layer(l.spec.name).values, l.values);
  EXPECT_TRUE(fs::exists(dir / "00_conv_1.f32"));
  // 9 samples of 12 floats
  EXPECT_EQ(fs::file_size(dir / "00_conv_1.f32"), 9u * 12u * 4u);
}

TEST(Dump, SizeMismatchTruncationAndVersion) {
  std::mt19937_64 rng(71);
  const auto d = random_dump({{"fc", LayerKind::dense, {4}}}, 10, rng);
  {
    TempDir dir("dump-short");
    io::write_dump(dir.path(), d);
    truncate_to(dir / "00_fc.f32", 9 * 16);  // one whole sample missing
    EXPECT_EQ(kind_of([&] { (void)io::read_dump(dir.path()); }), ErrorKind::size_mismatch);
    truncate_to(dir / "00_fc.f32", 9 * 16 + 6);
    EXPECT_EQ(kind_of([&] { (void)io::read_dump(dir.path()); }), ErrorKind::truncated);
  }
  {
    TempDir dir("dump-version");
    io::write_dump(dir.path(), d);
    auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    m["format_version"] = 2;
    std::ofstream(dir / "manifest.json") << m.dump();
    EXPECT_EQ(kind_of([&] { (void)io::read_dump(dir.path()); }), ErrorKind::version_mismatch);
  }
  {
    TempDir dir("dump-missing");
    EXPECT_EQ(kind_of([&] { (void)io::read_dump(dir.path()); }), ErrorKind::io);
  }
}

TEST(Dump, ExporterWrittenFixtureIsReadable) {
  if (std::system("python3 -c 'import numpy' > /dev/null 2>&1") != 0) GTEST_SKIP() << "python3 with numpy not available";
  TempDir dir("exporter");
  const std::string cmd =
      std::string("python3 ") + NAPMON_FIXTURE_DIR + "/write_numpy_dump.py '" + dir.path().string() + "'";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const auto d = io::read_dump(dir.path());
  EXPECT_EQ(d.sample_count(), 16u);
  EXPECT_EQ(d.capture, "post_relu");
  const auto specs = d.layer_specs();
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_EQ(specs[0], (LayerSpec{"features.3", LayerKind::conv, {6, 4, 4}}));
  EXPECT_EQ(specs[2], (LayerSpec{"classifier.1", LayerKind::dense, {12}}));
  // sample 0 of each layer was written as 0, 1, 2, ...
  for (const auto& l : d.layers()) {
    const auto s = l.sample(0);
    for (std::size_t i = 0; i < s.size(); ++i) ASSERT_EQ(s[i], static_cast<float>(i));
    for (float v : l.values) ASSERT_GE(v, 0.0F);
  }
}

TEST(Naps, RoundTripPreservesEverything) {
  std::mt19937_64 rng(72);
  const auto store = random_store(500, 77, rng, 0.05);
  TempDir dir("naps");
  io::save_store(dir / "layer.naps", store);
  const auto back = io::load_store(dir / "layer.naps");
  EXPECT_EQ(back.layer_name(), "layer");
  EXPECT_EQ(back.bit_len(), store.bit_len());
  EXPECT_EQ(back.unique_count(), store.unique_count());
  EXPECT_TRUE(std::ranges::equal(back.multiplicities(), store.multiplicities()));
  EXPECT_TRUE(std::ranges::equal(back.raw_words(), store.raw_words()));
  EXPECT_EQ(fs::file_size(dir / "layer.naps"),
            4u + 4 + 4 + 8 + 1 + store.unique_count() * 2 * 8 + store.unique_count() * 4);
}

TEST(Naps, ByteLayout) {
  const auto store = build_store(std::vector<BinaryPattern>{pack(Bits{1, 0, 1}), pack(Bits{1, 0, 1})}, "x");
  const auto bytes = io::encode_store(store);
  const std::string expect("NAPS\x01\x00\x00\x00\x03\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00\x01"
                           "\x05\x00\x00\x00\x00\x00\x00\x00\x02\x00\x00\x00",
                           33);
  EXPECT_EQ(bytes, expect);
}

TEST(Naps, WithoutMultiplicities) {
  std::mt19937_64 rng(73);
  const auto store = random_store(20, 10, rng);
  const auto back = io::decode_store(io::encode_store(store, false), "layer");
  EXPECT_EQ(back.unique_count(), store.unique_count());
  for (auto m : back.multiplicities()) EXPECT_EQ(m, 1u);
}

TEST(Naps, CorruptionIsDetected) {
  std::mt19937_64 rng(74);
  const auto bytes = io::encode_store(random_store(30, 100, rng));
  TempDir dir("naps-bad");
  io::detail::write_file(dir / "empty.naps", "");
  EXPECT_EQ(kind_of([&] { (void)io::load_store(dir / "empty.naps"); }), ErrorKind::bad_magic);
  EXPECT_EQ(kind_of([&] { (void)io::decode_store("NAPX" + bytes.substr(4), "l"); }), ErrorKind::bad_magic);
  auto v2 = bytes;
  v2[4] = 2;
  EXPECT_EQ(kind_of([&] { (void)io::decode_store(v2, "l"); }), ErrorKind::version_mismatch);
  EXPECT_EQ(kind_of([&] { (void)io::decode_store(bytes.substr(0, bytes.size() - 1), "l"); }), ErrorKind::truncated);
  EXPECT_EQ(kind_of([&] { (void)io::decode_store(bytes.substr(0, 10), "l"); }), ErrorKind::truncated);
  EXPECT_EQ(kind_of([&] { (void)io::decode_store(bytes + "x", "l"); }), ErrorKind::size_mismatch);
  // a set padding bit in the last word of the first record
  auto padded = bytes;
  padded[21 + 15] = static_cast<char>(0x80);
  EXPECT_THROW((void)io::decode_store(padded, "l"), Error);
}

TEST(Naps, QueriesIdenticalAfterPersistence) {
  std::mt19937_64 rng(75);
  const auto store = random_store(10000, 256, rng);
  TempDir dir("naps-q");
  io::save_store(dir / "s.naps", store);
  const auto back = io::load_store(dir / "s.naps", "layer");
  for (int q = 0; q < 100; ++q) {
    const auto query = pack(random_bits(256, rng));
    const auto a = nearest_distance(store, query), b = nearest_distance(back, query);
    ASSERT_EQ(a.distance, b.distance);
    ASSERT_EQ(a.index, b.index);
  }
}

namespace {

CalibrationResult calibrated(VoteScheme scheme, ThresholdMode mode) {
  SyntheticSpec s;
  s.classes = 4;
  s.layers = {{"a", LayerKind::conv, {12, 2, 2}}, {"b", LayerKind::dense, {20}}, {"c", LayerKind::dense, {30}}};
  s.train_samples = 100;
  s.valid_samples = 40;
  s.test_samples = 40;
  s.seed = 3;
  const auto t = synth_generate(s);
  CalibrationOptions opt;
  opt.grid.p_grid = {40, 70};
  opt.grid.mode = mode;
  opt.k = 3;
  opt.scheme = scheme;
  return calibrate_monitor(t.train, t.valid, opt);
}

}  // namespace

TEST(MonitorBundle, RoundTripKeepsConfigAndVerdicts) {
  for (auto scheme : {VoteScheme::scheme1, VoteScheme::scheme2}) {
    for (auto mode : {ThresholdMode::per_pattern, ThresholdMode::per_position}) {
      const auto cal = calibrated(scheme, mode);
      TempDir dir("bundle");
      io::save_monitor(dir.path(), cal.monitor);
      const auto back = io::load_monitor(dir.path());
      EXPECT_EQ(back.config(), cal.monitor.config());
      ASSERT_EQ(back.stores().size(), 3u);
      for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(back.stores()[l], cal.monitor.stores()[l]);

      SyntheticSpec s;
      s.classes = 2;
      s.layers = {{"a", LayerKind::conv, {12, 2, 2}}, {"b", LayerKind::dense, {20}}, {"c", LayerKind::dense, {30}}};
      s.train_samples = 1;
      s.valid_samples = 1;
      s.test_samples = 50;
      s.seed = 11;
      const auto probe = synth_generate(s).test;
      for (std::size_t i = 0; i < probe.sample_count(); ++i) EXPECT_EQ(back.judge(probe, i), cal.monitor.judge(probe, i));
    }
  }
}

TEST(MonitorBundle, DanglingStoreReference) {
  const auto cal = calibrated(VoteScheme::scheme1, ThresholdMode::per_pattern);
  TempDir dir("bundle-dangling");
  io::save_monitor(dir.path(), cal.monitor);
  for (const auto& e : fs::directory_iterator(dir.path())) {
    if (e.path().extension() == ".naps") {
      fs::remove(e.path());
      break;
    }
  }
  EXPECT_EQ(kind_of([&] { (void)io::load_monitor(dir.path()); }), ErrorKind::dangling_reference);
}

TEST(SampleFile, ReadsLayers) {
  TempDir dir("sample");
  std::ofstream(dir / "s.json") << R"({"layers": {"fc": [1, 2.5, -3], "x": []}})";
  const auto s = io::read_sample_file(dir / "s.json");
  const auto v = s.view();
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(std::vector<float>(v.at("fc").begin(), v.at("fc").end()), (std::vector<float>{1, 2.5F, -3}));
  std::ofstream(dir / "bad.json") << R"({"nolayers": 1})";
  EXPECT_EQ(kind_of([&] { (void)io::read_sample_file(dir / "bad.json"); }), ErrorKind::io);
}

TEST(SyntheticSpecJson, RoundTrip) {
  auto spec = reference_synthetic_spec();
  spec.ood_classes = 3;
  const auto back = io::synthetic_spec_from_json(io::to_json(spec));
  EXPECT_EQ(io::to_json(back), io::to_json(spec));
  EXPECT_EQ(back.layers, spec.layers);
  EXPECT_EQ(back.seed, spec.seed);
}
