// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance                 run every criterion
//   acceptance --only 3,5      run a subset
//   acceptance --child <dir>   internal: the second process of criterion 8

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "napmon/napmon.hpp"
#include "test_support.hpp"

using namespace napmon;
using namespace napmon::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and bounds, pinned.
constexpr double kOracleTimeLimitS = 60.0;
constexpr double kNearestMeanLimitS = 0.025;
constexpr double kJudgeMeanLimitS = 0.050;
constexpr double kAurocTolerance = 1e-12;
constexpr double kOdTestMinAuroc = 0.95;
constexpr double kOdTestMinAccuracy = 0.90;
constexpr double kOdTestTimeLimitS = 120.0;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Hamming oracle equivalence

Outcome hamming_oracle() {
  std::mt19937_64 rng(1001);
  std::size_t checked = 0, mismatches = 0;
  double engine_s = 0.0;
  const auto t_all = Clock::now();
  for (std::size_t len : {64u, 1000u, 4096u}) {
    // byte-per-bit copies for the oracle
    std::vector<std::vector<std::uint8_t>> raw(10000);
    std::vector<BinaryPattern> packed;
    packed.reserve(raw.size());
    for (auto& r : raw) {
      const auto b = random_bits(len, rng);
      r.assign(b.begin(), b.end());
      packed.push_back(pack(b));
    }
    const auto store = build_store(packed, "l");
    for (int q = 0; q < 1000; ++q) {
      const auto qb = random_bits(len, rng);
      const std::vector<std::uint8_t> qr(qb.begin(), qb.end());
      const auto query = pack(qb);

      const auto t0 = Clock::now();
      const auto got = nearest_distance(store, query).distance;
      engine_s += seconds_since(t0);

      std::size_t best = len + 1;
      for (const auto& r : raw) {
        std::size_t d = 0;
        for (std::size_t i = 0; i < len; ++i) d += r[i] != qr[i];
        best = std::min(best, d);
      }
      ++checked;
      mismatches += got != best;
    }
  }
  const double total = seconds_since(t_all);
  return {mismatches == 0 && total < kOracleTimeLimitS,
          fmt("%zu/%zu queries exact, engine %.2f s, total %.1f s (limit %.0f s)", checked - mismatches, checked,
              engine_s, total, kOracleTimeLimitS)};
}

// ---------------------------------------------------------------------------
// 2. Latency

Outcome latency() {
  const auto nearest = bench_nearest(100000, 1024, 200, 2002);
  // nine dense layers of 512 units, 60k stored patterns each
  const auto judge = bench_judge(60000, 512, 9, 50, 2003);
  return {nearest.mean_s <= kNearestMeanLimitS && judge.mean_s <= kJudgeMeanLimitS,
          fmt("nearest 100k x 1024: %.2f ms/query (limit %.0f); judge k=9, 60k x 512: %.2f ms/sample (limit %.0f)",
              nearest.mean_s * 1e3, kNearestMeanLimitS * 1e3, judge.mean_s * 1e3, kJudgeMeanLimitS * 1e3)};
}

// ---------------------------------------------------------------------------
// 3. Threshold optimality

Outcome threshold_optimality() {
  std::mt19937_64 rng(3003);
  int ok = 0;
  const int cases = 200;
  for (int i = 0; i < cases; ++i) {
    const std::size_t max_d = i % 2 ? 25 : 4096;
    auto draw = [&] {
      std::vector<std::size_t> v(1 + rng() % 500);
      for (auto& x : v) x = rng() % (max_d + 1);
      return v;
    };
    const auto a = draw(), b = draw();
    const auto fit = otsu_fit(a, b);
    const auto oracle = otsu_oracle(a, b);
    auto pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    ok += fit.tau == oracle.tau && split_objective(pooled, fit.tau) == oracle.objective &&
          fit.objective == oracle.objective.to_double();
  }
  // constructed ties: both splits leave the same within-group variance
  struct Tie {
    std::vector<std::size_t> in, out;
    std::size_t expect;
  };
  const std::vector<Tie> ties{
      {{0, 0, 10}, {20, 20}, 0},
      {{3, 3, 13}, {23, 23}, 3},
      {{0, 0, 0, 5}, {10, 10, 10}, 0},
      {{7}, {7}, 7},
  };
  int ties_ok = 0;
  for (const auto& t : ties) {
    auto pooled = t.in;
    pooled.insert(pooled.end(), t.out.begin(), t.out.end());
    ties_ok += otsu_tau(t.in, t.out) == t.expect && otsu_tau(t.out, t.in) == t.expect &&
               otsu_oracle(t.in, t.out).tau == t.expect;
  }
  return {ok == cases && ties_ok == static_cast<int>(ties.size()),
          fmt("%d/%d random pairs at the exhaustive minimum, %d/%zu tie cases pick the smallest tau", ok, cases,
              ties_ok, ties.size())};
}

// ---------------------------------------------------------------------------
// 4. Binarization law

Outcome binarization_law() {
  std::mt19937_64 rng(4004);
  std::size_t ok = 0, total = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t len = 1 + rng() % 2048;
    const auto v = distinct_floats(len, rng);
    for (double p : default_p_grid()) {
      const auto pc = binarize(v, {p, PoolType::max, ThresholdMode::per_pattern, std::nullopt}).popcount();
      const auto expect = len - static_cast<std::size_t>(nearest_rank(static_cast<long>(p), static_cast<long>(len)));
      ok += pc == expect;
      ++total;
    }
  }
  return {ok == total, fmt("%zu/%zu (vector, p) cases satisfy the popcount law", ok, total)};
}

// ---------------------------------------------------------------------------
// 5. Scheme equivalence

Outcome scheme_equivalence() {
  std::mt19937_64 rng(5005);
  int ok = 0;
  const int cases = 1000;
  for (int i = 0; i < cases; ++i) {
    const std::size_t bits = 1 + rng() % 4096;
    const std::size_t tau = rng() % (bits + 1);
    // half the cases sit right at the threshold
    const std::size_t d = i % 2 ? tau : rng() % (bits + 1);
    LayerCalibration cal;
    cal.layer = {"l", LayerKind::dense, {bits}};
    cal.bit_len = bits;
    cal.tau = tau;
    cal.tau_scaled = static_cast<double>(tau) / static_cast<double>(bits);
    MonitorConfig c1{{cal}, VoteScheme::scheme1};
    MonitorConfig c2{{cal}, VoteScheme::scheme2};
    std::vector<PatternStore> s1, s2;
    s1.push_back(build_store(std::vector<BinaryPattern>{pack(Bits(bits, 0))}, "l"));
    s2.push_back(s1.front());
    const Monitor m1(c1, std::move(s1)), m2(c2, std::move(s2));
    const std::vector<std::size_t> dist{d};
    const bool v1 = m1.decide(dist).is_ood, v2 = m2.decide(dist).is_ood;
    ok += v1 == v2 && v1 == (d > tau);
  }
  return {ok == cases, fmt("%d/%d single-layer cases agree with d > tau under both schemes", ok, cases)};
}

// ---------------------------------------------------------------------------
// 6. AUROC correctness

Outcome auroc_correctness() {
  std::mt19937_64 rng(6006);
  double worst = 0.0;
  const int sets = 100;
  for (int i = 0; i < sets; ++i) {
    std::vector<double> s(200);
    std::vector<bool> y(200);
    for (std::size_t j = 0; j < s.size(); ++j) {
      y[j] = rng() % 2 == 1;
      // a third of the sets use 3 distinct values, a third 20, the rest continuous
      if (i % 3 == 0) {
        s[j] = static_cast<double>(rng() % 3);
      } else if (i % 3 == 1) {
        s[j] = static_cast<double>(rng() % 20) / 7.0;
      } else {
        s[j] = std::ldexp(static_cast<double>(rng() >> 11), -53);
      }
    }
    y[0] = true;
    y[1] = false;
    worst = std::max(worst, std::abs(auroc(s, y) - pairwise_auroc(s, y)));
  }
  return {worst <= kAurocTolerance, fmt("max |rank - pairwise| = %.3g over %d sets of 200 (tolerance %.0e)", worst,
                                        sets, kAurocTolerance)};
}

// ---------------------------------------------------------------------------
// 7. End-to-end synthetic OD-test

ODTestOptions reference_options() {
  ODTestOptions o;
  o.calibration.k = 3;
  o.calibration.scheme = VoteScheme::scheme1;
  o.calibration.grid.criterion = Criterion::hybrid;
  o.seed = 7;
  return o;
}

Outcome synthetic_odtest(const fs::path& spec_path) {
  const auto spec = io::read_synthetic_spec(spec_path);
  const auto t0 = Clock::now();
  const auto triplet = synth_generate(spec);
  const auto r = run_odtest(triplet.train, triplet.valid, triplet.test, reference_options());
  const double elapsed = seconds_since(t0);

  const auto again = synth_generate(spec);
  const auto r2 = run_odtest(again.train, again.valid, again.test, reference_options());
  bool same = r.test_accuracy == r2.test_accuracy && r.test_auroc == r2.test_auroc &&
              r.val_accuracy == r2.val_accuracy && r.layers.size() == r2.layers.size();
  for (std::size_t l = 0; same && l < r.layers.size(); ++l) {
    same = r.layers[l].layer == r2.layers[l].layer && r.layers[l].tau == r2.layers[l].tau &&
           r.layers[l].p == r2.layers[l].p && r.layers[l].pool == r2.layers[l].pool;
  }
  const double au = r.test_auroc.value_or(0.0);
  return {au >= kOdTestMinAuroc && r.test_accuracy >= kOdTestMinAccuracy && same && elapsed < kOdTestTimeLimitS,
          fmt("AUROC %.4f (>= %.2f), balanced accuracy %.4f (>= %.2f), deterministic %s, %.1f s (limit %.0f s)", au,
              kOdTestMinAuroc, r.test_accuracy, kOdTestMinAccuracy, same ? "yes" : "no", elapsed,
              kOdTestTimeLimitS)};
}

// ---------------------------------------------------------------------------
// 8. Persistence across processes

struct PersistenceFixture {
  SyntheticTriplet data;
  std::vector<BinaryPattern> queries;
};

PersistenceFixture persistence_fixture() {
  auto spec = reference_synthetic_spec();
  spec.train_samples = 400;
  spec.valid_samples = 100;
  spec.test_samples = 100;
  spec.seed = 8008;
  PersistenceFixture f{synth_generate(spec), {}};
  std::mt19937_64 rng(8009);
  for (int q = 0; q < 100; ++q) f.queries.push_back(pack(random_bits(64, rng)));
  return f;
}

// Query results of the store and the bundle, one line per item.
std::string persistence_results(const PatternStore& store, const Monitor& monitor, const PersistenceFixture& f) {
  std::ostringstream os;
  for (const auto& q : f.queries) {
    const auto r = nearest_distance(store, q);
    os << "store " << r.distance << ' ' << r.index << '\n';
  }
  for (std::size_t i = 0; i < f.data.test.sample_count(); ++i) {
    const auto v = monitor.judge(f.data.test, i);
    os << "verdict " << v.is_ood;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %a", v.score.value_or(0.0));
    os << buf;
    for (const auto& l : v.per_layer) os << ' ' << l.d_min;
    os << '\n';
  }
  const auto m = evaluate_monitor(monitor, f.data.train, f.data.test, 8);
  char buf[128];
  std::snprintf(buf, sizeof buf, "metrics %a %a\n", m.accuracy, m.auroc.value_or(-1.0));
  os << buf;
  return os.str();
}

int run_child(const fs::path& dir) {
  try {
    const auto f = persistence_fixture();
    const auto store = io::load_store(dir / "store.naps");
    const auto monitor = io::load_monitor(dir / "bundle");
    std::ofstream(dir / "child.txt") << persistence_results(store, monitor, f);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "child: %s\n", e.what());
    return 1;
  }
}

Outcome persistence(const std::string& self) {
  TempDir dir("acceptance-persist");
  const auto f = persistence_fixture();
  CalibrationOptions opt;
  opt.k = 3;
  opt.grid.p_grid = {30, 60, 90};
  const auto cal = calibrate_monitor(f.data.train, f.data.valid, opt);
  const auto store = build_store(
      extract_all(f.data.train, f.data.train.layer("conv_b").spec,
                  {50, PoolType::max, ThresholdMode::per_pattern, std::nullopt}),
      "conv_b");
  io::save_store(dir / "store.naps", store);
  io::save_monitor(dir / "bundle", cal.monitor);
  const auto expect = persistence_results(store, cal.monitor, f);

  const std::string cmd = "'" + self + "' --child '" + dir.path().string() + "'";
  if (std::system(cmd.c_str()) != 0) return {false, "child process failed"};
  std::ifstream in(dir / "child.txt");
  std::stringstream got;
  got << in.rdbuf();
  const bool same = got.str() == expect;
  return {same, fmt("100 store queries, %zu verdicts and the OD metrics %s in a fresh process",
                    f.data.test.sample_count(), same ? "identical" : "DIFFER")};
}

std::string self_path(const char* argv0) {
  std::error_code ec;
  const auto p = fs::canonical("/proc/self/exe", ec);
  return ec ? fs::absolute(argv0).string() : p.string();
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--child" && i + 1 < argc) return run_child(argv[i + 1]);
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.push_back(std::stoi(tok));
    }
  }
  const fs::path spec_path = fs::path(NAPMON_SOURCE_DIR) / "data" / "synthetic_spec.json";

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "hamming oracle equivalence", hamming_oracle},
      {2, "latency", latency},
      {3, "threshold optimality", threshold_optimality},
      {4, "binarization law", binarization_law},
      {5, "scheme equivalence", scheme_equivalence},
      {6, "auroc correctness", auroc_correctness},
      {7, "end-to-end synthetic od-test", [&] { return synthetic_odtest(spec_path); }},
      {8, "persistence across processes", [&] { return persistence(self_path(argv[0])); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s  %d %-30s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
