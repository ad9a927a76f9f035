#pragma once

// Three-dataset OOD evaluation.
//
// D_s (in-distribution) is split into a training part and a held-out ID
// evaluation part. The monitor is calibrated on the training part against the
// validation OOD set D_v and frozen. Only then is the test OOD set D_t read;
// the ID-eval part and D_t are balanced by downsampling the larger side.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "napmon/activations.hpp"
#include "napmon/calibration.hpp"
#include "napmon/error.hpp"
#include "napmon/metrics.hpp"
#include "napmon/monitor.hpp"
#include "napmon/store.hpp"

namespace napmon {

struct LayerDiagnostics {
  std::string layer;
  double p = 0.0;
  PoolType pool = PoolType::max;
  std::size_t bit_len = 0;
  std::size_t tau = 0;
  double tau_scaled = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;  ///< this layer alone, d > tau
  std::size_t store_unique = 0;
  std::size_t store_total = 0;
};

struct EvalMetrics {
  double accuracy = 0.0;
  std::optional<double> auroc;  ///< scheme 1 only
  std::size_t id_samples = 0;
  std::size_t ood_samples = 0;
  double latency_s = 0.0;  ///< mean wall-clock judge time per sample
  std::vector<double> layer_accuracy;
};

struct ODTestReport {
  std::string train_id;
  std::string valid_id;
  std::string test_id;
  VoteScheme scheme = VoteScheme::scheme1;
  std::size_t k = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::optional<double> test_auroc;
  double latency_s = 0.0;
  std::size_t train_samples = 0;
  std::size_t id_eval_samples = 0;
  std::size_t test_id_samples = 0;
  std::size_t test_ood_samples = 0;
  std::vector<LayerDiagnostics> layers;
};

struct ODTestOptions {
  CalibrationOptions calibration;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

/// Instrumentation points of run_odtest.
struct ODTestHooks {
  std::function<void(const Monitor&)> on_calibrated;
  std::function<void()> on_test_access;
};

/// Seeded permutation of [0, n).
[[nodiscard]] inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed,
                                                                 std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::seed_seq s{seed, stream};
  std::mt19937_64 rng(s);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Deterministic train / ID-eval split of D_s.
struct IdSplit {
  ActivationDump train;
  ActivationDump id_eval;
};

[[nodiscard]] inline IdSplit split_in_distribution(const ActivationDump& ds, double train_fraction,
                                                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "train fraction must lie in (0, 1)");
  }
  const auto n = ds.sample_count();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  if (n_train < 2 || n - n_train < 1) {
    throw Error(ErrorKind::empty_input, "D_s has " + std::to_string(n) +
                                            " samples, too few for a training part and an ID holdout");
  }
  auto perm = seeded_permutation(n, seed, 0x5151);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> eval(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  IdSplit split{ds.select(train), ds.select(eval)};
  split.train.split = ds.split + ":train";
  split.id_eval.split = ds.split + ":id-eval";
  return split;
}

inline void check_schema(const ActivationDump& reference, const ActivationDump& other, const std::string& role) {
  for (const auto& l : reference.layers()) {
    const auto* o = other.find(l.spec.name);
    if (o == nullptr) {
      throw Error(ErrorKind::missing_layer, role + " dump lacks layer '" + l.spec.name + "'");
    }
    if (o->spec != l.spec) {
      throw Error(ErrorKind::shape_mismatch, role + " dump declares layer '" + l.spec.name + "' with another shape");
    }
  }
}

/// Evaluates a frozen monitor on ID samples versus OOD samples after
/// balancing both sides to the smaller count.
[[nodiscard]] inline EvalMetrics evaluate_monitor(const Monitor& monitor, const ActivationDump& id_eval,
                                                  const ActivationDump& ood, std::uint64_t seed) {
  const auto m = std::min(id_eval.sample_count(), ood.sample_count());
  if (m == 0) throw Error(ErrorKind::empty_input, "evaluation needs ID and OOD samples");
  auto pick = [&](const ActivationDump& d, std::uint64_t stream) {
    auto perm = seeded_permutation(d.sample_count(), seed, stream);
    perm.resize(m);
    std::sort(perm.begin(), perm.end());
    return perm;
  };
  const auto id_idx = pick(id_eval, 0x1D);
  const auto ood_idx = pick(ood, 0x00D);

  std::vector<bool> labels;
  std::vector<bool> predicted;
  std::vector<double> scores;
  std::vector<std::vector<bool>> layer_votes(monitor.config().k());
  const auto t0 = std::chrono::steady_clock::now();
  auto run = [&](const ActivationDump& d, const std::vector<std::size_t>& idx, bool label) {
    for (auto i : idx) {
      const auto v = monitor.judge(d, i);
      labels.push_back(label);
      predicted.push_back(v.is_ood);
      if (v.score) scores.push_back(*v.score);
      for (std::size_t l = 0; l < v.per_layer.size(); ++l) layer_votes[l].push_back(v.per_layer[l].vote_ood);
    }
  };
  run(id_eval, id_idx, false);
  run(ood, ood_idx, true);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;

  EvalMetrics out;
  out.id_samples = m;
  out.ood_samples = m;
  out.accuracy = balanced_accuracy(predicted, labels);
  if (monitor.config().scheme == VoteScheme::scheme1) out.auroc = auroc(scores, labels);
  out.latency_s = elapsed.count() / static_cast<double>(labels.size());
  for (const auto& votes : layer_votes) out.layer_accuracy.push_back(balanced_accuracy(votes, labels));
  return out;
}

/// Ensemble accuracy on the calibration data itself: leave-one-out distances
/// of the training samples versus nearest distances of D_v.
[[nodiscard]] inline double validation_accuracy(const Monitor& monitor, const ActivationDump& valid) {
  const auto& cfg = monitor.config();
  std::vector<std::vector<std::size_t>> d_in(cfg.k());
  std::vector<std::vector<std::size_t>> d_out(cfg.k());
  for (std::size_t l = 0; l < cfg.k(); ++l) {
    d_in[l] = loo_all_samples(monitor.stores()[l]);
    const auto patterns = extract_all(valid, cfg.layers[l].layer, cfg.layers[l].cfg);
    d_out[l] = batch_nearest(monitor.stores()[l], patterns);
  }
  std::vector<bool> labels;
  std::vector<bool> predicted;
  auto collect = [&](const std::vector<std::vector<std::size_t>>& d, bool label) {
    for (std::size_t i = 0; i < d.front().size(); ++i) {
      std::vector<std::size_t> row(cfg.k());
      for (std::size_t l = 0; l < cfg.k(); ++l) row[l] = d[l][i];
      predicted.push_back(monitor.decide(row).is_ood);
      labels.push_back(label);
    }
  };
  collect(d_in, false);
  collect(d_out, true);
  return balanced_accuracy(predicted, labels);
}

/// Full protocol. `test_source` is called only after the monitor is frozen.
[[nodiscard]] inline ODTestReport run_odtest(const ActivationDump& ds, const ActivationDump& dv,
                                             const std::function<const ActivationDump&()>& test_source,
                                             const ODTestOptions& opt, const ODTestHooks& hooks = {}) {
  check_schema(ds, dv, "validation");
  auto split = split_in_distribution(ds, opt.train_fraction, opt.seed);
  auto calibrated = calibrate_monitor(split.train, dv, opt.calibration);
  const Monitor& monitor = calibrated.monitor;
  if (hooks.on_calibrated) hooks.on_calibrated(monitor);

  ODTestReport r;
  r.train_id = ds.dataset_id + "/" + ds.split;
  r.valid_id = dv.dataset_id + "/" + dv.split;
  r.scheme = monitor.config().scheme;
  r.k = monitor.config().k();
  r.val_accuracy = validation_accuracy(monitor, dv);
  r.train_samples = split.train.sample_count();
  r.id_eval_samples = split.id_eval.sample_count();

  if (hooks.on_test_access) hooks.on_test_access();
  const ActivationDump& dt = test_source();
  check_schema(ds, dt, "test");
  r.test_id = dt.dataset_id + "/" + dt.split;

  const auto metrics = evaluate_monitor(monitor, split.id_eval, dt, opt.seed);
  r.test_accuracy = metrics.accuracy;
  r.test_auroc = metrics.auroc;
  r.latency_s = metrics.latency_s;
  r.test_id_samples = metrics.id_samples;
  r.test_ood_samples = metrics.ood_samples;
  for (std::size_t l = 0; l < monitor.config().k(); ++l) {
    const auto& cal = monitor.config().layers[l];
    const auto& store = monitor.stores()[l];
    r.layers.push_back({cal.name(), cal.cfg.p, cal.cfg.pool, cal.bit_len, cal.tau, cal.tau_scaled, cal.val_accuracy,
                        metrics.layer_accuracy[l], store.unique_count(), store.total_count()});
  }
  return r;
}

[[nodiscard]] inline ODTestReport run_odtest(const ActivationDump& ds, const ActivationDump& dv,
                                             const ActivationDump& dt, const ODTestOptions& opt) {
  return run_odtest(ds, dv, [&]() -> const ActivationDump& { return dt; }, opt);
}

}  // namespace napmon
