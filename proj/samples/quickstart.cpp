// Calibrate a monitor on a small synthetic triplet and judge a few samples.

#include <cstdio>

#include "napmon/napmon.hpp"

int main() {
  auto spec = napmon::reference_synthetic_spec();
  spec.train_samples = 400;
  spec.valid_samples = 100;
  spec.test_samples = 100;
  const auto data = napmon::synth_generate(spec);

  napmon::CalibrationOptions opt;
  opt.k = 3;
  opt.scheme = napmon::VoteScheme::scheme1;
  const auto result = napmon::calibrate_monitor(data.train, data.valid, opt);
  const auto& monitor = result.monitor;

  for (const auto& l : monitor.config().layers) {
    std::printf("%-8s p=%4.0f pool=%s tau=%zu/%zu val_acc=%.3f\n", l.name().c_str(), l.cfg.p,
                napmon::to_string(l.cfg.pool).data(), l.tau, l.bit_len, l.val_accuracy);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const auto v = monitor.judge(data.test, i);
    std::printf("test sample %zu: score %+.4f -> %s\n", i, *v.score, v.is_ood ? "OOD" : "ID");
  }
  return 0;
}
