// napmon: command-line front end for the activation-pattern OOD monitor.
//
// Exit codes: 0 success (query: in-distribution), 1 error, 2 query verdict OOD.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "napmon/napmon.hpp"

namespace fs = std::filesystem;
using namespace napmon;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitOod = 2;

struct CalibrateArgs {
  std::string train, valid, out;
  std::size_t k = 3;
  int scheme = 1;
  std::string criterion = "hybrid";
  std::string mode = "per-pattern";
  std::vector<double> p_grid;
  std::vector<std::string> layers;
  bool joint = false;
};

CalibrationOptions calibration_options(const CalibrateArgs& a) {
  CalibrationOptions opt;
  opt.k = a.k;
  opt.scheme = parse_vote_scheme(a.scheme);
  opt.grid.criterion = parse_criterion(a.criterion);
  opt.grid.mode = parse_threshold_mode(a.mode);
  opt.grid.joint = a.joint;
  if (!a.p_grid.empty()) opt.grid.p_grid = a.p_grid;
  opt.layers = a.layers;
  return opt;
}

void add_calibration_flags(CLI::App* cmd, CalibrateArgs& a) {
  cmd->add_option("--k", a.k, "number of monitored layers")->capture_default_str();
  cmd->add_option("--scheme", a.scheme, "vote scheme: 1 = summed score, 2 = majority vote")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  cmd->add_option("--criterion", a.criterion, "per-layer selection criterion")
      ->check(CLI::IsMember({"accuracy", "threshold", "hybrid"}))
      ->capture_default_str();
  cmd->add_option("--mode", a.mode, "binarization threshold mode")
      ->check(CLI::IsMember({"per-pattern", "per-position"}))
      ->capture_default_str();
  cmd->add_option("--p-grid", a.p_grid, "percentiles to search (default 0,10,...,90,95,99)")->delimiter(',');
  cmd->add_option("--layers", a.layers, "restrict calibration to these layers (network order)")->delimiter(',');
  cmd->add_flag("--joint", a.joint, "rank all (p, pool) cells jointly instead of p first");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path + "'");
  out << text;
}

std::string render_report(const ODTestReport& r, const std::string& format) {
  if (format == "table") return io::format_report(r);
  return io::to_json(r).dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-distribution monitor based on binary neuron activation patterns"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for every randomized step")->capture_default_str();
  app.fallthrough();

  // extract
  std::string ex_dump, ex_layer, ex_pool = "max", ex_mode = "per-pattern", ex_out;
  double ex_p = 50.0;
  auto* extract = app.add_subcommand("extract", "binarize one layer of a dump into a NAPS pattern store");
  extract->add_option("--dump", ex_dump, "activation dump directory")->required();
  extract->add_option("--layer", ex_layer, "layer name")->required();
  extract->add_option("--p", ex_p, "percentile in [0, 100]")->check(CLI::Range(0.0, 100.0))->capture_default_str();
  extract->add_option("--pool", ex_pool, "channel pooling")->check(CLI::IsMember({"max", "avg"}))->capture_default_str();
  extract->add_option("--mode", ex_mode, "threshold mode")
      ->check(CLI::IsMember({"per-pattern", "per-position"}))
      ->capture_default_str();
  extract->add_option("--out", ex_out, "output .naps file")->required();

  // calibrate
  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "auto-configure a monitor on training and validation-OOD dumps");
  calibrate->add_option("--train", cal.train, "in-distribution training dump")->required();
  calibrate->add_option("--valid", cal.valid, "OOD validation dump")->required();
  calibrate->add_option("--out", cal.out, "monitor bundle directory")->required();
  add_calibration_flags(calibrate, cal);

  // evaluate
  std::string ev_monitor, ev_test, ev_id, ev_report, ev_format = "json";
  auto* evaluate = app.add_subcommand("evaluate", "balanced accuracy and AUROC of a monitor on ID vs OOD dumps");
  evaluate->add_option("--monitor", ev_monitor, "monitor bundle directory")->required();
  evaluate->add_option("--test", ev_test, "OOD test dump")->required();
  evaluate->add_option("--id-eval", ev_id, "held-out in-distribution dump")->required();
  evaluate->add_option("--report", ev_report, "report path ('-' for stdout)")->capture_default_str();
  evaluate->add_option("--format", ev_format, "report format")->check(CLI::IsMember({"json", "table"}));

  // query
  std::string q_monitor, q_sample;
  std::size_t q_index = 0;
  auto* query = app.add_subcommand("query", "judge one sample; exit 0 = ID, 2 = OOD");
  query->add_option("--monitor", q_monitor, "monitor bundle directory")->required();
  query->add_option("--sample", q_sample, "sample JSON file or dump directory")->required();
  query->add_option("--index", q_index, "sample index when --sample is a dump")->capture_default_str();

  // bench
  std::vector<std::size_t> b_sizes{100000}, b_bits{1024};
  std::size_t b_queries = 1000, b_layers = 0;
  auto* bench = app.add_subcommand("bench", "query latency on random stores (CSV)");
  bench->add_option("--sizes", b_sizes, "store sizes")->delimiter(',');
  bench->add_option("--bits", b_bits, "pattern bit lengths")->delimiter(',');
  bench->add_option("--queries", b_queries, "queries per configuration")->capture_default_str();
  bench->add_option("--judge-layers", b_layers, "also time a full judge over this many layers")->capture_default_str();

  // synth
  std::string s_spec, s_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic train/valid/test dump triplet");
  synth->add_option("--spec", s_spec, "synthetic spec JSON (default: built-in reference spec)");
  synth->add_option("--out", s_out, "output directory (required unless --print-spec)");
  synth->add_flag("--print-spec", "print the effective spec and exit");

  // odtest
  CalibrateArgs od;
  std::string od_test, od_report, od_format = "json";
  auto* odtest = app.add_subcommand("odtest", "full three-dataset protocol: calibrate, freeze, test");
  odtest->add_option("--train", od.train, "in-distribution dump (split 80/20 into train and ID-eval)")->required();
  odtest->add_option("--valid", od.valid, "OOD validation dump")->required();
  odtest->add_option("--test", od_test, "OOD test dump")->required();
  odtest->add_option("--report", od_report, "report path ('-' for stdout)");
  odtest->add_option("--format", od_format, "report format")->check(CLI::IsMember({"json", "table"}));
  add_calibration_flags(odtest, od);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*extract) {
      const auto dump = io::read_dump(ex_dump);
      const auto& spec = dump.layer(ex_layer).spec;
      const auto cfg = fit_thresholds(dump, spec, ex_p, parse_pool_type(ex_pool), parse_threshold_mode(ex_mode));
      const auto patterns = extract_all(dump, spec, cfg);
      const auto store = build_store(patterns, spec.name);
      io::save_store(ex_out, store);
      io::save_extraction_config(fs::path(ex_out).concat(".json"), spec, cfg);
      std::cout << "layer " << spec.name << ": " << store.total_count() << " patterns, " << store.unique_count()
                << " unique, " << store.bit_len() << " bits -> " << ex_out << '\n';
      return kExitOk;
    }
    if (*calibrate) {
      const auto train = io::read_dump(cal.train);
      const auto valid = io::read_dump(cal.valid);
      const auto result = calibrate_monitor(train, valid, calibration_options(cal));
      io::save_monitor(cal.out, result.monitor);
      for (const auto& l : result.monitor.config().layers) {
        std::printf("%-20s p=%5.1f pool=%s tau=%zu/%zu val_acc=%.4f\n", l.name().c_str(), l.cfg.p,
                    std::string(to_string(l.cfg.pool)).c_str(), l.tau, l.bit_len, l.val_accuracy);
      }
      return kExitOk;
    }
    if (*evaluate) {
      const auto monitor = io::load_monitor(ev_monitor);
      const auto id_eval = io::read_dump(ev_id);
      const auto test = io::read_dump(ev_test);
      const auto m = evaluate_monitor(monitor, id_eval, test, seed);
      ODTestReport r;
      r.train_id = "(monitor " + ev_monitor + ")";
      r.valid_id = "(frozen)";
      r.test_id = test.dataset_id + "/" + test.split;
      r.scheme = monitor.config().scheme;
      r.k = monitor.config().k();
      double val = 0.0;
      for (const auto& l : monitor.config().layers) val += l.val_accuracy;
      r.val_accuracy = val / static_cast<double>(r.k);
      r.test_accuracy = m.accuracy;
      r.test_auroc = m.auroc;
      r.latency_s = m.latency_s;
      r.id_eval_samples = id_eval.sample_count();
      r.test_id_samples = m.id_samples;
      r.test_ood_samples = m.ood_samples;
      for (std::size_t l = 0; l < r.k; ++l) {
        const auto& c = monitor.config().layers[l];
        const auto& s = monitor.stores()[l];
        r.layers.push_back({c.name(), c.cfg.p, c.cfg.pool, c.bit_len, c.tau, c.tau_scaled, c.val_accuracy,
                            m.layer_accuracy[l], s.unique_count(), s.total_count()});
      }
      write_text(ev_report, render_report(r, ev_format));
      return kExitOk;
    }
    if (*query) {
      const auto monitor = io::load_monitor(q_monitor);
      Verdict v;
      if (fs::is_directory(q_sample)) {
        const auto dump = io::read_dump(q_sample);
        v = monitor.judge(dump, q_index);
      } else {
        const auto sample = io::read_sample_file(q_sample);
        v = monitor.judge(sample.view());
      }
      std::cout << io::to_json(v).dump() << '\n';
      return v.is_ood ? kExitOod : kExitOk;
    }
    if (*bench) {
      std::cout << "kind,size,bits,layers,mean_s,p99_s\n";
      for (const auto& row : bench_latency(b_sizes, b_bits, b_queries, b_layers, seed)) {
        std::printf("%s,%zu,%zu,%zu,%.9g,%.9g\n", row.kind.c_str(), row.size, row.bits, row.layers, row.mean_s,
                    row.p99_s);
      }
      return kExitOk;
    }
    if (*synth) {
      auto spec = s_spec.empty() ? reference_synthetic_spec() : io::read_synthetic_spec(s_spec);
      if (app.get_option("--seed")->count() > 0) spec.seed = seed;
      if (synth->count("--print-spec") > 0) {
        std::cout << io::to_json(spec).dump(2) << '\n';
        return kExitOk;
      }
      if (s_out.empty()) throw Error(ErrorKind::invalid_argument, "synth needs --out");
      const auto t = synth_generate(spec);
      io::write_dump(fs::path(s_out) / "train", t.train);
      io::write_dump(fs::path(s_out) / "valid", t.valid);
      io::write_dump(fs::path(s_out) / "test", t.test);
      std::cout << "wrote " << s_out << "/{train,valid,test}\n";
      return kExitOk;
    }
    if (*odtest) {
      const auto train = io::read_dump(od.train);
      const auto valid = io::read_dump(od.valid);
      std::optional<ActivationDump> test;
      ODTestOptions opt;
      opt.calibration = calibration_options(od);
      opt.seed = seed;
      const auto report = run_odtest(
          train, valid,
          [&]() -> const ActivationDump& {
            test = io::read_dump(od_test);
            return *test;
          },
          opt);
      write_text(od_report, render_report(report, od_format));
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "napmon: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
