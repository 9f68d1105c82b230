// nilm: command-line front end of the event-detection toolkit.
//
//   nilm synth  --duration 7200 --events 100 --nuisance 300 --seed 1 --out data
//   nilm train  --manifest data/recording.json --ground-truth data/ground_truth.csv --out run
//   nilm detect --manifest data/recording.json --model run/model.json --out run
//   nilm eval   --manifest data/recording.json --ground-truth data/ground_truth.csv --model run/model.json
//   nilm xval   --config run/config.json --jobs 4 --out run
//   nilm serve  --data data --port 8080
//   nilm export-annotations --store data/annotations.ndjson --out data
//
// Precedence: flags > --config file > built-in defaults. train, detect, eval
// and xval write the effective config to <out>/config.json.

#include <pthread.h>
#include <signal.h>

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "nilm/annotation.hpp"
#include "nilm/error.hpp"
#include "nilm/eval.hpp"
#include "nilm/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

struct Flags {
  std::string config;
  std::optional<std::string> out;
  std::optional<int> jobs;

  // dataset
  std::optional<std::string> manifest, ground_truth;
  // synth
  std::optional<double> duration;
  std::optional<int> events, nuisance;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> fs, f0;
  std::optional<double> base_load, step_min, step_max, hold_min, noise;
  std::optional<std::string> off_mode, channel;
  // model
  std::optional<std::string> feature, norm, clf;
  std::optional<int> k;
  std::optional<double> c, gamma;
  bool grid = false;
  std::optional<int> adaptive;
  std::optional<double> non_event_ratio;
  // detector
  std::optional<int> step;
  std::optional<double> window, merge_gap, tol;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::optional<std::string> model, detections;
  // serve / export
  std::optional<std::string> data, store, host;
  std::optional<int> port;
};

template <class T, class U>
void set_if(const std::optional<T>& flag, U& target) {
  if (flag) target = *flag;
}

nilm::PipelineConfig effective_config(const Flags& f, bool synth_command) {
  nilm::PipelineConfig cfg = f.config.empty() ? nilm::PipelineConfig{} : nilm::load_config(f.config);
  set_if(f.out, cfg.out);
  set_if(f.jobs, cfg.jobs);

  if (f.manifest) {
    cfg.dataset.synth.reset();
    cfg.dataset.manifest = *f.manifest;
  }
  set_if(f.ground_truth, cfg.dataset.ground_truth);

  const bool synth_flags = f.duration || f.events || f.nuisance || f.synth_seed || f.fs || f.f0 || f.base_load ||
                           f.step_min || f.step_max || f.hold_min || f.noise || f.off_mode || f.channel;
  if (synth_command || synth_flags) {
    if (!cfg.dataset.synth) cfg.dataset.synth = nilm::SynthSpec{};
    nilm::SynthSpec& s = *cfg.dataset.synth;
    set_if(f.duration, s.duration_s);
    set_if(f.events, s.n_true_events);
    set_if(f.nuisance, s.n_nuisance_transients);
    set_if(f.synth_seed, s.seed);
    set_if(f.fs, s.fs);
    set_if(f.f0, s.f0);
    set_if(f.base_load, s.base_load_w);
    set_if(f.step_min, s.event_step_min_w);
    set_if(f.step_max, s.event_step_max_w);
    set_if(f.hold_min, s.event_hold_min_s);
    set_if(f.noise, s.noise_std);
    set_if(f.channel, s.channel_id);
    if (f.off_mode) {
      if (*f.off_mode == "ramp") s.off_mode = nilm::OffMode::Ramp;
      else if (*f.off_mode == "step") s.off_mode = nilm::OffMode::Step;
      else throw nilm::ConfigError("--off-mode", "expected ramp or step");
    }
    cfg.dataset.manifest.clear();
  }

  nilm::ModelConfig& m = cfg.training.model;
  try {
    if (f.feature) m.feature = nilm::parse_feature_kind(*f.feature);
  } catch (const std::exception& e) {
    throw nilm::ConfigError("--feature", e.what());
  }
  try {
    if (f.norm) m.norm = nilm::parse_norm_kind(*f.norm);
  } catch (const std::exception& e) {
    throw nilm::ConfigError("--norm", e.what());
  }
  try {
    if (f.clf) m.classifier = nilm::parse_classifier_kind(*f.clf);
  } catch (const std::exception& e) {
    throw nilm::ConfigError("--clf", e.what());
  }
  set_if(f.k, m.k);
  set_if(f.c, m.c);
  set_if(f.gamma, m.gamma);
  if (f.grid) m.grid = nilm::default_svm_grid();
  set_if(f.adaptive, cfg.training.adaptive_rounds);
  set_if(f.non_event_ratio, cfg.training.non_event_ratio);

  nilm::DetectorConfig& d = cfg.training.detector;
  set_if(f.step, d.step_periods);
  set_if(f.window, d.window_s);
  set_if(f.merge_gap, d.merge_gap_s);
  set_if(f.tol, d.match_tol_s);
  set_if(f.seed, d.rng_seed);
  set_if(f.folds, cfg.folds);
  set_if(f.model, cfg.model);
  set_if(f.detections, cfg.detections);

  set_if(f.data, cfg.serve.data_dir);
  set_if(f.store, cfg.serve.store);
  set_if(f.host, cfg.serve.host);
  set_if(f.port, cfg.serve.port);

  cfg.validate();
  cfg.training.detector.jobs = cfg.jobs;
  cfg.training.model.jobs = cfg.jobs;
  return cfg;
}

nilm::Dataset dataset_with_truth(const nilm::PipelineConfig& cfg) {
  if (!cfg.dataset.is_synthetic() && cfg.dataset.ground_truth.empty())
    throw nilm::ConfigError("dataset.ground_truth", "a ground-truth CSV is required");
  return nilm::load_dataset(cfg.dataset);
}

int cmd_synth(const nilm::PipelineConfig& cfg) {
  const nilm::SynthOutput s = nilm::synth_recording(*cfg.dataset.synth);
  const auto manifest = nilm::store_recording(s.recording, cfg.out, "recording");
  nilm::store_ground_truth(s.ground_truth, cfg.out / "ground_truth.csv");
  std::cout << "wrote " << manifest.string() << " (" << s.recording.size() << " samples, "
            << s.ground_truth.size() << " labels)\n";
  return kOk;
}

int cmd_train(nilm::PipelineConfig cfg) {
  const nilm::Dataset ds = dataset_with_truth(cfg);
  const nilm::TrainingConfig& tc = cfg.training;
  const auto n_events = nilm::labels_in_areas(ds.ground_truth,
                                              std::vector<nilm::TimeRange>{{0.0, ds.recording.duration_s()}},
                                              tc.detector.window_s, ds.recording.fs)
                            .size();
  const int n_non = static_cast<int>(std::llround(tc.non_event_ratio * static_cast<double>(n_events)));
  const nilm::TrainingSet base =
      nilm::build_training_set(ds.recording, ds.ground_truth, n_non, tc.model.feature, tc.detector);
  const nilm::AdaptiveResult res =
      nilm::adaptive_train(ds.recording, ds.ground_truth, base, tc.adaptive_rounds, tc.model, tc.detector);
  nilm::save_model(res.model, cfg.out / "model.json");
  nilm::write_text(cfg.out / "config.json", nilm::config_echo(cfg) + "\n");
  nilm::write_text(cfg.out / "train_report.json", nilm::render_train_report(cfg, res));
  nilm::write_text(cfg.out / "train_rounds.csv", nilm::format_round_stats(res.stats));
  std::cout << "trained on " << res.set.samples.size() << " samples after " << res.round_models.size() - 1
            << " adaptive round(s); model written to " << (cfg.out / "model.json").string() << "\n";
  return kOk;
}

std::vector<nilm::Detection> run_detection(nilm::PipelineConfig& cfg, const nilm::RawRecording& rec) {
  if (cfg.model.empty()) throw nilm::ConfigError("model", "a model file is required");
  const nilm::TrainedModel model = nilm::load_model(cfg.model);
  cfg.training.detector.window_s = model.window_s;
  return nilm::detect(rec, model, cfg.training.detector);
}

int cmd_detect(nilm::PipelineConfig cfg) {
  const nilm::Dataset ds = nilm::load_dataset(cfg.dataset);
  const auto dets = run_detection(cfg, ds.recording);
  nilm::store_detections(dets, cfg.out / "detections.csv");
  nilm::write_text(cfg.out / "config.json", nilm::config_echo(cfg) + "\n");
  nilm::write_text(cfg.out / "detect_report.json", nilm::render_detect_report(cfg, dets));
  std::cout << dets.size() << " detection(s) written to " << (cfg.out / "detections.csv").string() << "\n";
  return kOk;
}

int cmd_eval(nilm::PipelineConfig cfg) {
  const nilm::Dataset ds = dataset_with_truth(cfg);
  std::vector<nilm::Detection> dets;
  if (!cfg.detections.empty()) dets = nilm::load_detections(cfg.detections);
  else dets = run_detection(cfg, ds.recording);
  const nilm::MatchResult m = nilm::match_detections(dets, ds.ground_truth, cfg.training.detector.match_tol_s);
  nilm::write_text(cfg.out / "config.json", nilm::config_echo(cfg) + "\n");
  nilm::write_text(cfg.out / "eval_report.json", nilm::render_eval_report(cfg, m));
  nilm::write_text(cfg.out / "eval_summary.csv", nilm::render_eval_summary(m));
  const nilm::Scores s = nilm::score(m);
  std::cout << "tp=" << m.tp << " fp=" << m.fp << " fn=" << m.fn << " precision=" << s.precision
            << " recall=" << s.recall << " F=" << s.fscore << "\n";
  return kOk;
}

int cmd_xval(const nilm::PipelineConfig& cfg) {
  const nilm::Dataset ds = dataset_with_truth(cfg);
  const nilm::EvalReport r = nilm::cross_validate(ds.recording, ds.ground_truth, cfg.training, cfg.folds, cfg.jobs);
  nilm::write_text(cfg.out / "config.json", nilm::config_echo(cfg) + "\n");
  nilm::write_text(cfg.out / "xval_report.json", nilm::render_xval_report(cfg, r));
  nilm::write_text(cfg.out / "xval_summary.csv", nilm::render_xval_summary(r));
  std::cout << "pooled tp=" << r.counts.tp << " fp=" << r.counts.fp << " fn=" << r.counts.fn
            << " precision=" << r.scores.precision << " recall=" << r.scores.recall << " F=" << r.scores.fscore
            << "\n";
  return kOk;
}

int cmd_serve(const nilm::PipelineConfig& cfg) {
  if (cfg.serve.data_dir.empty()) throw nilm::ConfigError("serve.data_dir", "a dataset directory is required");
  const auto store = cfg.serve.store.empty() ? cfg.serve.data_dir / "annotations.ndjson" : cfg.serve.store;

  // Block termination signals in every thread; a dedicated thread waits for
  // them and stops the server.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  nilm::AnnotationServer server(nilm::load_channels(cfg.serve.data_dir), store);
  const int port = server.bind(cfg.serve.host, cfg.serve.port);
  std::cout << "listening on http://" << cfg.serve.host << ":" << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

int cmd_export(const nilm::PipelineConfig& cfg) {
  if (cfg.serve.store.empty()) throw nilm::ConfigError("serve.store", "an annotation store is required");
  const auto records = nilm::AnnotationStore::replay(cfg.serve.store);
  nilm::store_ground_truth(nilm::to_ground_truth(records), cfg.out / "ground_truth.csv");
  std::cout << records.size() << " annotation(s) exported to " << (cfg.out / "ground_truth.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised appliance event detection"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--jobs", f.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };
  auto dataset = [&](CLI::App* sub) {
    sub->add_option("--manifest", f.manifest, "recording manifest");
    sub->add_option("--ground-truth", f.ground_truth, "ground-truth CSV");
  };
  auto synth = [&](CLI::App* sub) {
    sub->add_option("--duration", f.duration, "seconds")->check(CLI::PositiveNumber);
    sub->add_option("--events", f.events, "true (labelled) events")->check(CLI::NonNegativeNumber);
    sub->add_option("--nuisance", f.nuisance, "unlabelled SMPS-like transients")->check(CLI::NonNegativeNumber);
    sub->add_option("--synth-seed", f.synth_seed, "generator seed");
    sub->add_option("--fs", f.fs, "sampling rate, Hz")->check(CLI::PositiveNumber);
    sub->add_option("--f0", f.f0, "mains frequency, Hz")->check(CLI::PositiveNumber);
    sub->add_option("--base-load", f.base_load, "W");
    sub->add_option("--step-min", f.step_min, "minimum event step, W");
    sub->add_option("--step-max", f.step_max, "maximum event step, W");
    sub->add_option("--hold-min", f.hold_min, "minimum hold after an event, s");
    sub->add_option("--noise", f.noise, "current noise std, W-equivalent");
    sub->add_option("--off-mode", f.off_mode, "ramp | step");
    sub->add_option("--channel", f.channel, "channel id");
  };
  auto model = [&](CLI::App* sub) {
    sub->add_option("--feature", f.feature, "current | delta-current | admittance | spf | cusum | delta-cusum");
    sub->add_option("--norm", f.norm, "none | minmax | variance");
    sub->add_option("--clf", f.clf, "knn | svm");
    sub->add_option("--k", f.k, "KNN neighbours")->check(CLI::PositiveNumber);
    sub->add_option("--c", f.c, "SVM C")->check(CLI::PositiveNumber);
    sub->add_option("--gamma", f.gamma, "SVM RBF gamma")->check(CLI::PositiveNumber);
    sub->add_flag("--grid", f.grid, "grid-search C and gamma");
    sub->add_option("--adaptive", f.adaptive, "adaptive training rounds")->check(CLI::NonNegativeNumber);
    sub->add_option("--non-event-ratio", f.non_event_ratio, "random non-events per event")
        ->check(CLI::PositiveNumber);
  };
  auto detector = [&](CLI::App* sub) {
    sub->add_option("--step", f.step, "detector step in periods")->check(CLI::PositiveNumber);
    sub->add_option("--window", f.window, "window length, s")->check(CLI::PositiveNumber);
    sub->add_option("--merge-gap", f.merge_gap, "merge gap, s")->check(CLI::PositiveNumber);
    sub->add_option("--tol", f.tol, "matching tolerance, s")->check(CLI::PositiveNumber);
    sub->add_option("--seed", f.seed, "non-event sampling seed");
  };

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic recording and its ground truth");
  common(synth_cmd);
  synth(synth_cmd);
  // `--seed` on synth is the generator seed.
  synth_cmd->add_option("--seed", f.synth_seed, "generator seed");

  auto* train_cmd = app.add_subcommand("train", "train a model on a labelled recording");
  auto* detect_cmd = app.add_subcommand("detect", "detect events with a trained model");
  auto* eval_cmd = app.add_subcommand("eval", "score detections against ground truth");
  auto* xval_cmd = app.add_subcommand("xval", "time-block k-fold cross-validation");
  for (auto* sub : {train_cmd, detect_cmd, eval_cmd, xval_cmd}) {
    common(sub);
    dataset(sub);
    synth(sub);
    model(sub);
    detector(sub);
  }
  for (auto* sub : {detect_cmd, eval_cmd}) sub->add_option("--model", f.model, "model file");
  eval_cmd->add_option("--detections", f.detections, "detections CSV (instead of --model)");
  xval_cmd->add_option("--folds", f.folds, "number of folds")->check(CLI::Range(2, 1000));

  auto* serve_cmd = app.add_subcommand("serve", "run the annotation service");
  common(serve_cmd);
  serve_cmd->add_option("--data", f.data, "dataset directory");
  serve_cmd->add_option("--store", f.store, "annotation log (default <data>/annotations.ndjson)");
  serve_cmd->add_option("--host", f.host, "bind address");
  serve_cmd->add_option("--port", f.port, "port (0 = any free port)")->check(CLI::Range(0, 65535));

  auto* export_cmd = app.add_subcommand("export-annotations", "write the annotation log as ground-truth CSV");
  common(export_cmd);
  export_cmd->add_option("--store", f.store, "annotation log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(effective_config(f, true));
    const nilm::PipelineConfig cfg = effective_config(f, false);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (detect_cmd->parsed()) return cmd_detect(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg);
    if (xval_cmd->parsed()) return cmd_xval(cfg);
    if (serve_cmd->parsed()) return cmd_serve(cfg);
    if (export_cmd->parsed()) return cmd_export(cfg);
  } catch (const nilm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const nilm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const nilm::ConflictError& e) {
    std::cerr << "conflict: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
