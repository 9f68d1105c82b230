#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nilm/detector.hpp"
#include "nilm/eval.hpp"
#include "nilm/signal_io.hpp"
#include "nilm/synth.hpp"
#include "nilm/training.hpp"

namespace nilm {

/// Either a stored recording (manifest + ground truth) or a synthetic one.
struct DatasetConfig {
  std::filesystem::path manifest;
  std::filesystem::path ground_truth;
  std::optional<SynthSpec> synth;

  bool is_synthetic() const { return synth.has_value(); }
};

struct ServeConfig {
  std::filesystem::path data_dir;
  std::filesystem::path store;  ///< empty: <data_dir>/annotations.ndjson
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Effective configuration of one CLI run. `jobs` and `out` never change
/// results and are left out of the echo.
struct PipelineConfig {
  DatasetConfig dataset;
  TrainingConfig training;
  int folds = 5;
  std::filesystem::path model;       ///< model file for detect / eval
  std::filesystem::path detections;  ///< detections CSV for eval
  ServeConfig serve;
  std::filesystem::path out = ".";
  int jobs = 1;

  /// Throws ConfigError with the offending field path.
  void validate() const;
};

/// Parses the JSON config. Unknown keys and wrong types are ConfigErrors
/// naming the field path (e.g. "detector.step_periods").
PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

/// JSON echo accepted by parse_config; reproduces the run.
std::string config_echo(const PipelineConfig& cfg);

SynthSpec parse_synth_spec(std::string_view json_text);

struct Dataset {
  RawRecording recording;
  GroundTruth ground_truth;
};

/// Loads or synthesises the configured recording.
Dataset load_dataset(const DatasetConfig& cfg);

/// Report of a whole-recording training run.
std::string render_train_report(const PipelineConfig& cfg, const AdaptiveResult& result);

std::string render_detect_report(const PipelineConfig& cfg, std::span<const Detection> detections);

/// Scores of detections against a ground truth.
std::string render_eval_report(const PipelineConfig& cfg, const MatchResult& match);
std::string render_eval_summary(const MatchResult& match);

/// Full cross-validation report: config echo, folds, per-round stats.
std::string render_xval_report(const PipelineConfig& cfg, const EvalReport& report);
/// CSV `scope,round,tp,fp,fn,precision,recall,fscore`.
std::string render_xval_summary(const EvalReport& report);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace nilm
