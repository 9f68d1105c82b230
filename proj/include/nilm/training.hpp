#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nilm/classify.hpp"
#include "nilm/detector.hpp"
#include "nilm/signal_io.hpp"

namespace nilm {

/// Explicit events, implicit non-events and (from round 1 on) collected
/// false positives.
struct TrainingSet {
  std::vector<LabeledSample> samples;
  int round = 0;
  FeatureKind feature = FeatureKind::Cusum;

  std::size_t count(Label label) const;
  std::size_t count(SampleOrigin origin) const;
  std::int64_t next_index() const;
};

struct TrainingConfig {
  ModelConfig model;
  DetectorConfig detector;
  int adaptive_rounds = 0;
  /// Implicit non-events drawn per explicit event.
  double non_event_ratio = 4.0;
};

/// Preset round counts: classical, adaptive, adaptive 3x, adaptive 5x.
inline constexpr int kAdaptivePresets[] = {0, 1, 3, 5};

/// Labels whose full window lies inside one of `areas`.
std::vector<EventLabel> labels_in_areas(const GroundTruth& gt, std::span<const TimeRange> areas, double window_s,
                                        int fs);

/// One Event sample per label whose window fits in `areas`, plus
/// `n_non_events` random non-event windows from the same areas.
TrainingSet build_training_set(const RawRecording& rec, const GroundTruth& gt, int n_non_events, FeatureKind feature,
                               const DetectorConfig& cfg, std::span<const TimeRange> areas);
TrainingSet build_training_set(const RawRecording& rec, const GroundTruth& gt, int n_non_events, FeatureKind feature,
                               const DetectorConfig& cfg);

struct RoundStats {
  int round = 0;
  int train_tp = 0;
  int train_fp = 0;
  std::size_t set_size_event = 0;
  std::size_t set_size_nonevent = 0;
};

struct AdaptiveResult {
  TrainedModel model;  ///< model of the last trained round
  TrainingSet set;     ///< augmented training set of that model
  std::vector<RoundStats> stats;
  /// Model of every trained round (index = round).
  std::vector<TrainedModel> round_models;
  bool converged = false;  ///< a detection pass produced no false positives
};

/// Round 0 trains on `base`. Each further round detects on `areas` with the
/// current model, appends every detection farther than match_tol_s from all
/// labels as an AdaptiveFp non-event, refits normalisation and retrains.
/// Stops early once a pass yields no false positive.
AdaptiveResult adaptive_train(const RawRecording& rec, const RecordingFeatures& features, const GroundTruth& gt,
                              const TrainingSet& base, int rounds, const ModelConfig& model_cfg,
                              const DetectorConfig& cfg, std::span<const TimeRange> areas);
AdaptiveResult adaptive_train(const RawRecording& rec, const GroundTruth& gt, const TrainingSet& base, int rounds,
                              const ModelConfig& model_cfg, const DetectorConfig& cfg);

std::string format_round_stats(std::span<const RoundStats> stats);

}  // namespace nilm
