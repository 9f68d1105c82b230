#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nilm/classify.hpp"
#include "nilm/features.hpp"
#include "nilm/signal_io.hpp"

namespace nilm {

struct DetectorConfig {
  int step_periods = 30;
  double window_s = 10.0;
  double merge_gap_s = 5.0;
  double match_tol_s = 1.0;
  double non_event_min_dist_s = 10.0;
  std::uint64_t rng_seed = 1;
  int jobs = 1;  ///< worker count for window classification (not part of results)

  void validate() const;
};

/// A merged run of positive windows.
struct Detection {
  double time_s = 0.0;   ///< temporal centre of the run
  double first_s = 0.0;  ///< centre of the first positive window
  double last_s = 0.0;   ///< centre of the last positive window
  int window_count = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct WindowVerdict {
  double center_s = 0.0;
  Label label = Label::NonEvent;
};

/// Per-period metrics of a whole recording. Windows on the period grid are
/// sliced from here; the values equal those of extract_feature on the same
/// samples.
class RecordingFeatures {
 public:
  RecordingFeatures(const RawRecording& rec, bool with_spf, int jobs = 1);

  const PeriodMetrics& metrics() const { return metrics_; }
  int fs() const { return fs_; }
  int f0() const { return f0_; }
  Eigen::Index n_periods() const { return metrics_.i_rms.size(); }
  double duration_s() const { return static_cast<double>(n_periods()) / f0_; }
  bool has_spf() const { return metrics_.spf.size() == metrics_.i_rms.size(); }

 private:
  PeriodMetrics metrics_;
  int fs_ = 0;
  int f0_ = 0;
};

/// Classifies every grid window (start at k * step_periods periods) that lies
/// entirely inside `area`.
std::vector<WindowVerdict> classify_windows(const RecordingFeatures& features, const TrainedModel& model,
                                            const DetectorConfig& cfg, const TimeRange& area);

/// Collapses positive windows whose successive gaps are below `merge_gap_s`.
std::vector<Detection> merge_positive_windows(std::span<const WindowVerdict> verdicts, double merge_gap_s);

std::vector<Detection> detect(const RecordingFeatures& features, const TrainedModel& model, const DetectorConfig& cfg,
                              std::span<const TimeRange> areas);
std::vector<Detection> detect(const RawRecording& rec, const TrainedModel& model, const DetectorConfig& cfg);

/// Random window centres inside `areas`, at least window_s/2 from the area
/// edges and non_event_min_dist_s from every label. Deterministic per seed.
std::vector<double> sample_non_events(const GroundTruth& gt, int count, const DetectorConfig& cfg,
                                      std::span<const TimeRange> areas, int fs);
std::vector<double> sample_non_events(const RawRecording& rec, const GroundTruth& gt, int count,
                                      const DetectorConfig& cfg);

std::string format_detections(std::span<const Detection> detections);
std::vector<Detection> parse_detections(std::string_view csv);
void store_detections(std::span<const Detection> detections, const std::filesystem::path& path);
std::vector<Detection> load_detections(const std::filesystem::path& path);

}  // namespace nilm
