#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "nilm/detector.hpp"
#include "nilm/signal_io.hpp"
#include "nilm/training.hpp"

namespace nilm {

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  /// (detection index, label index) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Greedy one-to-one matching: repeatedly pairs the globally closest
/// unpaired (detection, label) with |dt| <= tol_s.
MatchResult match_detections(std::span<const double> detection_times, std::span<const double> label_times,
                             double tol_s);
MatchResult match_detections(std::span<const Detection> detections, const GroundTruth& gt, double tol_s);

struct Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
};

Scores score(const Counts& c);
Scores score(const MatchResult& m);

/// Test-area results of one cross-validation fold.
struct FoldReport {
  int fold = 0;
  TimeRange test;
  int n_labels = 0;
  /// Test-area counts for the model of every round 0..R (rounds after an
  /// early stop repeat the last trained model).
  std::vector<Counts> round_counts;
  std::vector<RoundStats> training;
  bool converged = false;
};

struct EvalReport {
  std::vector<FoldReport> folds;
  /// Pooled (summed) counts per round.
  std::vector<Counts> round_counts;
  Counts counts;  ///< final round, pooled
  Scores scores;  ///< micro-averaged over folds
};

/// k contiguous blocks covering [0, duration). Inner boundaries sit at the
/// midpoint of the label gap closest to each i/k count quantile, so every
/// block holds about n/k labels. Throws when some block would be empty.
std::vector<TimeRange> plan_folds(const GroundTruth& gt, double duration_s, int k);

/// Everything outside `test`, as up to two pieces.
std::vector<TimeRange> training_areas(const TimeRange& test, double duration_s);

/// Time-block k-fold cross-validation of the full pipeline.
EvalReport cross_validate(const RawRecording& rec, const GroundTruth& gt, const TrainingConfig& cfg, int k,
                          int jobs = 1);

}  // namespace nilm
