#include "nilm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "nilm/error.hpp"
#include "nilm/parallel.hpp"

namespace nilm {

MatchResult match_detections(std::span<const double> detection_times, std::span<const double> label_times,
                             double tol_s) {
  // Candidate pairs within tolerance; both inputs are time-sorted, so a
  // sliding lower bound keeps this linear in the number of candidates.
  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  std::size_t lo = 0;
  for (std::size_t d = 0; d < detection_times.size(); ++d) {
    const double t = detection_times[d];
    while (lo < label_times.size() && label_times[lo] < t - tol_s) ++lo;
    for (std::size_t l = lo; l < label_times.size() && label_times[l] <= t + tol_s; ++l) {
      const double dt = std::abs(label_times[l] - t);
      if (dt <= tol_s) candidates.emplace_back(dt, d, l);
    }
  }
  std::sort(candidates.begin(), candidates.end());

  MatchResult m;
  std::vector<char> det_used(detection_times.size(), 0), label_used(label_times.size(), 0);
  for (const auto& [dt, d, l] : candidates) {
    if (det_used[d] || label_used[l]) continue;
    det_used[d] = label_used[l] = 1;
    m.pairs.emplace_back(d, l);
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  m.tp = static_cast<int>(m.pairs.size());
  m.fp = static_cast<int>(detection_times.size()) - m.tp;
  m.fn = static_cast<int>(label_times.size()) - m.tp;
  return m;
}

MatchResult match_detections(std::span<const Detection> detections, const GroundTruth& gt, double tol_s) {
  std::vector<double> det_times;
  det_times.reserve(detections.size());
  for (const auto& d : detections) det_times.push_back(d.time_s);
  const std::vector<double> label_times = gt.times();
  return match_detections(det_times, label_times, tol_s);
}

Scores score(const Counts& c) {
  Scores s;
  if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  else s.precision = c.fn == 0 ? 1.0 : 0.0;
  if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  else s.recall = 1.0;
  const double pr = s.precision + s.recall;
  s.fscore = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
  return s;
}

Scores score(const MatchResult& m) { return score(Counts{m.tp, m.fp, m.fn}); }

std::vector<TimeRange> plan_folds(const GroundTruth& gt, double duration_s, int k) {
  if (k < 2) throw ConfigError("folds", "need at least 2 folds");
  const auto t = gt.times();
  const auto n = static_cast<long>(t.size());
  if (n < k)
    throw DataError("unsatisfiable stratification: " + std::to_string(n) + " labels for " + std::to_string(k) +
                    " folds");
  std::vector<TimeRange> blocks;
  double begin = 0.0;
  long prev_q = 0;
  for (int i = 1; i < k; ++i) {
    long q = (i * n + k / 2) / k;
    q = std::clamp(q, prev_q + 1, n - (k - i));
    const double boundary = (t[static_cast<std::size_t>(q - 1)] + t[static_cast<std::size_t>(q)]) / 2.0;
    if (!(boundary > begin)) throw DataError("unsatisfiable stratification: coincident labels at a fold boundary");
    blocks.push_back({begin, boundary});
    begin = boundary;
    prev_q = q;
  }
  if (!(duration_s > begin)) throw DataError("unsatisfiable stratification: labels beyond the recording");
  blocks.push_back({begin, duration_s});
  return blocks;
}

std::vector<TimeRange> training_areas(const TimeRange& test, double duration_s) {
  std::vector<TimeRange> out;
  if (test.begin_s > 0.0) out.push_back({0.0, test.begin_s});
  if (test.end_s < duration_s) out.push_back({test.end_s, duration_s});
  return out;
}

namespace {

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(fold + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

EvalReport cross_validate(const RawRecording& rec, const GroundTruth& gt, const TrainingConfig& cfg, int k, int jobs) {
  cfg.detector.validate();
  if (cfg.adaptive_rounds < 0) throw ConfigError("adaptive_rounds", "must be >= 0");
  if (!(cfg.non_event_ratio > 0)) throw ConfigError("non_event_ratio", "must be positive");
  const double duration = rec.duration_s();
  const auto blocks = plan_folds(gt, duration, k);
  const RecordingFeatures features(rec, needs_spf(cfg.model.feature), jobs);

  const int fold_jobs = std::min(resolve_jobs(jobs), k);
  const int inner_jobs = fold_jobs > 1 ? 1 : jobs;
  const int rounds = cfg.adaptive_rounds;

  EvalReport report;
  report.folds.resize(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), fold_jobs, [&](std::size_t i) {
    const TimeRange test = blocks[i];
    const auto areas = training_areas(test, duration);

    DetectorConfig dcfg = cfg.detector;
    dcfg.rng_seed = fold_seed(cfg.detector.rng_seed, static_cast<int>(i));
    dcfg.jobs = inner_jobs;
    ModelConfig mcfg = cfg.model;
    mcfg.jobs = inner_jobs;

    const auto train_events = labels_in_areas(gt, areas, dcfg.window_s, rec.fs);
    const auto n_non = static_cast<int>(std::llround(cfg.non_event_ratio * static_cast<double>(train_events.size())));
    const TrainingSet base = build_training_set(rec, gt, n_non, mcfg.feature, dcfg, areas);
    const AdaptiveResult res = adaptive_train(rec, features, gt, base, rounds, mcfg, dcfg, areas);

    GroundTruth test_truth;
    for (const auto& l : gt.labels)
      if (test.contains(l.time_s)) test_truth.labels.push_back(l);

    FoldReport& fr = report.folds[i];
    fr.fold = static_cast<int>(i);
    fr.test = test;
    fr.n_labels = static_cast<int>(test_truth.size());
    fr.training = res.stats;
    fr.converged = res.converged;
    const std::span<const TimeRange> test_area(&test, 1);
    for (std::size_t r = 0; r < res.round_models.size(); ++r) {
      const auto dets = detect(features, res.round_models[r], dcfg, test_area);
      const MatchResult m = match_detections(dets, test_truth, dcfg.match_tol_s);
      fr.round_counts.push_back(Counts{m.tp, m.fp, m.fn});
    }
    while (fr.round_counts.size() < static_cast<std::size_t>(rounds + 1)) fr.round_counts.push_back(fr.round_counts.back());
  });

  report.round_counts.assign(static_cast<std::size_t>(rounds + 1), Counts{});
  for (const auto& f : report.folds)
    for (std::size_t r = 0; r < f.round_counts.size(); ++r) report.round_counts[r] += f.round_counts[r];
  report.counts = report.round_counts.back();
  report.scores = score(report.counts);
  return report;
}

}  // namespace nilm
