#include "nilm/training.hpp"

#include <algorithm>
#include <cmath>

#include "nilm/error.hpp"
#include "nilm/eval.hpp"

namespace nilm {

std::size_t TrainingSet::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [label](const LabeledSample& s) { return s.label == label; }));
}

std::size_t TrainingSet::count(SampleOrigin origin) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [origin](const LabeledSample& s) { return s.origin == origin; }));
}

std::int64_t TrainingSet::next_index() const {
  std::int64_t next = 0;
  for (const auto& s : samples) next = std::max(next, s.sample_index + 1);
  return next;
}

std::vector<EventLabel> labels_in_areas(const GroundTruth& gt, std::span<const TimeRange> areas, double window_s,
                                        int fs) {
  std::vector<EventLabel> out;
  const double window = std::llround(window_s * fs) / static_cast<double>(fs);
  for (const auto& l : gt.labels) {
    const double start = static_cast<double>(segment_start_sample(fs, l.time_s, window_s)) / fs;
    for (const auto& a : areas) {
      if (start >= a.begin_s && start + window <= a.end_s) {
        out.push_back(l);
        break;
      }
    }
  }
  return out;
}

TrainingSet build_training_set(const RawRecording& rec, const GroundTruth& gt, int n_non_events, FeatureKind feature,
                               const DetectorConfig& cfg, std::span<const TimeRange> areas) {
  cfg.validate();
  const auto events = labels_in_areas(gt, areas, cfg.window_s, rec.fs);
  if (events.empty()) throw DataError("no ground-truth events in the training area");

  TrainingSet set;
  set.feature = feature;
  std::int64_t index = 0;
  for (const auto& l : events) {
    LabeledSample s;
    s.feature = extract_feature(slice_segment(rec, l.time_s, cfg.window_s), feature);
    s.label = Label::Event;
    s.origin = SampleOrigin::GroundTruthEvent;
    s.sample_index = index++;
    s.center_s = l.time_s;
    set.samples.push_back(std::move(s));
  }
  for (double t : sample_non_events(gt, n_non_events, cfg, areas, rec.fs)) {
    LabeledSample s;
    s.feature = extract_feature(slice_segment(rec, t, cfg.window_s), feature);
    s.label = Label::NonEvent;
    s.origin = SampleOrigin::RandomNonEvent;
    s.sample_index = index++;
    s.center_s = t;
    set.samples.push_back(std::move(s));
  }
  return set;
}

TrainingSet build_training_set(const RawRecording& rec, const GroundTruth& gt, int n_non_events, FeatureKind feature,
                               const DetectorConfig& cfg) {
  const TimeRange whole{0.0, rec.duration_s()};
  return build_training_set(rec, gt, n_non_events, feature, cfg, std::span<const TimeRange>(&whole, 1));
}

namespace {

GroundTruth labels_inside(const GroundTruth& gt, std::span<const TimeRange> areas) {
  GroundTruth out;
  for (const auto& l : gt.labels)
    for (const auto& a : areas)
      if (a.contains(l.time_s)) {
        out.labels.push_back(l);
        break;
      }
  return out;
}

}  // namespace

AdaptiveResult adaptive_train(const RawRecording& rec, const RecordingFeatures& features, const GroundTruth& gt,
                              const TrainingSet& base, int rounds, const ModelConfig& model_cfg,
                              const DetectorConfig& cfg, std::span<const TimeRange> areas) {
  if (rounds < 0) throw ConfigError("adaptive_rounds", "must be >= 0");
  if (base.count(Label::Event) == 0 || base.count(Label::NonEvent) == 0)
    throw DataError("training set needs both classes");
  if (base.count(SampleOrigin::AdaptiveFp) != 0) throw DataError("base training set already holds adaptive samples");

  const GroundTruth area_truth = labels_inside(gt, areas);
  const std::vector<double> all_times = gt.times();
  auto near_label = [&](double t) {
    auto it = std::lower_bound(all_times.begin(), all_times.end(), t - cfg.match_tol_s);
    return it != all_times.end() && *it - t <= cfg.match_tol_s;
  };

  AdaptiveResult res;
  res.set = base;
  res.set.round = 0;
  res.model = train_model(res.set.samples, model_cfg, rec.fs, rec.f0, cfg.window_s);
  res.round_models.push_back(res.model);

  auto record = [&](int round, const std::vector<Detection>& dets) {
    RoundStats st;
    st.round = round;
    const MatchResult m = match_detections(dets, area_truth, cfg.match_tol_s);
    st.train_tp = m.tp;
    st.train_fp = m.fp;
    st.set_size_event = res.set.count(Label::Event);
    st.set_size_nonevent = res.set.count(Label::NonEvent);
    res.stats.push_back(st);
  };

  for (int round = 1; round <= rounds; ++round) {
    const auto dets = detect(features, res.model, cfg, areas);
    record(round - 1, dets);

    std::int64_t index = res.set.next_index();
    std::size_t added = 0;
    for (const auto& d : dets) {
      if (near_label(d.time_s)) continue;
      LabeledSample s;
      s.feature = extract_feature(slice_segment(rec, d.time_s, cfg.window_s), model_cfg.feature);
      s.label = Label::NonEvent;
      s.origin = SampleOrigin::AdaptiveFp;
      s.sample_index = index++;
      s.center_s = d.time_s;
      res.set.samples.push_back(std::move(s));
      ++added;
    }
    if (added == 0) {
      res.converged = true;
      return res;
    }
    res.set.round = round;
    res.model = train_model(res.set.samples, model_cfg, rec.fs, rec.f0, cfg.window_s);
    res.round_models.push_back(res.model);
  }
  record(res.set.round, detect(features, res.model, cfg, areas));
  return res;
}

AdaptiveResult adaptive_train(const RawRecording& rec, const GroundTruth& gt, const TrainingSet& base, int rounds,
                              const ModelConfig& model_cfg, const DetectorConfig& cfg) {
  const RecordingFeatures features(rec, needs_spf(model_cfg.feature), cfg.jobs);
  const TimeRange whole{0.0, rec.duration_s()};
  return adaptive_train(rec, features, gt, base, rounds, model_cfg, cfg, std::span<const TimeRange>(&whole, 1));
}

std::string format_round_stats(std::span<const RoundStats> stats) {
  std::string out = "round,train_tp,train_fp,set_size_event,set_size_nonevent\n";
  for (const auto& s : stats) {
    out += std::to_string(s.round) + ',' + std::to_string(s.train_tp) + ',' + std::to_string(s.train_fp) + ',' +
           std::to_string(s.set_size_event) + ',' + std::to_string(s.set_size_nonevent) + '\n';
  }
  return out;
}

}  // namespace nilm
