#include "nilm/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "nilm/error.hpp"
#include "nilm/parallel.hpp"

namespace nilm {

namespace {

constexpr double kGridSlack = 1e-9;

Eigen::Index window_periods(const DetectorConfig& cfg, int f0) {
  const double w = cfg.window_s * f0;
  const auto periods = static_cast<Eigen::Index>(std::llround(w));
  if (std::abs(w - static_cast<double>(periods)) > 1e-9)
    throw ConfigError("detector.window_s", "window must span a whole number of periods");
  return periods;
}

}  // namespace

void DetectorConfig::validate() const {
  if (step_periods < 1) throw ConfigError("detector.step_periods", "must be >= 1");
  if (!(window_s > 0)) throw ConfigError("detector.window_s", "must be positive");
  if (!(merge_gap_s > 0) || merge_gap_s > window_s)
    throw ConfigError("detector.merge_gap_s", "must lie in (0, window_s]");
  if (!(match_tol_s > 0)) throw ConfigError("detector.match_tol_s", "must be positive");
  if (non_event_min_dist_s < 0) throw ConfigError("detector.non_event_min_dist_s", "must be >= 0");
}

RecordingFeatures::RecordingFeatures(const RawRecording& rec, bool with_spf, int jobs) : fs_(rec.fs), f0_(rec.f0) {
  rec.validate();
  const int n = rec.samples_per_period();
  const Eigen::Index periods = rec.n_periods();
  metrics_.i_rms.resize(periods);
  metrics_.u_rms.resize(periods);
  if (with_spf) metrics_.spf.resize(periods);
  // Chunks of whole periods; every period is computed independently.
  constexpr Eigen::Index kChunk = 4096;
  const auto chunks = static_cast<std::size_t>((periods + kChunk - 1) / kChunk);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const Eigen::Index p0 = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index count = std::min(kChunk, periods - p0);
    const PeriodMetrics m = compute_period_metrics(rec.current.segment(p0 * n, count * n),
                                                   rec.voltage.segment(p0 * n, count * n), n, with_spf);
    metrics_.i_rms.segment(p0, count) = m.i_rms;
    metrics_.u_rms.segment(p0, count) = m.u_rms;
    if (with_spf) metrics_.spf.segment(p0, count) = m.spf;
  });
}

std::vector<WindowVerdict> classify_windows(const RecordingFeatures& features, const TrainedModel& model,
                                            const DetectorConfig& cfg, const TimeRange& area) {
  cfg.validate();
  if (model.f0 != features.f0())
    throw DataError("model was trained for F0=" + std::to_string(model.f0) + " Hz but the recording has F0=" +
                    std::to_string(features.f0()) + " Hz");
  if (needs_spf(model.feature) && !features.has_spf()) throw DataError("spectral flatness was not computed");
  const int f0 = features.f0();
  const Eigen::Index w = window_periods(cfg, f0);
  if (w != model.dim()) throw DataError("model dimension does not match the detector window");

  const double lo = std::max(0.0, area.begin_s);
  const double hi = std::min(features.duration_s(), area.end_s);
  const auto first_period = static_cast<Eigen::Index>(std::ceil(lo * f0 - kGridSlack));
  const auto end_period =
      std::min(features.n_periods(), static_cast<Eigen::Index>(std::floor(hi * f0 + kGridSlack)));
  const Eigen::Index step = cfg.step_periods;

  std::vector<Eigen::Index> starts;
  for (Eigen::Index k = (first_period + step - 1) / step; k * step + w <= end_period; ++k) starts.push_back(k * step);

  std::vector<WindowVerdict> out(starts.size());
  parallel_for(starts.size(), cfg.jobs, [&](std::size_t i) {
    const FeatureVector fv = feature_from_metrics(model.feature, features.metrics(), starts[i], w);
    out[i].center_s = (static_cast<double>(starts[i]) + static_cast<double>(w) / 2.0) / f0;
    out[i].label = predict(model, fv.values);
  });
  return out;
}

std::vector<Detection> merge_positive_windows(std::span<const WindowVerdict> verdicts, double merge_gap_s) {
  std::vector<Detection> out;
  bool open = false;
  Detection cur;
  for (const auto& v : verdicts) {
    if (v.label != Label::Event) continue;
    if (open && v.center_s - cur.last_s < merge_gap_s) {
      cur.last_s = v.center_s;
      ++cur.window_count;
      continue;
    }
    if (open) {
      cur.time_s = (cur.first_s + cur.last_s) / 2.0;
      out.push_back(cur);
    }
    cur = Detection{0.0, v.center_s, v.center_s, 1};
    open = true;
  }
  if (open) {
    cur.time_s = (cur.first_s + cur.last_s) / 2.0;
    out.push_back(cur);
  }
  return out;
}

std::vector<Detection> detect(const RecordingFeatures& features, const TrainedModel& model, const DetectorConfig& cfg,
                              std::span<const TimeRange> areas) {
  std::vector<Detection> out;
  for (const auto& area : areas) {
    const auto verdicts = classify_windows(features, model, cfg, area);
    const auto dets = merge_positive_windows(verdicts, cfg.merge_gap_s);
    out.insert(out.end(), dets.begin(), dets.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.time_s < b.time_s; });
  return out;
}

std::vector<Detection> detect(const RawRecording& rec, const TrainedModel& model, const DetectorConfig& cfg) {
  if (rec.duration_s() < cfg.window_s) throw DataError("recording is shorter than one detector window");
  if (model.f0 != rec.f0)
    throw DataError("model was trained for F0=" + std::to_string(model.f0) + " Hz but the recording has F0=" +
                    std::to_string(rec.f0) + " Hz");
  const RecordingFeatures features(rec, needs_spf(model.feature), cfg.jobs);
  const TimeRange whole{0.0, rec.duration_s()};
  return detect(features, model, cfg, std::span<const TimeRange>(&whole, 1));
}

std::vector<double> sample_non_events(const GroundTruth& gt, int count, const DetectorConfig& cfg,
                                      std::span<const TimeRange> areas, int fs) {
  cfg.validate();
  if (count < 0) throw ConfigError("non_events", "count must be >= 0");
  const double half = cfg.window_s / 2.0;
  // Admissible centre intervals, shrunk by half a sample so rounding to the
  // sample grid cannot push a window outside its area.
  std::vector<TimeRange> admissible;
  double total = 0.0;
  const double eps = 0.5 / fs;
  for (const auto& a : areas) {
    TimeRange r{a.begin_s + half + eps, a.end_s - half - eps};
    if (r.length() > 0) {
      admissible.push_back(r);
      total += r.length();
    }
  }
  std::vector<double> out;
  if (count == 0) return out;
  if (admissible.empty()) throw DataError("no admissible area for non-event sampling");

  const std::vector<double> times = gt.times();
  auto far_from_labels = [&](double t) {
    auto it = std::lower_bound(times.begin(), times.end(), t - cfg.non_event_min_dist_s);
    return it == times.end() || *it - t >= cfg.non_event_min_dist_s;
  };

  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long max_attempts = 1000L * count + 1000L;
  long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > max_attempts)
      throw DataError("admissible non-event area insufficient for " + std::to_string(count) + " samples");
    double u = unit(rng) * total;
    const TimeRange* piece = &admissible.back();
    for (const auto& r : admissible) {
      if (u < r.length()) {
        piece = &r;
        break;
      }
      u -= r.length();
    }
    double t = std::min(piece->begin_s + u, piece->end_s);
    t = std::round(t * fs) / fs;
    if (t < piece->begin_s - eps || t > piece->end_s + eps) continue;
    if (!far_from_labels(t)) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<double> sample_non_events(const RawRecording& rec, const GroundTruth& gt, int count,
                                      const DetectorConfig& cfg) {
  const TimeRange whole{0.0, rec.duration_s()};
  return sample_non_events(gt, count, cfg, std::span<const TimeRange>(&whole, 1), rec.fs);
}

std::string format_detections(std::span<const Detection> detections) {
  std::string out = "time_s,first_s,last_s,window_count\n";
  for (const auto& d : detections) {
    out += format_double(d.time_s) + ',' + format_double(d.first_s) + ',' + format_double(d.last_s) + ',' +
           std::to_string(d.window_count) + '\n';
  }
  return out;
}

std::vector<Detection> parse_detections(std::string_view csv) {
  std::vector<Detection> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("time_s", 0) == 0)) continue;
    Detection d;
    double* fields[] = {&d.time_s, &d.first_s, &d.last_s};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (double* f : fields) {
      const auto r = std::from_chars(p, end, *f);
      if (r.ec != std::errc{} || r.ptr == end || *r.ptr != ',')
        throw DataError("detections line " + std::to_string(line_no) + ": malformed");
      p = r.ptr + 1;
    }
    const auto r = std::from_chars(p, end, d.window_count);
    if (r.ec != std::errc{} || r.ptr != end) throw DataError("detections line " + std::to_string(line_no) + ": malformed");
    out.push_back(d);
  }
  return out;
}

void store_detections(std::span<const Detection> detections, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_detections(detections);
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open detections " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_detections(ss.str());
}

}  // namespace nilm
