#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace nilm {

/// Samples are stored as float32, matching the on-disk payload.
using SampleVector = Eigen::VectorXf;

/// A two-channel (voltage, current) recording of one measurement point.
struct RawRecording {
  int fs = 0;  ///< sampling rate in Hz
  int f0 = 0;  ///< mains frequency in Hz
  SampleVector voltage;
  SampleVector current;
  double start_time = 0.0;  ///< epoch seconds of the first sample
  std::string channel_id;

  int samples_per_period() const { return fs / f0; }
  Eigen::Index size() const { return current.size(); }
  Eigen::Index n_periods() const { return size() / samples_per_period(); }
  double duration_s() const { return static_cast<double>(size()) / fs; }

  /// Throws DataError when the channel lengths differ or fs is not a
  /// multiple of f0.
  void validate() const;
};

enum class EventKind { On, Off };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view token);

struct EventLabel {
  double time_s = 0.0;
  std::string channel_id;
  std::string appliance;
  EventKind kind = EventKind::On;

  friend bool operator==(const EventLabel&, const EventLabel&) = default;
};

/// Time-sorted list of event labels.
struct GroundTruth {
  std::vector<EventLabel> labels;

  bool empty() const { return labels.empty(); }
  std::size_t size() const { return labels.size(); }

  /// Label times in ascending order.
  std::vector<double> times() const;

  /// Sorts by (time_s, channel_id) and rejects exact duplicates.
  void normalize();

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Half-open time interval [begin_s, end_s) in seconds from recording start.
struct TimeRange {
  double begin_s = 0.0;
  double end_s = 0.0;

  double length() const { return end_s - begin_s; }
  bool contains(double t) const { return t >= begin_s && t < end_s; }
  bool covers(double lo, double hi) const { return lo >= begin_s && hi <= end_s; }

  friend bool operator==(const TimeRange&, const TimeRange&) = default;
};

/// Window of raw samples around an event candidate.
struct WaveformSegment {
  SampleVector voltage;
  SampleVector current;
  int fs = 0;
  int f0 = 0;
  double center_s = 0.0;

  int samples_per_period() const { return fs / f0; }
  Eigen::Index n_periods() const { return current.size() / samples_per_period(); }
};

/// Recording manifest (structured text) plus little-endian float32
/// channel-interleaved payload.
struct Manifest {
  int fs = 0;
  int f0 = 0;
  std::string encoding = "f32le";
  std::vector<std::string> channels{"voltage", "current"};
  double start_time = 0.0;
  std::string channel_id;
  std::string payload;  ///< payload file name, relative to the manifest
};

Manifest read_manifest(const std::filesystem::path& manifest);

/// Loads a recording. `payload` may be empty, in which case the manifest's
/// payload entry (resolved next to the manifest) is used.
RawRecording load_recording(const std::filesystem::path& payload,
                            const std::filesystem::path& manifest);
RawRecording load_recording(const std::filesystem::path& manifest);

/// Writes `<stem>.json` and `<stem>.f32` into `dir`; returns the manifest path.
std::filesystem::path store_recording(const RawRecording& rec,
                                      const std::filesystem::path& dir,
                                      const std::string& stem);

GroundTruth load_ground_truth(const std::filesystem::path& path);
GroundTruth parse_ground_truth(std::string_view csv);
std::string format_ground_truth(const GroundTruth& gt);
void store_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

/// 10 s (or `window_s`) window centred on `center_s`. The centre is rounded
/// to the nearest sample; throws DataError if the window leaves the recording.
WaveformSegment slice_segment(const RawRecording& rec, double center_s, double window_s = 10.0);

/// First sample of the window centred on `center_s`.
std::int64_t segment_start_sample(int fs, double center_s, double window_s = 10.0);

}  // namespace nilm
