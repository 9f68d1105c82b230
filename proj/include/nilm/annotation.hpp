#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nilm/error.hpp"
#include "nilm/signal_io.hpp"

namespace nilm {

struct SeriesPoint {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Downsampled per-period RMS power of one channel.
struct SeriesTile {
  std::string channel_id;
  double t0_s = 0.0;
  double dt_s = 0.0;  ///< seconds per point
  std::vector<SeriesPoint> points;
};

/// U_rms * I_rms per mains period, in W.
Eigen::VectorXd period_power(const RawRecording& rec);

/// Min/max/mean buckets of ceil(n / max_points) periods over the periods
/// touched by [start_s, end_s). The last bucket may be shorter.
SeriesTile make_tile(const std::string& channel_id, const Eigen::Ref<const Eigen::VectorXd>& power, int f0,
                     double start_s, double end_s, int max_points);

/// Unknown annotation id or channel.
class NotFoundError : public DataError {
 public:
  using DataError::DataError;
};

struct AnnotationRecord {
  std::int64_t id = 0;
  double time_s = 0.0;
  std::string channel_id;
  std::string appliance;
  EventKind kind = EventKind::On;
  std::string annotator;
  double created_at = 0.0;  ///< epoch seconds of the first revision
  std::int64_t revision = 0;
};

/// Annotation store backed by an append-only NDJSON log. Every mutation is
/// appended and flushed before it becomes visible; replaying the log
/// rebuilds the current state.
class AnnotationStore {
 public:
  using Clock = std::function<double()>;
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  /// `bounds` maps channel ids to recording durations. Opens (or creates)
  /// the log for appending; throws DataError when it is not writable.
  AnnotationStore(std::filesystem::path log, std::map<std::string, double> bounds, Clock clock = {});
  ~AnnotationStore();

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  /// Creates a record (id == 0) or revises an existing one. A revision
  /// must quote the current revision; a stale one throws ConflictError, as
  /// does a second live record at the same (channel, time).
  AnnotationRecord put(AnnotationRecord record);

  /// Removes a record; `revision`, when given, must be current.
  void remove(std::int64_t id, std::optional<std::int64_t> revision = std::nullopt);

  /// Live records sorted by (time, channel); optional channel / time filter.
  std::vector<AnnotationRecord> list(const std::string& channel = {}, double start_s = -kInf,
                                     double end_s = kInf) const;

  std::optional<AnnotationRecord> get(std::int64_t id) const;

  /// Ground-truth CSV of all live records.
  std::string export_csv() const;

  const std::filesystem::path& path() const { return log_; }

  /// Records reconstructed from a log without opening it for writing.
  static std::vector<AnnotationRecord> replay(const std::filesystem::path& log);

 private:
  void append(const std::string& line);

  std::filesystem::path log_;
  std::map<std::string, double> bounds_;
  Clock clock_;
  int fd_ = -1;
  std::map<std::int64_t, AnnotationRecord> live_;
  std::int64_t next_id_ = 1;
  mutable std::shared_mutex mutex_;
};

GroundTruth to_ground_truth(const std::vector<AnnotationRecord>& records);

/// Recordings of a dataset directory: every `*.json` manifest in it.
struct ChannelData {
  RawRecording recording;
  Eigen::VectorXd power;
};
std::map<std::string, ChannelData> load_channels(const std::filesystem::path& data_dir);

/// HTTP front end of the annotation store and the series tiles.
class AnnotationServer {
 public:
  AnnotationServer(std::map<std::string, ChannelData> channels, std::filesystem::path store_path);
  ~AnnotationServer();

  /// Binds the socket; port 0 picks a free one. Returns the bound port and
  /// throws std::runtime_error when the port is taken.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  bool running() const;

  AnnotationStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nilm
