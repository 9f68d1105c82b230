#include "nilm/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "nilm/features.hpp"

namespace nilm {

using json = nlohmann::ordered_json;

Eigen::VectorXd period_power(const RawRecording& rec) {
  const PeriodMetrics m = compute_period_metrics(rec.current, rec.voltage, rec.samples_per_period(), false);
  return m.i_rms.cwiseProduct(m.u_rms);
}

SeriesTile make_tile(const std::string& channel_id, const Eigen::Ref<const Eigen::VectorXd>& power, int f0,
                     double start_s, double end_s, int max_points) {
  if (max_points < 2) throw DataError("max_points must be >= 2");
  if (!std::isfinite(start_s) || !std::isfinite(end_s)) throw DataError("range bounds must be finite");
  if (!(start_s < end_s)) throw DataError("empty or inverted range");
  const double duration = static_cast<double>(power.size()) / f0;
  if (start_s < 0.0 || end_s > duration + 1e-9) throw DataError("range exceeds the recording");

  const auto p0 = static_cast<Eigen::Index>(std::floor(start_s * f0 + 1e-9));
  const auto p1 = std::min(power.size(), static_cast<Eigen::Index>(std::ceil(end_s * f0 - 1e-9)));
  if (p1 <= p0) throw DataError("range is shorter than one period");
  const Eigen::Index n = p1 - p0;
  const Eigen::Index per_bucket = (n + max_points - 1) / max_points;

  SeriesTile tile;
  tile.channel_id = channel_id;
  tile.t0_s = static_cast<double>(p0) / f0;
  tile.dt_s = static_cast<double>(per_bucket) / f0;
  for (Eigen::Index b = p0; b < p1; b += per_bucket) {
    const Eigen::Index e = std::min(p1, b + per_bucket);
    SeriesPoint pt{power[b], power[b], 0.0};
    double sum = 0.0;
    for (Eigen::Index p = b; p < e; ++p) {
      pt.min = std::min(pt.min, power[p]);
      pt.max = std::max(pt.max, power[p]);
      sum += power[p];
    }
    pt.mean = std::clamp(sum / static_cast<double>(e - b), pt.min, pt.max);
    tile.points.push_back(pt);
  }
  return tile;
}

// ---------------------------------------------------------------------------

namespace {

json record_json(const AnnotationRecord& r) {
  json j;
  j["id"] = r.id;
  j["time_s"] = r.time_s;
  j["channel_id"] = r.channel_id;
  j["appliance"] = r.appliance;
  j["kind"] = std::string(to_string(r.kind));
  j["annotator"] = r.annotator;
  j["created_at"] = r.created_at;
  j["revision"] = r.revision;
  return j;
}

AnnotationRecord record_from_json(const json& j) {
  AnnotationRecord r;
  r.id = j.at("id").get<std::int64_t>();
  r.time_s = j.at("time_s").get<double>();
  r.channel_id = j.at("channel_id").get<std::string>();
  r.appliance = j.at("appliance").get<std::string>();
  r.kind = parse_event_kind(j.at("kind").get<std::string>());
  r.annotator = j.value("annotator", std::string{});
  r.created_at = j.value("created_at", 0.0);
  r.revision = j.at("revision").get<std::int64_t>();
  return r;
}

void check_text(const std::string& field, const std::string& value) {
  if (value.find_first_of(",\"\r\n") != std::string::npos)
    throw DataError(field + " must not contain commas, quotes or line breaks");
}

// Applies one log line to `live`; returns false for a blank line.
bool apply_line(const std::string& line, std::map<std::int64_t, AnnotationRecord>& live, std::int64_t& next_id) {
  if (line.empty()) return false;
  const json j = json::parse(line);
  const std::string op = j.at("op").get<std::string>();
  if (op == "put") {
    AnnotationRecord r = record_from_json(j.at("record"));
    live[r.id] = r;
    next_id = std::max(next_id, r.id + 1);
  } else if (op == "delete") {
    const auto id = j.at("id").get<std::int64_t>();
    live.erase(id);
    next_id = std::max(next_id, id + 1);
  } else {
    throw DataError("unknown log op '" + op + "'");
  }
  return true;
}

// Replays complete lines; returns the byte length of the valid prefix. A
// final line without its newline is a torn write and is ignored.
std::size_t replay_into(const std::filesystem::path& log, std::map<std::int64_t, AnnotationRecord>& live,
                        std::int64_t& next_id) {
  std::ifstream in(log, std::ios::binary);
  if (!in) return 0;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    ++line_no;
    try {
      apply_line(text.substr(pos, nl - pos), live, next_id);
    } catch (const std::exception& e) {
      throw DataError(log.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    pos = nl + 1;
  }
  return pos;
}

std::vector<AnnotationRecord> sorted_records(const std::map<std::int64_t, AnnotationRecord>& live,
                                             const std::string& channel, double start_s, double end_s) {
  std::vector<AnnotationRecord> out;
  for (const auto& [id, r] : live) {
    if (!channel.empty() && r.channel_id != channel) continue;
    if (r.time_s < start_s || r.time_s >= end_s) continue;
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const AnnotationRecord& a, const AnnotationRecord& b) {
    if (a.time_s != b.time_s) return a.time_s < b.time_s;
    if (a.channel_id != b.channel_id) return a.channel_id < b.channel_id;
    return a.id < b.id;
  });
  return out;
}

double wall_clock() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

AnnotationStore::AnnotationStore(std::filesystem::path log, std::map<std::string, double> bounds, Clock clock)
    : log_(std::move(log)), bounds_(std::move(bounds)), clock_(clock ? std::move(clock) : Clock(wall_clock)) {
  const std::size_t valid = replay_into(log_, live_, next_id_);
  fd_ = ::open(log_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw DataError("annotation store " + log_.string() + " is not writable: " + std::strerror(errno));
  // Drop a torn trailing record so the next append starts on a fresh line.
  const auto size = static_cast<std::size_t>(std::filesystem::file_size(log_));
  if (size != valid && ::ftruncate(fd_, static_cast<off_t>(valid)) != 0) {
    ::close(fd_);
    throw DataError("cannot repair annotation store " + log_.string());
  }
}

AnnotationStore::~AnnotationStore() {
  if (fd_ >= 0) ::close(fd_);
}

void AnnotationStore::append(const std::string& line) {
  const std::string data = line + '\n';
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("annotation store write failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) throw std::runtime_error("annotation store sync failed");
}

AnnotationRecord AnnotationStore::put(AnnotationRecord record) {
  const auto bound = bounds_.find(record.channel_id);
  if (bound == bounds_.end()) throw NotFoundError("unknown channel '" + record.channel_id + "'");
  if (!std::isfinite(record.time_s) || record.time_s < 0.0 || record.time_s > bound->second)
    throw DataError("time_s " + format_double(record.time_s) + " lies outside the recording [0, " +
                    format_double(bound->second) + "]");
  check_text("appliance", record.appliance);

  std::unique_lock lock(mutex_);
  for (const auto& [id, r] : live_)
    if (id != record.id && r.channel_id == record.channel_id && r.time_s == record.time_s)
      throw ConflictError("record " + std::to_string(id) + " already annotates this channel at this time");

  if (record.id == 0) {
    record.id = next_id_;
    record.revision = 1;
    record.created_at = clock_();
  } else {
    const auto it = live_.find(record.id);
    if (it == live_.end()) throw NotFoundError("no annotation with id " + std::to_string(record.id));
    if (record.revision != it->second.revision)
      throw ConflictError("stale revision " + std::to_string(record.revision) + " of annotation " +
                          std::to_string(record.id) + " (current " + std::to_string(it->second.revision) + ")");
    record.revision = it->second.revision + 1;
    record.created_at = it->second.created_at;
  }
  json entry;
  entry["op"] = "put";
  entry["record"] = record_json(record);
  append(entry.dump());
  live_[record.id] = record;
  next_id_ = std::max(next_id_, record.id + 1);
  return record;
}

void AnnotationStore::remove(std::int64_t id, std::optional<std::int64_t> revision) {
  std::unique_lock lock(mutex_);
  const auto it = live_.find(id);
  if (it == live_.end()) throw NotFoundError("no annotation with id " + std::to_string(id));
  if (revision && *revision != it->second.revision)
    throw ConflictError("stale revision " + std::to_string(*revision) + " of annotation " + std::to_string(id));
  json entry;
  entry["op"] = "delete";
  entry["id"] = id;
  entry["revision"] = it->second.revision;
  append(entry.dump());
  live_.erase(it);
}

std::vector<AnnotationRecord> AnnotationStore::list(const std::string& channel, double start_s, double end_s) const {
  std::shared_lock lock(mutex_);
  return sorted_records(live_, channel, start_s, end_s);
}

std::optional<AnnotationRecord> AnnotationStore::get(std::int64_t id) const {
  std::shared_lock lock(mutex_);
  const auto it = live_.find(id);
  if (it == live_.end()) return std::nullopt;
  return it->second;
}

std::string AnnotationStore::export_csv() const { return format_ground_truth(to_ground_truth(list())); }

std::vector<AnnotationRecord> AnnotationStore::replay(const std::filesystem::path& log) {
  if (!std::filesystem::exists(log)) throw DataError("annotation store " + log.string() + " does not exist");
  std::map<std::int64_t, AnnotationRecord> live;
  std::int64_t next_id = 1;
  replay_into(log, live, next_id);
  return sorted_records(live, {}, -kInf, kInf);
}

GroundTruth to_ground_truth(const std::vector<AnnotationRecord>& records) {
  GroundTruth gt;
  for (const auto& r : records) gt.labels.push_back({r.time_s, r.channel_id, r.appliance, r.kind});
  gt.normalize();
  return gt;
}

std::map<std::string, ChannelData> load_channels(const std::filesystem::path& data_dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(data_dir, ec)) throw DataError("dataset directory " + data_dir.string() + " is not readable");
  std::vector<std::filesystem::path> manifests;
  for (const auto& entry : std::filesystem::directory_iterator(data_dir)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    const json j = json::parse(in, nullptr, false);
    if (j.is_object() && j.contains("encoding") && j.contains("fs")) manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::map<std::string, ChannelData> out;
  for (const auto& m : manifests) {
    ChannelData c;
    c.recording = load_recording(m);
    c.power = period_power(c.recording);
    const std::string id = c.recording.channel_id.empty() ? m.stem().string() : c.recording.channel_id;
    c.recording.channel_id = id;
    if (!out.emplace(id, std::move(c)).second) throw DataError("duplicate channel id '" + id + "' in " + data_dir.string());
  }
  if (out.empty()) throw DataError("no recordings in " + data_dir.string());
  return out;
}

// ---------------------------------------------------------------------------

struct AnnotationServer::Impl {
  std::map<std::string, ChannelData> channels;
  std::unique_ptr<AnnotationStore> store;
  httplib::Server http;

  static std::map<std::string, double> bounds_of(const std::map<std::string, ChannelData>& channels) {
    std::map<std::string, double> b;
    for (const auto& [id, c] : channels) b[id] = c.recording.duration_s();
    return b;
  }

  Impl(std::map<std::string, ChannelData> ch, const std::filesystem::path& store_path)
      : channels(std::move(ch)), store(std::make_unique<AnnotationStore>(store_path, bounds_of(channels))) {
    routes();
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    json j;
    j["error"] = message;
    reply(res, status, j);
  }

  static double number_param(const httplib::Request& req, const std::string& key, double fallback) {
    if (!req.has_param(key)) return fallback;
    const std::string v = req.get_param_value(key);
    double x = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw DataError("parameter " + key + " is not a number");
    return x;
  }

  static std::int64_t int_param(const httplib::Request& req, const std::string& key) {
    const std::string v = req.get_param_value(key);
    std::int64_t x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw DataError("parameter " + key + " is not an integer");
    return x;
  }

  // Runs a handler and maps exceptions to HTTP status codes.
  template <class Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const NotFoundError& e) {
      error(res, 404, e.what());
    } catch (const ConflictError& e) {
      error(res, 409, e.what());
    } catch (const DataError& e) {
      error(res, 400, e.what());
    } catch (const json::exception& e) {
      error(res, 400, std::string("malformed request body: ") + e.what());
    } catch (const std::exception& e) {
      error(res, 500, e.what());
    }
  }

  void routes() {
    http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      json j;
      j["status"] = "ok";
      reply(res, 200, j);
    });

    http.Get("/channels", [this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& [id, c] : channels) {
        json j;
        j["channel_id"] = id;
        j["fs"] = c.recording.fs;
        j["F0"] = c.recording.f0;
        j["duration_s"] = c.recording.duration_s();
        j["start_time"] = c.recording.start_time;
        arr.push_back(std::move(j));
      }
      json body;
      body["channels"] = arr;
      reply(res, 200, body);
    });

    http.Get("/series", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("channel")) throw DataError("parameter channel is required");
        const std::string id = req.get_param_value("channel");
        const auto it = channels.find(id);
        if (it == channels.end()) throw NotFoundError("unknown channel '" + id + "'");
        const ChannelData& c = it->second;
        const double start = number_param(req, "start", 0.0);
        const double end = number_param(req, "end", c.recording.duration_s());
        const double mp = number_param(req, "max_points", 2000);
        if (mp != std::floor(mp) || mp < 2 || mp > 1e7) throw DataError("max_points must be an integer >= 2");
        const SeriesTile tile = make_tile(id, c.power, c.recording.f0, start, end, static_cast<int>(mp));
        json j;
        j["channel_id"] = tile.channel_id;
        j["t0_s"] = tile.t0_s;
        j["dt_s"] = tile.dt_s;
        json pts = json::array();
        for (const auto& p : tile.points) pts.push_back({p.min, p.max, p.mean});
        j["points"] = pts;
        reply(res, 200, j);
      });
    });

    http.Get("/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string channel = req.has_param("channel") ? req.get_param_value("channel") : std::string{};
        const double start = number_param(req, "start", -AnnotationStore::kInf);
        const double end = number_param(req, "end", AnnotationStore::kInf);
        json arr = json::array();
        for (const auto& r : store->list(channel, start, end)) arr.push_back(record_json(r));
        json j;
        j["annotations"] = arr;
        reply(res, 200, j);
      });
    });

    http.Put("/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json j = json::parse(req.body);
        if (!j.is_object()) throw DataError("expected a JSON object");
        AnnotationRecord r;
        r.id = j.value("id", std::int64_t{0});
        r.revision = j.value("revision", std::int64_t{0});
        r.time_s = j.at("time_s").get<double>();
        r.channel_id = j.at("channel_id").get<std::string>();
        r.appliance = j.value("appliance", std::string{});
        r.kind = parse_event_kind(j.at("kind").get<std::string>());
        r.annotator = j.value("annotator", std::string{});
        reply(res, 200, record_json(store->put(r)));
      });
    });

    http.Delete("/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("id")) throw DataError("parameter id is required");
        const std::int64_t id = int_param(req, "id");
        std::optional<std::int64_t> rev;
        if (req.has_param("revision")) rev = int_param(req, "revision");
        store->remove(id, rev);
        json j;
        j["deleted"] = id;
        reply(res, 200, j);
      });
    });

    http.Get("/export.csv", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { res.set_content(store->export_csv(), "text/csv"); });
    });
  }
};

AnnotationServer::AnnotationServer(std::map<std::string, ChannelData> channels, std::filesystem::path store_path)
    : impl_(std::make_unique<Impl>(std::move(channels), store_path)) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  // SO_REUSEADDR only; the library default also sets SO_REUSEPORT, which lets
  // a second server share a port that is already serving.
  impl_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port))
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return port;
}

void AnnotationServer::listen() { impl_->http.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->http.stop();
}

bool AnnotationServer::running() const { return impl_->http.is_running(); }

AnnotationStore& AnnotationServer::store() { return *impl_->store; }

}  // namespace nilm
