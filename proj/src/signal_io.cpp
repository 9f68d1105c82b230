#include "nilm/signal_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nilm/error.hpp"

namespace nilm {

static_assert(std::endian::native == std::endian::little,
              "payload decoding assumes a little-endian host");

namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename T>
T required(const json& j, const char* key, const std::filesystem::path& path) {
  if (!j.contains(key)) throw DataError(path.string() + ": manifest missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(path.string() + ": manifest field '" + key + "' has the wrong type");
  }
}

}  // namespace

void RawRecording::validate() const {
  if (fs <= 0 || f0 <= 0) throw DataError("sampling and mains frequency must be positive");
  if (fs % f0 != 0)
    throw DataError("fs=" + std::to_string(fs) + " is not a multiple of F0=" + std::to_string(f0));
  if (voltage.size() != current.size()) throw DataError("voltage and current lengths differ");
}

std::string_view to_string(EventKind kind) { return kind == EventKind::On ? "ON" : "OFF"; }

EventKind parse_event_kind(std::string_view token) {
  if (token == "ON" || token == "on") return EventKind::On;
  if (token == "OFF" || token == "off") return EventKind::Off;
  throw DataError("unknown event kind '" + std::string(token) + "'");
}

std::vector<double> GroundTruth::times() const {
  std::vector<double> t;
  t.reserve(labels.size());
  for (const auto& l : labels) t.push_back(l.time_s);
  return t;
}

void GroundTruth::normalize() {
  std::stable_sort(labels.begin(), labels.end(), [](const EventLabel& a, const EventLabel& b) {
    return a.time_s != b.time_s ? a.time_s < b.time_s : a.channel_id < b.channel_id;
  });
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i].time_s == labels[i - 1].time_s && labels[i].channel_id == labels[i - 1].channel_id)
      throw DataError("duplicate label at t=" + format_double(labels[i].time_s) + " on channel '" +
                      labels[i].channel_id + "'");
  }
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": ill-formed manifest: " + e.what());
  }
  if (!j.is_object()) throw DataError(path.string() + ": manifest must be an object");

  Manifest m;
  m.fs = required<int>(j, "fs", path);
  m.f0 = required<int>(j, "F0", path);
  m.encoding = required<std::string>(j, "encoding", path);
  m.channels = required<std::vector<std::string>>(j, "channels", path);
  m.start_time = j.value("start_time", 0.0);
  m.channel_id = j.value("channel_id", std::string{});
  m.payload = j.value("payload", std::string{});

  if (m.encoding != "f32le") throw DataError(path.string() + ": unsupported encoding '" + m.encoding + "'");
  if (m.fs <= 0 || m.f0 <= 0) throw DataError(path.string() + ": fs and F0 must be positive");
  if (m.fs % m.f0 != 0)
    throw DataError(path.string() + ": fs=" + std::to_string(m.fs) + " is not a multiple of F0=" +
                    std::to_string(m.f0));
  auto sorted = m.channels;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::vector<std::string>{"current", "voltage"})
    throw DataError(path.string() + ": channels must be exactly [voltage, current]");
  return m;
}

RawRecording load_recording(const std::filesystem::path& payload, const std::filesystem::path& manifest) {
  const Manifest m = read_manifest(manifest);
  std::filesystem::path data = payload;
  if (data.empty()) {
    if (m.payload.empty()) throw DataError(manifest.string() + ": manifest names no payload");
    data = manifest.parent_path() / m.payload;
  }

  std::ifstream in(data, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open payload " + data.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t frame = 2 * sizeof(float);
  if (bytes % frame != 0)
    throw DataError(data.string() + ": truncated payload (" + std::to_string(bytes) +
                    " bytes is not a whole number of frames)");
  in.seekg(0);
  std::vector<float> raw(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError(data.string() + ": short read");

  const Eigen::Index n = static_cast<Eigen::Index>(raw.size() / 2);
  const int v_col = m.channels[0] == "voltage" ? 0 : 1;
  Eigen::Map<const Eigen::Matrix<float, 2, Eigen::Dynamic>> frames(raw.data(), 2, n);

  RawRecording rec;
  rec.fs = m.fs;
  rec.f0 = m.f0;
  rec.start_time = m.start_time;
  rec.channel_id = m.channel_id;
  rec.voltage = frames.row(v_col).transpose();
  rec.current = frames.row(1 - v_col).transpose();
  rec.validate();
  return rec;
}

RawRecording load_recording(const std::filesystem::path& manifest) { return load_recording({}, manifest); }

std::filesystem::path store_recording(const RawRecording& rec, const std::filesystem::path& dir,
                                      const std::string& stem) {
  rec.validate();
  std::filesystem::create_directories(dir);
  const auto payload = dir / (stem + ".f32");
  const auto manifest = dir / (stem + ".json");

  Eigen::Matrix<float, 2, Eigen::Dynamic> frames(2, rec.size());
  frames.row(0) = rec.voltage.transpose();
  frames.row(1) = rec.current.transpose();
  {
    std::ofstream out(payload, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + payload.string());
    out.write(reinterpret_cast<const char*>(frames.data()),
              static_cast<std::streamsize>(frames.size() * sizeof(float)));
  }

  json j;
  j["fs"] = rec.fs;
  j["F0"] = rec.f0;
  j["encoding"] = "f32le";
  j["channels"] = {"voltage", "current"};
  j["start_time"] = rec.start_time;
  j["channel_id"] = rec.channel_id;
  j["payload"] = payload.filename().string();
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw DataError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
  return manifest;
}

GroundTruth parse_ground_truth(std::string_view csv) {
  GroundTruth gt;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < csv.size()) {
    auto eol = csv.find('\n', pos);
    if (eol == std::string_view::npos) eol = csv.size();
    const std::string line = trim(csv.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("time_s", 0) == 0) continue;

    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw DataError("ground truth line " + std::to_string(line_no) + ": expected 4 fields");
    EventLabel label;
    const auto& t = fields[0];
    const auto res = std::from_chars(t.data(), t.data() + t.size(), label.time_s);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || !std::isfinite(label.time_s))
      throw DataError("ground truth line " + std::to_string(line_no) + ": bad time '" + t + "'");
    label.channel_id = fields[1];
    label.appliance = fields[2];
    label.kind = parse_event_kind(fields[3]);
    gt.labels.push_back(std::move(label));
  }
  gt.normalize();
  return gt;
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ground truth " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ground_truth(ss.str());
}

std::string format_ground_truth(const GroundTruth& gt) {
  std::string out = "time_s,channel_id,appliance,kind\n";
  for (const auto& l : gt.labels) {
    out += format_double(l.time_s);
    out += ',';
    out += l.channel_id;
    out += ',';
    out += l.appliance;
    out += ',';
    out += to_string(l.kind);
    out += '\n';
  }
  return out;
}

void store_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_ground_truth(gt);
}

std::int64_t segment_start_sample(int fs, double center_s, double window_s) {
  const auto window = static_cast<std::int64_t>(std::llround(window_s * fs));
  return static_cast<std::int64_t>(std::llround(center_s * fs)) - window / 2;
}

WaveformSegment slice_segment(const RawRecording& rec, double center_s, double window_s) {
  const auto window = static_cast<std::int64_t>(std::llround(window_s * rec.fs));
  const auto start = segment_start_sample(rec.fs, center_s, window_s);
  if (!std::isfinite(center_s) || start < 0 || start + window > rec.size())
    throw DataError("window centred at " + format_double(center_s) + " s exceeds the recording bounds [0, " +
                    format_double(rec.duration_s()) + "] s");
  WaveformSegment seg;
  seg.fs = rec.fs;
  seg.f0 = rec.f0;
  seg.center_s = center_s;
  seg.voltage = rec.voltage.segment(start, window);
  seg.current = rec.current.segment(start, window);
  return seg;
}

}  // namespace nilm
