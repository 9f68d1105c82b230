#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "nilm/signal_io.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nilm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Phase-locked sines: voltage amplitude u_amp, current amplitude i_amp.
inline nilm::RawRecording sine_recording(int fs, int f0, double seconds, double u_amp = 230.0 * std::numbers::sqrt2,
                                         double i_amp = std::numbers::sqrt2) {
  nilm::RawRecording rec;
  rec.fs = fs;
  rec.f0 = f0;
  rec.channel_id = "test";
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * fs));
  rec.voltage.resize(n);
  rec.current.resize(n);
  const int per = fs / f0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double ph = 2.0 * std::numbers::pi * static_cast<double>(k % per) / per;
    rec.voltage[k] = static_cast<float>(u_amp * std::sin(ph));
    rec.current[k] = static_cast<float>(i_amp * std::sin(ph));
  }
  return rec;
}

}  // namespace testutil
