#include "nilm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nilm/error.hpp"

namespace nilm {

namespace {

constexpr double kEdgeMarginS = 10.0;
constexpr double kMinEventSpacingS = 10.0;
// Transients stay this far from true event instants so that event windows
// only carry the step itself.
constexpr double kEventGuardS = 6.0;
constexpr double kRampMinS = 15.0;
constexpr double kRampMaxS = 40.0;
constexpr double kRampFloorS = 10.0;
constexpr double kPulseMinS = 0.2;
constexpr double kPulseMaxS = 4.0;
constexpr double kSawMinS = 2.0;
constexpr double kSawMaxS = 15.0;
constexpr double kTransientMinW = 10.0;
constexpr double kTransientMaxW = 120.0;
constexpr double kVoltageNoiseV = 0.5;

const char* const kAppliances[] = {"kettle", "heater", "lamp", "fridge", "printer", "fan", "toaster", "monitor"};

// Normalised SMPS current shape: odd harmonics, unit RMS.
constexpr double kH3 = 0.6;
constexpr double kH5 = 0.35;
constexpr double kH7 = 0.2;

}  // namespace

void SynthSpec::validate() const {
  if (n_true_events < 0) throw ConfigError("n_true_events", "must be >= 0");
  if (n_nuisance_transients < 0) throw ConfigError("n_nuisance_transients", "must be >= 0");
  if (!(duration_s > 2 * kEdgeMarginS)) throw ConfigError("duration_s", "too short");
  if (fs <= 0 || f0 <= 0 || fs % f0 != 0) throw ConfigError("fs", "fs must be a positive multiple of F0");
  if (fs / f0 < 4) throw ConfigError("fs", "need at least 4 samples per period");
  if (fs < 8 * f0) throw ConfigError("fs", "fs must resolve the 7th harmonic (fs >= 8*F0)");
  if (!(event_step_min_w > 0) || event_step_max_w < event_step_min_w)
    throw ConfigError("event_step_min_w", "need 0 < min <= max");
  if (!(event_hold_min_s > 0)) throw ConfigError("event_hold_min_s", "must be positive");
  if (noise_std < 0 || base_jitter_w < 0) throw ConfigError("noise_std", "must be >= 0");
  if (!(mains_voltage > 0)) throw ConfigError("mains_voltage", "must be positive");
  if (n_true_events > 0) {
    const double needed = 2 * kEdgeMarginS + (n_true_events - 1) * kMinEventSpacingS;
    if (needed > duration_s)
      throw ConfigError("n_true_events", "infeasible placement: " + std::to_string(n_true_events) +
                                            " events need at least " + std::to_string(needed) + " s");
  }
}

SynthOutput synth_recording(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const int fs = spec.fs;
  const int n_per = fs / spec.f0;
  const auto n_periods = static_cast<Eigen::Index>(std::floor(spec.duration_s * spec.f0));
  const Eigen::Index n = n_periods * n_per;
  const double duration = static_cast<double>(n) / fs;
  auto to_sample = [fs, n](double t) {
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(t * fs)), 0, n);
  };

  SynthOutput out;

  // True event instants: uniform order statistics with a minimum spacing.
  std::vector<double> times;
  if (spec.n_true_events > 0) {
    const double slack = duration - 2 * kEdgeMarginS - (spec.n_true_events - 1) * kMinEventSpacingS;
    if (slack < 0) throw ConfigError("n_true_events", "infeasible placement");
    std::vector<double> u(spec.n_true_events);
    for (auto& x : u) x = uniform(0.0, slack);
    std::sort(u.begin(), u.end());
    for (int i = 0; i < spec.n_true_events; ++i) {
      const double t = kEdgeMarginS + u[i] + i * kMinEventSpacingS;
      times.push_back(static_cast<double>(to_sample(t)) / fs);
    }
  }

  // Load levels per sample; linear loads draw a sinusoid, SMPS loads a
  // harmonic-rich current.
  Eigen::VectorXd linear_w = Eigen::VectorXd::Zero(n + 1);
  Eigen::VectorXd smps_w = Eigen::VectorXd::Zero(n + 1);
  Eigen::VectorXd step_delta = Eigen::VectorXd::Zero(n + 1);

  auto add_ramp = [&](Eigen::VectorXd& level, Eigen::Index s0, Eigen::Index s1, double from, double to) {
    const double len = static_cast<double>(std::max<Eigen::Index>(1, s1 - s0));
    for (Eigen::Index k = s0; k < s1; ++k) level[k] += from + (to - from) * static_cast<double>(k - s0) / len;
  };

  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    const double next = i + 1 < times.size() ? times[i + 1] : duration - kEdgeMarginS;
    EventLabel label;
    label.time_s = t;
    label.channel_id = spec.channel_id;

    if (spec.off_mode == OffMode::Step) {
      // Alternate ON and OFF of the same appliance.
      const bool on = i % 2 == 0;
      const double amp = on ? uniform(spec.event_step_min_w, spec.event_step_max_w) : out.event_step_w.back();
      step_delta[to_sample(t)] += on ? amp : -amp;
      label.kind = on ? EventKind::On : EventKind::Off;
      label.appliance = kAppliances[(i / 2) % std::size(kAppliances)];
      out.event_step_w.push_back(amp);
    } else {
      const double amp = uniform(spec.event_step_min_w, spec.event_step_max_w);
      const double hold = uniform(spec.event_hold_min_s, spec.event_hold_min_s + 10.0);
      const double ramp = uniform(kRampMinS, kRampMaxS);
      const double ramp_start = t + hold;
      const double ramp_end = std::min(ramp_start + ramp, next - kEventGuardS);
      step_delta[to_sample(t)] += amp;
      if (ramp_end - ramp_start >= kRampFloorS) {
        const auto r0 = to_sample(ramp_start);
        const auto r1 = to_sample(ramp_end);
        step_delta[r1] -= amp;
        add_ramp(linear_w, r0, r1, 0.0, -amp);
      }
      label.kind = EventKind::On;
      label.appliance = kAppliances[i % std::size(kAppliances)];
      out.event_step_w.push_back(amp);
    }
    out.ground_truth.labels.push_back(std::move(label));
  }

  {
    double level = 0.0;
    for (Eigen::Index k = 0; k <= n; ++k) {
      level += step_delta[k];
      linear_w[k] += level;
    }
  }

  // Nuisance transients, kept clear of every true event instant.
  auto clear_of_events = [&](double s, double e) {
    auto it = std::lower_bound(times.begin(), times.end(), s - kEventGuardS);
    return it == times.end() || *it > e + kEventGuardS;
  };
  const long max_attempts = 1000L * std::max(1, spec.n_nuisance_transients);
  long attempts = 0;
  while (static_cast<int>(out.transients.size()) < spec.n_nuisance_transients) {
    if (++attempts > max_attempts)
      throw ConfigError("n_nuisance_transients", "infeasible placement: no room left for nuisance transients");
    NuisanceTransient tr;
    tr.shape = uniform(0.0, 1.0) < 0.6 ? TransientShape::Pulse : TransientShape::Sawtooth;
    tr.length_s = tr.shape == TransientShape::Pulse ? uniform(kPulseMinS, kPulseMaxS) : uniform(kSawMinS, kSawMaxS);
    tr.amplitude_w = uniform(kTransientMinW, kTransientMaxW);
    tr.start_s = uniform(1.0, duration - tr.length_s - 1.0);
    if (!clear_of_events(tr.start_s, tr.start_s + tr.length_s)) continue;
    const auto s0 = to_sample(tr.start_s);
    const auto s1 = to_sample(tr.start_s + tr.length_s);
    if (tr.shape == TransientShape::Pulse)
      smps_w.segment(s0, s1 - s0).array() += tr.amplitude_w;
    else
      add_ramp(smps_w, s0, s1, 0.0, tr.amplitude_w);
    out.transients.push_back(tr);
  }

  // Per-period base-load jitter.
  Eigen::VectorXd jitter(n_periods);
  {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index p = 0; p < n_periods; ++p) jitter[p] = spec.base_jitter_w * gauss(rng);
  }

  // One period of each waveform shape.
  const double two_pi = 2.0 * std::numbers::pi;
  const double smps_norm = std::sqrt(1.0 + kH3 * kH3 + kH5 * kH5 + kH7 * kH7);
  Eigen::VectorXd sine(n_per), smps_shape(n_per);
  for (int k = 0; k < n_per; ++k) {
    const double ph = two_pi * k / n_per;
    sine[k] = std::numbers::sqrt2 * std::sin(ph);
    smps_shape[k] = std::numbers::sqrt2 *
                    (std::sin(ph) + kH3 * std::sin(3 * ph) + kH5 * std::sin(5 * ph) + kH7 * std::sin(7 * ph)) /
                    smps_norm;
  }

  RawRecording& rec = out.recording;
  rec.fs = fs;
  rec.f0 = spec.f0;
  rec.channel_id = spec.channel_id;
  rec.start_time = 0.0;
  rec.voltage.resize(n);
  rec.current.resize(n);
  out.period_power_w.resize(n_periods);

  const double u_nom = spec.mains_voltage;
  const double noise_a = spec.noise_std / u_nom;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index p = 0; p < n_periods; ++p) {
    double power_sum = 0.0;
    for (int k = 0; k < n_per; ++k) {
      const Eigen::Index idx = p * n_per + k;
      const double lin = spec.base_load_w + linear_w[idx];
      const double smps = smps_w[idx];
      power_sum += lin + smps;
      const double i = ((lin + jitter[p]) * sine[k] + smps * smps_shape[k]) / u_nom + noise_a * gauss(rng);
      const double v = u_nom * sine[k] + kVoltageNoiseV * gauss(rng);
      rec.current[idx] = static_cast<float>(i);
      rec.voltage[idx] = static_cast<float>(v);
    }
    out.period_power_w[p] = power_sum / n_per;
  }
  return out;
}

}  // namespace nilm
