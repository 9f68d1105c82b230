#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nilm/signal_io.hpp"

namespace nilm {

/// How an appliance leaves the ON state after a true (labelled) event.
enum class OffMode {
  Ramp,  ///< slow unlabelled ramp-down; only ON steps are labelled
  Step,  ///< sharp OFF step, labelled as an OFF event
};

/// Parameters of the synthetic recording generator. Power quantities are
/// watt-equivalents at the nominal mains voltage.
struct SynthSpec {
  double duration_s = 3600.0;
  int n_true_events = 20;
  int n_nuisance_transients = 60;
  double base_load_w = 60.0;
  double event_step_min_w = 30.0;
  double event_step_max_w = 60.0;
  double event_hold_min_s = 5.0;
  double noise_std = 2.0;      ///< per-sample current noise, W-equivalent
  double base_jitter_w = 1.0;  ///< per-period jitter of the base load
  std::uint64_t seed = 1;

  int fs = 1000;
  int f0 = 50;
  double mains_voltage = 230.0;
  OffMode off_mode = OffMode::Ramp;
  std::string channel_id = "synth";

  /// Throws ConfigError on negative counts or an infeasible layout.
  void validate() const;
};

enum class TransientShape { Pulse, Sawtooth };

/// An unlabelled SMPS-like transient injected by the generator.
struct NuisanceTransient {
  TransientShape shape = TransientShape::Pulse;
  double start_s = 0.0;
  double length_s = 0.0;
  double amplitude_w = 0.0;
};

struct SynthOutput {
  RawRecording recording;
  GroundTruth ground_truth;
  /// Noise-free load per mains period in W (base + appliances + transients).
  Eigen::VectorXd period_power_w;
  /// Step amplitude of each true event, parallel to ground_truth.labels.
  std::vector<double> event_step_w;
  std::vector<NuisanceTransient> transients;
};

/// Deterministic for a fixed spec (including seed).
SynthOutput synth_recording(const SynthSpec& spec);

}  // namespace nilm
