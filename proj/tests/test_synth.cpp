#include <doctest.h>

#include <cstring>

#include "nilm/error.hpp"
#include "nilm/synth.hpp"

using namespace nilm;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.duration_s = 600.0;
  s.n_true_events = 12;
  s.n_nuisance_transients = 20;
  s.seed = 5;
  return s;
}

bool same_samples(const SampleVector& a, const SampleVector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

}  // namespace

TEST_CASE("same spec gives bit-identical output") {
  const SynthOutput a = synth_recording(small_spec());
  const SynthOutput b = synth_recording(small_spec());
  CHECK(same_samples(a.recording.current, b.recording.current));
  CHECK(same_samples(a.recording.voltage, b.recording.voltage));
  CHECK(a.ground_truth == b.ground_truth);

  SynthSpec other = small_spec();
  other.seed = 6;
  const SynthOutput c = synth_recording(other);
  CHECK_FALSE(same_samples(a.recording.current, c.recording.current));
}

TEST_CASE("label count and spacing") {
  SynthSpec s;
  s.duration_s = 7200.0;
  s.n_true_events = 100;
  s.n_nuisance_transients = 300;
  s.seed = 1;
  const SynthOutput out = synth_recording(s);
  REQUIRE(out.ground_truth.size() == 100);
  CHECK(out.transients.size() == 300);
  const auto t = out.ground_truth.times();
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] - t[i - 1] >= 10.0 - 1e-9);
  CHECK(t.front() >= 10.0 - 1e-3);
  CHECK(t.back() <= 7200.0 - 10.0 + 1e-3);
  CHECK(out.recording.duration_s() == doctest::Approx(7200.0));
}

TEST_CASE("no true events still yields nuisance transients") {
  SynthSpec s = small_spec();
  s.n_true_events = 0;
  const SynthOutput out = synth_recording(s);
  CHECK(out.ground_truth.empty());
  CHECK(out.transients.size() == 20);
  const double lo = out.period_power_w.minCoeff();
  const double hi = out.period_power_w.maxCoeff();
  CHECK(hi - lo >= 10.0);
}

TEST_CASE("every true event is a sustained step of at least the minimum amplitude") {
  for (OffMode mode : {OffMode::Ramp, OffMode::Step}) {
    SynthSpec s;
    s.duration_s = 3600.0;
    s.n_true_events = 60;
    s.n_nuisance_transients = 150;
    s.off_mode = mode;
    s.seed = 11;
    const SynthOutput out = synth_recording(s);
    const Eigen::VectorXd& p = out.period_power_w;
    const int f0 = s.f0;
    for (std::size_t i = 0; i < out.ground_truth.size(); ++i) {
      const auto& l = out.ground_truth.labels[i];
      const auto pe = static_cast<Eigen::Index>(std::floor(l.time_s * f0));
      const double before = p[pe - 1];
      const double sign = l.kind == EventKind::On ? 1.0 : -1.0;
      const auto hold = static_cast<Eigen::Index>(s.event_hold_min_s * f0);
      double worst = 1e300;
      for (Eigen::Index q = pe + 1; q <= pe + hold; ++q) worst = std::min(worst, sign * (p[q] - before));
      CHECK(worst >= s.event_step_min_w - 1e-9);
      CHECK(out.event_step_w[i] >= s.event_step_min_w);
      CHECK(out.event_step_w[i] <= s.event_step_max_w);
    }
  }
}

TEST_CASE("nuisance transients are short or slow and stay clear of events") {
  const SynthOutput out = synth_recording(small_spec());
  const auto times = out.ground_truth.times();
  for (const auto& tr : out.transients) {
    if (tr.shape == TransientShape::Pulse) {
      CHECK(tr.length_s >= 0.2);
      CHECK(tr.length_s < 5.0);
    } else {
      CHECK(tr.length_s >= 2.0);
      CHECK(tr.length_s <= 15.0);
    }
    CHECK(tr.amplitude_w >= 10.0);
    CHECK(tr.amplitude_w <= 120.0);
    for (double t : times) {
      const bool clear = t < tr.start_s - 6.0 || t > tr.start_s + tr.length_s + 6.0;
      CHECK(clear);
    }
  }
}

TEST_CASE("invalid specs") {
  SynthSpec s = small_spec();
  SUBCASE("negative events") {
    s.n_true_events = -1;
    CHECK_THROWS_AS(synth_recording(s), ConfigError);
  }
  SUBCASE("negative nuisance") {
    s.n_nuisance_transients = -1;
    CHECK_THROWS_AS(synth_recording(s), ConfigError);
  }
  SUBCASE("too many events for the duration") {
    s.n_true_events = 60;
    CHECK_THROWS_AS(synth_recording(s), ConfigError);
    s.n_true_events = 59;
    s.n_nuisance_transients = 0;
    CHECK_NOTHROW(synth_recording(s));
  }
  SUBCASE("fs not a multiple of F0") {
    s.fs = 1000;
    s.f0 = 60;
    CHECK_THROWS_AS(synth_recording(s), ConfigError);
  }
}
