#include "nilm/features.hpp"

#include <algorithm>
#include <complex>

#include <unsupported/Eigen/FFT>

namespace nilm {

namespace {

// Guards log() against zero bins; exact zero bins short-circuit to 0 before.
constexpr double kLogEpsilon = 1e-30;

}  // namespace

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Current: return "current";
    case FeatureKind::DeltaCurrent: return "delta-current";
    case FeatureKind::Admittance: return "admittance";
    case FeatureKind::Spf: return "spf";
    case FeatureKind::Cusum: return "cusum";
    case FeatureKind::DeltaCusum: return "delta-cusum";
  }
  return "?";
}

FeatureKind parse_feature_kind(std::string_view token) {
  for (auto kind : kAllFeatureKinds)
    if (to_string(kind) == token) return kind;
  throw ConfigError("feature", "unknown feature kind '" + std::string(token) + "'");
}

double spectral_flatness_of_spectrum(const Eigen::Ref<const Eigen::VectorXd>& energy) {
  const Eigen::Index n = energy.size();
  if (n == 0) throw DataError("spectral flatness of an empty spectrum");
  const double peak = energy.maxCoeff();
  if (!(peak > 0.0)) return 0.0;
  // Work on x / max so that an equal-bin spectrum gives exactly 1.
  double log_sum = 0.0;
  double sum = 0.0;
  for (Eigen::Index f = 0; f < n; ++f) {
    if (energy[f] == 0.0) return 0.0;
    const double x = energy[f] / peak;
    log_sum += std::log(x + kLogEpsilon);
    sum += x;
  }
  const double geometric = std::exp(log_sum / static_cast<double>(n));
  const double arithmetic = sum / static_cast<double>(n);
  return std::clamp(geometric / arithmetic, 0.0, 1.0);
}

Eigen::VectorXd period_energy_spectrum(const Eigen::Ref<const Eigen::VectorXd>& period) {
  const Eigen::Index n = period.size();
  if (n < 4) throw DataError("spectral flatness needs at least 4 samples per period");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> time(period.data(), period.data() + n);
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, time);
  const Eigen::Index bins = n / 2;
  Eigen::VectorXd energy(bins);
  for (Eigen::Index f = 1; f <= bins; ++f) energy[f - 1] = std::norm(freq[static_cast<std::size_t>(f)]);
  return energy;
}

PeriodSeries spectral_flatness(const Eigen::Ref<const Eigen::MatrixXd>& periods) {
  const Eigen::Index n = periods.rows();
  if (n < 4) throw DataError("spectral flatness needs at least 4 samples per period");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> time(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> freq;
  Eigen::VectorXd energy(n / 2);
  PeriodSeries out(periods.cols());
  for (Eigen::Index p = 0; p < periods.cols(); ++p) {
    for (Eigen::Index k = 0; k < n; ++k) time[static_cast<std::size_t>(k)] = periods(k, p);
    fft.fwd(freq, time);
    for (Eigen::Index f = 1; f <= n / 2; ++f) energy[f - 1] = std::norm(freq[static_cast<std::size_t>(f)]);
    out[p] = spectral_flatness_of_spectrum(energy);
  }
  return out;
}

PeriodMetrics compute_period_metrics(const Eigen::Ref<const SampleVector>& current,
                                     const Eigen::Ref<const SampleVector>& voltage, int samples_per_period,
                                     bool with_spf) {
  if (current.size() != voltage.size()) throw DataError("voltage and current lengths differ");
  if (samples_per_period <= 0 || current.size() % samples_per_period != 0)
    throw DataError("segment length is not a multiple of the period length");
  const Eigen::Index periods = current.size() / samples_per_period;
  using MapF = Eigen::Map<const Eigen::MatrixXf>;
  const MapF cur(current.data(), samples_per_period, periods);
  const MapF vol(voltage.data(), samples_per_period, periods);
  PeriodMetrics m;
  m.i_rms = rms_per_period(cur);
  m.u_rms = rms_per_period(vol);
  if (with_spf) m.spf = spectral_flatness(cur.cast<double>());
  return m;
}

bool needs_spf(FeatureKind kind) { return kind == FeatureKind::Spf; }
bool needs_voltage(FeatureKind kind) { return kind == FeatureKind::Admittance; }

Eigen::Index feature_length(FeatureKind, Eigen::Index n_periods) { return n_periods; }

FeatureVector feature_from_metrics(FeatureKind kind, const PeriodMetrics& metrics, Eigen::Index first,
                                   Eigen::Index count) {
  if (first < 0 || count < 2 || first + count > metrics.i_rms.size())
    throw DataError("feature window outside the computed periods");
  FeatureVector fv;
  fv.kind = kind;
  const auto i_rms = metrics.i_rms.segment(first, count);
  auto padded = [count](const PeriodSeries& d) {
    PeriodSeries out = PeriodSeries::Zero(count);
    out.head(d.size()) = d;
    return out;
  };
  switch (kind) {
    case FeatureKind::Current: fv.values = i_rms; break;
    case FeatureKind::DeltaCurrent: fv.values = padded(delta(i_rms)); break;
    case FeatureKind::Admittance: fv.values = admittance(i_rms, metrics.u_rms.segment(first, count)); break;
    case FeatureKind::Spf:
      if (metrics.spf.size() < first + count) throw DataError("spectral flatness was not computed");
      fv.values = metrics.spf.segment(first, count);
      break;
    case FeatureKind::Cusum: fv.values = cusum(i_rms); break;
    case FeatureKind::DeltaCusum: fv.values = padded(delta_cusum(i_rms)); break;
  }
  if (!fv.values.allFinite()) throw DataError("non-finite feature values");
  return fv;
}

FeatureVector extract_feature(const WaveformSegment& seg, FeatureKind kind) {
  if (seg.f0 <= 0 || seg.fs % seg.f0 != 0) throw DataError("segment fs is not a multiple of F0");
  const PeriodMetrics m = compute_period_metrics(seg.current, seg.voltage, seg.samples_per_period(), needs_spf(kind));
  return feature_from_metrics(kind, m, 0, m.i_rms.size());
}

}  // namespace nilm
