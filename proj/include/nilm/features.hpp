#pragma once

#include <cmath>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "nilm/error.hpp"
#include "nilm/signal_io.hpp"

namespace nilm {

/// The six per-period event metrics.
enum class FeatureKind { Current, DeltaCurrent, Admittance, Spf, Cusum, DeltaCusum };

inline constexpr FeatureKind kAllFeatureKinds[] = {FeatureKind::Current, FeatureKind::DeltaCurrent,
                                                   FeatureKind::Admittance, FeatureKind::Spf,
                                                   FeatureKind::Cusum, FeatureKind::DeltaCusum};

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view token);

enum class Channel { Voltage, Current };

/// Accumulation type: float samples are reduced in double.
template <typename Scalar>
using accum_t = std::conditional_t<std::is_same_v<Scalar, float>, double, Scalar>;

template <typename Scalar>
using Series = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One value per mains period.
using PeriodSeries = Series<double>;

struct FeatureVector {
  FeatureKind kind = FeatureKind::Current;
  Eigen::VectorXd values;
};

/// View of `samples` as an N x nPeriods matrix, one period per column.
template <typename Scalar>
Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> periodize(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& samples, int samples_per_period) {
  if (samples_per_period <= 0 || samples.size() % samples_per_period != 0)
    throw DataError("segment length " + std::to_string(samples.size()) +
                    " is not a multiple of the period length " + std::to_string(samples_per_period));
  return {samples.data(), samples_per_period, samples.size() / samples_per_period};
}

inline auto periodize(const WaveformSegment& seg, Channel channel) {
  return periodize(channel == Channel::Current ? seg.current : seg.voltage, seg.samples_per_period());
}

/// sqrt(mean(x^2)) of every column. Summation runs in sample order, so equal
/// periods give bit-identical results wherever they sit in memory.
template <typename Derived>
Series<accum_t<typename Derived::Scalar>> rms_per_period(const Eigen::MatrixBase<Derived>& periods) {
  using Acc = accum_t<typename Derived::Scalar>;
  if (periods.cols() == 0 || periods.rows() == 0) throw DataError("rms_per_period: no periods");
  Series<Acc> out(periods.cols());
  for (Eigen::Index p = 0; p < periods.cols(); ++p) {
    Acc sum = 0;
    for (Eigen::Index k = 0; k < periods.rows(); ++k) {
      const Acc x = static_cast<Acc>(periods(k, p));
      sum += x * x;
    }
    out[p] = std::sqrt(sum / static_cast<Acc>(periods.rows()));
  }
  return out;
}

/// out[k] = in[k] - in[k+1] (negated forward difference); length n-1.
template <typename Derived>
Series<typename Derived::Scalar> delta(const Eigen::MatrixBase<Derived>& series) {
  const Eigen::Index n = series.size();
  if (n < 2) throw DataError("delta needs at least 2 periods");
  return series.head(n - 1) - series.tail(n - 1);
}

/// Element-wise i_rms / u_rms. Throws on length mismatch or when any voltage
/// value is at or below `u_floor` (dead channel).
template <typename DerivedI, typename DerivedU>
Series<typename DerivedI::Scalar> admittance(const Eigen::MatrixBase<DerivedI>& i_rms,
                                             const Eigen::MatrixBase<DerivedU>& u_rms,
                                             typename DerivedI::Scalar u_floor = 1.0) {
  if (i_rms.size() != u_rms.size()) throw DataError("admittance: current/voltage length mismatch");
  for (Eigen::Index p = 0; p < u_rms.size(); ++p)
    if (!(u_rms[p] > u_floor)) throw DataError("admittance: voltage at or below floor (dead channel?)");
  return i_rms.cwiseQuotient(u_rms);
}

/// Cumulative sum of deviations from the series mean.
template <typename Derived>
Series<typename Derived::Scalar> cusum(const Eigen::MatrixBase<Derived>& series) {
  using S = typename Derived::Scalar;
  const Eigen::Index n = series.size();
  if (n < 1) throw DataError("cusum of an empty series");
  S sum = 0;
  for (Eigen::Index k = 0; k < n; ++k) sum += series[k];
  const S mean = sum / static_cast<S>(n);
  Series<S> out(n);
  S acc = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    acc += series[k] - mean;
    out[k] = acc;
  }
  return out;
}

template <typename Derived>
Series<typename Derived::Scalar> delta_cusum(const Eigen::MatrixBase<Derived>& series) {
  if (series.size() < 2) throw DataError("delta_cusum needs at least 2 periods");
  return delta(cusum(series));
}

/// Geometric over arithmetic mean of an energy spectrum, in [0, 1].
/// An exact zero bin or an all-zero spectrum yields 0.
double spectral_flatness_of_spectrum(const Eigen::Ref<const Eigen::VectorXd>& energy);

/// Per-period spectral flatness of the magnitude-squared DFT, DC excluded,
/// bins up to Nyquist, no window. Needs N >= 4.
PeriodSeries spectral_flatness(const Eigen::Ref<const Eigen::MatrixXd>& periods);

/// Energy spectrum |X_f|^2 for f = 1 .. N/2 of one period.
Eigen::VectorXd period_energy_spectrum(const Eigen::Ref<const Eigen::VectorXd>& period);

/// Per-period metrics of a contiguous stretch of periods.
struct PeriodMetrics {
  PeriodSeries i_rms;
  PeriodSeries u_rms;
  PeriodSeries spf;  ///< empty unless requested
};

/// RMS current and voltage per period; spectral flatness only on request.
PeriodMetrics compute_period_metrics(const Eigen::Ref<const SampleVector>& current,
                                     const Eigen::Ref<const SampleVector>& voltage, int samples_per_period,
                                     bool with_spf);

bool needs_spf(FeatureKind kind);
bool needs_voltage(FeatureKind kind);

/// Fixed feature length for a window of `n_periods` periods.
Eigen::Index feature_length(FeatureKind kind, Eigen::Index n_periods);

/// Builds the feature of `kind` from `count` periods starting at `first`.
/// Delta kinds are padded with one trailing zero.
FeatureVector feature_from_metrics(FeatureKind kind, const PeriodMetrics& metrics, Eigen::Index first,
                                   Eigen::Index count);

FeatureVector extract_feature(const WaveformSegment& seg, FeatureKind kind);

}  // namespace nilm
