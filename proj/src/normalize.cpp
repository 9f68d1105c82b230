#include "nilm/normalize.hpp"

#include <cmath>
#include <string>

#include "nilm/error.hpp"

namespace nilm {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::None: return "none";
    case NormKind::MinMax: return "minmax";
    case NormKind::Variance: return "variance";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view token) {
  if (token == "none") return NormKind::None;
  if (token == "minmax") return NormKind::MinMax;
  if (token == "variance") return NormKind::Variance;
  throw ConfigError("normalization", "unknown normalization '" + std::string(token) + "'");
}

NormalizationParams fit(const Eigen::Ref<const FeatureMatrix>& matrix, NormKind kind) {
  if (matrix.rows() < 2) throw DataError("normalization fit needs at least 2 rows");
  if (matrix.cols() == 0) throw DataError("normalization fit on zero-dimensional features");
  NormalizationParams p;
  p.kind = kind;
  p.dim = matrix.cols();
  const auto n = static_cast<double>(matrix.rows());
  switch (kind) {
    case NormKind::None: break;
    case NormKind::MinMax:
      p.lo = matrix.colwise().minCoeff().transpose();
      p.hi = matrix.colwise().maxCoeff().transpose();
      break;
    case NormKind::Variance: {
      p.lo.resize(p.dim);
      p.hi.resize(p.dim);
      for (Eigen::Index d = 0; d < p.dim; ++d) {
        double sum = 0.0;
        for (Eigen::Index r = 0; r < matrix.rows(); ++r) sum += matrix(r, d);
        const double mean = sum / n;
        double ss = 0.0;
        for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
          const double dev = matrix(r, d) - mean;
          ss += dev * dev;
        }
        p.lo[d] = mean;
        p.hi[d] = std::sqrt(ss / n);
      }
      break;
    }
  }
  return p;
}

namespace {

void check_dim(Eigen::Index got, const NormalizationParams& p) {
  if (got != p.dim)
    throw DataError("feature dimension " + std::to_string(got) + " does not match normalization dimension " +
                    std::to_string(p.dim));
}

}  // namespace

Eigen::VectorXd transform(const Eigen::Ref<const Eigen::VectorXd>& v, const NormalizationParams& p) {
  check_dim(v.size(), p);
  Eigen::VectorXd out(v.size());
  switch (p.kind) {
    case NormKind::None: out = v; break;
    case NormKind::MinMax:
      for (Eigen::Index d = 0; d < v.size(); ++d) {
        const double range = p.hi[d] - p.lo[d];
        out[d] = range > 0.0 ? 2.0 * (v[d] - p.lo[d]) / range - 1.0 : 0.0;
      }
      break;
    case NormKind::Variance:
      for (Eigen::Index d = 0; d < v.size(); ++d) out[d] = p.hi[d] > 0.0 ? (v[d] - p.lo[d]) / p.hi[d] : 0.0;
      break;
  }
  return out;
}

FeatureMatrix transform_rows(const Eigen::Ref<const FeatureMatrix>& matrix, const NormalizationParams& p) {
  check_dim(matrix.cols(), p);
  FeatureMatrix out(matrix.rows(), matrix.cols());
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) out.row(r) = transform(matrix.row(r).transpose(), p).transpose();
  return out;
}

Eigen::VectorXd inverse_transform(const Eigen::Ref<const Eigen::VectorXd>& v, const NormalizationParams& p) {
  check_dim(v.size(), p);
  Eigen::VectorXd out(v.size());
  switch (p.kind) {
    case NormKind::None: out = v; break;
    case NormKind::MinMax:
      for (Eigen::Index d = 0; d < v.size(); ++d) {
        const double range = p.hi[d] - p.lo[d];
        out[d] = range > 0.0 ? (v[d] + 1.0) * range / 2.0 + p.lo[d] : p.lo[d];
      }
      break;
    case NormKind::Variance:
      for (Eigen::Index d = 0; d < v.size(); ++d) out[d] = p.hi[d] > 0.0 ? v[d] * p.hi[d] + p.lo[d] : p.lo[d];
      break;
  }
  return out;
}

}  // namespace nilm
