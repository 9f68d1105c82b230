#pragma once

#include <string_view>

#include <Eigen/Core>

namespace nilm {

enum class NormKind { None, MinMax, Variance };

std::string_view to_string(NormKind kind);
NormKind parse_norm_kind(std::string_view token);

/// Rows are samples, columns are feature dimensions.
using FeatureMatrix = Eigen::MatrixXd;

/// Per-dimension statistics fitted on a training matrix. For MinMax `lo`/`hi`
/// hold min/max; for Variance they hold mean/std (population). None keeps
/// only the dimension.
struct NormalizationParams {
  NormKind kind = NormKind::None;
  Eigen::Index dim = 0;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;
};

NormalizationParams fit(const Eigen::Ref<const FeatureMatrix>& matrix, NormKind kind);

/// MinMax maps [min, max] to [-1, 1]; Variance standardises. Constant
/// dimensions map to 0. Values outside the training range are allowed.
Eigen::VectorXd transform(const Eigen::Ref<const Eigen::VectorXd>& v, const NormalizationParams& p);
FeatureMatrix transform_rows(const Eigen::Ref<const FeatureMatrix>& matrix, const NormalizationParams& p);

/// Inverse of transform on non-constant dimensions; constant dimensions
/// come back as the fitted constant.
Eigen::VectorXd inverse_transform(const Eigen::Ref<const Eigen::VectorXd>& v, const NormalizationParams& p);

}  // namespace nilm
