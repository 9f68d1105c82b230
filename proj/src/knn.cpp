#include <algorithm>
#include <numeric>

#include "nilm/classify.hpp"
#include "nilm/error.hpp"

namespace nilm {

namespace {

double squared_distance(const double* a, const double* b, Eigen::Index n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    const double d0 = a[i] - b[i];
    const double d1 = a[i + 1] - b[i + 1];
    const double d2 = a[i + 2] - b[i + 2];
    const double d3 = a[i + 3] - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

std::string_view to_string(SampleOrigin origin) {
  switch (origin) {
    case SampleOrigin::GroundTruthEvent: return "ground_truth_event";
    case SampleOrigin::RandomNonEvent: return "random_non_event";
    case SampleOrigin::AdaptiveFp: return "adaptive_fp";
  }
  return "?";
}

KnnModel knn_fit(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels,
                 std::span<const std::int64_t> indices, int k) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (labels.size() != n || indices.size() != n) throw DataError("knn_fit: label/index count mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ConfigError("classifier.k", "K=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  if (!rows.allFinite()) throw DataError("knn_fit: non-finite feature values");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return indices[a] < indices[b]; });
  for (std::size_t i = 1; i < n; ++i)
    if (indices[order[i]] == indices[order[i - 1]]) throw DataError("knn_fit: duplicate sample_index");

  KnnModel m;
  m.k = k;
  m.points.resize(rows.cols(), static_cast<Eigen::Index>(n));
  m.labels.reserve(n);
  m.indices.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    m.points.col(static_cast<Eigen::Index>(c)) = rows.row(static_cast<Eigen::Index>(order[c])).transpose();
    m.labels.push_back(labels[order[c]]);
    m.indices.push_back(indices[order[c]]);
  }
  return m;
}

std::vector<Eigen::Index> knn_neighbors(const KnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != model.points.rows())
    throw DataError("knn: query dimension " + std::to_string(v.size()) + " != model dimension " +
                    std::to_string(model.points.rows()));
  const Eigen::Index n = model.points.cols();
  const Eigen::VectorXd q = v;
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c)
    dist[static_cast<std::size_t>(c)] = squared_distance(model.points.col(c).data(), q.data(), q.size());

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  // Columns are in sample_index order, so the column position breaks ties.
  auto closer = [&](Eigen::Index a, Eigen::Index b) {
    const double da = dist[static_cast<std::size_t>(a)];
    const double db = dist[static_cast<std::size_t>(b)];
    return da != db ? da < db : a < b;
  };
  const auto k = static_cast<std::ptrdiff_t>(model.k);
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), closer);
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end(), closer);
  return order;
}

Label knn_predict(const KnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  int events = 0;
  const auto nb = knn_neighbors(model, v);
  for (auto c : nb)
    if (model.labels[static_cast<std::size_t>(c)] == Label::Event) ++events;
  const int others = static_cast<int>(nb.size()) - events;
  return events > others ? Label::Event : Label::NonEvent;
}

}  // namespace nilm
