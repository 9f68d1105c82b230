#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "nilm/error.hpp"
#include "nilm/normalize.hpp"

using namespace nilm;

namespace {

FeatureMatrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const double scale = std::pow(10.0, static_cast<double>(c % 7) - 3.0);
    const double shift = 100.0 * g(rng);
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = shift + scale * g(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("fit on small matrices") {
  FeatureMatrix a(2, 2);
  a << 0, 10, 2, 30;
  const auto mm = fit(a, NormKind::MinMax);
  CHECK(mm.lo == Eigen::Vector2d(0, 10));
  CHECK(mm.hi == Eigen::Vector2d(2, 30));

  FeatureMatrix b(2, 2);
  b << 1, 1, 3, 1;
  const auto var = fit(b, NormKind::Variance);
  CHECK(var.lo == Eigen::Vector2d(2, 1));
  CHECK(var.hi == Eigen::Vector2d(1, 0));

  const auto none = fit(b, NormKind::None);
  CHECK(none.dim == 2);
  CHECK(none.lo.size() == 0);
  CHECK(none.hi.size() == 0);

  CHECK_THROWS_AS(fit(FeatureMatrix(1, 3), NormKind::MinMax), DataError);
  CHECK_THROWS_AS(fit(FeatureMatrix(0, 0), NormKind::Variance), DataError);
}

TEST_CASE("transform definitions") {
  FeatureMatrix a(3, 3);
  a << 0, 10, 5, 2, 30, 5, 1, 20, 5;
  const auto p = fit(a, NormKind::MinMax);
  CHECK(transform(a.row(0).transpose(), p) == Eigen::Vector3d(-1, -1, 0));
  CHECK(transform(a.row(1).transpose(), p) == Eigen::Vector3d(1, 1, 0));
  CHECK(transform(a.row(2).transpose(), p) == Eigen::Vector3d(0, 0, 0));
  // Test data may leave the training range without error.
  CHECK(transform(Eigen::Vector3d(4, 0, 9), p) == Eigen::Vector3d(3, -2, 0));

  const auto v = fit(a, NormKind::Variance);
  CHECK(transform(a.row(2).transpose(), v).isZero());

  const auto none = fit(a, NormKind::None);
  const Eigen::Vector3d x(0.1, -7.3, 1e-300);
  CHECK(transform(x, none) == x);

  CHECK_THROWS_AS(transform(Eigen::Vector2d(1, 2), p), DataError);
  CHECK_THROWS_AS(inverse_transform(Eigen::Vector2d(1, 2), p), DataError);
  CHECK_THROWS_AS(transform_rows(FeatureMatrix(3, 2), p), DataError);
}

TEST_CASE("training rows under their own fit") {
  std::mt19937_64 rng(31);
  const FeatureMatrix train = random_matrix(rng, 400, 60);

  const auto mm = fit(train, NormKind::MinMax);
  const FeatureMatrix tm = transform_rows(train, mm);
  CHECK(tm.minCoeff() >= -1.0);
  CHECK(tm.maxCoeff() <= 1.0);
  for (Eigen::Index c = 0; c < tm.cols(); ++c) {
    CHECK(tm.col(c).minCoeff() == -1.0);
    CHECK(tm.col(c).maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
  }

  const auto var = fit(train, NormKind::Variance);
  const FeatureMatrix tv = transform_rows(train, var);
  for (Eigen::Index c = 0; c < tv.cols(); ++c) {
    const double mean = tv.col(c).mean();
    const double sd = std::sqrt((tv.col(c).array() - mean).square().mean());
    CHECK(std::abs(sd - 1.0) <= 1e-9);
    CHECK(std::abs(mean) <= 1e-9);
  }
}

TEST_CASE("test rows use training statistics only") {
  std::mt19937_64 rng(37);
  const FeatureMatrix train = random_matrix(rng, 200, 25);
  const FeatureMatrix test = random_matrix(rng, 150, 25);
  for (NormKind kind : {NormKind::MinMax, NormKind::Variance}) {
    const auto p = fit(train, kind);
    const FeatureMatrix out = transform_rows(test, p);

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(test.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureMatrix shuffled(test.rows(), test.cols());
    for (Eigen::Index r = 0; r < test.rows(); ++r) shuffled.row(r) = test.row(perm[static_cast<std::size_t>(r)]);
    const FeatureMatrix out_shuffled = transform_rows(shuffled, p);
    for (Eigen::Index r = 0; r < test.rows(); ++r)
      CHECK(out_shuffled.row(r) == out.row(perm[static_cast<std::size_t>(r)]));

    // Replacing the rest of the test set does not move a row's output.
    FeatureMatrix other = random_matrix(rng, 150, 25);
    other.row(0) = test.row(0);
    CHECK(transform_rows(other, p).row(0) == out.row(0));
  }
}

TEST_CASE("inverse transform round trip") {
  std::mt19937_64 rng(41);
  FeatureMatrix train = random_matrix(rng, 100, 12);
  train.col(5).setConstant(3.25);
  for (NormKind kind : {NormKind::None, NormKind::MinMax, NormKind::Variance}) {
    const auto p = fit(train, kind);
    for (int i = 0; i < 50; ++i) {
      const Eigen::VectorXd x = random_matrix(rng, 1, 12).row(0).transpose();
      const Eigen::VectorXd back = inverse_transform(transform(x, p), p);
      for (Eigen::Index d = 0; d < 12; ++d) {
        if (d == 5 && kind != NormKind::None) {
          CHECK(transform(x, p)[d] == 0.0);
          CHECK(back[d] == 3.25);
        } else {
          CHECK(std::abs(back[d] - x[d]) <= 1e-9 * std::max(1.0, std::abs(x[d])));
        }
      }
    }
  }
}

TEST_CASE("tokens") {
  for (NormKind k : {NormKind::None, NormKind::MinMax, NormKind::Variance}) CHECK(parse_norm_kind(to_string(k)) == k);
  CHECK_THROWS(parse_norm_kind("zscore"));
}
