#include <algorithm>
#include <cmath>
#include <numeric>

#include "nilm/classify.hpp"
#include "nilm/error.hpp"
#include "nilm/parallel.hpp"

namespace nilm {

SvmGrid default_svm_grid() {
  SvmGrid g;
  for (int e = -5; e <= 15; e += 2) g.c.push_back(std::ldexp(1.0, e));
  for (int e = -15; e <= 9; e += 2) g.gamma.push_back(std::ldexp(1.0, e));
  return g;
}

std::vector<int> stratified_folds(std::span<const Label> labels, std::span<const std::int64_t> indices, int folds) {
  if (folds < 2) throw ConfigError("grid.folds", "need at least 2 folds");
  if (labels.size() != indices.size()) throw DataError("stratified_folds: label/index count mismatch");
  std::vector<int> fold(labels.size(), 0);
  for (Label cls : {Label::NonEvent, Label::Event}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    if (members.size() < static_cast<std::size_t>(folds))
      throw DataError("degenerate folds: class has " + std::to_string(members.size()) + " samples for " +
                      std::to_string(folds) + " folds");
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return indices[a] < indices[b]; });
    for (std::size_t r = 0; r < members.size(); ++r) fold[members[r]] = static_cast<int>(r % folds);
  }
  return fold;
}

GridResult grid_search(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels,
                       std::span<const std::int64_t> indices, const SvmGrid& grid, const SvmOptions& options,
                       int jobs) {
  if (grid.c.empty() || grid.gamma.empty()) throw ConfigError("grid", "grid must not be empty");
  const auto fold = stratified_folds(labels, indices, grid.folds);

  std::vector<double> cs = grid.c, gammas = grid.gamma;
  std::sort(cs.begin(), cs.end());
  std::sort(gammas.begin(), gammas.end());
  const std::size_t cells = cs.size() * gammas.size();
  std::vector<double> score(cells, 0.0);

  parallel_for(cells, jobs, [&](std::size_t cell) {
    const double c = cs[cell / gammas.size()];
    const double gamma = gammas[cell % gammas.size()];
    long tp = 0, fp = 0, fn = 0;
    for (int f = 0; f < grid.folds; ++f) {
      std::vector<Eigen::Index> train, test;
      for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
      FeatureMatrix x(static_cast<Eigen::Index>(train.size()), rows.cols());
      std::vector<Label> y;
      for (std::size_t r = 0; r < train.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = rows.row(train[r]);
        y.push_back(labels[static_cast<std::size_t>(train[r])]);
      }
      const SvmModel m = svm_train(x, y, c, gamma, options);
      for (auto t : test) {
        const bool truth = labels[static_cast<std::size_t>(t)] == Label::Event;
        const bool pred = svm_predict(m, rows.row(t).transpose()) == Label::Event;
        if (pred && truth) ++tp;
        else if (pred) ++fp;
        else if (truth) ++fn;
      }
    }
    const double denom = 2.0 * tp + fp + fn;
    score[cell] = denom > 0 ? 2.0 * tp / denom : 0.0;
  });

  GridResult best{cs[0], gammas[0], score[0]};
  for (std::size_t cell = 1; cell < cells; ++cell) {
    if (score[cell] > best.cv_score) best = {cs[cell / gammas.size()], gammas[cell % gammas.size()], score[cell]};
  }
  return best;
}

}  // namespace nilm
