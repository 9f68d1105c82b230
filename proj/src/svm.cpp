#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include "nilm/classify.hpp"
#include "nilm/error.hpp"

namespace nilm {

namespace {

constexpr double kTau = 1e-12;

/// LRU cache of signed kernel columns Q(:, i) = y_i y_k k(x_i, x_k), bounded
/// by a byte budget. At least two columns are always kept.
class KernelColumnCache {
 public:
  KernelColumnCache(const Eigen::MatrixXd& points, const Eigen::VectorXd& y, double gamma, std::size_t budget)
      : points_(points), y_(y), gamma_(gamma) {
    const std::size_t col_bytes = static_cast<std::size_t>(points.cols()) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, col_bytes == 0 ? 2 : budget / col_bytes);
  }

  const Eigen::VectorXd& column(Eigen::Index i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->values;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().id);
      lru_.pop_back();
    }
    Entry e{i, Eigen::VectorXd(points_.cols())};
    const auto xi = points_.col(i);
    for (Eigen::Index k = 0; k < points_.cols(); ++k) {
      const double v = y_[i] * y_[k] * rbf_kernel(xi, points_.col(k), gamma_);
      if (!std::isfinite(v)) throw DataError("svm: non-finite kernel value");
      e.values[k] = v;
    }
    lru_.push_front(std::move(e));
    index_[i] = lru_.begin();
    return lru_.front().values;
  }

 private:
  struct Entry {
    Eigen::Index id;
    Eigen::VectorXd values;
  };
  const Eigen::MatrixXd& points_;
  const Eigen::VectorXd& y_;
  double gamma_;
  std::size_t capacity_;
  std::list<Entry> lru_;
  std::unordered_map<Eigen::Index, std::list<Entry>::iterator> index_;
};

}  // namespace

SvmModel svm_train(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels, double c,
                   double gamma, const SvmOptions& options) {
  const Eigen::Index n = rows.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw DataError("svm_train: label count mismatch");
  if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("classifier.c", "C must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("classifier.gamma", "gamma must be positive");
  if (!rows.allFinite()) throw DataError("svm_train: non-finite feature values");
  const bool has_event = std::find(labels.begin(), labels.end(), Label::Event) != labels.end();
  const bool has_non = std::find(labels.begin(), labels.end(), Label::NonEvent) != labels.end();
  if (!has_event || !has_non) throw DataError("svm_train: both classes are required");

  const Eigen::MatrixXd points = rows.transpose();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = sign_of(labels[static_cast<std::size_t>(i)]);

  KernelColumnCache cache(points, y, gamma, options.cache_bytes);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0);  // Q alpha - e
  // RBF kernel: k(x, x) = 1.
  const double qd = 1.0;

  auto is_upper = [&](Eigen::Index t) { return alpha[t] >= c; };
  auto is_lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };
  auto in_up = [&](Eigen::Index t) { return y[t] > 0 ? !is_upper(t) : !is_lower(t); };
  auto in_low = [&](Eigen::Index t) { return y[t] > 0 ? !is_lower(t) : !is_upper(t); };

  SvmModel model;
  model.c = c;
  model.gamma = gamma;
  long iter = 0;
  double gap = 0.0;
  while (true) {
    // Maximal violating pair.
    double g_max = -std::numeric_limits<double>::infinity();
    double g_min = std::numeric_limits<double>::infinity();
    Eigen::Index i = -1, j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (in_up(t) && v > g_max) {
        g_max = v;
        i = t;
      }
      if (in_low(t) && v < g_min) {
        g_min = v;
        j = t;
      }
    }
    gap = g_max - g_min;
    if (i < 0 || j < 0 || gap <= options.eps) {
      model.converged = true;
      break;
    }
    if (iter >= options.max_iterations) break;
    ++iter;

    const Eigen::VectorXd& q_i = cache.column(i);
    const double q_ij = q_i[j];
    const Eigen::VectorXd q_i_copy = q_i;  // the next lookup may evict it
    const Eigen::VectorXd& q_j = cache.column(j);

    const double old_ai = alpha[i];
    const double old_aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = qd + qd + 2.0 * q_ij;
      if (quad <= 0) quad = kTau;
      const double step = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += step;
      alpha[j] += step;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = qd + qd - 2.0 * q_ij;
      if (quad <= 0) quad = kTau;
      const double step = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= step;
      alpha[j] += step;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }

    const double d_ai = alpha[i] - old_ai;
    const double d_aj = alpha[j] - old_aj;
    grad += q_i_copy * d_ai + q_j * d_aj;

    if (options.record_trace) {
      // D(alpha) = e'alpha - 1/2 alpha'Q alpha = -1/2 alpha'(G - e).
      model.objective_trace.push_back(-0.5 * alpha.dot(grad - Eigen::VectorXd::Ones(n)));
    }
  }
  model.iterations = iter;
  model.kkt_residual = gap;

  // Bias from the free support vectors, else the midpoint of the feasible range.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  long n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (is_upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (is_lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  model.bias = -rho;

  Eigen::Index n_sv = 0;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha[t] > 0.0) ++n_sv;
  model.support.resize(points.rows(), n_sv);
  model.coef.resize(n_sv);
  Eigen::Index s = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      model.support.col(s) = points.col(t);
      model.coef[s] = alpha[t] * y[t];
      ++s;
    }
  }
  model.alpha = std::move(alpha);
  return model;
}

double svm_decision(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != model.support.rows())
    throw DataError("svm: query dimension " + std::to_string(v.size()) + " != model dimension " +
                    std::to_string(model.support.rows()));
  double sum = 0.0;
  for (Eigen::Index s = 0; s < model.support.cols(); ++s)
    sum += model.coef[s] * rbf_kernel(model.support.col(s), v, model.gamma);
  return sum + model.bias;
}

Label svm_predict(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return svm_decision(model, v) > 0.0 ? Label::Event : Label::NonEvent;
}

}  // namespace nilm
