#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "nilm/features.hpp"
#include "nilm/normalize.hpp"

namespace nilm {

enum class Label { NonEvent = 0, Event = 1 };

/// Where a training sample came from.
enum class SampleOrigin { GroundTruthEvent, RandomNonEvent, AdaptiveFp };

std::string_view to_string(SampleOrigin origin);

/// Raw (un-normalised) feature vector with its class. Normalisation is
/// fitted per training round, so samples keep the raw values.
struct LabeledSample {
  FeatureVector feature;
  Label label = Label::NonEvent;
  SampleOrigin origin = SampleOrigin::RandomNonEvent;
  std::int64_t sample_index = 0;
  double center_s = 0.0;
};

inline int sign_of(Label label) { return label == Label::Event ? 1 : -1; }

// ---------------------------------------------------------------------------
// K nearest neighbours

/// Training samples as columns, kept in ascending sample_index order so that
/// the model does not depend on insertion order.
struct KnnModel {
  Eigen::MatrixXd points;
  std::vector<Label> labels;
  std::vector<std::int64_t> indices;
  int k = 1;
};

/// `rows` holds one sample per row.
KnnModel knn_fit(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels,
                 std::span<const std::int64_t> indices, int k);

/// Column positions of the K nearest samples ordered by (distance, sample_index).
std::vector<Eigen::Index> knn_neighbors(const KnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Uniform majority vote under Euclidean distance; even-K ties go to NonEvent.
Label knn_predict(const KnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);

// ---------------------------------------------------------------------------
// RBF-kernel SVM trained by sequential minimal optimisation

struct SvmOptions {
  double eps = 1e-3;                   ///< maximal KKT violation at convergence
  long max_iterations = 1'000'000;     ///< pair updates
  std::size_t cache_bytes = 256u << 20;
  bool record_trace = false;           ///< keep the dual objective per iteration
};

struct SvmModel {
  Eigen::MatrixXd support;  ///< support vectors as columns
  Eigen::VectorXd coef;     ///< alpha_i * y_i
  double bias = 0.0;
  double c = 1.0;
  double gamma = 1.0;
  bool converged = false;
  long iterations = 0;
  double kkt_residual = 0.0;
  /// Dual objective sum(alpha) - 1/2 alpha'Q alpha after each update
  /// (only with SvmOptions::record_trace; not serialised).
  std::vector<double> objective_trace;
  /// Full alpha vector of the training problem (not serialised).
  Eigen::VectorXd alpha;
};

inline double rbf_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& z,
                         double gamma);

SvmModel svm_train(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels, double c,
                   double gamma, const SvmOptions& options = {});

/// sum_i coef_i k(x_i, v) + bias.
double svm_decision(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Event when the decision value is strictly positive.
Label svm_predict(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);

// ---------------------------------------------------------------------------
// Hyper-parameter grid search

struct SvmGrid {
  std::vector<double> c;
  std::vector<double> gamma;
  int folds = 5;
};

/// C in 2^-5 .. 2^15, gamma in 2^-15 .. 2^9, exponent step 2.
SvmGrid default_svm_grid();

struct GridResult {
  double c = 0.0;
  double gamma = 0.0;
  double cv_score = 0.0;
};

/// Exhaustive search scored by the pooled cross-validated F-score of the
/// Event class. Folds are stratified by class in sample_index order; ties
/// go to the smaller C, then the smaller gamma.
GridResult grid_search(const Eigen::Ref<const FeatureMatrix>& rows, std::span<const Label> labels,
                       std::span<const std::int64_t> indices, const SvmGrid& grid, const SvmOptions& options = {},
                       int jobs = 1);

/// Stratified fold id of every sample (same order as the inputs).
std::vector<int> stratified_folds(std::span<const Label> labels, std::span<const std::int64_t> indices, int folds);

// ---------------------------------------------------------------------------
// Trained model with its feature and normalisation context

enum class ClassifierKind { Knn, Svm };

std::string_view to_string(ClassifierKind kind);
ClassifierKind parse_classifier_kind(std::string_view token);

struct ModelConfig {
  FeatureKind feature = FeatureKind::Cusum;
  NormKind norm = NormKind::Variance;
  ClassifierKind classifier = ClassifierKind::Knn;
  int k = 87;
  double c = 1.0;
  double gamma = 1.0;
  std::optional<SvmGrid> grid;  ///< when set, C and gamma come from grid_search
  SvmOptions svm;
  int jobs = 1;
};

struct TrainedModel {
  FeatureKind feature = FeatureKind::Cusum;
  NormalizationParams norm;
  int fs = 0;
  int f0 = 0;
  double window_s = 10.0;
  std::variant<KnnModel, SvmModel> classifier;
  std::optional<GridResult> grid;

  ClassifierKind variant() const {
    return std::holds_alternative<KnnModel>(classifier) ? ClassifierKind::Knn : ClassifierKind::Svm;
  }
  Eigen::Index dim() const { return norm.dim; }
};

/// Fits normalisation on the raw sample matrix, then trains the classifier.
TrainedModel train_model(std::span<const LabeledSample> samples, const ModelConfig& config, int fs, int f0,
                         double window_s = 10.0);

/// Classifies an already normalised vector.
Label predict_normalized(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Applies the stored normalisation, then classifies.
Label predict(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& raw);

/// Stacks raw sample features into a matrix, one row per sample.
FeatureMatrix stack_features(std::span<const LabeledSample> samples);

inline constexpr int kModelFormatVersion = 1;

std::string model_to_text(const TrainedModel& model);
TrainedModel model_from_text(std::string_view text);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

inline double rbf_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& z,
                         double gamma) {
  double d2 = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = x[i] - z[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

}  // namespace nilm
