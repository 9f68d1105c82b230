#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nilm/classify.hpp"
#include "nilm/error.hpp"

namespace nilm {

using json = nlohmann::json;

std::string_view to_string(ClassifierKind kind) { return kind == ClassifierKind::Knn ? "knn" : "svm"; }

ClassifierKind parse_classifier_kind(std::string_view token) {
  if (token == "knn") return ClassifierKind::Knn;
  if (token == "svm") return ClassifierKind::Svm;
  throw ConfigError("classifier.type", "unknown classifier '" + std::string(token) + "'");
}

FeatureMatrix stack_features(std::span<const LabeledSample> samples) {
  if (samples.empty()) throw DataError("no training samples");
  const Eigen::Index dim = samples.front().feature.values.size();
  FeatureMatrix m(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].feature.values.size() != dim) throw DataError("training samples differ in dimension");
    m.row(static_cast<Eigen::Index>(r)) = samples[r].feature.values.transpose();
  }
  return m;
}

TrainedModel train_model(std::span<const LabeledSample> samples, const ModelConfig& config, int fs, int f0,
                         double window_s) {
  const FeatureMatrix raw = stack_features(samples);
  std::vector<Label> labels;
  std::vector<std::int64_t> indices;
  for (const auto& s : samples) {
    if (s.feature.kind != config.feature) throw DataError("training sample has a different feature kind");
    labels.push_back(s.label);
    indices.push_back(s.sample_index);
  }

  TrainedModel model;
  model.feature = config.feature;
  model.fs = fs;
  model.f0 = f0;
  model.window_s = window_s;
  model.norm = fit(raw, config.norm);
  const FeatureMatrix x = transform_rows(raw, model.norm);

  if (config.classifier == ClassifierKind::Knn) {
    model.classifier = knn_fit(x, labels, indices, config.k);
  } else {
    double c = config.c, gamma = config.gamma;
    if (config.grid) {
      model.grid = grid_search(x, labels, indices, *config.grid, config.svm, config.jobs);
      c = model.grid->c;
      gamma = model.grid->gamma;
    }
    SvmModel svm = svm_train(x, labels, c, gamma, config.svm);
    svm.alpha.resize(0);
    model.classifier = std::move(svm);
  }
  return model;
}

Label predict_normalized(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (const auto* knn = std::get_if<KnnModel>(&model.classifier)) return knn_predict(*knn, v);
  return svm_predict(std::get<SvmModel>(model.classifier), v);
}

Label predict(const TrainedModel& model, const Eigen::Ref<const Eigen::VectorXd>& raw) {
  return predict_normalized(model, transform(raw, model.norm));
}

namespace {

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json columns_json(const Eigen::MatrixXd& m) {
  json cols = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) cols.push_back(vector_json(m.col(c)));
  return cols;
}

Eigen::MatrixXd columns_from(const json& j, Eigen::Index rows) {
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const Eigen::VectorXd col = vector_from(j[c]);
    if (col.size() != rows) throw DataError("model file: column dimension mismatch");
    m.col(static_cast<Eigen::Index>(c)) = col;
  }
  return m;
}

}  // namespace

std::string model_to_text(const TrainedModel& model) {
  json j;
  j["format"] = "nilm-model";
  j["version"] = kModelFormatVersion;
  j["variant"] = to_string(model.variant());
  j["feature"] = to_string(model.feature);
  j["fs"] = model.fs;
  j["F0"] = model.f0;
  j["window_s"] = model.window_s;
  j["normalization"] = {{"kind", to_string(model.norm.kind)},
                        {"dim", model.norm.dim},
                        {"lo", vector_json(model.norm.lo)},
                        {"hi", vector_json(model.norm.hi)}};
  if (model.grid) j["grid"] = {{"c", model.grid->c}, {"gamma", model.grid->gamma}, {"cv_score", model.grid->cv_score}};
  if (const auto* knn = std::get_if<KnnModel>(&model.classifier)) {
    std::vector<int> labels;
    for (auto l : knn->labels) labels.push_back(static_cast<int>(l));
    j["knn"] = {{"k", knn->k}, {"labels", labels}, {"indices", knn->indices}, {"points", columns_json(knn->points)}};
  } else {
    const auto& svm = std::get<SvmModel>(model.classifier);
    j["svm"] = {{"c", svm.c},
                {"gamma", svm.gamma},
                {"bias", svm.bias},
                {"converged", svm.converged},
                {"iterations", svm.iterations},
                {"kkt_residual", svm.kkt_residual},
                {"coef", vector_json(svm.coef)},
                {"support", columns_json(svm.support)}};
  }
  return j.dump() + "\n";
}

TrainedModel model_from_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  try {
    if (j.value("format", std::string{}) != "nilm-model") throw DataError("model file: not a model");
    if (j.at("version").get<int>() != kModelFormatVersion) throw DataError("model file: unsupported version");
    TrainedModel m;
    m.feature = parse_feature_kind(j.at("feature").get<std::string>());
    m.fs = j.at("fs").get<int>();
    m.f0 = j.at("F0").get<int>();
    m.window_s = j.at("window_s").get<double>();
    const auto& n = j.at("normalization");
    m.norm.kind = parse_norm_kind(n.at("kind").get<std::string>());
    m.norm.dim = n.at("dim").get<Eigen::Index>();
    m.norm.lo = vector_from(n.at("lo"));
    m.norm.hi = vector_from(n.at("hi"));
    if (j.contains("grid"))
      m.grid = GridResult{j["grid"].at("c").get<double>(), j["grid"].at("gamma").get<double>(),
                          j["grid"].at("cv_score").get<double>()};
    const auto variant = parse_classifier_kind(j.at("variant").get<std::string>());
    if (variant == ClassifierKind::Knn) {
      const auto& k = j.at("knn");
      KnnModel knn;
      knn.k = k.at("k").get<int>();
      for (int l : k.at("labels").get<std::vector<int>>()) knn.labels.push_back(l ? Label::Event : Label::NonEvent);
      knn.indices = k.at("indices").get<std::vector<std::int64_t>>();
      knn.points = columns_from(k.at("points"), m.norm.dim);
      if (knn.labels.size() != static_cast<std::size_t>(knn.points.cols()) || knn.indices.size() != knn.labels.size())
        throw DataError("model file: inconsistent KNN payload");
      m.classifier = std::move(knn);
    } else {
      const auto& s = j.at("svm");
      SvmModel svm;
      svm.c = s.at("c").get<double>();
      svm.gamma = s.at("gamma").get<double>();
      svm.bias = s.at("bias").get<double>();
      svm.converged = s.at("converged").get<bool>();
      svm.iterations = s.at("iterations").get<long>();
      svm.kkt_residual = s.at("kkt_residual").get<double>();
      svm.coef = vector_from(s.at("coef"));
      svm.support = columns_from(s.at("support"), m.norm.dim);
      if (svm.coef.size() != svm.support.cols()) throw DataError("model file: inconsistent SVM payload");
      m.classifier = std::move(svm);
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model " + path.string());
  out << model_to_text(model);
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_text(ss.str());
}

}  // namespace nilm
