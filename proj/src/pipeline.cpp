#include "nilm/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nilm/error.hpp"

namespace nilm {

namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& prefix, std::string_view key) {
  return prefix.empty() ? std::string(key) : prefix + "." + std::string(key);
}

const char* type_name(json::value_t t) {
  switch (t) {
    case json::value_t::null: return "null";
    case json::value_t::object: return "object";
    case json::value_t::array: return "array";
    case json::value_t::string: return "string";
    case json::value_t::boolean: return "boolean";
    case json::value_t::number_integer:
    case json::value_t::number_unsigned: return "integer";
    case json::value_t::number_float: return "number";
    default: return "value";
  }
}

// Reads one JSON object, tracking which keys were consumed so that unknown
// keys can be reported with their full path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(std::string_view key) const { return obj_.contains(std::string(key)); }

  const json* find(std::string_view key) {
    auto it = obj_.find(std::string(key));
    if (it == obj_.end()) return nullptr;
    seen_.insert(std::string(key));
    return &*it;
  }

  std::string field(std::string_view key) const { return join(path_, key); }

  void read(std::string_view key, int& out, long lo = std::numeric_limits<int>::min()) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, std::string("expected an integer, got ") + type_name(v->type()));
      const auto x = v->get<long long>();
      if (x < lo || x > std::numeric_limits<int>::max()) fail(key, "must be >= " + std::to_string(lo));
      out = static_cast<int>(x);
    }
  }

  void read(std::string_view key, long& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, std::string("expected a number, got ") + type_name(v->type()));
      const double x = v->get<double>();
      if (x != std::floor(x) || x < 0 || x > 9e18) fail(key, "expected a non-negative integer");
      out = static_cast<long>(x);
    }
  }

  void read(std::string_view key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
        fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(std::string_view key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, std::string("expected a number, got ") + type_name(v->type()));
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "must be finite");
    }
  }

  void read(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, std::string("expected a string, got ") + type_name(v->type()));
      out = v->get<std::string>();
    }
  }

  void read(std::string_view key, std::filesystem::path& out) {
    std::string s;
    if (has(key)) {
      read(key, s);
      out = s;
    }
  }

  template <class Parse, class T>
  void read_enum(std::string_view key, T& out, Parse parse) {
    std::string token;
    if (!has(key)) return;
    read(key, token);
    try {
      out = parse(token);
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }

  void read_list(std::string_view key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if (!e.is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(e.get<double>());
      }
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
  }

  [[noreturn]] void fail(std::string_view key, const std::string& msg) const { throw ConfigError(field(key), msg); }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

OffMode parse_off_mode(std::string_view token) {
  if (token == "ramp") return OffMode::Ramp;
  if (token == "step") return OffMode::Step;
  throw DataError("unknown off_mode '" + std::string(token) + "' (expected ramp or step)");
}

std::string_view to_string(OffMode mode) { return mode == OffMode::Ramp ? "ramp" : "step"; }

SynthSpec read_synth(const json& j, const std::string& path) {
  SynthSpec s;
  ObjectReader r(j, path);
  r.read("duration_s", s.duration_s);
  r.read("n_true_events", s.n_true_events);
  r.read("n_nuisance_transients", s.n_nuisance_transients);
  r.read("base_load_w", s.base_load_w);
  r.read("event_step_min_w", s.event_step_min_w);
  r.read("event_step_max_w", s.event_step_max_w);
  r.read("event_hold_min_s", s.event_hold_min_s);
  r.read("noise_std", s.noise_std);
  r.read("base_jitter_w", s.base_jitter_w);
  r.read("seed", s.seed);
  r.read("fs", s.fs);
  r.read("F0", s.f0);
  r.read("mains_voltage", s.mains_voltage);
  r.read_enum("off_mode", s.off_mode, parse_off_mode);
  r.read("channel_id", s.channel_id);
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(join(path, e.field()), e.message());
  }
  return s;
}

json synth_to_json(const SynthSpec& s) {
  json j;
  j["duration_s"] = s.duration_s;
  j["n_true_events"] = s.n_true_events;
  j["n_nuisance_transients"] = s.n_nuisance_transients;
  j["base_load_w"] = s.base_load_w;
  j["event_step_min_w"] = s.event_step_min_w;
  j["event_step_max_w"] = s.event_step_max_w;
  j["event_hold_min_s"] = s.event_hold_min_s;
  j["noise_std"] = s.noise_std;
  j["base_jitter_w"] = s.base_jitter_w;
  j["seed"] = s.seed;
  j["fs"] = s.fs;
  j["F0"] = s.f0;
  j["mains_voltage"] = s.mains_voltage;
  j["off_mode"] = std::string(to_string(s.off_mode));
  j["channel_id"] = s.channel_id;
  return j;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
}

json counts_json(const Counts& c) {
  const Scores s = score(c);
  json j;
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["fscore"] = s.fscore;
  return j;
}

json round_stats_json(std::span<const RoundStats> stats) {
  json arr = json::array();
  for (const auto& s : stats) {
    json j;
    j["round"] = s.round;
    j["train_tp"] = s.train_tp;
    j["train_fp"] = s.train_fp;
    j["set_size_event"] = s.set_size_event;
    j["set_size_nonevent"] = s.set_size_nonevent;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string csv_row(const std::string& scope, const std::string& round, const Counts& c) {
  const Scores s = score(c);
  return scope + ',' + round + ',' + std::to_string(c.tp) + ',' + std::to_string(c.fp) + ',' + std::to_string(c.fn) +
         ',' + format_double(s.precision) + ',' + format_double(s.recall) + ',' + format_double(s.fscore) + '\n';
}

json report_head(std::string_view kind, const PipelineConfig& cfg) {
  json j;
  j["format"] = std::string("nilm-") + std::string(kind) + "-report";
  j["version"] = 1;
  j["config"] = json::parse(config_echo(cfg));
  return j;
}

}  // namespace

SynthSpec parse_synth_spec(std::string_view json_text) { return read_synth(parse_json(json_text), ""); }

void PipelineConfig::validate() const {
  training.detector.validate();
  if (folds < 2) throw ConfigError("folds", "must be >= 2");
  if (training.adaptive_rounds < 0) throw ConfigError("adaptive_rounds", "must be >= 0");
  if (!(training.non_event_ratio > 0)) throw ConfigError("non_event_ratio", "must be positive");
  const ModelConfig& m = training.model;
  if (m.classifier == ClassifierKind::Knn && m.k < 1) throw ConfigError("classifier.k", "must be >= 1");
  if (m.classifier == ClassifierKind::Svm) {
    if (!(m.c > 0)) throw ConfigError("classifier.c", "must be positive");
    if (!(m.gamma > 0)) throw ConfigError("classifier.gamma", "must be positive");
    if (m.grid) {
      if (m.grid->c.empty()) throw ConfigError("classifier.grid.c", "must not be empty");
      if (m.grid->gamma.empty()) throw ConfigError("classifier.grid.gamma", "must not be empty");
      for (double v : m.grid->c)
        if (!(v > 0)) throw ConfigError("classifier.grid.c", "values must be positive");
      for (double v : m.grid->gamma)
        if (!(v > 0)) throw ConfigError("classifier.grid.gamma", "values must be positive");
      if (m.grid->folds < 2) throw ConfigError("classifier.grid.folds", "must be >= 2");
    }
  }
  if (!(m.svm.eps > 0)) throw ConfigError("svm.eps", "must be positive");
  if (m.svm.max_iterations < 1) throw ConfigError("svm.max_iterations", "must be >= 1");
  if (dataset.synth) {
    try {
      dataset.synth->validate();
    } catch (const ConfigError& e) {
      throw ConfigError("dataset.synth." + e.field(), e.message());
    }
  }
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve.port", "must lie in [0, 65535]");
  if (jobs < 0) throw ConfigError("jobs", "must be >= 0");
}

PipelineConfig parse_config(std::string_view text) {
  const json root = parse_json(text);
  PipelineConfig cfg;
  ObjectReader r(root, "");

  if (const json* d = r.find("dataset")) {
    ObjectReader dr(*d, "dataset");
    dr.read("manifest", cfg.dataset.manifest);
    dr.read("ground_truth", cfg.dataset.ground_truth);
    if (const json* s = dr.find("synth")) cfg.dataset.synth = read_synth(*s, "dataset.synth");
    dr.finish();
    if (cfg.dataset.synth && !cfg.dataset.manifest.empty())
      throw ConfigError("dataset", "give either manifest or synth, not both");
  }

  ModelConfig& m = cfg.training.model;
  r.read_enum("feature", m.feature, parse_feature_kind);
  r.read_enum("norm", m.norm, parse_norm_kind);
  if (const json* c = r.find("classifier")) {
    ObjectReader cr(*c, "classifier");
    cr.read_enum("kind", m.classifier, parse_classifier_kind);
    cr.read("k", m.k, 1);
    cr.read("c", m.c);
    cr.read("gamma", m.gamma);
    if (const json* g = cr.find("grid")) {
      if (g->is_boolean()) {
        if (g->get<bool>()) m.grid = default_svm_grid();
      } else {
        ObjectReader gr(*g, "classifier.grid");
        SvmGrid grid = default_svm_grid();
        gr.read_list("c", grid.c);
        gr.read_list("gamma", grid.gamma);
        gr.read("folds", grid.folds, 2);
        gr.finish();
        m.grid = grid;
      }
    }
    cr.finish();
  }
  if (const json* s = r.find("svm")) {
    ObjectReader sr(*s, "svm");
    sr.read("eps", m.svm.eps);
    sr.read("max_iterations", m.svm.max_iterations);
    int cache_mb = static_cast<int>(m.svm.cache_bytes >> 20);
    sr.read("cache_mb", cache_mb, 1);
    m.svm.cache_bytes = static_cast<std::size_t>(cache_mb) << 20;
    sr.finish();
  }
  r.read("adaptive_rounds", cfg.training.adaptive_rounds, 0);
  r.read("non_event_ratio", cfg.training.non_event_ratio);

  if (const json* d = r.find("detector")) {
    DetectorConfig& dc = cfg.training.detector;
    ObjectReader dr(*d, "detector");
    dr.read("step_periods", dc.step_periods, 1);
    dr.read("window_s", dc.window_s);
    dr.read("merge_gap_s", dc.merge_gap_s);
    dr.read("match_tol_s", dc.match_tol_s);
    dr.read("non_event_min_dist_s", dc.non_event_min_dist_s);
    dr.read("seed", dc.rng_seed);
    dr.finish();
  }
  r.read("folds", cfg.folds, 2);
  r.read("model", cfg.model);
  r.read("detections", cfg.detections);
  if (const json* s = r.find("serve")) {
    ObjectReader sr(*s, "serve");
    sr.read("data_dir", cfg.serve.data_dir);
    sr.read("store", cfg.serve.store);
    sr.read("host", cfg.serve.host);
    sr.read("port", cfg.serve.port, 0);
    sr.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_echo(const PipelineConfig& cfg) {
  json j;
  json d = json::object();
  if (cfg.dataset.synth) {
    d["synth"] = synth_to_json(*cfg.dataset.synth);
  } else {
    d["manifest"] = cfg.dataset.manifest.string();
    d["ground_truth"] = cfg.dataset.ground_truth.string();
  }
  j["dataset"] = d;

  const ModelConfig& m = cfg.training.model;
  j["feature"] = std::string(to_string(m.feature));
  j["norm"] = std::string(to_string(m.norm));
  json c;
  c["kind"] = std::string(to_string(m.classifier));
  c["k"] = m.k;
  c["c"] = m.c;
  c["gamma"] = m.gamma;
  if (m.grid) {
    json g;
    g["c"] = m.grid->c;
    g["gamma"] = m.grid->gamma;
    g["folds"] = m.grid->folds;
    c["grid"] = g;
  }
  j["classifier"] = c;
  json s;
  s["eps"] = m.svm.eps;
  s["max_iterations"] = m.svm.max_iterations;
  s["cache_mb"] = static_cast<long>(m.svm.cache_bytes >> 20);
  j["svm"] = s;
  j["adaptive_rounds"] = cfg.training.adaptive_rounds;
  j["non_event_ratio"] = cfg.training.non_event_ratio;

  const DetectorConfig& dc = cfg.training.detector;
  json det;
  det["step_periods"] = dc.step_periods;
  det["window_s"] = dc.window_s;
  det["merge_gap_s"] = dc.merge_gap_s;
  det["match_tol_s"] = dc.match_tol_s;
  det["non_event_min_dist_s"] = dc.non_event_min_dist_s;
  det["seed"] = dc.rng_seed;
  j["detector"] = det;
  j["folds"] = cfg.folds;
  if (!cfg.model.empty()) j["model"] = cfg.model.string();
  if (!cfg.detections.empty()) j["detections"] = cfg.detections.string();
  return j.dump(2);
}

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset d;
  if (cfg.synth) {
    SynthOutput s = synth_recording(*cfg.synth);
    d.recording = std::move(s.recording);
    d.ground_truth = std::move(s.ground_truth);
    return d;
  }
  if (cfg.manifest.empty()) throw ConfigError("dataset", "no manifest or synth spec given");
  d.recording = load_recording(cfg.manifest);
  if (!cfg.ground_truth.empty()) d.ground_truth = load_ground_truth(cfg.ground_truth);
  for (const auto& l : d.ground_truth.labels)
    if (l.time_s < 0.0 || l.time_s > d.recording.duration_s())
      throw DataError("ground-truth label at " + format_double(l.time_s) + " s lies outside the recording");
  return d;
}

std::string render_train_report(const PipelineConfig& cfg, const AdaptiveResult& result) {
  json j = report_head("train", cfg);
  j["rounds_trained"] = static_cast<int>(result.round_models.size()) - 1;
  j["converged"] = result.converged;
  j["training"] = round_stats_json(result.stats);
  json set;
  set["event"] = result.set.count(Label::Event);
  set["random_non_event"] = result.set.count(SampleOrigin::RandomNonEvent);
  set["adaptive_fp"] = result.set.count(SampleOrigin::AdaptiveFp);
  j["training_set"] = set;
  if (result.model.grid) {
    json g;
    g["c"] = result.model.grid->c;
    g["gamma"] = result.model.grid->gamma;
    g["cv_score"] = result.model.grid->cv_score;
    j["grid_search"] = g;
  }
  return j.dump(2) + "\n";
}

std::string render_detect_report(const PipelineConfig& cfg, std::span<const Detection> detections) {
  json j = report_head("detect", cfg);
  j["detections"] = detections.size();
  return j.dump(2) + "\n";
}

std::string render_eval_report(const PipelineConfig& cfg, const MatchResult& match) {
  json j = report_head("eval", cfg);
  j["total"] = counts_json(Counts{match.tp, match.fp, match.fn});
  return j.dump(2) + "\n";
}

std::string render_eval_summary(const MatchResult& match) {
  return "scope,round,tp,fp,fn,precision,recall,fscore\n" + csv_row("total", "", Counts{match.tp, match.fp, match.fn});
}

std::string render_xval_report(const PipelineConfig& cfg, const EvalReport& report) {
  json j = report_head("xval", cfg);
  json folds = json::array();
  for (const auto& f : report.folds) {
    json fj;
    fj["fold"] = f.fold;
    fj["test"] = {f.test.begin_s, f.test.end_s};
    fj["n_labels"] = f.n_labels;
    fj["converged"] = f.converged;
    json rounds = json::array();
    for (std::size_t r = 0; r < f.round_counts.size(); ++r) {
      json rj;
      rj["round"] = r;
      rj.update(counts_json(f.round_counts[r]));
      rounds.push_back(std::move(rj));
    }
    fj["test_rounds"] = rounds;
    fj["training"] = round_stats_json(f.training);
    folds.push_back(std::move(fj));
  }
  j["folds"] = folds;
  json rounds = json::array();
  for (std::size_t r = 0; r < report.round_counts.size(); ++r) {
    json rj;
    rj["round"] = r;
    rj.update(counts_json(report.round_counts[r]));
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = rounds;
  j["total"] = counts_json(report.counts);
  return j.dump(2) + "\n";
}

std::string render_xval_summary(const EvalReport& report) {
  std::string out = "scope,round,tp,fp,fn,precision,recall,fscore\n";
  for (const auto& f : report.folds)
    for (std::size_t r = 0; r < f.round_counts.size(); ++r)
      out += csv_row("fold" + std::to_string(f.fold), std::to_string(r), f.round_counts[r]);
  for (std::size_t r = 0; r < report.round_counts.size(); ++r)
    out += csv_row("pooled", std::to_string(r), report.round_counts[r]);
  return out;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace nilm
