#include <doctest.h>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>

#include "helpers.hpp"
#include "nilm/detector.hpp"
#include "nilm/signal_io.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>
#include <json.hpp>

extern char** environ;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(NILM_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.output.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Small synthetic dataset shared by the tests that need one.
const std::filesystem::path& dataset() {
  static testutil::TempDir dir;
  static const bool ok = [] {
    const Run r = run("synth --duration 1800 --events 100 --nuisance 80 --seed 2 --out " + dir.path().string());
    return r.code == 0;
  }();
  REQUIRE(ok);
  return dir.path();
}

std::string data_flags() {
  const auto d = dataset();
  return "--manifest " + (d / "recording.json").string() + " --ground-truth " + (d / "ground_truth.csv").string();
}

// Background child whose stdout is readable line by line.
struct Child {
  pid_t pid = -1;
  FILE* out = nullptr;

  explicit Child(const std::vector<std::string>& args) {
    int fds[2];
    REQUIRE(::pipe(fds) == 0);
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 2);
    posix_spawn_file_actions_addclose(&fa, fds[0]);
    std::vector<char*> argv;
    std::string exe = NILM_CLI_PATH;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    REQUIRE(posix_spawn(&pid, exe.c_str(), &fa, nullptr, argv.data(), environ) == 0);
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    out = ::fdopen(fds[0], "r");
  }
  std::string line() {
    std::array<char, 1024> buf{};
    return std::fgets(buf.data(), buf.size(), out) ? std::string(buf.data()) : std::string{};
  }
  int wait() {
    int status = 0;
    ::waitpid(pid, &status, 0);
    pid = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  ~Child() {
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
    if (out) std::fclose(out);
  }
};

}  // namespace

TEST_CASE("synth") {
  testutil::TempDir a, b;
  const std::string flags = "synth --duration 600 --events 10 --nuisance 20 --seed 1 --out ";
  REQUIRE(run(flags + a.path().string()).code == 0);
  REQUIRE(run(flags + b.path().string()).code == 0);
  for (const char* f : {"recording.json", "recording.f32", "ground_truth.csv"}) {
    CAPTURE(f);
    REQUIRE(std::filesystem::exists(a / f));
    CHECK(testutil::slurp(a / f) == testutil::slurp(b / f));
  }
  CHECK(nilm::load_ground_truth(a / "ground_truth.csv").size() == 10);
  CHECK(run("synth --events -1 --out " + a.path().string()).code == 2);
  CHECK(run("synth --duration 100 --events 50 --out " + a.path().string()).code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("").code == 2);
}

TEST_CASE("train, detect, eval") {
  testutil::TempDir out;
  const std::string o = out.path().string();

  SUBCASE("knn with one adaptive round") {
    const Run t = run("train " + data_flags() +
                      " --feature delta-cusum --norm minmax --clf knn --k 137 --adaptive 1 --out " + o);
    INFO(t.output);
    REQUIRE(t.code == 0);
    for (const char* f : {"model.json", "config.json", "train_report.json", "train_rounds.csv"})
      CHECK(std::filesystem::exists(out / f));
    const auto cfg = nlohmann::json::parse(testutil::slurp(out / "config.json"));
    CHECK(cfg["feature"] == "delta-cusum");
    CHECK(cfg["classifier"]["k"] == 137);
    CHECK(cfg["adaptive_rounds"] == 1);

    const Run d = run("detect --manifest " + (dataset() / "recording.json").string() + " --model " +
                      (out / "model.json").string() + " --out " + o);
    INFO(d.output);
    REQUIRE(d.code == 0);
    const auto dets = nilm::load_detections(out / "detections.csv");
    CHECK(!dets.empty());

    const Run e = run("eval " + data_flags() + " --detections " + (out / "detections.csv").string() + " --out " + o);
    REQUIRE(e.code == 0);
    const std::string summary = testutil::slurp(out / "eval_summary.csv");
    CHECK(summary.rfind("scope,round,tp,fp,fn,precision,recall,fscore\ntotal,,", 0) == 0);
    const std::string first = testutil::slurp(out / "eval_report.json");
    const Run e2 = run("eval " + data_flags() + " --model " + (out / "model.json").string() + " --out " + o);
    REQUIRE(e2.code == 0);
    CHECK(testutil::slurp(out / "eval_summary.csv") == summary);
    (void)first;
  }
  SUBCASE("svm with fixed hyper-parameters") {
    const Run t = run("train " + data_flags() + " --clf svm --c 128 --gamma 512 --out " + o);
    INFO(t.output);
    REQUIRE(t.code == 0);
    const auto model = nlohmann::json::parse(testutil::slurp(out / "model.json"));
    CHECK(model["variant"] == "svm");
    CHECK(model["svm"]["c"] == 128.0);
    CHECK(model["svm"]["gamma"] == 512.0);
  }
  SUBCASE("mains frequency mismatch") {
    testutil::TempDir d60;
    REQUIRE(run("synth --duration 300 --events 10 --nuisance 5 --fs 1200 --f0 60 --out " + d60.path().string()).code == 0);
    REQUIRE(run("train --manifest " + (d60 / "recording.json").string() + " --ground-truth " +
                (d60 / "ground_truth.csv").string() + " --k 5 --out " + o)
                .code == 0);
    const Run d = run("detect --manifest " + (dataset() / "recording.json").string() + " --model " +
                      (out / "model.json").string() + " --out " + o);
    CHECK(d.code == 3);
    CHECK(d.output.find("F0") != std::string::npos);
  }
  SUBCASE("missing inputs") {
    CHECK(run("train --manifest " + (dataset() / "recording.json").string() + " --out " + o).code == 2);
    CHECK(run("detect --manifest " + (dataset() / "recording.json").string() + " --out " + o).code == 2);
    CHECK(run("detect --manifest " + o + "/nope.json --model x --out " + o).code == 3);
  }
}

TEST_CASE("config precedence and field paths") {
  testutil::TempDir out;
  const auto cfg_path = out / "in.json";
  testutil::spit(cfg_path, R"({"classifier": {"k": 5}, "detector": {"seed": 7}, "adaptive_rounds": 2})");
  const Run r = run("train " + data_flags() + " --config " + cfg_path.string() + " --k 9 --out " + out.path().string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  const auto echo = nlohmann::json::parse(testutil::slurp(out / "config.json"));
  CHECK(echo["classifier"]["k"] == 9);
  CHECK(echo["detector"]["seed"] == 7);
  CHECK(echo["adaptive_rounds"] == 2);
  CHECK(echo["non_event_ratio"] == 4.0);

  // Rerunning the echoed config reproduces the report.
  const std::string report = testutil::slurp(out / "train_report.json");
  testutil::TempDir again;
  REQUIRE(run("train --config " + (out / "config.json").string() + " --out " + again.path().string()).code == 0);
  CHECK(testutil::slurp(again / "train_report.json") == report);
  CHECK(testutil::slurp(again / "model.json") == testutil::slurp(out / "model.json"));

  testutil::spit(cfg_path, R"({"detector": {"step_periods": "thirty"}})");
  const Run bad = run("train " + data_flags() + " --config " + cfg_path.string() + " --out " + out.path().string());
  CHECK(bad.code == 2);
  CHECK(bad.output.find("detector.step_periods") != std::string::npos);
}

TEST_CASE("xval reports are identical across runs and worker counts") {
  testutil::TempDir a, b;
  const std::string common = "xval " + data_flags() + " --k 15 --adaptive 1 --folds 3 ";
  const Run ra = run(common + "--jobs 1 --out " + a.path().string());
  INFO(ra.output);
  REQUIRE(ra.code == 0);
  REQUIRE(run(common + "--jobs 4 --out " + b.path().string()).code == 0);
  for (const char* f : {"xval_report.json", "xval_summary.csv", "config.json"}) {
    CAPTURE(f);
    CHECK(testutil::slurp(a / f) == testutil::slurp(b / f));
  }
  const auto rep = nlohmann::json::parse(testutil::slurp(a / "xval_report.json"));
  CHECK(rep["folds"].size() == 3);
  long labels = 0;
  for (const auto& f : rep["folds"]) labels += f["n_labels"].get<long>();
  CHECK(labels == 100);
  CHECK(rep["total"]["tp"].get<long>() + rep["total"]["fn"].get<long>() == 100);
}

TEST_CASE("serve and export") {
  testutil::TempDir data;
  nilm::RawRecording rec = testutil::sine_recording(1000, 50, 60.0);
  rec.channel_id = "plug1";
  nilm::store_recording(rec, data.path(), "plug1");

  SUBCASE("health, annotate, export") {
    Child c({"serve", "--data", data.path().string(), "--port", "0"});
    const std::string first = c.line();
    const auto colon = first.rfind(':');
    REQUIRE(colon != std::string::npos);
    const int port = std::stoi(first.substr(colon + 1));
    httplib::Client cli("127.0.0.1", port);
    auto h = cli.Get("/health");
    REQUIRE(h);
    CHECK(nlohmann::json::parse(h->body)["status"] == "ok");
    const auto put = cli.Put("/annotations", R"({"time_s": 31.125, "channel_id": "plug1", "kind": "ON"})",
                             "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);

    SUBCASE("port in use") {
      const Run clash = run("serve --data " + data.path().string() + " --store " + (data / "other.ndjson").string() +
                            " --port " + std::to_string(port));
      CHECK(clash.code != 0);
    }

    ::kill(c.pid, SIGTERM);
    CHECK(c.wait() == 0);

    testutil::TempDir out;
    REQUIRE(run("export-annotations --store " + (data / "annotations.ndjson").string() + " --out " +
                out.path().string())
                .code == 0);
    const auto gt = nilm::load_ground_truth(out / "ground_truth.csv");
    REQUIRE(gt.size() == 1);
    CHECK(gt.labels[0].time_s == 31.125);
  }
  SUBCASE("unwritable store") {
    testutil::spit(data / "plain", "x");
    const Run r = run("serve --data " + data.path().string() + " --store " + (data / "plain" / "s.ndjson").string());
    CHECK(r.code == 3);
  }
  SUBCASE("unreadable dataset") { CHECK(run("serve --data " + (data / "missing").string()).code == 3); }
  SUBCASE("missing store on export") {
    CHECK(run("export-annotations --store " + (data / "missing.ndjson").string()).code == 3);
  }
}
