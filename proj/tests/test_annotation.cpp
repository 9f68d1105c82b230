#include <doctest.h>

#include <chrono>
#include <random>
#include <thread>

#include "helpers.hpp"
#include "nilm/annotation.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>
#include <json.hpp>

using namespace nilm;
using json = nlohmann::json;

namespace {

RawRecording noisy_recording(const std::string& channel, double seconds, std::uint64_t seed) {
  RawRecording rec = testutil::sine_recording(1000, 50, seconds);
  rec.channel_id = channel;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 0.3f);
  for (Eigen::Index k = 0; k < rec.size(); ++k) {
    rec.current[k] += g(rng);
    rec.voltage[k] += 5.0f * g(rng);
  }
  return rec;
}

// U_rms * I_rms of one period straight from the samples.
long double direct_power(const RawRecording& rec, Eigen::Index period) {
  const int n = rec.samples_per_period();
  long double su = 0.0L, si = 0.0L;
  for (int k = 0; k < n; ++k) {
    const long double u = rec.voltage[period * n + k], i = rec.current[period * n + k];
    su += u * u;
    si += i * i;
  }
  return std::sqrt(su / n) * std::sqrt(si / n);
}

AnnotationRecord label(const std::string& channel, double t, const std::string& appliance = "kettle") {
  AnnotationRecord r;
  r.channel_id = channel;
  r.time_s = t;
  r.appliance = appliance;
  r.kind = EventKind::On;
  r.annotator = "tester";
  return r;
}

double fixed_clock() { return 1.7e9; }

}  // namespace

TEST_CASE("series tiles") {
  const RawRecording rec = noisy_recording("a", 20.0, 1);
  const Eigen::VectorXd p = period_power(rec);
  REQUIRE(p.size() == 1000);

  SUBCASE("a single period matches the raw samples") {
    const SeriesTile t = make_tile("a", p, 50, 3.0, 3.02, 100);
    REQUIRE(t.points.size() == 1);
    CHECK(t.t0_s == doctest::Approx(3.0));
    CHECK(t.dt_s == doctest::Approx(0.02));
    const double direct = static_cast<double>(direct_power(rec, 150));
    CHECK(std::abs(t.points[0].mean - direct) <= 1e-6);
    CHECK(t.points[0].min == t.points[0].mean);
    CHECK(t.points[0].max == t.points[0].mean);
  }
  SUBCASE("bucket statistics match the raw samples") {
    const SeriesTile t = make_tile("a", p, 50, 3.0, 4.0, 5);
    REQUIRE(t.points.size() == 5);
    CHECK(t.dt_s == doctest::Approx(0.2));
    for (std::size_t b = 0; b < 5; ++b) {
      long double sum = 0.0L, lo = 1e300L, hi = -1e300L;
      for (Eigen::Index q = 0; q < 10; ++q) {
        const long double v = direct_power(rec, 150 + static_cast<Eigen::Index>(b) * 10 + q);
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(std::abs(t.points[b].mean - static_cast<double>(sum / 10)) <= 1e-6);
      CHECK(std::abs(t.points[b].min - static_cast<double>(lo)) <= 1e-6);
      CHECK(std::abs(t.points[b].max - static_cast<double>(hi)) <= 1e-6);
    }
  }
  SUBCASE("coverage, ordering and zoom") {
    double prev_dt = 1e300;
    for (double span : {20.0, 10.0, 2.0, 0.5}) {
      const double start = 10.0 - span / 2;
      const SeriesTile t = make_tile("a", p, 50, std::max(0.0, start), std::max(0.0, start) + span, 7);
      CHECK(t.points.size() <= 7);
      CHECK(t.t0_s <= std::max(0.0, start) + 1e-12);
      CHECK(t.t0_s + static_cast<double>(t.points.size()) * t.dt_s >= std::max(0.0, start) + span - 1e-9);
      for (const auto& pt : t.points) {
        CHECK(pt.min <= pt.mean);
        CHECK(pt.mean <= pt.max);
      }
      CHECK(t.dt_s <= prev_dt);
      prev_dt = t.dt_s;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(make_tile("a", p, 50, 5.0, 5.0, 10), DataError);
    CHECK_THROWS_AS(make_tile("a", p, 50, 6.0, 5.0, 10), DataError);
    CHECK_THROWS_AS(make_tile("a", p, 50, 0.0, 5.0, 1), DataError);
    CHECK_THROWS_AS(make_tile("a", p, 50, -1.0, 5.0, 10), DataError);
    CHECK_THROWS_AS(make_tile("a", p, 50, 0.0, 21.0, 10), DataError);
  }
}

TEST_CASE("a full day at 2000 points") {
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(86400 * 50, 100.0);
  const SeriesTile t = make_tile("day", p, 50, 0.0, 86400.0, 2000);
  CHECK(t.points.size() == 2000);
  CHECK(t.dt_s == doctest::Approx(43.2));
}

TEST_CASE("annotation store") {
  testutil::TempDir dir;
  const auto log = dir / "store.ndjson";
  const std::map<std::string, double> bounds{{"a", 100.0}, {"b", 50.0}};

  SUBCASE("put then list") {
    AnnotationStore s(log, bounds, fixed_clock);
    const AnnotationRecord r = s.put(label("a", 12.5));
    CHECK(r.id == 1);
    CHECK(r.revision == 1);
    CHECK(r.created_at == 1.7e9);
    const auto all = s.list();
    REQUIRE(all.size() == 1);
    CHECK(all[0].time_s == 12.5);
    CHECK(all[0].revision == 1);
    CHECK(s.get(1).has_value());
  }
  SUBCASE("put, delete, list") {
    AnnotationStore s(log, bounds, fixed_clock);
    const auto r = s.put(label("a", 12.5));
    s.put(label("b", 7.0));
    s.remove(r.id);
    const auto all = s.list();
    REQUIRE(all.size() == 1);
    CHECK(all[0].channel_id == "b");
    CHECK(s.export_csv().find("12.5") == std::string::npos);
    CHECK_THROWS_AS(s.remove(r.id), NotFoundError);
  }
  SUBCASE("revisions") {
    AnnotationStore s(log, bounds, fixed_clock);
    AnnotationRecord r = s.put(label("a", 12.5));
    r.appliance = "toaster";
    const AnnotationRecord r2 = s.put(r);
    CHECK(r2.revision == 2);
    CHECK(r2.created_at == r.created_at);
    CHECK_THROWS_AS(s.put(r), ConflictError);  // still quotes revision 1
    CHECK_THROWS_AS(s.remove(r2.id, 1), ConflictError);
    s.remove(r2.id, 2);
    CHECK(s.list().empty());
  }
  SUBCASE("filters and order") {
    AnnotationStore s(log, bounds, fixed_clock);
    s.put(label("a", 30.0));
    s.put(label("b", 10.0));
    s.put(label("a", 10.0));
    const auto all = s.list();
    REQUIRE(all.size() == 3);
    CHECK(all[0].channel_id == "a");
    CHECK(all[1].channel_id == "b");
    CHECK(all[2].time_s == 30.0);
    CHECK(s.list("a").size() == 2);
    CHECK(s.list("", 10.0, 30.0).size() == 2);
  }
  SUBCASE("rejections") {
    AnnotationStore s(log, bounds, fixed_clock);
    s.put(label("a", 5.0));
    CHECK_THROWS_AS(s.put(label("a", 5.0)), ConflictError);
    CHECK_THROWS_AS(s.put(label("a", 100.5)), DataError);
    CHECK_THROWS_AS(s.put(label("a", -0.1)), DataError);
    CHECK_THROWS_AS(s.put(label("b", 60.0)), DataError);
    CHECK_THROWS_AS(s.put(label("zzz", 1.0)), NotFoundError);
    CHECK_THROWS_AS(s.put(label("a", 6.0, "a,b")), DataError);
    AnnotationRecord ghost = label("a", 7.0);
    ghost.id = 42;
    ghost.revision = 1;
    CHECK_THROWS_AS(s.put(ghost), NotFoundError);
    CHECK(s.list().size() == 1);
  }
  SUBCASE("exact time round trip through the export") {
    const double t = 3600.25 / 37.0;
    AnnotationStore s(log, {{"a", 100.0}}, fixed_clock);
    s.put(label("a", t));
    const GroundTruth gt = parse_ground_truth(s.export_csv());
    REQUIRE(gt.size() == 1);
    CHECK(gt.labels[0].time_s == t);
    CHECK(gt.labels[0].channel_id == "a");
    CHECK(gt.labels[0].appliance == "kettle");
    CHECK(gt.labels[0].kind == EventKind::On);
  }
  SUBCASE("replay rebuilds the state") {
    std::vector<AnnotationRecord> before;
    {
      AnnotationStore s(log, bounds, fixed_clock);
      auto r = s.put(label("a", 1.0));
      s.put(label("a", 2.0));
      s.put(label("b", 3.0));
      r.appliance = "lamp";
      s.put(r);
      s.remove(2);
      before = s.list();
    }
    const auto replayed = AnnotationStore::replay(log);
    REQUIRE(replayed.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(replayed[i].id == before[i].id);
      CHECK(replayed[i].revision == before[i].revision);
      CHECK(replayed[i].appliance == before[i].appliance);
    }
    AnnotationStore reopened(log, bounds, fixed_clock);
    CHECK(reopened.list().size() == before.size());
    CHECK(reopened.put(label("a", 9.0)).id == 4);
  }
  SUBCASE("torn trailing write is dropped") {
    {
      AnnotationStore s(log, bounds, fixed_clock);
      s.put(label("a", 1.0));
    }
    {
      std::ofstream out(log, std::ios::binary | std::ios::app);
      out << R"({"op":"put","record":{"id":2,"time_s":)";
    }
    AnnotationStore s(log, bounds, fixed_clock);
    CHECK(s.list().size() == 1);
    s.put(label("a", 2.0));
    CHECK(AnnotationStore::replay(log).size() == 2);
  }
  SUBCASE("corrupt log") {
    testutil::spit(log, "{\"op\":\"explode\"}\n");
    CHECK_THROWS_AS(AnnotationStore(log, bounds), DataError);
  }
  SUBCASE("store that cannot be written") {
    testutil::spit(dir / "plain", "x");
    CHECK_THROWS_AS(AnnotationStore(dir / "plain" / "store.ndjson", bounds), DataError);
    CHECK_THROWS_AS(AnnotationStore::replay(dir / "missing.ndjson"), DataError);
  }
  SUBCASE("concurrent writers and readers") {
    AnnotationStore s(log, bounds, fixed_clock);
    std::atomic<bool> done{false};
    std::atomic<long> reads{0};
    auto writer = [&](const std::string& ch, double limit) {
      for (int i = 0; i < 200; ++i) s.put(label(ch, limit * i / 200.0));
    };
    auto reader = [&] {
      while (!done) {
        const auto l = s.list();
        for (std::size_t i = 1; i < l.size(); ++i) CHECK(l[i - 1].time_s <= l[i].time_s);
        ++reads;
      }
    };
    std::thread r1(reader), r2(reader);
    std::thread w1(writer, "a", 100.0), w2(writer, "b", 50.0);
    w1.join();
    w2.join();
    done = true;
    r1.join();
    r2.join();
    CHECK(s.list("a").size() == 200);
    CHECK(s.list("b").size() == 200);
    CHECK(AnnotationStore::replay(log).size() == 400);
    CHECK(reads > 0);
  }
}

TEST_CASE("dataset directory") {
  testutil::TempDir dir;
  CHECK_THROWS_AS(load_channels(dir.path()), DataError);
  CHECK_THROWS_AS(load_channels(dir / "missing"), DataError);
  store_recording(noisy_recording("plug1", 30.0, 2), dir.path(), "one");
  store_recording(noisy_recording("plug2", 20.0, 3), dir.path(), "two");
  testutil::spit(dir / "notes.json", R"({"hello": 1})");
  const auto ch = load_channels(dir.path());
  REQUIRE(ch.size() == 2);
  CHECK(ch.at("plug1").power.size() == 1500);
  CHECK(ch.at("plug2").recording.duration_s() == 20.0);
  store_recording(noisy_recording("plug2", 10.0, 4), dir.path(), "three");
  CHECK_THROWS_AS(load_channels(dir.path()), DataError);
}

TEST_CASE("http interface") {
  testutil::TempDir dir;
  store_recording(noisy_recording("plug1", 30.0, 5), dir.path(), "one");
  store_recording(noisy_recording("plug2", 20.0, 6), dir.path(), "two");
  AnnotationServer server(load_channels(dir.path()), dir / "annotations.ndjson");
  const int port = server.bind("127.0.0.1", 0);
  std::thread loop([&] { server.listen(); });
  for (int i = 0; i < 500 && !server.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  REQUIRE(server.running());
  httplib::Client cli("127.0.0.1", port);

  SUBCASE("health and channels") {
    auto h = cli.Get("/health");
    REQUIRE(h);
    CHECK(h->status == 200);
    CHECK(json::parse(h->body)["status"] == "ok");
    auto c = cli.Get("/channels");
    REQUIRE(c);
    const json cj = json::parse(c->body);
    REQUIRE(cj["channels"].size() == 2);
    CHECK(cj["channels"][0]["channel_id"] == "plug1");
    CHECK(cj["channels"][0]["duration_s"] == 30.0);
  }
  SUBCASE("series") {
    auto r = cli.Get("/series?channel=plug1&start=0&end=30&max_points=100");
    REQUIRE(r);
    CHECK(r->status == 200);
    const json j = json::parse(r->body);
    CHECK(j["points"].size() == 100);
    CHECK(j["dt_s"].get<double>() == doctest::Approx(0.3));
    auto whole = cli.Get("/series?channel=plug2");
    REQUIRE(whole);
    CHECK(json::parse(whole->body)["points"].size() == 1000);
    CHECK(cli.Get("/series?channel=nope")->status == 404);
    CHECK(cli.Get("/series?channel=plug1&start=5&end=5")->status == 400);
    CHECK(cli.Get("/series?channel=plug1&max_points=1")->status == 400);
    CHECK(cli.Get("/series?channel=plug1&start=abc")->status == 400);
    CHECK(cli.Get("/series")->status == 400);
  }
  SUBCASE("annotation round trip") {
    const double t = 12.345678901234567;
    json body;
    body["time_s"] = t;
    body["channel_id"] = "plug1";
    body["appliance"] = "kettle";
    body["kind"] = "ON";
    auto put = cli.Put("/annotations", body.dump(), "application/json");
    REQUIRE(put);
    CHECK(put->status == 200);
    const json rec = json::parse(put->body);
    CHECK(rec["revision"] == 1);
    const auto id = rec["id"].get<std::int64_t>();

    CHECK(cli.Put("/annotations", body.dump(), "application/json")->status == 409);
    body["time_s"] = 99.0;
    CHECK(cli.Put("/annotations", body.dump(), "application/json")->status == 400);
    CHECK(cli.Put("/annotations", "{", "application/json")->status == 400);
    body["channel_id"] = "nope";
    CHECK(cli.Put("/annotations", body.dump(), "application/json")->status == 404);

    auto list = cli.Get("/annotations?channel=plug1");
    REQUIRE(list);
    const json lj = json::parse(list->body);
    REQUIRE(lj["annotations"].size() == 1);
    CHECK(lj["annotations"][0]["time_s"].get<double>() == t);

    auto csv = cli.Get("/export.csv");
    REQUIRE(csv);
    const GroundTruth gt = parse_ground_truth(csv->body);
    REQUIRE(gt.size() == 1);
    CHECK(gt.labels[0].time_s == t);

    CHECK(cli.Delete("/annotations?id=" + std::to_string(id) + "&revision=5")->status == 409);
    CHECK(cli.Delete("/annotations?id=" + std::to_string(id) + "&revision=1")->status == 200);
    CHECK(cli.Delete("/annotations?id=" + std::to_string(id))->status == 404);
    CHECK(cli.Delete("/annotations")->status == 400);
    CHECK(parse_ground_truth(cli.Get("/export.csv")->body).empty());
  }
  SUBCASE("concurrent clients") {
    auto writer = [&](const std::string& ch) {
      httplib::Client c("127.0.0.1", port);
      for (int i = 0; i < 50; ++i) {
        json b;
        b["time_s"] = 0.25 * i;
        b["channel_id"] = ch;
        b["kind"] = "OFF";
        auto r = c.Put("/annotations", b.dump(), "application/json");
        CHECK((r && r->status == 200));
      }
    };
    std::atomic<bool> done{false};
    auto reader = [&] {
      httplib::Client c("127.0.0.1", port);
      while (!done) {
        auto r = c.Get("/series?channel=plug1&max_points=50");
        CHECK((r && r->status == 200));
      }
    };
    std::thread rd(reader), w1(writer, "plug1"), w2(writer, "plug2");
    w1.join();
    w2.join();
    done = true;
    rd.join();
    const json lj = json::parse(cli.Get("/annotations")->body);
    CHECK(lj["annotations"].size() == 100);
    CHECK(AnnotationStore::replay(dir / "annotations.ndjson").size() == 100);
  }
  SUBCASE("port already taken") {
    AnnotationServer other(load_channels(dir.path()), dir / "other.ndjson");
    CHECK_THROWS_AS(other.bind("127.0.0.1", port), std::runtime_error);
  }

  server.stop();
  loop.join();
}
