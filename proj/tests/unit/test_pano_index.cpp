#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "panorag/error.hpp"
#include "panorag/grid_city.hpp"
#include "panorag/pano_index.hpp"
#include "test_util.hpp"

using namespace panorag;
using namespace panorag::index;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

fixtures::GridCity small_city(std::uint64_t seed, int sessions = 6) {
  fixtures::GridCityParams p;
  p.seed = seed;
  p.sessions = sessions;
  return fixtures::make_grid_city(p);
}

// Brute-force corridor: every record against every path segment.
struct RawHit {
  std::string id;
  double s;
  double offset;
  std::size_t seg;
};

std::vector<RawHit> brute_corridor(std::span<const PanoRecord> recs,
                                   const std::vector<Vector3d>& path, double width) {
  std::vector<double> start(path.size(), 0.0);
  for (std::size_t i = 1; i < path.size(); ++i) start[i] = start[i - 1] + (path[i] - path[i - 1]).norm();
  std::vector<RawHit> out;
  for (const auto& r : recs) {
    std::vector<RawHit> mine;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      const Vector3d d = path[k + 1] - path[k];
      const double t = std::clamp((r.position() - path[k]).dot(d) / d.squaredNorm(), 0.0, 1.0);
      const double off = (r.position() - (path[k] + t * d)).norm();
      if (off <= width) mine.push_back({r.id, start[k] + t * d.norm(), off, k});
    }
    std::sort(mine.begin(), mine.end(), [](auto& a, auto& b) { return a.s < b.s; });
    for (std::size_t i = 0; i < mine.size();) {
      RawHit best = mine[i];
      std::size_t j = i + 1;
      for (; j < mine.size() && mine[j].s - mine[j - 1].s <= 2 * width; ++j) {
        if (mine[j].offset < best.offset) best = mine[j];
      }
      out.push_back(best);
      i = j;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("pano_index") {
  TEST_CASE("manifest line round trip") {
    const auto city = small_city(1, 1);
    for (const auto& r : city.records) {
      std::string why;
      const auto back = parse_manifest_line(to_manifest_line(r), &why);
      REQUIRE(back.has_value());
      CHECK(back->id == r.id);
      CHECK(back->capture_time == r.capture_time);
      CHECK((back->position() - r.position()).norm() < 1e-6);
      CHECK((back->pose.rotation - r.pose.rotation).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("malformed lines are reported, not fatal") {
    const auto city = small_city(2, 1);
    std::ostringstream text;
    text << to_manifest_line(city.records[0]) << "\n";
    text << "not json\n";
    text << R"({"id":"x","lat":95,"lon":0,"alt":0,"qw":1,"qx":0,"qy":0,"qz":0,"t":5,"trajectory_id":"a","city":"c","image_uri":"u"})"
         << "\n";
    text << R"({"id":"y","lat":10,"lon":0,"alt":0,"qw":0,"qx":0,"qy":0,"qz":0,"t":5,"trajectory_id":"a","city":"c","image_uri":"u"})"
         << "\n\n";
    text << to_manifest_line(city.records[0]) << "\n";  // duplicate id
    text << R"({"id":"z","lat":10,"lon":0,"alt":0,"qw":1,"qx":0,"qy":0,"qz":0,"t":-1,"trajectory_id":"a","city":"c","image_uri":"u"})"
         << "\n";
    testutil::TempDir dir("ingest");
    {
      std::ofstream f(dir / "m.jsonl");
      f << text.str();
    }
    PanoIndex store;
    const auto report = store.ingest_manifest(dir / "m.jsonl", dir / "rejects.tsv");
    CHECK(report.accepted == 1);
    CHECK(report.rejected == 5);
    REQUIRE(report.rejects.size() == 5);
    CHECK(report.rejects[0].line == 2);
    CHECK(report.rejects[1].reason.find("lat") != std::string::npos);
    CHECK(report.rejects[2].reason == "zero quaternion");
    CHECK(report.rejects[3].line == 6);
    CHECK(report.rejects[3].reason.find("duplicate") != std::string::npos);
    CHECK(store.size() == 1);
    std::ifstream side(dir / "rejects.tsv");
    std::string line;
    int n = 0;
    while (std::getline(side, line)) ++n;
    CHECK(n == 5);

    // Stable rendering.
    PanoIndex again;
    CHECK(again.ingest_manifest(dir / "m.jsonl").to_text() == report.to_text());
    CHECK_THROWS_AS(store.ingest_manifest(dir / "missing.jsonl"), Error);
  }

  TEST_CASE("radius query equals brute force") {
    const auto city = small_city(3);
    PanoIndex store(32.0);
    fixtures::load_into(store, city.records);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-20.0, 200.0), r(0.0, 80.0);
    for (int trial = 0; trial < 200; ++trial) {
      const Vector3d c = city.frame.to_ecef(Vector3d(u(rng), u(rng), 0.0));
      const double radius = r(rng);
      std::set<std::string> got, want;
      for (const auto* rec : store.query_radius(c, radius)) got.insert(rec->id);
      for (const auto& rec : store.records()) {
        if ((rec.position() - c).norm() <= radius) want.insert(rec.id);
      }
      CHECK(got == want);
    }
    // Boundary is inclusive.
    const auto& first = store.records()[0];
    const Vector3d probe = first.position() + Vector3d(3.0, 4.0, 0.0);
    const auto hits = store.query_radius(probe, (first.position() - probe).norm());
    CHECK(std::any_of(hits.begin(), hits.end(), [&](auto* h) { return h->id == first.id; }));
  }

  TEST_CASE("corridor query equals brute force") {
    const auto city = small_city(4);
    PanoIndex store;
    fixtures::load_into(store, city.records);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-10.0, 190.0), w(1.0, 15.0);
    std::uniform_int_distribution<int> nv(2, 5);
    for (int trial = 0; trial < 60; ++trial) {
      std::vector<Vector3d> path;
      const int n = nv(rng);
      for (int i = 0; i < n; ++i) path.push_back(city.frame.to_ecef(Vector3d(u(rng), u(rng), 0.0)));
      const double width = w(rng);
      const auto got = store.query_corridor(path, width);
      auto want = brute_corridor(store.records(), path, width);
      REQUIRE(got.size() == want.size());
      std::multiset<std::tuple<std::string, std::size_t>> a, b;
      for (const auto& h : got) a.insert({h.record->id, h.path_segment});
      for (const auto& h : want) b.insert({h.id, h.seg});
      CHECK(a == b);
      for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].s <= got[i].s);
      for (const auto& h : got) CHECK(h.offset <= width);
    }
  }

  TEST_CASE("corridor: out-and-back path visits a record twice") {
    fixtures::LocalFrame frame({48.8462, 2.3464, 61.0});
    PanoIndex store;
    PanoRecord r;
    r.id = "p";
    r.pose = frame.camera_pose(Vector3d(50.0, 1.0, 0.0), 90.0);
    r.geo = geodesy::ecef_to_geodetic(r.pose.translation);
    r.capture_time = 1.0;
    r.trajectory_id = "t";
    REQUIRE(store.add(r));
    const std::vector<Vector3d> path = {frame.to_ecef(Vector3d(0, 0, 0)),
                                        frame.to_ecef(Vector3d(100, 0, 0)),
                                        frame.to_ecef(Vector3d(0, 0, 0))};
    const auto hits = store.query_corridor(path, 5.0);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].s == doctest::Approx(50.0).epsilon(1e-6));
    CHECK(hits[1].s == doctest::Approx(150.0).epsilon(1e-6));
    CHECK(hits[0].path_segment == 0);
    CHECK(hits[1].path_segment == 1);
  }

  TEST_CASE("corridor rejects degenerate paths") {
    PanoIndex store;
    const std::vector<Vector3d> one = {Vector3d(6.4e6, 0, 0)};
    const std::vector<Vector3d> zero = {Vector3d(6.4e6, 0, 0), Vector3d(6.4e6, 0, 0)};
    CHECK_THROWS_AS(store.query_corridor(one, 5.0), Error);
    try {
      store.query_corridor(zero, 5.0);
      FAIL("expected DegeneratePath");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegeneratePath);
    }
  }

  TEST_CASE("grouping: splits on gaps, orders by time, resamples") {
    fixtures::LocalFrame frame({48.8462, 2.3464, 61.0});
    std::mt19937_64 rng(5);
    fixtures::DriveSpec d;
    d.trajectory_id = "t";
    d.spacing_m = 0.7;
    d.polyline = {Vector2d(0, 0), Vector2d(70, 0)};
    auto recs = fixtures::drive(frame, d, rng);
    // Drop a 30 m stretch to force a split.
    recs.erase(std::remove_if(recs.begin(), recs.end(),
                              [&](const PanoRecord& r) {
                                const double e = frame.to_enu(r.position()).x();
                                return e > 20.0 && e < 50.0;
                              }),
               recs.end());
    std::shuffle(recs.begin(), recs.end(), rng);
    PanoIndex store;
    fixtures::load_into(store, recs);

    const auto segs = store.group_trajectories({20.0, 1.4});
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].segment_id == "t/0");
    CHECK(segs[1].segment_id == "t/1");
    for (const auto& seg : segs) {
      double prev_t = -1.0;
      for (std::size_t k = 0; k < seg.pano_ids.size(); ++k) {
        const auto* r = store.find(seg.pano_ids[k]);
        CHECK(r->capture_time > prev_t);
        prev_t = r->capture_time;
        if (k > 0) {
          const double gap = (r->position() - store.find(seg.pano_ids[k - 1])->position()).norm();
          // Uniform 0.7 m input resamples to every other frame.
          CHECK(gap == doctest::Approx(1.4).epsilon(1e-6));
        }
      }
      CHECK(seg.mean_spacing_m == doctest::Approx(1.4).epsilon(1e-6));
    }
    // Resampling disabled keeps every frame.
    const auto raw = store.group_trajectories({20.0, 0.0});
    std::size_t total = 0;
    for (const auto& s : raw) total += s.pano_ids.size();
    CHECK(total == recs.size());
  }

  TEST_CASE("grouping properties on jittered captures") {
    const auto city = small_city(6, 8);
    PanoIndex store;
    fixtures::load_into(store, city.records);
    const GroupingParams gp{20.0, 1.4};
    const auto segs = store.group_trajectories(gp);
    std::map<std::string, std::vector<const PanoRecord*>> by_traj;
    for (const auto& r : store.records()) by_traj[r.trajectory_id].push_back(&r);
    for (const auto& seg : segs) {
      auto& all = by_traj.at(seg.trajectory_id);
      std::sort(all.begin(), all.end(),
                [](auto* a, auto* b) { return a->capture_time < b->capture_time; });
      // Kept frames are a time-ordered subsequence starting at the first frame.
      std::size_t cursor = 0;
      for (const auto& id : seg.pano_ids) {
        while (cursor < all.size() && all[cursor]->id != id) ++cursor;
        CHECK(cursor < all.size());
      }
      for (std::size_t k = 1; k < seg.pano_ids.size(); ++k) {
        const double gap = (store.find(seg.pano_ids[k])->position() -
                            store.find(seg.pano_ids[k - 1])->position())
                               .norm();
        CHECK(gap <= gp.max_gap_m);
        CHECK(gap > 0.5);
      }
    }
  }

  TEST_CASE("equal timestamps keep one frame") {
    fixtures::LocalFrame frame({48.8462, 2.3464, 61.0});
    PanoIndex store;
    for (int i = 0; i < 3; ++i) {
      PanoRecord r;
      r.id = "f" + std::to_string(i);
      r.pose = frame.camera_pose(Vector3d(i * 2.0, 0, 0), 90.0);
      r.geo = geodesy::ecef_to_geodetic(r.pose.translation);
      r.capture_time = i == 2 ? 10.0 : 10.0 + i;  // f0 and f2 collide
      r.trajectory_id = "t";
      REQUIRE(store.add(r));
    }
    const auto segs = store.group_trajectories({20.0, 0.0});
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].pano_ids == std::vector<std::string>{"f0", "f1"});
  }
}
