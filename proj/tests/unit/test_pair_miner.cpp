#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "oracles.hpp"
#include "panorag/error.hpp"
#include "panorag/grid_city.hpp"
#include "panorag/pair_miner.hpp"
#include "test_util.hpp"

using namespace panorag;
using namespace panorag::mining;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

std::vector<geodesy::SE3Pose> as_poses(const std::vector<Vector3d>& pts) {
  std::vector<geodesy::SE3Pose> out;
  for (const auto& p : pts) {
    geodesy::SE3Pose pose;
    pose.translation = p;
    out.push_back(pose);
  }
  return out;
}

std::vector<Vector3d> random_walk(std::mt19937_64& rng, std::size_t n, double step, Vector3d at) {
  std::normal_distribution<double> g(0.0, step);
  std::vector<Vector3d> out;
  for (std::size_t i = 0; i < n; ++i) {
    at += Vector3d(std::abs(g(rng)) + 0.2, g(rng), 0.1 * g(rng));
    out.push_back(at);
  }
  return out;
}

// Two drives along the same street on different days.
struct PairFixture {
  index::PanoIndex store;
  std::vector<index::TrajectorySegment> segments;
};

PairFixture two_drives(double lateral_offset, double time_apart, double length = 150.0) {
  fixtures::LocalFrame frame({48.8462, 2.3464, 61.0});
  std::mt19937_64 rng(1);
  fixtures::DriveSpec a;
  a.trajectory_id = "a";
  a.polyline = {Vector2d(0, 0), Vector2d(length, 0)};
  fixtures::DriveSpec b = a;
  b.trajectory_id = "b";
  b.lateral_offset_m = lateral_offset;
  b.start_time = a.start_time + time_apart;
  PairFixture f;
  fixtures::load_into(f.store, fixtures::drive(frame, a, rng));
  fixtures::load_into(f.store, fixtures::drive(frame, b, rng));
  f.segments = f.store.group_trajectories();
  return f;
}

std::set<std::string> keys(const std::vector<TrainingPair>& pairs) {
  std::set<std::string> out;
  for (const auto& p : pairs) out.insert(to_manifest_line(p));
  return out;
}

}  // namespace

TEST_SUITE("pair_miner") {
  TEST_CASE("alignment equals naive DP and enumeration on tiny inputs") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> len(1, 6);
    for (int trial = 0; trial < 300; ++trial) {
      const auto w = random_walk(rng, std::size_t(len(rng)), 1.0, Vector3d::Zero());
      const auto o = random_walk(rng, std::size_t(len(rng) + 1), 1.0, Vector3d(-1, 0.5, 0));
      const auto al = align_window(as_poses(w), as_poses(o), 100.0);
      const double brute = oracle::brute_force_alignment(w, o);
      const auto naive = oracle::naive_alignment(w, o);
      CHECK(al.mean_distance * double(w.size()) == doctest::Approx(brute).epsilon(1e-12));
      CHECK(al.match == naive.match);
      CHECK(std::is_sorted(al.match.begin(), al.match.end()));
      CHECK(al.first == al.match.front());
      CHECK(al.last == al.match.back());
    }
  }

  TEST_CASE("alignment equals naive DP on longer inputs") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 40; ++trial) {
      const auto w = random_walk(rng, 40, 1.0, Vector3d::Zero());
      const auto o = random_walk(rng, 70, 1.0, Vector3d(-5, 1, 0));
      const auto al = align_window(as_poses(w), as_poses(o), 100.0);
      const auto naive = oracle::naive_alignment(w, o);
      CHECK(al.match == naive.match);
      CHECK(al.mean_distance == doctest::Approx(naive.total / 40.0).epsilon(1e-12));
    }
  }

  TEST_CASE("alignment errors") {
    const std::vector<Vector3d> w = {Vector3d(0, 0, 0), Vector3d(1, 0, 0)};
    const std::vector<Vector3d> far = {Vector3d(100, 0, 0), Vector3d(101, 0, 0)};
    try {
      align_window(as_poses(w), as_poses(far), 5.0);
      FAIL("expected NoOverlap");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoOverlap);
    }
    // Exactly 10 * epsilon is still overlap.
    const std::vector<Vector3d> edge = {Vector3d(51, 0, 0), Vector3d(52, 0, 0)};
    CHECK_NOTHROW(align_window(as_poses(w), as_poses(edge), 5.0));
    CHECK_THROWS_AS(align_window(as_poses(w), as_poses({Vector3d::Zero()}), 5.0), Error);
  }

  TEST_CASE("coincident drives pair, 6 m offset does not") {
    MiningParams p;
    {
      auto f = two_drives(0.0, 86400.0);
      const auto pairs = mine_pairs(f.store, f.segments, p);
      REQUIRE_FALSE(pairs.empty());
      for (const auto& pr : pairs) {
        CHECK(pr.mean_alignment_dist < 1e-6);
        CHECK(pr.target_window.size() == p.n);
        CHECK(pr.condition_window.size() == p.n);
        CHECK(pr.time_gap >= p.min_time_separation_s);
      }
      // Both orderings present.
      std::set<std::string> targets;
      for (const auto& pr : pairs) targets.insert(pr.target_segment);
      CHECK(targets.size() == 2);
    }
    {
      auto f = two_drives(6.0, 86400.0);
      CHECK(mine_pairs(f.store, f.segments, p).empty());
    }
    {
      auto f = two_drives(0.0, 600.0);  // same hour
      CHECK(mine_pairs(f.store, f.segments, p).empty());
    }
  }

  TEST_CASE("mined pairs equal exhaustive enumeration") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      fixtures::GridCityParams gp;
      gp.seed = seed;
      gp.sessions = 6;
      gp.blocks = 2;
      const auto city = fixtures::make_grid_city(gp);
      index::PanoIndex store;
      fixtures::load_into(store, city.records);
      const auto segs = store.group_trajectories();
      MiningParams p;
      p.n = 41;
      p.window_stride = 8;
      p.threads = 2;
      const auto got = mine_pairs(store, segs, p);
      const auto want = oracle::enumerate_pairs(store, segs, p);
      CHECK(keys(got) == keys(want));
      CHECK(got.size() == want.size());
      // Deterministic ordering.
      CHECK(std::is_sorted(got.begin(), got.end(), [](const auto& a, const auto& b) {
        return std::tie(a.target_segment, a.condition_segment, a.window_start) <
               std::tie(b.target_segment, b.condition_segment, b.window_start);
      }));
      p.threads = 1;
      CHECK(mine_pairs(store, segs, p) == got);
    }
  }

  TEST_CASE("time gap is between capture intervals") {
    CHECK(interval_gap(0, 10, 20, 30) == 10.0);
    CHECK(interval_gap(20, 30, 0, 10) == 10.0);
    CHECK(interval_gap(0, 10, 5, 30) == 0.0);
    CHECK(interval_gap(10, 0, 30, 20) == 10.0);
  }

  TEST_CASE("pair manifest round trip and statistics") {
    auto f = two_drives(1.2, 2 * 86400.0);
    const auto pairs = mine_pairs(f.store, f.segments);
    REQUIRE_FALSE(pairs.empty());
    for (const auto& p : pairs) {
      const auto back = parse_pair_line(to_manifest_line(p));
      REQUIRE(back.has_value());
      CHECK(back->target_window == p.target_window);
      CHECK(back->condition_window == p.condition_window);
      CHECK(back->mean_alignment_dist == doctest::Approx(p.mean_alignment_dist));
    }
    CHECK_FALSE(parse_pair_line("{}").has_value());
    const auto stats = pair_statistics(pairs, 5.0);
    CHECK(stats.count == pairs.size());
    std::size_t total = 0;
    for (auto c : stats.distance.counts) total += c;
    CHECK(total == pairs.size());
    CHECK(stats.distance.edges.size() == stats.distance.counts.size());
    // 1.2 m offset: every pair falls in the [1.0, 1.5) bin.
    CHECK(stats.distance.counts[2] == pairs.size());
    CHECK(stats.to_text() == pair_statistics(pairs, 5.0).to_text());
  }

  TEST_CASE("parameter validation") {
    MiningParams p;
    p.epsilon_m = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.window_stride = 0;
    CHECK_THROWS_AS(p.validate(), Error);
  }
}
