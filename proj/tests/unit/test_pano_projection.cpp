#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "oracles.hpp"
#include "panorag/error.hpp"
#include "panorag/grid_city.hpp"
#include "panorag/pair_miner.hpp"
#include "panorag/pano_projection.hpp"
#include "test_util.hpp"

using namespace panorag;
using namespace panorag::projection;

namespace {

// Red channel encodes azimuth, green encodes elevation (both linear in the
// pixel-center coordinates).
ImageBuffer angle_pano(int w) {
  ImageBuffer img(w, w / 2, 3);
  for (int y = 0; y < w / 2; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = float((x + 0.5) / w);
      img.at(x, y, 1) = float((y + 0.5) / (w / 2));
      img.at(x, y, 2) = 0.5f;
    }
  }
  return img;
}

AugmentationParams small(int w, int h, double fov = 65.0) {
  AugmentationParams p;
  p.out_w = w;
  p.out_h = h;
  p.fov_deg = fov;
  return p;
}

}  // namespace

TEST_SUITE("pano_projection") {
  TEST_CASE("pixel rays equal the rotation-matrix construction") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> yaw(-720, 720), pitch(-20, 20), uv(0, 1);
    for (int i = 0; i < 500; ++i) {
      const auto p = small(96, 64, 40 + 60 * uv(rng));
      const double y = yaw(rng), t = pitch(rng);
      const double u = uv(rng) * p.out_w, v = uv(rng) * p.out_h;
      const auto d = crop_pixel_direction(u, v, y, t, p);
      const auto [az, el] = oracle::ray_angles(oracle::crop_ray(u, v, p.out_w, p.out_h, p.fov_deg, y, t));
      CHECK(std::abs(geodesy::wrap_180(d.azimuth_deg - az)) < 1e-9);
      CHECK(d.elevation_deg == doctest::Approx(el).epsilon(1e-9));
    }
  }

  TEST_CASE("crop equals the ray-cast oracle") {
    std::mt19937_64 rng(2);
    const auto pano = testutil::random_image(rng, 128, 64);
    std::uniform_real_distribution<double> yaw(0, 360), pitch(-20, 20);
    for (int i = 0; i < 10; ++i) {
      const auto p = small(48, 32);
      const double y = yaw(rng), t = pitch(rng);
      const auto got = crop_perspective(pano, y, t, p);
      const auto want = oracle::raycast_crop(pano, y, t, p.fov_deg, p.out_w, p.out_h);
      double worst = 0.0;
      for (std::size_t k = 0; k < got.data.size(); ++k) {
        worst = std::max(worst, double(std::abs(got.data[k] - want.data[k])));
      }
      CHECK(worst <= 1.0 / 255.0);
    }
  }

  TEST_CASE("center pixel looks along the yaw") {
    const auto pano = angle_pano(720);
    for (double yaw : {10.0, 90.0, 181.0, 300.0}) {
      const auto crop = crop_perspective(pano, yaw, 0.0, small(64, 32));
      // The crop's center lies between pixels; average the 2x2 block.
      double r = 0.0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) r += crop.at(31 + dx, 15 + dy, 0);
      }
      CHECK(r / 4.0 * 360.0 == doctest::Approx(yaw).epsilon(1e-3));
    }
  }

  TEST_CASE("yaw wraps") {
    std::mt19937_64 rng(3);
    const auto pano = testutil::random_image(rng, 64, 32);
    const auto p = small(32, 16);
    CHECK(crop_perspective(pano, 45.0, 5.0, p) == crop_perspective(pano, 405.0, 5.0, p));
    CHECK(crop_perspective(pano, -90.0, 0.0, p) == crop_perspective(pano, 270.0, 0.0, p));
  }

  TEST_CASE("shape and pitch errors") {
    const ImageBuffer bad(100, 40, 3, 0.5f);
    try {
      crop_perspective(bad, 0.0, 0.0, small(32, 16));
      FAIL("expected BadAspect");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadAspect);
    }
    const ImageBuffer ok(64, 32, 3, 0.5f);
    try {
      crop_perspective(ok, 0.0, 60.0, small(32, 16));
      FAIL("expected PitchOutOfRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::PitchOutOfRange);
    }
    CHECK_NOTHROW(crop_perspective(ok, 0.0, 57.0, small(32, 16)));
  }

  TEST_CASE("latent shape") {
    CHECK(compute_latent_shape(73, 480, 832) == LatentShape{18, 30, 52});
    CHECK(compute_latent_shape(1, 16, 16) == LatentShape{0, 1, 1});
    for (auto [t, h, w] : {std::tuple{72, 480, 832}, {73, 481, 832}, {73, 480, 830}, {0, 16, 16}}) {
      try {
        compute_latent_shape(t, h, w);
        FAIL("expected IncompatibleDims");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IncompatibleDims);
      }
    }
  }

  TEST_CASE("yaw schedule follows headings") {
    Rng rng(5);
    std::vector<double> headings;
    for (int k = 0; k < 50; ++k) headings.push_back(geodesy::wrap_360(350.0 + 3.0 * k));
    const auto yaw = sample_yaw_schedule(headings.size(), headings, rng);
    REQUIRE(yaw.size() == headings.size());
    CHECK(yaw[0] >= 0.0);
    CHECK(yaw[0] < 360.0);
    for (std::size_t k = 1; k < yaw.size(); ++k) {
      const double extra = yaw[k] - yaw[k - 1] - 3.0;  // heading turns 3 deg per frame
      CHECK(extra >= -1e-9);
      CHECK(extra <= 2.0 + 1e-9);
    }
    CHECK_THROWS_AS(sample_yaw_schedule(5, std::vector<double>(3, 0.0), rng), Error);
  }

  TEST_CASE("seeded sampling is reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(sample_condition_length(a) == sample_condition_length(b));
    Rng c(1);
    std::map<int, int> seen;
    for (int i = 0; i < 6000; ++i) ++seen[sample_condition_length(c)];
    CHECK(seen.size() == 6);
    for (auto [len, count] : seen) CHECK(len % 4 == 1);
  }

  TEST_CASE("training example from a mined pair") {
    fixtures::LocalFrame frame({48.8462, 2.3464, 61.0});
    std::mt19937_64 rng(9);
    fixtures::DriveSpec a;
    a.trajectory_id = "a";
    a.polyline = {Eigen::Vector2d(0, 0), Eigen::Vector2d(200, 0)};
    fixtures::DriveSpec b = a;
    b.trajectory_id = "b";
    b.start_time += 86400.0;
    b.lateral_offset_m = 2.0;
    index::PanoIndex store;
    fixtures::load_into(store, fixtures::drive(frame, a, rng));
    fixtures::load_into(store, fixtures::drive(frame, b, rng));
    const auto pairs = mining::mine_pairs(store, store.group_trajectories());
    REQUIRE_FALSE(pairs.empty());
    const auto ex = build_training_example(pairs[0], store, {}, {}, 123);
    CHECK(ex.target_ids.size() == 73);
    CHECK(ex.target_relative_poses[0] == geodesy::SE3Pose::identity());
    CHECK(ex.target_latent == LatentShape{18, 30, 52});
    CHECK(ex.condition_ids.size() % 4 == 1);
    CHECK(ex.condition_ids.size() >= 61);
    CHECK(ex.condition_ids.size() <= pairs[0].condition_window.size());
    CHECK(ex.condition_crop_yaw_deg.size() == ex.condition_ids.size());
    // Eastbound drive, panorama azimuth 0 faces the travel direction: crop yaw
    // equals the sampled offset from the heading.
    for (std::size_t k = 0; k < ex.target_ids.size(); ++k) {
      CHECK(std::abs(geodesy::wrap_180(ex.target_crop_yaw_deg[k] - (ex.target_yaw_deg[k] - 90.0))) < 1e-6);
    }
    CHECK(build_training_example(pairs[0], store, {}, {}, 123).to_manifest_line() ==
          ex.to_manifest_line());

    auto shortened = pairs[0];
    shortened.condition_window.resize(60);
    try {
      build_training_example(shortened, store, {}, {}, 1);
      FAIL("expected ConditionTooShort");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConditionTooShort);
    }
  }
}
