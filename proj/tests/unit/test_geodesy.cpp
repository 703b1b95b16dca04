#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "panorag/error.hpp"
#include "panorag/geodesy.hpp"
#include "test_util.hpp"

using namespace panorag;
using namespace panorag::geodesy;
using Eigen::Vector3d;

TEST_SUITE("geodesy") {
  TEST_CASE("ellipsoid constants") {
    CHECK(kSemiMajor == 6378137.0);
    CHECK(kFlattening == doctest::Approx(1.0 / 298.257223563).epsilon(1e-15));
    CHECK(kSemiMinor == doctest::Approx(6356752.314245).epsilon(1e-12));
  }

  TEST_CASE("known points") {
    const Vector3d equator = geodetic_to_ecef({0.0, 0.0, 0.0});
    CHECK(equator.x() == doctest::Approx(kSemiMajor));
    CHECK(equator.y() == doctest::Approx(0.0));
    CHECK(equator.z() == doctest::Approx(0.0));
    const Vector3d pole = geodetic_to_ecef({90.0, 0.0, 0.0});
    CHECK(pole.z() == doctest::Approx(kSemiMinor).epsilon(1e-12));
    CHECK(std::abs(pole.x()) < 1e-6);
  }

  TEST_CASE("forward transform matches the textbook formula") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180), alt(-1e4, 1e4);
    for (int i = 0; i < 1000; ++i) {
      const GeodeticCoord g{lat(rng), lon(rng), alt(rng)};
      CHECK((geodetic_to_ecef(g) - oracle::geodetic_to_ecef(g.lat, g.lon, g.alt)).norm() < 1e-6);
    }
  }

  TEST_CASE("inverse matches a closed-form solution") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> lat(-89.9, 89.9), lon(-180, 180), alt(-1e4, 1e4);
    for (int i = 0; i < 2000; ++i) {
      const Vector3d p = oracle::geodetic_to_ecef(lat(rng), lon(rng), alt(rng));
      const GeodeticCoord a = ecef_to_geodetic(p);
      const GeodeticCoord b = oracle::ecef_to_geodetic(p);
      CHECK(std::abs(a.lat - b.lat) < 1e-11);
      CHECK(std::abs(wrap_180(a.lon - b.lon)) < 1e-11);
      CHECK(std::abs(a.alt - b.alt) < 1e-6);
    }
  }

  TEST_CASE("round trip including poles and the antimeridian") {
    for (double lat : {-90.0, -89.999999, 0.0, 45.0, 89.999999, 90.0}) {
      for (double lon : {-180.0, -179.9999999, 0.0, 179.9999999}) {
        for (double alt : {-10000.0, 0.0, 10000.0}) {
          const Vector3d p = geodetic_to_ecef({lat, lon, alt});
          const Vector3d q = geodetic_to_ecef(ecef_to_geodetic(p));
          CHECK((p - q).norm() < 1e-6);
          const GeodeticCoord g = ecef_to_geodetic(p);
          CHECK(g.lon >= -180.0);
          CHECK(g.lon < 180.0);
        }
      }
    }
  }

  TEST_CASE("near-center positions are rejected") {
    CHECK_THROWS_AS(ecef_to_geodetic(Vector3d(10.0, 0.0, 0.0)), Error);
    try {
      ecef_to_geodetic(Vector3d::Zero());
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateInput);
    }
  }

  TEST_CASE("relative poses: head is identity, left invariance") {
    std::mt19937_64 rng(3);
    std::vector<SE3Pose> traj;
    for (int i = 0; i < 20; ++i) traj.push_back(testutil::random_pose(rng, 100.0));
    const auto rel = to_relative_poses(traj);
    REQUIRE(rel.size() == traj.size());
    CHECK(rel[0] == SE3Pose::identity());
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const Eigen::Matrix4d expect = traj[0].matrix().inverse() * traj[k].matrix();
      CHECK((rel[k].matrix() - expect).cwiseAbs().maxCoeff() < 1e-9);
    }
    const SE3Pose g = testutil::random_pose(rng, 50.0);
    std::vector<SE3Pose> moved;
    for (const auto& p : traj) moved.push_back(g * p);
    const auto rel2 = to_relative_poses(moved);
    for (std::size_t k = 0; k < traj.size(); ++k) {
      CHECK((rel[k].matrix() - rel2[k].matrix()).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK_THROWS_AS(to_relative_poses(std::span<const SE3Pose>{}), Error);
  }

  TEST_CASE("pose algebra") {
    std::mt19937_64 rng(4);
    const SE3Pose a = testutil::random_pose(rng, 10.0);
    const SE3Pose b = testutil::random_pose(rng, 10.0);
    CHECK(((a * b).matrix() - a.matrix() * b.matrix()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(((a * a.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.is_valid());
    SE3Pose bad = a;
    bad.rotation *= 1.01;
    CHECK_FALSE(bad.is_valid());
    const auto q = SE3Pose::from_quaternion(Eigen::Quaterniond(2.0, 0.0, 0.0, 0.0), Vector3d(1, 2, 3));
    CHECK(q.rotation.isApprox(Eigen::Matrix3d::Identity()));
    CHECK(pose_distance(a, b) == doctest::Approx((a.translation - b.translation).norm()));
    CHECK(SE3Pose::from_matrix(a.matrix()).matrix() == a.matrix());
  }

  TEST_CASE("local frame and headings") {
    const GeodeticCoord here{48.8462, 2.3464, 50.0};
    const Eigen::Matrix3d enu = enu_rotation_at(here);
    CHECK((enu.transpose() * enu - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(enu.determinant() == doctest::Approx(1.0));
    const Vector3d at = geodetic_to_ecef(here);
    CHECK(heading_deg(at, enu.col(1)) == doctest::Approx(0.0));
    CHECK(heading_deg(at, enu.col(0)) == doctest::Approx(90.0));
    CHECK(heading_deg(at, -enu.col(1)) == doctest::Approx(180.0));
    CHECK(heading_deg(at, -enu.col(0)) == doctest::Approx(270.0));
    const Vector3d up = geodetic_to_ecef({here.lat, here.lon, here.alt + 1.0}) - at;
    CHECK((up.normalized() - enu.col(2)).norm() < 1e-9);
  }

  TEST_CASE("angle wrapping") {
    CHECK(wrap_360(-10.0) == doctest::Approx(350.0));
    CHECK(wrap_360(360.0) == 0.0);
    CHECK(wrap_360(725.0) == doctest::Approx(5.0));
    CHECK(wrap_180(180.0) == 180.0);
    CHECK(wrap_180(-180.0) == 180.0);
    CHECK(wrap_180(190.0) == doctest::Approx(-170.0));
  }
}
