#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace panorag::geodesy {

// WGS84 ellipsoid.
inline constexpr double kSemiMajor = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kSemiMinor = kSemiMajor * (1.0 - kFlattening);
inline constexpr double kEccentricitySq = kFlattening * (2.0 - kFlattening);

/// Positions closer than this to the geocenter are rejected by ecef_to_geodetic.
inline constexpr double kMinGeocentricRadius = 1.0e6;

/// Geodetic latitude/longitude in degrees, altitude in meters above the
/// ellipsoid. Longitude is kept in [-180, 180).
struct GeodeticCoord {
  double lat = 0.0;
  double lon = 0.0;
  double alt = 0.0;
};

bool is_valid(const GeodeticCoord& c);

/// Rigid body-to-world transform in meters. Rotation is stored as a matrix;
/// quaternions are converted once on the way in.
struct SE3Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static SE3Pose identity() { return {}; }
  /// (w, x, y, z) need not be unit length; it is normalized here.
  static SE3Pose from_quaternion(const Eigen::Quaterniond& q,
                                 const Eigen::Vector3d& t);
  static SE3Pose from_matrix(const Eigen::Matrix4d& m);

  SE3Pose inverse() const;
  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  /// Orthonormal, det +1, finite translation.
  bool is_valid(double tol = 1e-9) const;

  friend SE3Pose operator*(const SE3Pose& a, const SE3Pose& b);
  friend bool operator==(const SE3Pose& a, const SE3Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

Eigen::Vector3d geodetic_to_ecef(const GeodeticCoord& c);

/// Iterative inverse; converges to well below a micrometer for terrestrial
/// altitudes. Throws Error(DegenerateInput) for |p| < kMinGeocentricRadius.
GeodeticCoord ecef_to_geodetic(const Eigen::Vector3d& p);

/// Re-expresses a trajectory so that its first frame is the origin:
/// result[k] = inverse(absolute[0]) * absolute[k], result[0] is exactly the
/// identity. Throws Error(EmptyTrajectory) on an empty input.
std::vector<SE3Pose> to_relative_poses(std::span<const SE3Pose> absolute);

/// Euclidean distance between camera centers; rotation is ignored.
double pose_distance(const SE3Pose& a, const SE3Pose& b);

/// Columns are the East, North and Up axes at `c`, expressed in ECEF.
Eigen::Matrix3d enu_rotation_at(const GeodeticCoord& c);

/// Heading of an ECEF direction in the local horizontal plane at `at`:
/// degrees clockwise from north, in [0, 360).
double heading_deg(const Eigen::Vector3d& at_ecef, const Eigen::Vector3d& dir);

/// Wraps an angle in degrees into (-180, 180].
double wrap_180(double deg);
/// Wraps an angle in degrees into [0, 360).
double wrap_360(double deg);

}  // namespace panorag::geodesy
