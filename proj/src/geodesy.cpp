#include "panorag/geodesy.hpp"

#include <cmath>
#include <numbers>

#include "panorag/error.hpp"

namespace panorag::geodesy {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

bool is_valid(const GeodeticCoord& c) {
  return std::isfinite(c.lat) && std::isfinite(c.lon) && std::isfinite(c.alt) &&
         c.lat >= -90.0 && c.lat <= 90.0 && c.lon >= -180.0 && c.lon < 180.0;
}

SE3Pose SE3Pose::from_quaternion(const Eigen::Quaterniond& q,
                                 const Eigen::Vector3d& t) {
  SE3Pose p;
  p.rotation = q.normalized().toRotationMatrix();
  p.translation = t;
  return p;
}

SE3Pose SE3Pose::from_matrix(const Eigen::Matrix4d& m) {
  SE3Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

SE3Pose SE3Pose::inverse() const {
  SE3Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Eigen::Matrix4d SE3Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool SE3Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

SE3Pose operator*(const SE3Pose& a, const SE3Pose& b) {
  SE3Pose c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

Eigen::Vector3d geodetic_to_ecef(const GeodeticCoord& c) {
  const double lat = c.lat * kDeg;
  const double lon = c.lon * kDeg;
  const double sin_lat = std::sin(lat);
  const double cos_lat = std::cos(lat);
  const double n = kSemiMajor / std::sqrt(1.0 - kEccentricitySq * sin_lat * sin_lat);
  return {(n + c.alt) * cos_lat * std::cos(lon),
          (n + c.alt) * cos_lat * std::sin(lon),
          (n * (1.0 - kEccentricitySq) + c.alt) * sin_lat};
}

GeodeticCoord ecef_to_geodetic(const Eigen::Vector3d& p) {
  if (!p.allFinite() || p.norm() < kMinGeocentricRadius) {
    throw Error(ErrorCode::DegenerateInput,
                "ECEF position too close to the geocenter");
  }
  const double x = p.x();
  const double y = p.y();
  const double z = p.z();
  const double rho = std::hypot(x, y);

  GeodeticCoord out;
  out.lon = std::atan2(y, x) / kDeg;
  if (out.lon >= 180.0) out.lon -= 360.0;

  // Bowring's parametric-latitude start, refined by fixed-point iteration on
  // the geodetic latitude. Two or three passes reach machine precision.
  const double ep2 = kEccentricitySq / (1.0 - kEccentricitySq);
  const double beta = std::atan2(z * kSemiMajor, rho * kSemiMinor);
  double lat = std::atan2(z + ep2 * kSemiMinor * std::pow(std::sin(beta), 3),
                          rho - kEccentricitySq * kSemiMajor * std::pow(std::cos(beta), 3));
  double alt = 0.0;
  for (int iter = 0; iter < 16; ++iter) {
    const double sin_lat = std::sin(lat);
    const double cos_lat = std::cos(lat);
    const double n = kSemiMajor / std::sqrt(1.0 - kEccentricitySq * sin_lat * sin_lat);
    // Pick the better-conditioned altitude formula away from/near the poles.
    alt = std::abs(cos_lat) > 0.5 ? rho / cos_lat - n
                                  : z / sin_lat - n * (1.0 - kEccentricitySq);
    const double next = std::atan2(z, rho * (1.0 - kEccentricitySq * n / (n + alt)));
    const double delta = std::abs(next - lat);
    lat = next;
    if (delta < 1e-15) break;
  }
  const double sin_lat = std::sin(lat);
  const double cos_lat = std::cos(lat);
  const double n = kSemiMajor / std::sqrt(1.0 - kEccentricitySq * sin_lat * sin_lat);
  alt = std::abs(cos_lat) > 0.5 ? rho / cos_lat - n
                                : z / sin_lat - n * (1.0 - kEccentricitySq);
  out.lat = lat / kDeg;
  out.alt = alt;
  return out;
}

std::vector<SE3Pose> to_relative_poses(std::span<const SE3Pose> absolute) {
  if (absolute.empty()) {
    throw Error(ErrorCode::EmptyTrajectory, "trajectory has no poses");
  }
  const Eigen::Matrix3d r0_t = absolute.front().rotation.transpose();
  const Eigen::Vector3d& t0 = absolute.front().translation;

  std::vector<SE3Pose> out;
  out.reserve(absolute.size());
  out.push_back(SE3Pose::identity());
  for (std::size_t k = 1; k < absolute.size(); ++k) {
    SE3Pose rel;
    rel.rotation = r0_t * absolute[k].rotation;
    rel.translation = r0_t * (absolute[k].translation - t0);
    out.push_back(rel);
  }
  return out;
}

double pose_distance(const SE3Pose& a, const SE3Pose& b) {
  return (a.translation - b.translation).norm();
}

Eigen::Matrix3d enu_rotation_at(const GeodeticCoord& c) {
  const double lat = c.lat * kDeg;
  const double lon = c.lon * kDeg;
  const double sl = std::sin(lat), cl = std::cos(lat);
  const double so = std::sin(lon), co = std::cos(lon);
  Eigen::Matrix3d r;
  r.col(0) << -so, co, 0.0;
  r.col(1) << -sl * co, -sl * so, cl;
  r.col(2) << cl * co, cl * so, sl;
  return r;
}

double heading_deg(const Eigen::Vector3d& at_ecef, const Eigen::Vector3d& dir) {
  const Eigen::Matrix3d enu = enu_rotation_at(ecef_to_geodetic(at_ecef));
  const Eigen::Vector3d local = enu.transpose() * dir;
  return wrap_360(std::atan2(local.x(), local.y()) / kDeg);
}

double wrap_180(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

double wrap_360(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

}  // namespace panorag::geodesy
