#include "panorag/grid_city.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "panorag/error.hpp"
#include "panorag/image.hpp"

namespace panorag::fixtures {

using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

LocalFrame::LocalFrame(const geodesy::GeodeticCoord& origin)
    : origin_ecef_(geodesy::geodetic_to_ecef(origin)), enu_(geodesy::enu_rotation_at(origin)) {}

Vector3d LocalFrame::to_ecef(const Vector3d& enu) const { return origin_ecef_ + enu_ * enu; }

Vector3d LocalFrame::to_enu(const Vector3d& ecef) const {
  return enu_.transpose() * (ecef - origin_ecef_);
}

geodesy::GeodeticCoord LocalFrame::to_geodetic(const Vector3d& enu) const {
  return geodesy::ecef_to_geodetic(to_ecef(enu));
}

geodesy::SE3Pose LocalFrame::camera_pose(const Vector3d& enu, double heading_deg) const {
  const Vector3d ecef = to_ecef(enu);
  const Eigen::Matrix3d local = geodesy::enu_rotation_at(geodesy::ecef_to_geodetic(ecef));
  const double h = heading_deg * kDeg;
  const Vector3d forward = local * Vector3d(std::sin(h), std::cos(h), 0.0);
  const Vector3d down = -local.col(2);
  geodesy::SE3Pose pose;
  pose.rotation.col(0) = forward;
  pose.rotation.col(1) = down.cross(forward);
  pose.rotation.col(2) = down;
  pose.translation = ecef;
  return pose;
}

std::vector<index::PanoRecord> drive(const LocalFrame& frame, const DriveSpec& spec,
                                     std::mt19937_64& rng, const std::string& city) {
  std::uniform_real_distribution<double> noise(-spec.jitter_m, spec.jitter_m);
  std::vector<index::PanoRecord> out;
  double carry = 0.0;  // arc length into the current leg of the next sample
  std::size_t k = 0;
  for (std::size_t leg = 0; leg + 1 < spec.polyline.size(); ++leg) {
    const Vector2d a = spec.polyline[leg];
    const Vector2d b = spec.polyline[leg + 1];
    const double len = (b - a).norm();
    if (len == 0.0) continue;
    const Vector2d dir = (b - a) / len;
    const Vector2d right(dir.y(), -dir.x());
    const double heading = std::atan2(dir.x(), dir.y()) / kDeg;
    const bool last_leg = leg + 2 == spec.polyline.size();
    double s = carry;
    for (; s < len || (last_leg && s <= len + 1e-9); s += spec.spacing_m) {
      Vector2d p = a + s * dir + spec.lateral_offset_m * right;
      if (spec.jitter_m > 0.0) p += Vector2d(noise(rng), noise(rng));
      index::PanoRecord r;
      r.id = spec.trajectory_id + "-" + std::to_string(k);
      r.pose = frame.camera_pose(Vector3d(p.x(), p.y(), 0.0), heading);
      r.geo = geodesy::ecef_to_geodetic(r.pose.translation);
      r.capture_time = spec.start_time + double(k) * spec.frame_dt;
      r.trajectory_id = spec.trajectory_id;
      r.city = city;
      r.image_uri = spec.image_uri;
      out.push_back(std::move(r));
      ++k;
    }
    carry = s - len;
  }
  return out;
}

GridCity make_grid_city(const GridCityParams& params) {
  GridCity city{LocalFrame(params.origin), {}, {}, params};
  std::mt19937_64 rng(params.seed);
  const double extent = params.blocks * params.block_m;
  std::uniform_int_distribution<int> street(0, params.blocks);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> day(0, 30);
  std::uniform_int_distribution<int> hour(6, 19);
  std::uniform_int_distribution<int> image(0, std::max(0, params.pano_images - 1));
  const double offsets[] = {0.0, 0.0, 1.0, 2.0, 3.0, 4.5, 6.0, 7.0};
  std::uniform_int_distribution<int> offset_pick(0, 7);

  const double mid = std::floor(params.blocks / 2.0) * params.block_m;
  if (params.anchors) {
    DriveSpec east;
    east.trajectory_id = "east";
    east.polyline = {Vector2d(0.0, mid), Vector2d(extent, mid)};
    east.spacing_m = params.spacing_m;
    east.start_time = 1.7e9;
    DriveSpec north = east;
    north.trajectory_id = "north";
    north.polyline = {Vector2d(mid, 0.0), Vector2d(mid, extent)};
    north.start_time = 1.7e9 + 86400.0;
    for (auto* d : {&east, &north}) {
      auto recs = drive(city.frame, *d, rng);
      city.records.insert(city.records.end(), recs.begin(), recs.end());
      city.drives.push_back(*d);
    }
  }

  for (int s = 0; s < params.sessions; ++s) {
    const double line = street(rng) * params.block_m;
    const bool east_west = coin(rng) == 1;
    Vector2d a = east_west ? Vector2d(0.0, line) : Vector2d(line, 0.0);
    Vector2d b = east_west ? Vector2d(extent, line) : Vector2d(line, extent);
    if (coin(rng) == 1) std::swap(a, b);

    DriveSpec spec;
    spec.trajectory_id = "s" + std::to_string(s);
    spec.polyline = {a, b};
    spec.spacing_m = params.spacing_m;
    spec.jitter_m = params.jitter_m;
    spec.lateral_offset_m = offsets[offset_pick(rng)] * (coin(rng) ? 1.0 : -1.0);
    spec.start_time = 1.7e9 + day(rng) * 86400.0 + hour(rng) * 3600.0;
    spec.image_uri = "pano_" + std::to_string(image(rng)) + ".ppm";
    auto recs = drive(city.frame, spec, rng);
    city.records.insert(city.records.end(), recs.begin(), recs.end());
    city.drives.push_back(std::move(spec));
  }
  return city;
}

std::vector<Vector2d> GridCity::anchor_path() const {
  if (!params.anchors) throw Error(ErrorCode::BadRequest, "grid city has no anchor drives");
  const double extent = params.blocks * params.block_m;
  const double mid = std::floor(params.blocks / 2.0) * params.block_m;
  return {Vector2d(5.0, mid), Vector2d(mid, mid), Vector2d(mid, extent - 5.0)};
}

namespace {
const geodesy::GeodeticCoord kScenarioOrigin{48.8462, 2.3464, 61.0};
}

Scenario straight_scenario(double path_m) {
  Scenario sc{LocalFrame(kScenarioOrigin), {}, {}};
  std::mt19937_64 rng(7);
  DriveSpec d;
  d.trajectory_id = "main";
  d.polyline = {Vector2d(-10.0, 0.0), Vector2d(path_m + 20.0, 0.0)};
  sc.records = drive(sc.frame, d, rng);
  sc.path = {Vector2d(0.0, 0.0), Vector2d(path_m, 0.0)};
  return sc;
}

Scenario junction_scenario() {
  Scenario sc{LocalFrame(kScenarioOrigin), {}, {}};
  std::mt19937_64 rng(11);
  DriveSpec a;
  a.trajectory_id = "avenue";
  a.polyline = {Vector2d(-100.0, 0.0), Vector2d(40.0, 0.0)};
  DriveSpec b;
  b.trajectory_id = "street";
  b.polyline = {Vector2d(0.0, -40.0), Vector2d(0.0, 100.0)};
  b.start_time = a.start_time + 86400.0;
  b.lateral_offset_m = 1.0;
  sc.records = drive(sc.frame, a, rng);
  const auto more = drive(sc.frame, b, rng);
  sc.records.insert(sc.records.end(), more.begin(), more.end());
  sc.path = {Vector2d(-80.0, 0.0), Vector2d(0.0, 0.0), Vector2d(0.0, 80.0)};
  return sc;
}

Scenario loop_scenario() {
  Scenario sc{LocalFrame(kScenarioOrigin), {}, {}};
  std::mt19937_64 rng(13);
  const std::vector<Vector2d> ring = {Vector2d(30.0, 0.0), Vector2d(60.0, 0.0),
                                      Vector2d(60.0, 40.0), Vector2d(0.0, 40.0),
                                      Vector2d(0.0, 0.0), Vector2d(30.0, 0.0)};
  DriveSpec d;
  d.trajectory_id = "block";
  d.spacing_m = 1.6;
  d.polyline = ring;
  // Second lap up to 40 m past the start.
  d.polyline.push_back(Vector2d(60.0, 0.0));
  d.polyline.push_back(Vector2d(60.0, 10.0));
  sc.records = drive(sc.frame, d, rng);
  sc.path = ring;
  return sc;
}

void load_into(index::PanoIndex& store, const std::vector<index::PanoRecord>& records) {
  for (const auto& r : records) {
    std::string why;
    if (!store.add(r, &why)) throw Error(ErrorCode::Internal, "fixture record rejected: " + why);
  }
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<index::PanoRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
  for (const auto& r : records) out << index::to_manifest_line(r) << "\n";
}

void write_pano_images(const std::filesystem::path& dir, int count, int width) {
  std::filesystem::create_directories(dir);
  const int height = width / 2;
  for (int k = 0; k < count; ++k) {
    ImageBuffer img(width, height, 3);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double az = 2.0 * std::numbers::pi * (x + 0.5) / width;
        const double el = std::numbers::pi * (y + 0.5) / height;
        img.at(x, y, 0) = float(0.5 + 0.4 * std::sin(az + k));
        img.at(x, y, 1) = float(0.5 + 0.4 * std::cos(2.0 * az - k) * std::sin(el));
        img.at(x, y, 2) = float(0.5 + 0.4 * std::cos(el + 0.3 * k));
      }
    }
    write_image(dir / ("pano_" + std::to_string(k) + ".ppm"), img);
  }
}

planner::UserPath user_path(const LocalFrame& frame, const std::vector<Vector2d>& enu) {
  planner::UserPath path;
  for (const auto& p : enu) path.waypoints.push_back(frame.to_geodetic(Vector3d(p.x(), p.y(), 0.0)));
  return path;
}

}  // namespace panorag::fixtures
