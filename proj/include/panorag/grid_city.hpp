#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "panorag/geodesy.hpp"
#include "panorag/pano_index.hpp"
#include "panorag/retrieval_planner.hpp"

namespace panorag::fixtures {

/// Local east-north-up frame anchored at a geodetic origin.
class LocalFrame {
 public:
  explicit LocalFrame(const geodesy::GeodeticCoord& origin);

  Eigen::Vector3d to_ecef(const Eigen::Vector3d& enu) const;
  Eigen::Vector3d to_enu(const Eigen::Vector3d& ecef) const;
  geodesy::GeodeticCoord to_geodetic(const Eigen::Vector3d& enu) const;
  /// Body-to-ECEF pose of a level camera at `enu` facing `heading_deg`
  /// (clockwise from north); body frame is forward-right-down.
  geodesy::SE3Pose camera_pose(const Eigen::Vector3d& enu, double heading_deg) const;

 private:
  Eigen::Vector3d origin_ecef_;
  Eigen::Matrix3d enu_;
};

struct DriveSpec {
  std::string trajectory_id;
  std::vector<Eigen::Vector2d> polyline;  // east/north meters
  double spacing_m = 1.4;
  double lateral_offset_m = 0.0;  // positive = right of travel direction
  double jitter_m = 0.0;          // uniform per-axis position noise
  double start_time = 1.7e9;
  double frame_dt = 0.1;
  std::string image_uri = "pano_0.ppm";
};

/// Panoramas sampled every `spacing_m` along the polyline, ids
/// "<trajectory_id>-<k>".
std::vector<index::PanoRecord> drive(const LocalFrame& frame, const DriveSpec& spec,
                                     std::mt19937_64& rng, const std::string& city = "gridcity");

struct GridCityParams {
  geodesy::GeodeticCoord origin{48.8462, 2.3464, 61.0};
  int blocks = 3;         // streets: blocks + 1 in each direction
  double block_m = 60.0;
  int sessions = 8;
  double spacing_m = 1.4;
  double jitter_m = 0.15;
  std::uint64_t seed = 1;
  int pano_images = 4;
  /// Adds an eastbound drive along the middle row and a northbound drive
  /// along the middle column (no offset, no jitter) before the random ones.
  bool anchors = true;
};

struct GridCity {
  LocalFrame frame;
  std::vector<index::PanoRecord> records;
  std::vector<DriveSpec> drives;
  GridCityParams params;

  /// L-shaped path along the anchor drives: east along the middle row, then
  /// north along the middle column. Requires anchors.
  std::vector<Eigen::Vector2d> anchor_path() const;
};

/// Random capture sessions along full grid streets: random street, direction,
/// lateral offset (0..7 m) and capture day/hour.
GridCity make_grid_city(const GridCityParams& params);

/// Small hand-built layouts with a user path in local east/north meters.
struct Scenario {
  LocalFrame frame;
  std::vector<index::PanoRecord> records;
  std::vector<Eigen::Vector2d> path;
};

/// One eastbound drive; the path follows it for `path_m` meters.
Scenario straight_scenario(double path_m = 150.0);
/// Eastbound drive through a junction and a northbound drive away from it
/// (a day apart); the path turns left at the junction.
Scenario junction_scenario();
/// 60 x 40 m block driven 1.2 times at 1.6 m spacing, starting mid-edge;
/// the path is the closed block outline from the same point.
Scenario loop_scenario();

/// Inserts every record; throws if any is rejected.
void load_into(index::PanoIndex& store, const std::vector<index::PanoRecord>& records);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<index::PanoRecord>& records);

/// Writes `count` smooth synthetic equirectangular panoramas pano_<k>.ppm.
void write_pano_images(const std::filesystem::path& dir, int count, int width = 64);

planner::UserPath user_path(const LocalFrame& frame, const std::vector<Eigen::Vector2d>& enu);

}  // namespace panorag::fixtures
