#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "panorag/geodesy.hpp"

namespace panorag::index {

/// One geo-registered panorama. `pose` maps the panorama body frame
/// (x forward = azimuth 0, y right, z down) into ECEF.
struct PanoRecord {
  std::string id;
  geodesy::GeodeticCoord geo;
  geodesy::SE3Pose pose;
  double capture_time = 0.0;  // unix seconds
  std::string trajectory_id;
  std::string city;
  std::string image_uri;

  const Eigen::Vector3d& position() const { return pose.translation; }
};

/// Time-ordered run of one capture trajectory with no spatial gap larger than
/// the grouping threshold.
struct TrajectorySegment {
  std::string segment_id;
  std::string trajectory_id;
  std::vector<std::string> pano_ids;
  double mean_spacing_m = 0.0;
};

struct GroupingParams {
  double max_gap_m = 20.0;
  /// Approximate spacing after frame dropping; <= 0 keeps every frame.
  double target_spacing_m = 1.4;
};

struct RejectedLine {
  std::size_t line = 0;  // 1-based
  std::string reason;
  std::string text;
};

struct IngestReport {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<RejectedLine> rejects;

  /// Stable plain-text rendering (same input, same bytes).
  std::string to_text() const;
};

struct CorridorHit {
  const PanoRecord* record = nullptr;
  double s = 0.0;        // arc length of the projection onto the path
  double offset = 0.0;   // distance from the record to the path
  std::size_t path_segment = 0;
};

/// Parses one manifest line. Returns the reason on failure.
std::optional<PanoRecord> parse_manifest_line(const std::string& line,
                                              std::string* reason);
std::string to_manifest_line(const PanoRecord& record);

/// Record store with a uniform-grid spatial index over ECEF positions.
///
/// Built by a single writer through ingest_manifest()/add(); afterwards all
/// const members may be called concurrently.
class PanoIndex {
 public:
  explicit PanoIndex(double cell_size_m = 64.0);

  /// Throws Error(FileNotFound). Malformed lines are rejected, not fatal.
  /// Rejected lines are echoed to `sidecar` when given.
  IngestReport ingest_manifest(const std::filesystem::path& path,
                               const std::optional<std::filesystem::path>& sidecar = {});
  IngestReport ingest_stream(std::istream& in);

  /// False (with reason) for a duplicate id or an invalid record.
  bool add(PanoRecord record, std::string* reason = nullptr);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::span<const PanoRecord> records() const { return records_; }
  const PanoRecord* find(const std::string& id) const;

  std::vector<TrajectorySegment> group_trajectories(const GroupingParams& params = {}) const;

  /// Every record whose position lies within `r` meters of `center`.
  std::vector<const PanoRecord*> query_radius(const Eigen::Vector3d& center, double r) const;

  /// Records within `width` of the polyline, each with its arc-length
  /// projection, ordered by arc length. A record that the path passes more
  /// than once (loops, out-and-back) yields one hit per pass. Throws
  /// Error(DegeneratePath) for fewer than two vertices or zero length.
  std::vector<CorridorHit> query_corridor(std::span<const Eigen::Vector3d> path,
                                          double width) const;

 private:
  struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
  };
  struct CellHash {
    std::size_t operator()(const CellKey& k) const noexcept;
  };

  CellKey cell_of(const Eigen::Vector3d& p) const;
  std::vector<std::size_t> cells_in_box(const Eigen::Vector3d& lo,
                                        const Eigen::Vector3d& hi) const;

  double cell_size_;
  std::vector<PanoRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid_;
};

/// Projection of `p` onto the segment [a, b]: clamped parameter in [0, |b-a|]
/// and the distance from `p` to the projected point.
struct SegmentProjection {
  double along = 0.0;
  double distance = 0.0;
};
SegmentProjection project_onto_segment(const Eigen::Vector3d& p,
                                       const Eigen::Vector3d& a,
                                       const Eigen::Vector3d& b);

}  // namespace panorag::index
