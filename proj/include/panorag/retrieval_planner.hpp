#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "panorag/geodesy.hpp"
#include "panorag/pano_index.hpp"

namespace panorag::planner {

struct UserPath {
  std::vector<geodesy::GeodeticCoord> waypoints;

  /// At least two waypoints, all valid, consecutive ones distinct.
  void validate() const;
  double length() const;
};

/// ECEF polyline with cumulative arc length.
class PathGeometry {
 public:
  explicit PathGeometry(const UserPath& path);
  explicit PathGeometry(std::vector<Eigen::Vector3d> vertices);

  std::span<const Eigen::Vector3d> vertices() const { return vertices_; }
  double length() const { return cumulative_.back(); }
  std::size_t segment_count() const { return vertices_.size() - 1; }
  /// Point at arc length s on polyline segment `seg` (s is global).
  Eigen::Vector3d point_at(double s, std::size_t seg) const;
  /// Point at arc length s; picks the first segment containing s.
  Eigen::Vector3d point_at(double s) const;
  std::size_t segment_at(double s) const;
  Eigen::Vector3d direction(std::size_t seg) const;

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<double> cumulative_;
};

struct PlannerParams {
  double corridor_m = 10.0;
  double heading_tol_deg = 45.0;
  std::size_t min_run = 8;
  double switch_penalty = 25.0;
  double gap_max_m = 8.0;
  double heading_weight = 0.05;  // cost units per degree of mismatch

  void validate() const;
};

struct PlanStep {
  double s = 0.0;
  std::string pano_id;
  std::string segment_id;
  double offset = 0.0;
  double heading_mismatch_deg = 0.0;
  std::size_t frame = 0;         // index within the source segment
  std::size_t path_segment = 0;  // polyline segment the pano projects onto

  bool operator==(const PlanStep&) const = default;
};

struct RetrievalPlan {
  std::vector<PlanStep> steps;
  std::vector<std::size_t> switch_points;  // step indices where the segment changes
  double path_length = 0.0;
  double cost = 0.0;
};

/// Segments of an index, addressable by pano id.
class SegmentCatalog {
 public:
  SegmentCatalog(const index::PanoIndex& store, std::vector<index::TrajectorySegment> segments);

  const index::PanoIndex& store() const { return *store_; }
  std::span<const index::TrajectorySegment> segments() const { return segments_; }
  struct Membership {
    std::size_t segment;
    std::size_t frame;
  };
  std::optional<Membership> membership(const std::string& pano_id) const;
  /// Direction of travel of `segment` at `frame` (central difference); zero
  /// for one-frame segments.
  Eigen::Vector3d travel_direction(std::size_t segment, std::size_t frame) const;

 private:
  const index::PanoIndex* store_;
  std::vector<index::TrajectorySegment> segments_;
  std::vector<std::vector<Eigen::Vector3d>> positions_;
  std::unordered_map<std::string, Membership> members_;
};

/// Corridor candidate with its per-step cost, exposed for inspection/tests.
struct Candidate {
  PlanStep step;
  std::size_t segment = 0;
  double cost = 0.0;
};

/// Candidates within the corridor and heading tolerance, ordered by s.
std::vector<Candidate> plan_candidates(const PathGeometry& path, const SegmentCatalog& catalog,
                                       const PlannerParams& params);

/// Cheapest sequence of corridor candidates covering the path: arc length
/// strictly increasing, steps no more than gap_max_m apart, runs are
/// consecutive frames of one segment, and every run but the last has at
/// least min_run steps. The first and last runs cannot be extended further
/// toward the path ends. Cost = sum(offset + w * heading mismatch) +
/// switch_penalty * switches. Throws Error(NoCoverage) with the uncovered
/// interval in the error detail.
RetrievalPlan plan_condition_path(const UserPath& path, const SegmentCatalog& catalog,
                                  const PlannerParams& params = {});
RetrievalPlan plan_over_candidates(std::span<const Candidate> candidates, double path_length,
                                   const PlannerParams& params);

struct PlanDiagnostics {
  double max_gap_m = 0.0;
  std::vector<double> switch_discontinuity_m;
  double coverage_fraction = 0.0;
};

PlanDiagnostics validate_plan(const RetrievalPlan& plan, const index::PanoIndex& store,
                              const PlannerParams& params = {});

struct PlanChunk {
  std::size_t first_step = 0;  // index of steps.front() in the full plan
  std::vector<PlanStep> steps;
};

/// Consecutive chunks of at most chunk_len steps sharing one boundary step.
std::vector<PlanChunk> chunk_plan(const RetrievalPlan& plan, std::size_t chunk_len = 73);

std::string to_plan_lines(const RetrievalPlan& plan);
RetrievalPlan parse_plan_lines(const std::string& text, double path_length);

/// Waypoint file: one "lat lon [alt]" per line (commas allowed, '#' comments).
UserPath read_waypoints(const std::string& text);

}  // namespace panorag::planner
