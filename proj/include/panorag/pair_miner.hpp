#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "panorag/geodesy.hpp"
#include "panorag/pano_index.hpp"

namespace panorag::mining {

struct MiningParams {
  std::size_t n = 73;                   // frames per target window
  double epsilon_m = 5.0;               // mean alignment distance must be below this
  double min_time_separation_s = 3600;  // sessions closer in time are not paired
  std::size_t window_stride = 16;
  unsigned threads = 0;                 // 0 = hardware concurrency

  void validate() const;
};

/// Target: N consecutive frames of one segment. Condition: the span of the
/// other segment the window aligns to, at its native length.
struct TrainingPair {
  std::string target_segment;
  std::string condition_segment;
  std::size_t window_start = 0;
  std::vector<std::string> target_window;
  std::vector<std::string> condition_window;
  double mean_alignment_dist = 0.0;
  double time_gap = 0.0;

  bool operator==(const TrainingPair&) const = default;
};

struct Alignment {
  std::vector<std::size_t> match;  // per window frame, index into `other`
  std::size_t first = 0;           // matched span of `other`, inclusive
  std::size_t last = 0;
  double mean_distance = 0.0;
};

/// Optimal monotone assignment of every window frame to a frame of `other`
/// (indices non-decreasing), minimizing the mean camera-center distance.
/// Throws Error(NoOverlap) when no pair of frames is within 10 * epsilon_m.
Alignment align_window(std::span<const geodesy::SE3Pose> window,
                       std::span<const geodesy::SE3Pose> other, double epsilon_m);

/// Pairs are emitted for both orderings of every admissible segment pair and
/// sorted by (target segment, condition segment, window start).
std::vector<TrainingPair> mine_pairs(const index::PanoIndex& store,
                                     std::span<const index::TrajectorySegment> segments,
                                     const MiningParams& params = {});

/// Gap between the capture-time intervals of two frame runs; 0 if they overlap.
double interval_gap(double a_begin, double a_end, double b_begin, double b_end);

struct Histogram {
  std::vector<double> edges;  // bin k covers [edges[k], edges[k+1]); last bin is open
  std::vector<std::size_t> counts;
};

struct PairStatistics {
  std::size_t count = 0;
  Histogram distance;
  Histogram time_gap;

  std::string to_text() const;
};

PairStatistics pair_statistics(std::span<const TrainingPair> pairs, double epsilon_m = 5.0,
                               std::size_t distance_bins = 10);

std::string to_manifest_line(const TrainingPair& pair);
std::optional<TrainingPair> parse_pair_line(const std::string& line);

}  // namespace panorag::mining
