#include "panorag/pair_miner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::mining {

using Eigen::Vector3d;
using geodesy::SE3Pose;

void MiningParams::validate() const {
  if (n < 2) throw Error(ErrorCode::BadRequest, "window length N must be at least 2");
  if (!(epsilon_m > 0.0)) throw Error(ErrorCode::BadRequest, "epsilon must be positive");
  if (window_stride < 1) throw Error(ErrorCode::BadRequest, "window stride must be >= 1");
  if (!(min_time_separation_s >= 0.0)) {
    throw Error(ErrorCode::BadRequest, "minimum time separation must be non-negative");
  }
}

namespace {

// Prefix-minimum DP: best[i][j] = d(i, j) + min_{j' <= j} best[i-1][j'].
// Returns nullopt for NoOverlap.
std::optional<Alignment> align_positions(std::span<const Vector3d> window,
                                         std::span<const Vector3d> other, double epsilon_m) {
  const std::size_t n = window.size();
  const std::size_t m = other.size();
  const double reach = 10.0 * epsilon_m;

  std::vector<double> cost(m);
  std::vector<double> prefix(m);
  // arg[i * m + j] = argmin over j' <= j of row i-1, recorded for backtracking.
  std::vector<std::size_t> arg(n * m);
  bool any_close = false;

  for (std::size_t j = 0; j < m; ++j) {
    cost[j] = (window[0] - other[j]).norm();
    any_close = any_close || cost[j] <= reach;
  }
  for (std::size_t i = 1; i < n; ++i) {
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (cost[j] < cost[best_j]) best_j = j;
      prefix[j] = cost[best_j];
      arg[i * m + j] = best_j;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (window[i] - other[j]).norm();
      any_close = any_close || d <= reach;
      cost[j] = d + prefix[j];
    }
  }
  if (!any_close) return std::nullopt;

  std::size_t j = 0;
  for (std::size_t k = 1; k < m; ++k) {
    if (cost[k] < cost[j]) j = k;
  }
  Alignment out;
  out.mean_distance = cost[j] / double(n);
  out.match.resize(n);
  for (std::size_t i = n; i-- > 0;) {
    out.match[i] = j;
    if (i > 0) j = arg[i * m + j];
  }
  out.first = out.match.front();
  out.last = out.match.back();
  return out;
}

struct SegmentView {
  const index::TrajectorySegment* segment;
  std::vector<Vector3d> positions;
  std::vector<double> times;
  Vector3d lo, hi;
};

double box_distance(const SegmentView& a, const SegmentView& b) {
  const Vector3d gap = (a.lo - b.hi).cwiseMax(b.lo - a.hi).cwiseMax(0.0);
  return gap.norm();
}

// Admissible pairs with `a` as the target segment.
std::vector<TrainingPair> mine_directed(const SegmentView& a, const SegmentView& b,
                                        const MiningParams& params) {
  std::vector<TrainingPair> out;
  const std::size_t n = params.n;
  if (a.positions.size() < n || b.positions.size() < 2) return out;
  const bool same_trajectory = a.segment->trajectory_id == b.segment->trajectory_id;

  for (std::size_t start = 0; start + n <= a.positions.size(); start += params.window_stride) {
    const auto window = std::span<const Vector3d>(a.positions).subspan(start, n);
    auto al = align_positions(window, b.positions, params.epsilon_m);
    if (!al || !(al->mean_distance < params.epsilon_m)) continue;

    const double gap = interval_gap(a.times[start], a.times[start + n - 1], b.times[al->first],
                                    b.times[al->last]);
    if (gap < params.min_time_separation_s) continue;
    if (same_trajectory && !(gap > 0.0)) continue;

    TrainingPair p;
    p.target_segment = a.segment->segment_id;
    p.condition_segment = b.segment->segment_id;
    p.window_start = start;
    p.target_window.assign(a.segment->pano_ids.begin() + std::ptrdiff_t(start),
                           a.segment->pano_ids.begin() + std::ptrdiff_t(start + n));
    p.condition_window.assign(b.segment->pano_ids.begin() + std::ptrdiff_t(al->first),
                              b.segment->pano_ids.begin() + std::ptrdiff_t(al->last + 1));
    p.mean_alignment_dist = al->mean_distance;
    p.time_gap = gap;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Alignment align_window(std::span<const SE3Pose> window, std::span<const SE3Pose> other,
                       double epsilon_m) {
  if (window.empty()) throw Error(ErrorCode::EmptyTrajectory, "alignment window is empty");
  if (other.size() < 2) {
    throw Error(ErrorCode::BadRequest, "alignment target needs at least two frames");
  }
  std::vector<Vector3d> w, o;
  w.reserve(window.size());
  o.reserve(other.size());
  for (const auto& p : window) w.push_back(p.translation);
  for (const auto& p : other) o.push_back(p.translation);
  auto al = align_positions(w, o, epsilon_m);
  if (!al) throw Error(ErrorCode::NoOverlap, "window does not come within 10*epsilon of segment");
  return *al;
}

double interval_gap(double a_begin, double a_end, double b_begin, double b_end) {
  if (a_begin > a_end) std::swap(a_begin, a_end);
  if (b_begin > b_end) std::swap(b_begin, b_end);
  return std::max({0.0, b_begin - a_end, a_begin - b_end});
}

std::vector<TrainingPair> mine_pairs(const index::PanoIndex& store,
                                     std::span<const index::TrajectorySegment> segments,
                                     const MiningParams& params) {
  params.validate();

  std::vector<SegmentView> views;
  views.reserve(segments.size());
  for (const auto& seg : segments) {
    SegmentView v{&seg, {}, {}, Vector3d::Constant(std::numeric_limits<double>::infinity()),
                  Vector3d::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto& id : seg.pano_ids) {
      const auto* rec = store.find(id);
      if (rec == nullptr) throw Error(ErrorCode::NotFound, "segment references unknown pano " + id);
      v.positions.push_back(rec->position());
      v.times.push_back(rec->capture_time);
      v.lo = v.lo.cwiseMin(rec->position());
      v.hi = v.hi.cwiseMax(rec->position());
    }
    views.push_back(std::move(v));
  }

  // Unordered segment pairs close enough for any frame pair to be within
  // the NoOverlap radius.
  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = i + 1; j < views.size(); ++j) {
      if (views[i].positions.empty() || views[j].positions.empty()) continue;
      if (box_distance(views[i], views[j]) <= 10.0 * params.epsilon_m) work.emplace_back(i, j);
    }
  }

  std::vector<std::vector<TrainingPair>> results(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < work.size(); k = next++) {
      const auto& a = views[work[k].first];
      const auto& b = views[work[k].second];
      auto ab = mine_directed(a, b, params);
      auto ba = mine_directed(b, a, params);
      // A segment pair is admissible only if each session covers the other.
      if (ab.empty() || ba.empty()) continue;
      ab.insert(ab.end(), std::make_move_iterator(ba.begin()), std::make_move_iterator(ba.end()));
      results[k] = std::move(ab);
    }
  };
  unsigned threads = params.threads ? params.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = unsigned(std::min<std::size_t>(threads, std::max<std::size_t>(work.size(), 1)));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }

  std::vector<TrainingPair> out;
  for (auto& r : results) {
    out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  std::sort(out.begin(), out.end(), [](const TrainingPair& l, const TrainingPair& r) {
    return std::tie(l.target_segment, l.condition_segment, l.window_start) <
           std::tie(r.target_segment, r.condition_segment, r.window_start);
  });
  return out;
}

namespace {

std::size_t bin_of(const std::vector<double>& edges, double v) {
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  std::size_t k = it == edges.begin() ? 0 : std::size_t(it - edges.begin()) - 1;
  return std::min(k, edges.size() - 1);
}

void write_hist(std::ostringstream& out, const char* name, const Histogram& h) {
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out << name << " [" << h.edges[k] << ", ";
    if (k + 1 < h.edges.size()) {
      out << h.edges[k + 1];
    } else {
      out << "inf";
    }
    out << ") " << h.counts[k] << "\n";
  }
}

}  // namespace

PairStatistics pair_statistics(std::span<const TrainingPair> pairs, double epsilon_m,
                               std::size_t distance_bins) {
  PairStatistics st;
  st.count = pairs.size();
  distance_bins = std::max<std::size_t>(distance_bins, 1);
  for (std::size_t k = 0; k < distance_bins; ++k) {
    st.distance.edges.push_back(epsilon_m * double(k) / double(distance_bins));
  }
  st.distance.counts.assign(distance_bins, 0);
  // 0, 1 h, 6 h, 1 d, 7 d, 30 d, 365 d
  st.time_gap.edges = {0.0, 3600.0, 21600.0, 86400.0, 604800.0, 2592000.0, 31536000.0};
  st.time_gap.counts.assign(st.time_gap.edges.size(), 0);
  for (const auto& p : pairs) {
    ++st.distance.counts[bin_of(st.distance.edges, p.mean_alignment_dist)];
    ++st.time_gap.counts[bin_of(st.time_gap.edges, p.time_gap)];
  }
  return st;
}

std::string PairStatistics::to_text() const {
  std::ostringstream out;
  out << "count " << count << "\n";
  write_hist(out, "distance_m", distance);
  write_hist(out, "time_gap_s", time_gap);
  return out.str();
}

std::string to_manifest_line(const TrainingPair& pair) {
  nlohmann::json j = {{"target_segment", pair.target_segment},
                      {"condition_segment", pair.condition_segment},
                      {"window_start", pair.window_start},
                      {"target", pair.target_window},
                      {"condition", pair.condition_window},
                      {"mean_dist", pair.mean_alignment_dist},
                      {"time_gap", pair.time_gap}};
  return j.dump();
}

std::optional<TrainingPair> parse_pair_line(const std::string& line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  try {
    TrainingPair p;
    p.target_segment = j.at("target_segment").get<std::string>();
    p.condition_segment = j.at("condition_segment").get<std::string>();
    p.window_start = j.at("window_start").get<std::size_t>();
    p.target_window = j.at("target").get<std::vector<std::string>>();
    p.condition_window = j.at("condition").get<std::vector<std::string>>();
    p.mean_alignment_dist = j.at("mean_dist").get<double>();
    p.time_gap = j.at("time_gap").get<double>();
    return p;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace panorag::mining
