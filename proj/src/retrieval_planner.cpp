#include "panorag/retrieval_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::planner {

using Eigen::Vector3d;

void UserPath::validate() const {
  if (waypoints.size() < 2) throw Error(ErrorCode::DegeneratePath, "path needs two waypoints");
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    if (!geodesy::is_valid(waypoints[i])) {
      throw Error(ErrorCode::BadRequest, "waypoint " + std::to_string(i) + " out of range");
    }
    if (i > 0 && geodesy::geodetic_to_ecef(waypoints[i]) ==
                     geodesy::geodetic_to_ecef(waypoints[i - 1])) {
      throw Error(ErrorCode::DegeneratePath,
                  "waypoints " + std::to_string(i - 1) + " and " + std::to_string(i) +
                      " coincide");
    }
  }
}

double UserPath::length() const { return PathGeometry(*this).length(); }

namespace {

std::vector<Vector3d> to_ecef(const UserPath& path) {
  path.validate();
  std::vector<Vector3d> out;
  for (const auto& w : path.waypoints) out.push_back(geodesy::geodetic_to_ecef(w));
  return out;
}

double angle_between_deg(const Vector3d& a, const Vector3d& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 180.0;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace

PathGeometry::PathGeometry(const UserPath& path) : PathGeometry(to_ecef(path)) {}

PathGeometry::PathGeometry(std::vector<Vector3d> vertices) : vertices_(std::move(vertices)) {
  if (vertices_.size() < 2) throw Error(ErrorCode::DegeneratePath, "path needs two vertices");
  cumulative_.assign(vertices_.size(), 0.0);
  for (std::size_t i = 1; i < vertices_.size(); ++i) {
    cumulative_[i] = cumulative_[i - 1] + (vertices_[i] - vertices_[i - 1]).norm();
  }
  if (!(cumulative_.back() > 0.0)) throw Error(ErrorCode::DegeneratePath, "path has zero length");
}

Vector3d PathGeometry::point_at(double s, std::size_t seg) const {
  seg = std::min(seg, segment_count() - 1);
  const double len = cumulative_[seg + 1] - cumulative_[seg];
  if (len == 0.0) return vertices_[seg];
  const double t = std::clamp((s - cumulative_[seg]) / len, 0.0, 1.0);
  return vertices_[seg] + t * (vertices_[seg + 1] - vertices_[seg]);
}

std::size_t PathGeometry::segment_at(double s) const {
  for (std::size_t seg = 0; seg + 1 < vertices_.size(); ++seg) {
    if (s <= cumulative_[seg + 1] && cumulative_[seg + 1] > cumulative_[seg]) return seg;
  }
  return segment_count() - 1;
}

Vector3d PathGeometry::point_at(double s) const { return point_at(s, segment_at(s)); }

Vector3d PathGeometry::direction(std::size_t seg) const {
  seg = std::min(seg, segment_count() - 1);
  const Vector3d d = vertices_[seg + 1] - vertices_[seg];
  const double n = d.norm();
  return n > 0.0 ? Vector3d(d / n) : Vector3d::Zero();
}

void PlannerParams::validate() const {
  if (!(corridor_m > 0.0 && heading_tol_deg > 0.0 && min_run > 0 && switch_penalty > 0.0 &&
        gap_max_m > 0.0 && heading_weight >= 0.0)) {
    throw Error(ErrorCode::BadRequest, "planner parameters must be positive");
  }
}

SegmentCatalog::SegmentCatalog(const index::PanoIndex& store,
                               std::vector<index::TrajectorySegment> segments)
    : store_(&store), segments_(std::move(segments)) {
  positions_.resize(segments_.size());
  for (std::size_t s = 0; s < segments_.size(); ++s) {
    const auto& ids = segments_[s].pano_ids;
    for (std::size_t f = 0; f < ids.size(); ++f) {
      const auto* rec = store.find(ids[f]);
      if (rec == nullptr) throw Error(ErrorCode::NotFound, "segment references unknown pano " + ids[f]);
      positions_[s].push_back(rec->position());
      members_.emplace(ids[f], Membership{s, f});
    }
  }
}

std::optional<SegmentCatalog::Membership> SegmentCatalog::membership(const std::string& id) const {
  auto it = members_.find(id);
  if (it == members_.end()) return std::nullopt;
  return it->second;
}

Vector3d SegmentCatalog::travel_direction(std::size_t segment, std::size_t frame) const {
  const auto& pos = positions_.at(segment);
  if (pos.size() < 2) return Vector3d::Zero();
  // Central difference; one-sided at the segment ends.
  const std::size_t prev = frame > 0 ? frame - 1 : 0;
  const std::size_t next = std::min(frame + 1, pos.size() - 1);
  return pos[next] - pos[prev];
}

std::vector<Candidate> plan_candidates(const PathGeometry& path, const SegmentCatalog& catalog,
                                       const PlannerParams& params) {
  params.validate();
  std::vector<Candidate> out;
  if (catalog.store().empty()) return out;
  for (const auto& hit : catalog.store().query_corridor(path.vertices(), params.corridor_m)) {
    const auto member = catalog.membership(hit.record->id);
    if (!member) continue;
    const Vector3d travel = catalog.travel_direction(member->segment, member->frame);
    const double mismatch = angle_between_deg(travel, path.direction(hit.path_segment));
    if (!(mismatch <= params.heading_tol_deg)) continue;

    Candidate c;
    c.step.s = hit.s;
    c.step.pano_id = hit.record->id;
    c.step.segment_id = catalog.segments()[member->segment].segment_id;
    c.step.offset = hit.offset;
    c.step.heading_mismatch_deg = mismatch;
    c.step.frame = member->frame;
    c.step.path_segment = hit.path_segment;
    c.segment = member->segment;
    c.cost = hit.offset + params.heading_weight * mismatch;
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

[[noreturn]] void throw_no_coverage(double from, double to) {
  nlohmann::json detail = {{"uncovered_from", from}, {"uncovered_to", to}};
  std::ostringstream msg;
  msg << "no capture covers arc length [" << from << ", " << to << "] m";
  throw Error(ErrorCode::NoCoverage, msg.str(), detail.dump());
}

// First arc-length interval that no candidate sequence can bridge.
std::pair<double, double> sparse_interval(std::span<const Candidate> cands, double length,
                                          double gap_max) {
  if (cands.empty()) return {0.0, length};
  if (cands.front().step.s > gap_max) return {0.0, cands.front().step.s};
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (cands[i].step.s - cands[i - 1].step.s > gap_max) {
      return {cands[i - 1].step.s, cands[i].step.s};
    }
  }
  if (cands.back().step.s < length - gap_max) return {cands.back().step.s, length};
  return {-1.0, -1.0};
}

}  // namespace

RetrievalPlan plan_over_candidates(std::span<const Candidate> cands, double path_length,
                                   const PlannerParams& params) {
  params.validate();
  const std::size_t n = cands.size();
  for (std::size_t i = 1; i < n; ++i) {
    if (cands[i].step.s < cands[i - 1].step.s) {
      throw Error(ErrorCode::Internal, "planner candidates must be ordered by arc length");
    }
  }

  auto continues = [&](std::size_t a, std::size_t b) {
    return cands[b].segment == cands[a].segment && cands[b].step.frame == cands[a].step.frame + 1 &&
           cands[b].step.s > cands[a].step.s &&
           cands[b].step.s - cands[a].step.s <= params.gap_max_m;
  };

  // A run may only start (end) where it cannot be extended backward (forward).
  std::vector<bool> has_pred(n, false), has_succ(n, false);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n && cands[b].step.s - cands[a].step.s <= params.gap_max_m;
         ++b) {
      if (continues(a, b)) {
        has_pred[b] = true;
        has_succ[a] = true;
      }
    }
  }

  const std::size_t runs = params.min_run;  // run lengths are capped here
  const double inf = std::numeric_limits<double>::infinity();
  auto at = [runs](std::size_t c, std::size_t r) { return c * runs + (r - 1); };
  std::vector<double> best(n * runs, inf);
  std::vector<std::size_t> parent(n * runs, std::numeric_limits<std::size_t>::max());

  for (std::size_t c = 0; c < n; ++c) {
    if (cands[c].step.s <= params.gap_max_m && !has_pred[c]) best[at(c, 1)] = cands[c].cost;
  }
  double reached = -1.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t r = 1; r <= runs; ++r) {
      const double here = best[at(a, r)];
      if (here == inf) continue;
      reached = std::max(reached, cands[a].step.s);
      for (std::size_t b = a + 1; b < n && cands[b].step.s - cands[a].step.s <= params.gap_max_m;
           ++b) {
        if (!(cands[b].step.s > cands[a].step.s)) continue;
        if (continues(a, b)) {
          const std::size_t rb = std::min(r + 1, runs);
          const double v = here + cands[b].cost;
          if (v < best[at(b, rb)]) {
            best[at(b, rb)] = v;
            parent[at(b, rb)] = at(a, r);
          }
        } else if (cands[b].segment != cands[a].segment && r == runs) {
          const double v = here + params.switch_penalty + cands[b].cost;
          if (v < best[at(b, 1)]) {
            best[at(b, 1)] = v;
            parent[at(b, 1)] = at(a, r);
          }
        }
      }
    }
  }

  std::size_t end_state = std::numeric_limits<std::size_t>::max();
  double end_cost = inf;
  for (std::size_t c = 0; c < n; ++c) {
    if (cands[c].step.s < path_length - params.gap_max_m || has_succ[c]) continue;
    for (std::size_t r = 1; r <= runs; ++r) {
      if (best[at(c, r)] < end_cost) {
        end_cost = best[at(c, r)];
        end_state = at(c, r);
      }
    }
  }

  if (end_state == std::numeric_limits<std::size_t>::max()) {
    auto [from, to] = sparse_interval(cands, path_length, params.gap_max_m);
    if (from < 0.0) {
      from = std::max(reached, 0.0);
      to = path_length;
    }
    throw_no_coverage(from, to);
  }

  RetrievalPlan plan;
  plan.path_length = path_length;
  plan.cost = end_cost;
  for (std::size_t st = end_state; st != std::numeric_limits<std::size_t>::max(); st = parent[st]) {
    plan.steps.push_back(cands[st / runs].step);
  }
  std::reverse(plan.steps.begin(), plan.steps.end());
  for (std::size_t i = 1; i < plan.steps.size(); ++i) {
    if (plan.steps[i].segment_id != plan.steps[i - 1].segment_id) plan.switch_points.push_back(i);
  }
  return plan;
}

RetrievalPlan plan_condition_path(const UserPath& path, const SegmentCatalog& catalog,
                                  const PlannerParams& params) {
  params.validate();
  const PathGeometry geometry(path);
  const auto cands = plan_candidates(geometry, catalog, params);
  return plan_over_candidates(cands, geometry.length(), params);
}

PlanDiagnostics validate_plan(const RetrievalPlan& plan, const index::PanoIndex& store,
                              const PlannerParams& params) {
  (void)params;
  PlanDiagnostics d;
  if (plan.steps.empty()) return d;
  for (std::size_t i = 1; i < plan.steps.size(); ++i) {
    d.max_gap_m = std::max(d.max_gap_m, plan.steps[i].s - plan.steps[i - 1].s);
    if (plan.steps[i].segment_id != plan.steps[i - 1].segment_id) {
      const auto* a = store.find(plan.steps[i - 1].pano_id);
      const auto* b = store.find(plan.steps[i].pano_id);
      if (a == nullptr || b == nullptr) throw Error(ErrorCode::NotFound, "plan references unknown pano");
      d.switch_discontinuity_m.push_back(geodesy::pose_distance(a->pose, b->pose));
    }
  }
  if (plan.path_length > 0.0) {
    d.coverage_fraction = std::clamp(
        (plan.steps.back().s - plan.steps.front().s) / plan.path_length, 0.0, 1.0);
  }
  return d;
}

std::vector<PlanChunk> chunk_plan(const RetrievalPlan& plan, std::size_t chunk_len) {
  if (chunk_len < 2) throw Error(ErrorCode::BadRequest, "chunk length must be at least 2");
  std::vector<PlanChunk> out;
  const std::size_t n = plan.steps.size();
  if (n == 0) return out;
  for (std::size_t start = 0;; start += chunk_len - 1) {
    const std::size_t end = std::min(start + chunk_len, n);
    PlanChunk chunk;
    chunk.first_step = start;
    chunk.steps.assign(plan.steps.begin() + std::ptrdiff_t(start),
                       plan.steps.begin() + std::ptrdiff_t(end));
    out.push_back(std::move(chunk));
    if (end == n) break;
  }
  return out;
}

std::string to_plan_lines(const RetrievalPlan& plan) {
  std::string out;
  for (const auto& st : plan.steps) {
    nlohmann::json j = {{"s", st.s},
                        {"pano_id", st.pano_id},
                        {"segment_id", st.segment_id},
                        {"offset", st.offset},
                        {"heading_mismatch", st.heading_mismatch_deg},
                        {"frame", st.frame},
                        {"path_segment", st.path_segment}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

RetrievalPlan parse_plan_lines(const std::string& text, double path_length) {
  RetrievalPlan plan;
  plan.path_length = path_length;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw nlohmann::json::other_error::create(0, "bad json", nullptr);
      PlanStep st;
      st.s = j.at("s").get<double>();
      st.pano_id = j.at("pano_id").get<std::string>();
      st.segment_id = j.at("segment_id").get<std::string>();
      st.offset = j.at("offset").get<double>();
      st.heading_mismatch_deg = j.at("heading_mismatch").get<double>();
      st.frame = j.value("frame", std::size_t{0});
      st.path_segment = j.value("path_segment", std::size_t{0});
      plan.steps.push_back(std::move(st));
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ParseError, "bad plan line " + std::to_string(line_no));
    }
  }
  for (std::size_t i = 1; i < plan.steps.size(); ++i) {
    if (plan.steps[i].segment_id != plan.steps[i - 1].segment_id) plan.switch_points.push_back(i);
  }
  return plan;
}

UserPath read_waypoints(const std::string& text) {
  UserPath path;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    geodesy::GeodeticCoord c;
    if (!(fields >> c.lat)) continue;
    if (!(fields >> c.lon)) {
      throw Error(ErrorCode::ParseError, "waypoint line " + std::to_string(line_no) + " lacks lon");
    }
    if (!(fields >> c.alt)) c.alt = 0.0;
    path.waypoints.push_back(c);
  }
  return path;
}

}  // namespace panorag::planner
