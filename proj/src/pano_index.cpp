#include "panorag/pano_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::index {

using Eigen::Vector3d;
using nlohmann::json;

namespace {

// Above this many cells a range query just scans all records.
constexpr std::size_t kMaxCellsPerQuery = 1 << 16;

bool read_number(const json& obj, const char* key, double* out, std::string* reason) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    *reason = std::string("missing or non-numeric field '") + key + "'";
    return false;
  }
  *out = it->get<double>();
  if (!std::isfinite(*out)) {
    *reason = std::string("non-finite field '") + key + "'";
    return false;
  }
  return true;
}

bool read_string(const json& obj, const char* key, std::string* out, std::string* reason) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    *reason = std::string("missing or non-string field '") + key + "'";
    return false;
  }
  *out = it->get<std::string>();
  return true;
}

}  // namespace

std::optional<PanoRecord> parse_manifest_line(const std::string& line,
                                              std::string* reason) {
  std::string scratch;
  if (reason == nullptr) reason = &scratch;

  json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object()) {
    *reason = "not a JSON object";
    return std::nullopt;
  }

  PanoRecord r;
  double qw, qx, qy, qz;
  if (!read_string(obj, "id", &r.id, reason) ||
      !read_number(obj, "lat", &r.geo.lat, reason) ||
      !read_number(obj, "lon", &r.geo.lon, reason) ||
      !read_number(obj, "alt", &r.geo.alt, reason) ||
      !read_number(obj, "qw", &qw, reason) || !read_number(obj, "qx", &qx, reason) ||
      !read_number(obj, "qy", &qy, reason) || !read_number(obj, "qz", &qz, reason) ||
      !read_number(obj, "t", &r.capture_time, reason) ||
      !read_string(obj, "trajectory_id", &r.trajectory_id, reason) ||
      !read_string(obj, "city", &r.city, reason) ||
      !read_string(obj, "image_uri", &r.image_uri, reason)) {
    return std::nullopt;
  }
  if (r.id.empty()) {
    *reason = "empty id";
    return std::nullopt;
  }
  if (r.trajectory_id.empty()) {
    *reason = "empty trajectory_id";
    return std::nullopt;
  }
  if (r.geo.lat < -90.0 || r.geo.lat > 90.0) {
    *reason = "lat out of range [-90, 90]";
    return std::nullopt;
  }
  if (r.geo.lon < -180.0 || r.geo.lon >= 180.0) {
    *reason = "lon out of range [-180, 180)";
    return std::nullopt;
  }
  if (r.capture_time <= 0.0) {
    *reason = "capture time must be positive";
    return std::nullopt;
  }
  const Eigen::Quaterniond q(qw, qx, qy, qz);
  if (q.norm() < 1e-9) {
    *reason = "zero quaternion";
    return std::nullopt;
  }
  r.pose = geodesy::SE3Pose::from_quaternion(q, geodesy::geodetic_to_ecef(r.geo));
  return r;
}

std::string to_manifest_line(const PanoRecord& record) {
  const Eigen::Quaterniond q(record.pose.rotation);
  json obj = {{"id", record.id},
              {"lat", record.geo.lat},
              {"lon", record.geo.lon},
              {"alt", record.geo.alt},
              {"qw", q.w()},
              {"qx", q.x()},
              {"qy", q.y()},
              {"qz", q.z()},
              {"t", record.capture_time},
              {"trajectory_id", record.trajectory_id},
              {"city", record.city},
              {"image_uri", record.image_uri}};
  return obj.dump();
}

std::string IngestReport::to_text() const {
  std::ostringstream out;
  out << "accepted " << accepted << "\n";
  out << "rejected " << rejected << "\n";
  for (const auto& r : rejects) out << "line " << r.line << ": " << r.reason << "\n";
  return out.str();
}

std::size_t PanoIndex::CellHash::operator()(const CellKey& k) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
  return static_cast<std::size_t>(h);
}

PanoIndex::PanoIndex(double cell_size_m) : cell_size_(cell_size_m) {
  if (!(cell_size_m > 0.0)) {
    throw Error(ErrorCode::BadRequest, "cell size must be positive");
  }
}

PanoIndex::CellKey PanoIndex::cell_of(const Vector3d& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.z() / cell_size_))};
}

IngestReport PanoIndex::ingest_manifest(const std::filesystem::path& path,
                                        const std::optional<std::filesystem::path>& sidecar) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::FileNotFound, "cannot open manifest " + path.string());
  }
  IngestReport report = ingest_stream(in);
  if (sidecar) {
    std::ofstream side(*sidecar);
    for (const auto& r : report.rejects) {
      side << r.line << '\t' << r.reason << '\t' << r.text << '\n';
    }
  }
  return report;
}

IngestReport PanoIndex::ingest_stream(std::istream& in) {
  IngestReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::string reason;
    auto record = parse_manifest_line(line, &reason);
    if (record && add(std::move(*record), &reason)) {
      ++report.accepted;
    } else {
      ++report.rejected;
      report.rejects.push_back({line_no, reason, line});
    }
  }
  return report;
}

bool PanoIndex::add(PanoRecord record, std::string* reason) {
  std::string scratch;
  if (reason == nullptr) reason = &scratch;
  if (by_id_.contains(record.id)) {
    *reason = "duplicate id '" + record.id + "'";
    return false;
  }
  if (!geodesy::is_valid(record.geo) || !record.pose.is_valid() ||
      !(record.capture_time > 0.0)) {
    *reason = "invalid record '" + record.id + "'";
    return false;
  }
  const std::size_t idx = records_.size();
  grid_[cell_of(record.position())].push_back(idx);
  by_id_.emplace(record.id, idx);
  records_.push_back(std::move(record));
  return true;
}

const PanoRecord* PanoIndex::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::vector<std::size_t> PanoIndex::cells_in_box(const Vector3d& lo,
                                                 const Vector3d& hi) const {
  const CellKey a = cell_of(lo);
  const CellKey b = cell_of(hi);
  const double count = double(b.x - a.x + 1) * double(b.y - a.y + 1) * double(b.z - a.z + 1);

  std::vector<std::size_t> out;
  if (count > double(kMaxCellsPerQuery) || count > double(records_.size())) {
    out.resize(records_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }
  for (std::int64_t x = a.x; x <= b.x; ++x) {
    for (std::int64_t y = a.y; y <= b.y; ++y) {
      for (std::int64_t z = a.z; z <= b.z; ++z) {
        auto it = grid_.find({x, y, z});
        if (it != grid_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<const PanoRecord*> PanoIndex::query_radius(const Vector3d& center,
                                                       double r) const {
  std::vector<const PanoRecord*> out;
  if (records_.empty() || !(r >= 0.0)) return out;
  const Vector3d pad = Vector3d::Constant(r);
  for (std::size_t i : cells_in_box(center - pad, center + pad)) {
    if ((records_[i].position() - center).norm() <= r) out.push_back(&records_[i]);
  }
  return out;
}

SegmentProjection project_onto_segment(const Vector3d& p, const Vector3d& a,
                                       const Vector3d& b) {
  const Vector3d ab = b - a;
  const double len = ab.norm();
  if (len == 0.0) return {0.0, (p - a).norm()};
  const double along = std::clamp((p - a).dot(ab) / len, 0.0, len);
  return {along, (p - (a + ab * (along / len))).norm()};
}

std::vector<CorridorHit> PanoIndex::query_corridor(std::span<const Vector3d> path,
                                                   double width) const {
  if (path.size() < 2) {
    throw Error(ErrorCode::DegeneratePath, "corridor path needs at least two vertices");
  }
  std::vector<double> start_s(path.size(), 0.0);
  for (std::size_t i = 1; i < path.size(); ++i) {
    start_s[i] = start_s[i - 1] + (path[i] - path[i - 1]).norm();
  }
  if (!(start_s.back() > 0.0)) {
    throw Error(ErrorCode::DegeneratePath, "corridor path has zero length");
  }

  // Per-record projections onto every path segment within the corridor.
  std::map<std::size_t, std::vector<CorridorHit>> per_record;
  for (std::size_t seg = 0; seg + 1 < path.size(); ++seg) {
    const Vector3d& a = path[seg];
    const Vector3d& b = path[seg + 1];
    if (a == b) continue;
    const Vector3d pad = Vector3d::Constant(width);
    for (std::size_t i : cells_in_box(a.cwiseMin(b) - pad, a.cwiseMax(b) + pad)) {
      const auto proj = project_onto_segment(records_[i].position(), a, b);
      if (proj.distance <= width) {
        per_record[i].push_back({&records_[i], start_s[seg] + proj.along, proj.distance, seg});
      }
    }
  }

  // Projections of one record closer than 2*width in arc length belong to
  // the same pass; keep the closest projection of each pass.
  std::vector<CorridorHit> out;
  for (auto& [idx, hits] : per_record) {
    std::sort(hits.begin(), hits.end(), [](const CorridorHit& l, const CorridorHit& r) {
      return l.s < r.s || (l.s == r.s && l.path_segment < r.path_segment);
    });
    std::size_t i = 0;
    while (i < hits.size()) {
      CorridorHit best = hits[i];
      std::size_t j = i + 1;
      while (j < hits.size() && hits[j].s - hits[j - 1].s <= 2.0 * width) {
        if (hits[j].offset < best.offset) best = hits[j];
        ++j;
      }
      out.push_back(best);
      i = j;
    }
  }
  std::sort(out.begin(), out.end(), [](const CorridorHit& l, const CorridorHit& r) {
    if (l.s != r.s) return l.s < r.s;
    if (l.record->id != r.record->id) return l.record->id < r.record->id;
    return l.path_segment < r.path_segment;
  });
  return out;
}

std::vector<TrajectorySegment> PanoIndex::group_trajectories(const GroupingParams& params) const {
  std::map<std::string, std::vector<std::size_t>> by_traj;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    by_traj[records_[i].trajectory_id].push_back(i);
  }

  std::vector<TrajectorySegment> out;
  for (auto& [traj, members] : by_traj) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      const auto& ra = records_[a];
      const auto& rb = records_[b];
      return ra.capture_time < rb.capture_time ||
             (ra.capture_time == rb.capture_time && ra.id < rb.id);
    });
    // Equal timestamps cannot be strictly ordered; keep the first by id.
    members.erase(std::unique(members.begin(), members.end(),
                              [&](std::size_t a, std::size_t b) {
                                return records_[a].capture_time == records_[b].capture_time;
                              }),
                  members.end());

    std::vector<std::vector<std::size_t>> runs(1);
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k > 0 && (records_[members[k]].position() - records_[members[k - 1]].position()).norm() >
                       params.max_gap_m) {
        runs.emplace_back();
      }
      runs.back().push_back(members[k]);
    }

    std::size_t seg_no = 0;
    for (auto& run : runs) {
      if (run.empty()) continue;
      std::vector<std::size_t> kept;
      if (params.target_spacing_m > 0.0 && run.size() > 1) {
        // Greedy frame dropping: from the last kept frame, take the frame
        // whose distance is closest to the target spacing, never exceeding
        // the gap limit.
        kept.push_back(run.front());
        std::size_t last = 0;
        while (last + 1 < run.size()) {
          const Vector3d& from = records_[run[last]].position();
          std::size_t j = last + 1;
          while (j < run.size() &&
                 (records_[run[j]].position() - from).norm() < params.target_spacing_m) {
            ++j;
          }
          if (j == run.size()) break;
          const double dj = (records_[run[j]].position() - from).norm();
          if (j - 1 > last) {
            const double dp = (records_[run[j - 1]].position() - from).norm();
            if (params.target_spacing_m - dp < dj - params.target_spacing_m ||
                dj > params.max_gap_m) {
              --j;
            }
          }
          kept.push_back(run[j]);
          last = j;
        }
      } else {
        kept = run;
      }

      TrajectorySegment seg;
      seg.trajectory_id = traj;
      seg.segment_id = traj + "/" + std::to_string(seg_no++);
      double total = 0.0;
      for (std::size_t k = 0; k < kept.size(); ++k) {
        seg.pano_ids.push_back(records_[kept[k]].id);
        if (k > 0) total += (records_[kept[k]].position() - records_[kept[k - 1]].position()).norm();
      }
      seg.mean_spacing_m = kept.size() > 1 ? total / double(kept.size() - 1) : 0.0;
      out.push_back(std::move(seg));
    }
  }
  return out;
}

}  // namespace panorag::index
