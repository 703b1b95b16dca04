#include "panorag/session_engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::session {

using Eigen::Vector3d;
using geodesy::SE3Pose;
using nlohmann::json;

namespace {

// Values per stamped double: four 16-bit words.
constexpr std::size_t kWordsPerValue = 4;
constexpr std::size_t kStampValues = 13;  // 3x4 pose + frame index

void stamp_value(double v, float* out) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (std::size_t w = 0; w < kWordsPerValue; ++w) {
    out[w] = float((bits >> (16 * w)) & 0xFFFFu) / 65535.0f;
  }
}

double read_stamp(const float* in) {
  std::uint64_t bits = 0;
  for (std::size_t w = 0; w < kWordsPerValue; ++w) {
    const auto word = std::uint64_t(std::lround(double(in[w]) * 65535.0));
    bits |= (word & 0xFFFFu) << (16 * w);
  }
  return std::bit_cast<double>(bits);
}

json pose_json(const SE3Pose& p) {
  json row = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) row.push_back(p.rotation(r, c));
    row.push_back(p.translation(r));
  }
  return row;
}

SE3Pose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 12) throw Error(ErrorCode::ParseError, "pose needs 12 numbers");
  SE3Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j[std::size_t(r * 4 + c)].get<double>();
    p.translation(r) = j[std::size_t(r * 4 + 3)].get<double>();
  }
  return p;
}

std::string frame_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.pfm", k);
  return buf;
}

}  // namespace

std::string MockGenerator::id() const {
  return mode_ == Mode::Echo ? "mock-echo" : "mock-pose-stamp";
}

std::vector<ImageBuffer> MockGenerator::generate(const ConditionPackage& package,
                                                 std::stop_token stop) {
  if (stop.stop_requested()) throw Error(ErrorCode::Cancelled, "generation cancelled");
  const std::size_t n = package.relative_poses.size();
  std::vector<ImageBuffer> frames;
  frames.reserve(n);

  if (mode_ == Mode::Echo) {
    const std::size_t m = package.geo_frames.size();
    if (m == 0) throw Error(ErrorCode::BackendFailure, "echo backend needs geo frames");
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t src =
          n > 1 ? std::size_t(std::lround(double(k) * double(m - 1) / double(n - 1))) : 0;
      frames.push_back(package.geo_frames[src]);
    }
    return frames;
  }

  const ImageBuffer& ref = package.first_image;
  if (ref.data.size() < kStampValues * kWordsPerValue) {
    throw Error(ErrorCode::BackendFailure, "frames too small to carry a pose stamp");
  }
  for (std::size_t k = 0; k < n; ++k) {
    ImageBuffer f(ref.width, ref.height, ref.channels, 0.0f);
    const SE3Pose& p = package.relative_poses[k];
    std::size_t slot = 0;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) stamp_value(p.rotation(r, c), &f.data[kWordsPerValue * slot++]);
      stamp_value(p.translation(r), &f.data[kWordsPerValue * slot++]);
    }
    stamp_value(double(k), &f.data[kWordsPerValue * slot]);
    frames.push_back(std::move(f));
  }
  return frames;
}

StampedFrame decode_pose_stamp(const ImageBuffer& frame) {
  if (frame.data.size() < kStampValues * kWordsPerValue) {
    throw Error(ErrorCode::BadRequest, "frame too small to carry a pose stamp");
  }
  StampedFrame out;
  std::size_t slot = 0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.pose.rotation(r, c) = read_stamp(&frame.data[kWordsPerValue * slot++]);
    out.pose.translation(r) = read_stamp(&frame.data[kWordsPerValue * slot++]);
  }
  out.frame_index = std::size_t(read_stamp(&frame.data[kWordsPerValue * slot]));
  return out;
}

std::shared_ptr<const ImageBuffer> FilePanoramaSource::load(const index::PanoRecord& record) {
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(record.image_uri); it != cache_.end()) return it->second;
  std::filesystem::path p(record.image_uri);
  if (p.is_relative()) p = base_ / p;
  auto img = std::make_shared<const ImageBuffer>(read_image(p));
  cache_.emplace(record.image_uri, img);
  return img;
}

void SessionParams::validate() const {
  planner.validate();
  crop.validate();
  if (chunk_len < 2) throw Error(ErrorCode::BadRequest, "chunk length must be at least 2");
  if (std::find(crop.cond_lengths.begin(), crop.cond_lengths.end(), int(chunk_len)) ==
      crop.cond_lengths.end()) {
    throw Error(ErrorCode::BadRequest, "chunk length is not an allowed condition length");
  }
}

std::string_view status_name(Status s) {
  switch (s) {
    case Status::Active: return "active";
    case Status::Complete: return "complete";
    case Status::Failed: return "failed";
  }
  return "failed";
}

std::uint64_t chunk_seed(std::uint64_t session_seed, std::size_t chunk_index) {
  // splitmix64 finalizer
  std::uint64_t z = session_seed + 0x9E3779B97F4A7C15ull * (chunk_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SE3Pose camera_pose_along(const Vector3d& position, const Vector3d& direction) {
  const Vector3d up = geodesy::enu_rotation_at(geodesy::ecef_to_geodetic(position)).col(2);
  Vector3d forward = direction - direction.dot(up) * up;
  if (forward.norm() < 1e-12) {
    throw Error(ErrorCode::DegeneratePath, "path direction is vertical");
  }
  forward.normalize();
  const Vector3d down = -up;
  const Vector3d right = down.cross(forward);
  SE3Pose pose;
  pose.rotation.col(0) = forward;
  pose.rotation.col(1) = right;
  pose.rotation.col(2) = down;
  pose.translation = position;
  return pose;
}

std::vector<SE3Pose> chunk_target_poses(const planner::PlanChunk& chunk,
                                        const planner::PathGeometry& path,
                                        std::size_t chunk_len) {
  if (chunk.steps.empty()) throw Error(ErrorCode::EmptyTrajectory, "empty plan chunk");
  std::vector<SE3Pose> poses;
  poses.reserve(std::max(chunk_len, chunk.steps.size()));
  for (const auto& st : chunk.steps) {
    poses.push_back(camera_pose_along(path.point_at(st.s, st.path_segment),
                                      path.direction(st.path_segment)));
  }
  while (poses.size() < chunk_len) poses.push_back(poses.back());
  return poses;
}

SessionState start_session(std::string session_id, ImageBuffer first_image,
                           const planner::UserPath& path, const planner::SegmentCatalog& catalog,
                           const SessionParams& params) {
  params.validate();
  if (!first_image.is_valid() || first_image.channels != 3) {
    throw Error(ErrorCode::BadRequest, "first image must be a valid 3-channel image");
  }
  SessionState st;
  st.session_id = std::move(session_id);
  st.params = params;
  st.path = path;
  st.plan = planner::plan_condition_path(path, catalog, params.planner);
  st.chunks = planner::chunk_plan(st.plan, params.chunk_len);
  const planner::PathGeometry geometry(path);
  st.start_pose = chunk_target_poses(st.chunks.front(), geometry, 1).front();
  st.current_pose = st.start_pose;
  st.first_image = std::move(first_image);
  st.current_first_image = st.first_image;
  st.status = Status::Active;
  return st;
}

ConditionPackage assemble_package(const SessionState& state, std::size_t chunk_index,
                                  const planner::SegmentCatalog& catalog, PanoramaSource& panos) {
  const auto& chunk = state.chunks.at(chunk_index);
  const planner::PathGeometry geometry(state.path);
  const auto absolute = chunk_target_poses(chunk, geometry, state.params.chunk_len);

  ConditionPackage pkg;
  pkg.first_image = state.current_first_image;
  pkg.relative_poses = geodesy::to_relative_poses(absolute);
  pkg.metadata.seed = chunk_seed(state.params.seed, chunk_index);
  pkg.metadata.chunk_index = chunk_index;
  pkg.metadata.chunk_first_step = chunk.first_step;

  pkg.geo_frames.reserve(absolute.size());
  for (std::size_t k = 0; k < absolute.size(); ++k) {
    if (k >= chunk.steps.size()) {
      pkg.geo_frames.push_back(pkg.geo_frames.back());
      continue;
    }
    const auto& st = chunk.steps[k];
    const auto* rec = catalog.store().find(st.pano_id);
    if (rec == nullptr) throw Error(ErrorCode::NotFound, "plan references unknown pano " + st.pano_id);
    const auto pano = panos.load(*rec);
    const Vector3d look = rec->pose.rotation.transpose() * absolute[k].rotation.col(0);
    const double yaw = geodesy::wrap_360(std::atan2(look.y(), look.x()) * 180.0 / std::numbers::pi);
    pkg.geo_frames.push_back(projection::crop_perspective(*pano, yaw, 0.0, state.params.crop));
  }
  return pkg;
}

ImageBuffer default_first_image(const SessionState& state, const planner::SegmentCatalog& catalog,
                                PanoramaSource& panos) {
  SessionState head = state;
  head.chunks = {state.chunks.front()};
  head.chunks.front().steps.resize(1);
  head.params.chunk_len = 1;
  return assemble_package(head, 0, catalog, panos).geo_frames.front();
}

StepResult step(const SessionState& state, GeneratorBackend& backend,
                const planner::SegmentCatalog& catalog, PanoramaSource& panos,
                std::stop_token stop) {
  if (state.status != Status::Active || state.remaining_chunks().empty()) {
    throw Error(ErrorCode::SessionNotActive, "session has no remaining chunks");
  }
  const std::size_t chunk_index = state.chunks_done;
  ConditionPackage pkg = assemble_package(state, chunk_index, catalog, panos);
  if (stop.stop_requested()) throw Error(ErrorCode::Cancelled, "step cancelled");

  std::vector<ImageBuffer> frames;
  try {
    frames = backend.generate(pkg, stop);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Cancelled) throw;
    throw Error(ErrorCode::BackendFailure, std::string("backend failed: ") + e.what(), e.detail());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BackendFailure, std::string("backend failed: ") + e.what());
  }
  if (stop.stop_requested()) throw Error(ErrorCode::Cancelled, "step cancelled");
  if (frames.size() != pkg.relative_poses.size()) {
    throw Error(ErrorCode::FrameCountMismatch,
                "backend returned " + std::to_string(frames.size()) + " frames for " +
                    std::to_string(pkg.relative_poses.size()) + " poses");
  }

  StepResult out{state, std::make_shared<const std::vector<ImageBuffer>>(std::move(frames))};
  SessionState& next = out.state;
  next.generated_segments.push_back(out.segment);
  next.backend_ids.push_back(backend.id());
  next.current_first_image = out.segment->back();
  const planner::PathGeometry geometry(state.path);
  const auto& chunk = state.chunks[chunk_index];
  next.current_pose = chunk_target_poses(chunk, geometry, chunk.steps.size()).back();
  next.chunks_done = chunk_index + 1;
  if (next.chunks_done == next.chunks.size()) next.status = Status::Complete;
  return out;
}

double loop_closure_error(const SessionState& state) {
  if (state.status != Status::Complete) {
    throw Error(ErrorCode::SessionNotActive, "loop closure needs a completed session");
  }
  return geodesy::pose_distance(state.start_pose, state.current_pose);
}

std::vector<ImageBuffer> unique_frames(const SessionState& state) {
  std::vector<ImageBuffer> out;
  for (std::size_t k = 0; k < state.generated_segments.size(); ++k) {
    const auto& seg = *state.generated_segments[k];
    out.insert(out.end(), seg.begin() + (k == 0 ? 0 : 1), seg.end());
  }
  return out;
}

std::string session_manifest(const SessionState& state) {
  const planner::PathGeometry geometry(state.path);
  json chunks = json::array();
  for (std::size_t k = 0; k < state.chunks.size(); ++k) {
    const auto& chunk = state.chunks[k];
    json ids = json::array();
    for (const auto& st : chunk.steps) ids.push_back(st.pano_id);
    json poses = json::array();
    for (const auto& p : chunk_target_poses(chunk, geometry, chunk.steps.size())) {
      poses.push_back(pose_json(p));
    }
    chunks.push_back({{"index", k},
                      {"first_step", chunk.first_step},
                      {"steps", chunk.steps.size()},
                      {"padded_to", state.params.chunk_len},
                      {"seed", chunk_seed(state.params.seed, k)},
                      {"backend", k < state.backend_ids.size() ? json(state.backend_ids[k]) : json()},
                      {"pano_ids", std::move(ids)},
                      {"poses", std::move(poses)}});
  }
  std::size_t unique = 0;
  for (std::size_t k = 0; k < state.generated_segments.size(); ++k) {
    unique += state.generated_segments[k]->size() - (k == 0 ? 0 : 1);
  }
  json j = {
      {"schema", "panorag.session.v1"},
      {"session_id", state.session_id},
      {"status", status_name(state.status)},
      {"seed", state.params.seed},
      {"chunk_len", state.params.chunk_len},
      {"fov_deg", state.params.crop.fov_deg},
      {"frame_size", {state.params.crop.out_w, state.params.crop.out_h}},
      {"path_length_m", state.plan.path_length},
      {"plan_steps", state.plan.steps.size()},
      {"plan_cost", state.plan.cost},
      {"switch_points", state.plan.switch_points},
      {"chunks", std::move(chunks)},
      {"segments_generated", state.generated_segments.size()},
      {"unique_frame_count", unique},
      {"loop_closure_error_m",
       state.status == Status::Complete ? json(loop_closure_error(state)) : json()},
  };
  return j.dump(2) + "\n";
}

void export_session(const SessionState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto frames = unique_frames(state);
  for (std::size_t k = 0; k < frames.size(); ++k) write_image(dir / frame_name(k), frames[k]);
  std::ofstream(dir / "session.json", std::ios::binary) << session_manifest(state);
}

namespace {

json params_json(const SessionParams& p) {
  return {{"corridor_m", p.planner.corridor_m},
          {"heading_tol_deg", p.planner.heading_tol_deg},
          {"min_run", p.planner.min_run},
          {"switch_penalty", p.planner.switch_penalty},
          {"gap_max_m", p.planner.gap_max_m},
          {"heading_weight", p.planner.heading_weight},
          {"fov_deg", p.crop.fov_deg},
          {"out_w", p.crop.out_w},
          {"out_h", p.crop.out_h},
          {"chunk_len", p.chunk_len},
          {"seed", p.seed}};
}

SessionParams params_from_json(const json& j) {
  SessionParams p;
  p.planner.corridor_m = j.at("corridor_m").get<double>();
  p.planner.heading_tol_deg = j.at("heading_tol_deg").get<double>();
  p.planner.min_run = j.at("min_run").get<std::size_t>();
  p.planner.switch_penalty = j.at("switch_penalty").get<double>();
  p.planner.gap_max_m = j.at("gap_max_m").get<double>();
  p.planner.heading_weight = j.at("heading_weight").get<double>();
  p.crop.fov_deg = j.at("fov_deg").get<double>();
  p.crop.out_w = j.at("out_w").get<int>();
  p.crop.out_h = j.at("out_h").get<int>();
  p.chunk_len = j.at("chunk_len").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

void save_state(const SessionState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json waypoints = json::array();
  for (const auto& w : state.path.waypoints) waypoints.push_back({w.lat, w.lon, w.alt});
  json seg_sizes = json::array();
  for (std::size_t k = 0; k < state.generated_segments.size(); ++k) {
    const auto seg_dir = dir / ("segment_" + std::to_string(k));
    if (!std::filesystem::exists(seg_dir / "done")) {
      std::filesystem::create_directories(seg_dir);
      const auto& frames = *state.generated_segments[k];
      for (std::size_t f = 0; f < frames.size(); ++f) write_image(seg_dir / frame_name(f), frames[f]);
      std::ofstream(seg_dir / "done") << frames.size() << "\n";
    }
    seg_sizes.push_back(state.generated_segments[k]->size());
  }
  write_image(dir / "first_image.pfm", state.first_image);
  write_image(dir / "current_first_image.pfm", state.current_first_image);

  json j = {{"session_id", state.session_id},
            {"params", params_json(state.params)},
            {"waypoints", std::move(waypoints)},
            {"plan", planner::to_plan_lines(state.plan)},
            {"plan_cost", state.plan.cost},
            {"path_length", state.plan.path_length},
            {"chunks_done", state.chunks_done},
            {"start_pose", pose_json(state.start_pose)},
            {"current_pose", pose_json(state.current_pose)},
            {"status", status_name(state.status)},
            {"backend_ids", state.backend_ids},
            {"segment_sizes", std::move(seg_sizes)}};
  const auto tmp = dir / "state.json.tmp";
  std::ofstream(tmp, std::ios::binary) << j.dump(2) << "\n";
  std::filesystem::rename(tmp, dir / "state.json");
}

SessionState load_state(const std::filesystem::path& dir) {
  json j = json::parse(read_file(dir / "state.json"), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ParseError, "corrupt session state in " + dir.string());
  try {
    SessionState st;
    st.session_id = j.at("session_id").get<std::string>();
    st.params = params_from_json(j.at("params"));
    for (const auto& w : j.at("waypoints")) {
      st.path.waypoints.push_back({w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()});
    }
    st.plan = planner::parse_plan_lines(j.at("plan").get<std::string>(), j.at("path_length").get<double>());
    st.plan.cost = j.at("plan_cost").get<double>();
    st.chunks = planner::chunk_plan(st.plan, st.params.chunk_len);
    st.chunks_done = j.at("chunks_done").get<std::size_t>();
    st.start_pose = pose_from_json(j.at("start_pose"));
    st.current_pose = pose_from_json(j.at("current_pose"));
    const auto status = j.at("status").get<std::string>();
    st.status = status == "active" ? Status::Active
                : status == "complete" ? Status::Complete
                                       : Status::Failed;
    st.backend_ids = j.at("backend_ids").get<std::vector<std::string>>();
    const auto sizes = j.at("segment_sizes").get<std::vector<std::size_t>>();
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const auto seg_dir = dir / ("segment_" + std::to_string(k));
      std::vector<ImageBuffer> frames;
      for (std::size_t f = 0; f < sizes[k]; ++f) frames.push_back(read_image(seg_dir / frame_name(f)));
      st.generated_segments.push_back(std::make_shared<const std::vector<ImageBuffer>>(std::move(frames)));
    }
    st.first_image = read_image(dir / "first_image.pfm");
    st.current_first_image = read_image(dir / "current_first_image.pfm");
    return st;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad session state: ") + e.what());
  }
}

}  // namespace panorag::session
