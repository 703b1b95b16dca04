#include "panorag/pano_projection.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::projection {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

void AugmentationParams::validate() const {
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) {
    throw Error(ErrorCode::BadRequest, "field of view must be in (0, 180)");
  }
  if (out_w < 1 || out_h < 1) throw Error(ErrorCode::BadRequest, "output size must be positive");
  if (cond_lengths.empty()) throw Error(ErrorCode::BadRequest, "no condition lengths");
  for (int len : cond_lengths) {
    if (len < 1 || len % 4 != 1) {
      throw Error(ErrorCode::BadRequest, "condition lengths must be 1 mod 4");
    }
  }
}

double AugmentationParams::focal_px() const {
  return 0.5 * double(out_w) / std::tan(0.5 * fov_deg * kDeg);
}

namespace {

// North-east-down world; the camera looks along (yaw, pitch).
struct CameraBasis {
  Eigen::Vector3d forward, right, down;
  double focal;

  CameraBasis(double yaw_deg, double pitch_deg, const AugmentationParams& params)
      : focal(params.focal_px()) {
    const double yaw = geodesy::wrap_360(yaw_deg) * kDeg;
    const double pitch = pitch_deg * kDeg;
    forward = {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), -std::sin(pitch)};
    right = {-std::sin(yaw), std::cos(yaw), 0.0};
    down = forward.cross(right);
  }

  ViewDirection direction(double u, double v, int w, int h) const {
    const double xc = (u + 0.5 - 0.5 * w) / focal;
    const double yc = (v + 0.5 - 0.5 * h) / focal;
    const Eigen::Vector3d ray = forward + xc * right + yc * down;
    ViewDirection dir;
    dir.azimuth_deg = geodesy::wrap_360(std::atan2(ray.y(), ray.x()) / kDeg);
    dir.elevation_deg = std::atan2(-ray.z(), std::hypot(ray.x(), ray.y())) / kDeg;
    return dir;
  }
};

}  // namespace

ViewDirection crop_pixel_direction(double u, double v, double yaw_deg, double pitch_deg,
                                   const AugmentationParams& params) {
  return CameraBasis(yaw_deg, pitch_deg, params).direction(u, v, params.out_w, params.out_h);
}

void sample_equirect(const ImageBuffer& pano, double azimuth_deg, double elevation_deg,
                     float* out) {
  const int w = pano.width;
  const int h = pano.height;
  const double px = azimuth_deg / 360.0 * w - 0.5;
  const double py = (90.0 - elevation_deg) / 180.0 * h - 0.5;

  const double fx0 = std::floor(px);
  const double fy0 = std::floor(py);
  const double ax = px - fx0;
  const double ay = py - fy0;
  int x0 = int(fx0) % w;
  if (x0 < 0) x0 += w;
  const int x1 = (x0 + 1) % w;
  const int y0 = std::clamp(int(fy0), 0, h - 1);
  const int y1 = std::clamp(int(fy0) + 1, 0, h - 1);

  for (int c = 0; c < pano.channels; ++c) {
    const double top = (1.0 - ax) * pano.at(x0, y0, c) + ax * pano.at(x1, y0, c);
    const double bottom = (1.0 - ax) * pano.at(x0, y1, c) + ax * pano.at(x1, y1, c);
    out[c] = float((1.0 - ay) * top + ay * bottom);
  }
}

ImageBuffer crop_perspective(const ImageBuffer& pano, double yaw_deg, double pitch_deg,
                             const AugmentationParams& params) {
  params.validate();
  if (pano.width < 2 || pano.width != 2 * pano.height) {
    throw Error(ErrorCode::BadAspect, "equirectangular panorama must have width = 2 * height");
  }
  if (!(std::abs(pitch_deg) < 90.0 - 0.5 * params.fov_deg)) {
    throw Error(ErrorCode::PitchOutOfRange, "pitch leaves the panorama for this field of view");
  }

  const CameraBasis camera(yaw_deg, pitch_deg, params);
  ImageBuffer out(params.out_w, params.out_h, pano.channels);
  for (int v = 0; v < params.out_h; ++v) {
    for (int u = 0; u < params.out_w; ++u) {
      const ViewDirection d = camera.direction(u, v, params.out_w, params.out_h);
      sample_equirect(pano, d.azimuth_deg, d.elevation_deg, &out.at(u, v, 0));
    }
  }
  return out;
}

std::vector<double> sample_yaw_schedule(std::size_t n_frames, std::span<const double> headings_deg,
                                        Rng& rng, const AugmentationParams& params) {
  if (n_frames == 0) throw Error(ErrorCode::BadRequest, "yaw schedule needs at least one frame");
  if (headings_deg.size() < n_frames) {
    throw Error(ErrorCode::BadRequest, "fewer headings than frames");
  }
  std::vector<double> yaw(n_frames);
  yaw[0] = geodesy::wrap_360(headings_deg[0] +
                             rng.uniform(params.start_yaw_min_deg, params.start_yaw_max_deg));
  for (std::size_t k = 1; k < n_frames; ++k) {
    const double turn = geodesy::wrap_180(headings_deg[k] - headings_deg[k - 1]);
    yaw[k] = yaw[k - 1] + turn +
             rng.uniform(params.per_frame_rot_min_deg, params.per_frame_rot_max_deg);
  }
  return yaw;
}

int sample_condition_length(Rng& rng, const AugmentationParams& params) {
  if (params.cond_lengths.empty()) throw Error(ErrorCode::BadRequest, "no condition lengths");
  return params.cond_lengths[rng.index(params.cond_lengths.size())];
}

DropoutFlags sample_dropout_flags(const DropoutPolicy& policy, Rng& rng) {
  if (!(policy.p_pose >= 0.0 && policy.p_pose <= 1.0 && policy.p_geo >= 0.0 &&
        policy.p_geo <= 1.0)) {
    throw Error(ErrorCode::BadRequest, "dropout probabilities must be in [0, 1]");
  }
  DropoutFlags flags;
  flags.drop_pose = rng.uniform() < policy.p_pose;
  flags.drop_geo = rng.uniform() < policy.p_geo;
  return flags;
}

LatentShape compute_latent_shape(int t_frames, int h_px, int w_px) {
  if (t_frames < 1 || t_frames % 4 != 1 || h_px < 16 || h_px % 16 != 0 || w_px < 16 ||
      w_px % 16 != 0) {
    throw Error(ErrorCode::IncompatibleDims,
                "need frames = 1 mod 4 and height, width multiples of 16");
  }
  return {(t_frames - 1) / 4, h_px / 16, w_px / 16};
}

double pano_azimuth_for_heading(const geodesy::SE3Pose& pano_pose, double heading_deg) {
  const auto geo = geodesy::ecef_to_geodetic(pano_pose.translation);
  const Eigen::Matrix3d enu = geodesy::enu_rotation_at(geo);
  const double h = heading_deg * kDeg;
  const Eigen::Vector3d world = enu * Eigen::Vector3d(std::sin(h), std::cos(h), 0.0);
  const Eigen::Vector3d body = pano_pose.rotation.transpose() * world;
  return geodesy::wrap_360(std::atan2(body.y(), body.x()) / kDeg);
}

namespace {

std::vector<double> travel_headings(const std::vector<Eigen::Vector3d>& pos) {
  std::vector<double> out(pos.size(), 0.0);
  if (pos.size() < 2) return out;
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const std::size_t a = k + 1 < pos.size() ? k : k - 1;
    out[k] = geodesy::heading_deg(pos[k], pos[a + 1] - pos[a]);
  }
  return out;
}

const index::PanoRecord& lookup(const index::PanoIndex& store, const std::string& id) {
  const auto* rec = store.find(id);
  if (rec == nullptr) throw Error(ErrorCode::NotFound, "unknown pano id " + id);
  return *rec;
}

}  // namespace

TrainingExample build_training_example(const mining::TrainingPair& pair,
                                       const index::PanoIndex& store,
                                       const AugmentationParams& params,
                                       const DropoutPolicy& policy, std::uint64_t seed) {
  params.validate();
  if (pair.target_window.empty()) {
    throw Error(ErrorCode::EmptyTrajectory, "training pair has an empty target window");
  }
  const int min_len = *std::min_element(params.cond_lengths.begin(), params.cond_lengths.end());
  if (pair.condition_window.size() < std::size_t(min_len)) {
    throw Error(ErrorCode::ConditionTooShort,
                "aligned condition span has " + std::to_string(pair.condition_window.size()) +
                    " frames, need " + std::to_string(min_len));
  }

  Rng rng(seed);
  TrainingExample ex;
  ex.seed = seed;
  ex.target_ids = pair.target_window;

  std::vector<geodesy::SE3Pose> poses;
  std::vector<Eigen::Vector3d> positions;
  for (const auto& id : ex.target_ids) {
    const auto& rec = lookup(store, id);
    poses.push_back(rec.pose);
    positions.push_back(rec.position());
  }
  ex.target_relative_poses = geodesy::to_relative_poses(poses);

  const auto headings = travel_headings(positions);
  ex.target_yaw_deg = sample_yaw_schedule(ex.target_ids.size(), headings, rng, params);
  for (std::size_t k = 0; k < ex.target_ids.size(); ++k) {
    ex.target_crop_yaw_deg.push_back(pano_azimuth_for_heading(poses[k], ex.target_yaw_deg[k]));
  }

  // Largest allowed length not exceeding both the draw and the span.
  const int drawn = sample_condition_length(rng, params);
  const int available = int(pair.condition_window.size());
  int length = min_len;
  for (int len : params.cond_lengths) {
    if (len <= drawn && len <= available) length = std::max(length, len);
  }
  const std::size_t start = std::size_t(available - length) / 2;
  ex.condition_ids.assign(pair.condition_window.begin() + std::ptrdiff_t(start),
                          pair.condition_window.begin() + std::ptrdiff_t(start + length));

  // Condition frames look along the yaw of the proportionally matching
  // target frame.
  const std::size_t n = ex.target_ids.size();
  for (std::size_t i = 0; i < ex.condition_ids.size(); ++i) {
    const std::size_t k =
        length > 1 ? std::size_t(std::lround(double(i) * double(n - 1) / double(length - 1))) : 0;
    const auto& rec = lookup(store, ex.condition_ids[i]);
    ex.condition_crop_yaw_deg.push_back(pano_azimuth_for_heading(rec.pose, ex.target_yaw_deg[k]));
  }

  ex.dropout = sample_dropout_flags(policy, rng);
  ex.target_latent = compute_latent_shape(int(n), params.out_h, params.out_w);
  return ex;
}

std::string TrainingExample::to_manifest_line() const {
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : target_relative_poses) {
    nlohmann::json m = nlohmann::json::array();
    const Eigen::Matrix4d mat = p.matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) m.push_back(mat(r, c));
    }
    poses.push_back(std::move(m));
  }
  nlohmann::json j = {
      {"seed", seed},
      {"target", target_ids},
      {"target_poses", std::move(poses)},
      {"target_yaw", target_yaw_deg},
      {"target_crop_yaw", target_crop_yaw_deg},
      {"condition", condition_ids},
      {"condition_length", condition_ids.size()},
      {"condition_crop_yaw", condition_crop_yaw_deg},
      {"drop_pose", dropout.drop_pose},
      {"drop_geo", dropout.drop_geo},
      {"latent", {target_latent.t, target_latent.h, target_latent.w}},
  };
  return j.dump();
}

}  // namespace panorag::projection
