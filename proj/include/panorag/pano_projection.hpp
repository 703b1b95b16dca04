#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "panorag/geodesy.hpp"
#include "panorag/image.hpp"
#include "panorag/pair_miner.hpp"
#include "panorag/pano_index.hpp"

namespace panorag::projection {

/// Seeded generator; draws are derived from raw mt19937_64 output so
/// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::size_t(uniform() * double(n)); }

 private:
  std::mt19937_64 engine_;
};

struct AugmentationParams {
  double fov_deg = 65.0;  // horizontal
  int out_w = 832;
  int out_h = 480;
  double start_yaw_min_deg = 0.0;
  double start_yaw_max_deg = 360.0;
  double per_frame_rot_min_deg = 0.0;
  double per_frame_rot_max_deg = 2.0;
  std::vector<int> cond_lengths{61, 65, 69, 73, 77, 81};

  void validate() const;
  /// Pinhole focal length in pixels (square pixels).
  double focal_px() const;
};

struct DropoutPolicy {
  double p_pose = 0.10;
  double p_geo = 0.10;
};

struct DropoutFlags {
  bool drop_pose = false;
  bool drop_geo = false;
};

struct ViewDirection {
  double azimuth_deg = 0.0;    // [0, 360), increasing to the right in the pano
  double elevation_deg = 0.0;  // positive up
};

/// Viewing ray of crop pixel (u, v) (pixel centers at +0.5) for a camera at
/// the given yaw/pitch inside the panorama sphere.
ViewDirection crop_pixel_direction(double u, double v, double yaw_deg, double pitch_deg,
                                   const AugmentationParams& params);

/// Bilinear lookup in an equirectangular image, wrapping horizontally.
void sample_equirect(const ImageBuffer& pano, double azimuth_deg, double elevation_deg,
                     float* out);

/// Pinhole view of an equirectangular panorama (width = 2 * height).
/// Throws Error(BadAspect) / Error(PitchOutOfRange).
ImageBuffer crop_perspective(const ImageBuffer& pano, double yaw_deg, double pitch_deg,
                             const AugmentationParams& params);

/// yaw[0] = heading[0] + U[start range] wrapped to [0, 360); afterwards each
/// frame follows the heading change plus a U[per-frame range] increment.
/// The result is cumulative (not wrapped) after the first frame.
std::vector<double> sample_yaw_schedule(std::size_t n_frames, std::span<const double> headings_deg,
                                        Rng& rng, const AugmentationParams& params = {});

int sample_condition_length(Rng& rng, const AugmentationParams& params = {});

DropoutFlags sample_dropout_flags(const DropoutPolicy& policy, Rng& rng);

struct LatentShape {
  int t = 0;
  int h = 0;
  int w = 0;
  bool operator==(const LatentShape&) const = default;
};

/// 4x temporal / 8x spatial VAE compression followed by 2x2 patching.
/// Throws Error(IncompatibleDims) unless t = 1 mod 4 and h, w = 0 mod 16.
LatentShape compute_latent_shape(int t_frames, int h_px, int w_px);

/// Azimuth in the panorama's own frame that looks along world heading
/// `heading_deg` (clockwise from north) for a panorama with the given pose.
double pano_azimuth_for_heading(const geodesy::SE3Pose& pano_pose, double heading_deg);

struct TrainingExample {
  std::uint64_t seed = 0;
  std::vector<std::string> target_ids;
  std::vector<geodesy::SE3Pose> target_relative_poses;
  std::vector<double> target_yaw_deg;       // world yaw schedule
  std::vector<double> target_crop_yaw_deg;  // same, in each panorama's frame
  std::vector<std::string> condition_ids;
  std::vector<double> condition_crop_yaw_deg;
  DropoutFlags dropout;
  LatentShape target_latent;

  std::string to_manifest_line() const;
};

/// Turns a mined pair into a concrete conditioning manifest. Throws
/// Error(ConditionTooShort) when the aligned condition span is shorter than
/// the smallest allowed condition length.
TrainingExample build_training_example(const mining::TrainingPair& pair,
                                       const index::PanoIndex& store,
                                       const AugmentationParams& params,
                                       const DropoutPolicy& policy, std::uint64_t seed);

}  // namespace panorag::projection
