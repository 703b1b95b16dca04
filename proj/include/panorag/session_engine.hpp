#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stop_token>
#include <string>
#include <vector>

#include "panorag/geodesy.hpp"
#include "panorag/image.hpp"
#include "panorag/pano_index.hpp"
#include "panorag/pano_projection.hpp"
#include "panorag/retrieval_planner.hpp"

namespace panorag::session {

struct BackendCapability {
  std::size_t max_frames = 73;
  int width = 832;
  int height = 480;
};

struct ConditionMetadata {
  std::uint64_t seed = 0;
  std::size_t chunk_index = 0;
  std::size_t chunk_first_step = 0;
  bool drop_pose = false;  // always false at inference
  bool drop_geo = false;
};

/// Everything the generator sees for one autoregressive step.
struct ConditionPackage {
  ImageBuffer first_image;
  std::vector<geodesy::SE3Pose> relative_poses;  // head is the identity
  std::vector<ImageBuffer> geo_frames;
  ConditionMetadata metadata;
};

/// Generator contract: generate() returns exactly one frame per pose.
/// Implementations throw Error(BackendFailure) for recoverable failures and
/// should poll `stop` during long calls.
class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::string id() const = 0;
  virtual BackendCapability capability() const = 0;
  virtual std::vector<ImageBuffer> generate(const ConditionPackage& package,
                                            std::stop_token stop) = 0;
};

/// Deterministic test double.
///  - Echo: geo frames resampled to the pose count by nearest index.
///  - PoseStamp: frame k encodes relative pose k and k itself in its first
///    52 values (see decode_pose_stamp).
class MockGenerator final : public GeneratorBackend {
 public:
  enum class Mode { Echo, PoseStamp };

  explicit MockGenerator(Mode mode, BackendCapability caps = {}) : mode_(mode), caps_(caps) {}

  std::string id() const override;
  BackendCapability capability() const override { return caps_; }
  std::vector<ImageBuffer> generate(const ConditionPackage& package,
                                    std::stop_token stop) override;

 private:
  Mode mode_;
  BackendCapability caps_;
};

struct StampedFrame {
  geodesy::SE3Pose pose;
  std::size_t frame_index = 0;
};
StampedFrame decode_pose_stamp(const ImageBuffer& frame);

/// Loads the equirectangular image behind a record.
class PanoramaSource {
 public:
  virtual ~PanoramaSource() = default;
  virtual std::shared_ptr<const ImageBuffer> load(const index::PanoRecord& record) = 0;
};

/// Resolves image_uri relative to a base directory; caches decoded images.
class FilePanoramaSource final : public PanoramaSource {
 public:
  explicit FilePanoramaSource(std::filesystem::path base_dir) : base_(std::move(base_dir)) {}
  std::shared_ptr<const ImageBuffer> load(const index::PanoRecord& record) override;

 private:
  std::filesystem::path base_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const ImageBuffer>> cache_;
};

struct SessionParams {
  planner::PlannerParams planner;
  projection::AugmentationParams crop;  // fov and output size are used
  std::size_t chunk_len = 73;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Status { Active, Complete, Failed };
std::string_view status_name(Status s);

using Segment = std::shared_ptr<const std::vector<ImageBuffer>>;

struct SessionState {
  std::string session_id;
  SessionParams params;
  planner::UserPath path;
  planner::RetrievalPlan plan;
  std::vector<planner::PlanChunk> chunks;  // all chunks, in order
  std::size_t chunks_done = 0;
  geodesy::SE3Pose start_pose;
  geodesy::SE3Pose current_pose;
  ImageBuffer first_image;  // as supplied by the user
  ImageBuffer current_first_image;
  std::vector<Segment> generated_segments;
  std::vector<std::string> backend_ids;  // per generated segment
  Status status = Status::Active;

  std::span<const planner::PlanChunk> remaining_chunks() const {
    return std::span(chunks).subspan(chunks_done);
  }
};

/// Plans the path and queues its chunks. Propagates Error(NoCoverage).
SessionState start_session(std::string session_id, ImageBuffer first_image,
                           const planner::UserPath& path, const planner::SegmentCatalog& catalog,
                           const SessionParams& params);

/// Camera poses (ECEF) along the user path for a chunk, padded to
/// `chunk_len` by holding the final step.
std::vector<geodesy::SE3Pose> chunk_target_poses(const planner::PlanChunk& chunk,
                                                 const planner::PathGeometry& path,
                                                 std::size_t chunk_len);

/// Camera looking along `direction` (projected to the local horizontal) at
/// `position`; body frame is forward-right-down.
geodesy::SE3Pose camera_pose_along(const Eigen::Vector3d& position,
                                   const Eigen::Vector3d& direction);

ConditionPackage assemble_package(const SessionState& state, std::size_t chunk_index,
                                  const planner::SegmentCatalog& catalog, PanoramaSource& panos);

struct StepResult {
  SessionState state;
  Segment segment;
};

/// Crop of the first planned panorama looking along the path; used as the
/// first image when the caller supplies none.
ImageBuffer default_first_image(const SessionState& state, const planner::SegmentCatalog& catalog,
                                PanoramaSource& panos);

/// One autoregressive step. The input state is never modified; on any error
/// (BackendFailure, FrameCountMismatch, Cancelled) the caller keeps it.
StepResult step(const SessionState& state, GeneratorBackend& backend,
                const planner::SegmentCatalog& catalog, PanoramaSource& panos,
                std::stop_token stop = {});

/// Distance between the first camera position and the current one.
/// Throws Error(SessionNotActive) unless the session is complete.
double loop_closure_error(const SessionState& state);

/// Frames after overlap removal: 73 + 72 * (segments - 1) for full chunks.
std::vector<ImageBuffer> unique_frames(const SessionState& state);

/// Session manifest (chunk boundaries, poses, backend ids, seeds). Contains
/// nothing run-dependent, so equal inputs give equal bytes.
std::string session_manifest(const SessionState& state);

/// Writes frame_NNNNNN.pfm (overlap removed) and session.json into `dir`.
void export_session(const SessionState& state, const std::filesystem::path& dir);

/// Full state persistence for resumable sessions.
void save_state(const SessionState& state, const std::filesystem::path& dir);
SessionState load_state(const std::filesystem::path& dir);

std::uint64_t chunk_seed(std::uint64_t session_seed, std::size_t chunk_index);

}  // namespace panorag::session
