#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "panorag/error.hpp"
#include "panorag/pano_index.hpp"
#include "panorag/retrieval_planner.hpp"
#include "panorag/session_engine.hpp"

namespace panorag::gateway {

/// Carried in every JSON response body, success or error.
inline constexpr std::string_view kSchemaVersion = "panorag.api.v1";

int http_status(ErrorCode code);
/// {"schema": ..., "error": {"code", "message", "detail"}}
std::string api_error_json(const Error& e);

/// Immutable index view shared by all requests. Replaced wholesale when the
/// index is regenerated; in-flight requests keep the snapshot they started with.
struct IndexSnapshot {
  std::shared_ptr<const index::PanoIndex> store;
  std::shared_ptr<const planner::SegmentCatalog> catalog;
  std::shared_ptr<session::PanoramaSource> panos;
  index::IngestReport report;

  static std::shared_ptr<const IndexSnapshot> build(index::PanoIndex store,
                                                    const std::filesystem::path& image_dir,
                                                    const index::GroupingParams& grouping = {});
  static std::shared_ptr<const IndexSnapshot> load(const std::filesystem::path& manifest,
                                                   std::filesystem::path image_dir = {},
                                                   const index::GroupingParams& grouping = {});
};

/// "mock-echo", "mock-pose-stamp" or "remote:<base url>".
std::unique_ptr<session::GeneratorBackend> make_backend(const std::string& spec,
                                                        session::BackendCapability caps = {});

struct ServiceConfig {
  std::filesystem::path index_path;  // manifest; empty = start with an empty index
  std::filesystem::path image_dir;   // default: directory of the manifest
  std::filesystem::path session_dir = "sessions";
  std::string backend = "mock-echo";
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 4;
  session::SessionParams session_defaults;

  /// PANORAG_INDEX, PANORAG_IMAGES, PANORAG_SESSIONS, PANORAG_BACKEND, PANORAG_PORT
  /// override the corresponding fields when set.
  void apply_environment();
};

/// HTTP service. Endpoints (JSON unless noted):
///   GET  /captures?bbox=min_lat,min_lon,max_lat,max_lon
///   POST /plan                          {"waypoints": [[lat, lon, alt?], ...], "planner": {...}}
///   POST /sessions                      same body (+ seed, chunk_len, width, height, fov_deg);
///                                       or multipart "request" + "first_image" (PFM)
///   POST /sessions/{id}/step
///   GET  /sessions/{id}
///   GET  /sessions/{id}/segments/{k}            PFM sequence
///   GET  /sessions/{id}/segments/{k}/frames/{f} PFM
///   POST /metrics                       multipart "gen", "gt", "masks" (PFM sequences),
///                                       "features_real", "features_gen"
/// Sessions persist under session_dir/<id> after every change and are
/// reloaded on demand, so a restarted service resumes them.
class Service {
 public:
  explicit Service(ServiceConfig config);
  Service(ServiceConfig config, std::shared_ptr<const IndexSnapshot> snapshot,
          std::unique_ptr<session::GeneratorBackend> backend);
  ~Service();

  std::shared_ptr<const IndexSnapshot> snapshot() const;
  void swap_index(std::shared_ptr<const IndexSnapshot> next);

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind();
  /// Blocks until stop().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace panorag::gateway
