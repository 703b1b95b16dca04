#include "panorag/gateway.hpp"

#include <cstdlib>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "panorag/eval_metrics.hpp"
#include "panorag/image.hpp"
#include "panorag/remote_backend.hpp"

namespace panorag::gateway {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kPfm = "image/x-portable-floatmap";

json detail_json(const std::string& detail) {
  if (detail.empty()) return nullptr;
  json j = json::parse(detail, nullptr, false);
  return j.is_discarded() ? json(detail) : j;
}

void send_error(httplib::Response& res, const Error& e) {
  res.status = http_status(e.code());
  res.set_content(api_error_json(e), kJson);
}

void send_json(httplib::Response& res, json body, int status = 200) {
  body["schema"] = kSchemaVersion;
  res.status = status;
  res.set_content(body.dump(), kJson);
}

/// Runs a handler, turning every failure into an ApiError response.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, Error(ErrorCode::BadRequest, std::string("malformed request: ") + e.what()));
    } catch (const std::exception& e) {
      send_error(res, Error(ErrorCode::Internal, e.what()));
    }
  };
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
  }
  return j;
}

planner::UserPath waypoints_from(const json& req) {
  if (!req.contains("waypoints") || !req["waypoints"].is_array()) {
    throw Error(ErrorCode::BadRequest, "missing waypoints array");
  }
  planner::UserPath path;
  for (const auto& w : req["waypoints"]) {
    geodesy::GeodeticCoord c;
    if (w.is_array() && (w.size() == 2 || w.size() == 3)) {
      c.lat = w[0].get<double>();
      c.lon = w[1].get<double>();
      c.alt = w.size() == 3 ? w[2].get<double>() : 0.0;
    } else if (w.is_object()) {
      c.lat = w.at("lat").get<double>();
      c.lon = w.at("lon").get<double>();
      c.alt = w.value("alt", 0.0);
    } else {
      throw Error(ErrorCode::BadRequest, "waypoint must be [lat, lon, alt?] or {lat, lon, alt}");
    }
    path.waypoints.push_back(c);
  }
  try {
    path.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::BadRequest, e.what(), e.detail());
  }
  return path;
}

planner::PlannerParams planner_from(const json& req, planner::PlannerParams p) {
  if (!req.contains("planner")) return p;
  const json& j = req["planner"];
  if (!j.is_object()) throw Error(ErrorCode::BadRequest, "planner must be an object");
  p.corridor_m = j.value("corridor_m", p.corridor_m);
  p.heading_tol_deg = j.value("heading_tol_deg", p.heading_tol_deg);
  p.min_run = j.value("min_run", p.min_run);
  p.switch_penalty = j.value("switch_penalty", p.switch_penalty);
  p.gap_max_m = j.value("gap_max_m", p.gap_max_m);
  p.heading_weight = j.value("heading_weight", p.heading_weight);
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::BadRequest, e.what(), e.detail());
  }
  return p;
}

json plan_json(const planner::RetrievalPlan& plan) {
  json steps = json::array();
  for (const auto& s : plan.steps) {
    steps.push_back({{"s", s.s},
                     {"pano_id", s.pano_id},
                     {"segment_id", s.segment_id},
                     {"offset", s.offset},
                     {"heading_mismatch", s.heading_mismatch_deg},
                     {"frame", s.frame},
                     {"path_segment", s.path_segment}});
  }
  return {{"steps", steps},
          {"switch_points", plan.switch_points},
          {"switch_count", plan.switch_points.size()},
          {"path_length", plan.path_length},
          {"cost", plan.cost}};
}

json diagnostics_json(const planner::PlanDiagnostics& d) {
  return {{"max_gap_m", d.max_gap_m},
          {"switch_discontinuity_m", d.switch_discontinuity_m},
          {"coverage_fraction", d.coverage_fraction}};
}

json session_json(const session::SessionState& st) {
  json segments = json::array();
  for (std::size_t k = 0; k < st.generated_segments.size(); ++k) {
    segments.push_back({{"index", k},
                        {"frames", st.generated_segments[k]->size()},
                        {"backend", st.backend_ids[k]}});
  }
  std::size_t unique = 0;
  for (std::size_t k = 0; k < st.generated_segments.size(); ++k) {
    unique += st.generated_segments[k]->size() - (k == 0 ? 0 : 1);
  }
  json j = {{"session_id", st.session_id},
            {"status", session::status_name(st.status)},
            {"chunks_total", st.chunks.size()},
            {"chunks_done", st.chunks_done},
            {"segments", segments},
            {"unique_frame_count", unique},
            {"plan", plan_json(st.plan)},
            {"manifest", json::parse(session::session_manifest(st))}};
  j["loop_closure_error_m"] =
      st.status == session::Status::Complete ? json(session::loop_closure_error(st)) : json(nullptr);
  return j;
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  std::ostringstream os;
  os << std::hex << rng();
  return os.str();
}

bool valid_session_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, re);
}

std::size_t parse_index(const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used == text.size()) return std::size_t(v);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::BadRequest, "bad index: " + text);
}

std::vector<ImageBuffer> frames_part(const httplib::Request& req, const char* name) {
  if (!req.has_file(name)) return {};
  try {
    return decode_pfm_sequence(req.get_file_value(name).content);
  } catch (const Error& e) {
    throw Error(ErrorCode::BadRequest, std::string(name) + ": " + e.what());
  }
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::FileNotFound:
      return 404;
    case ErrorCode::SessionBusy:
    case ErrorCode::SessionNotActive:
      return 409;
    case ErrorCode::NoCoverage:
    case ErrorCode::NoOverlap:
    case ErrorCode::ConditionTooShort:
    case ErrorCode::AllMasked:
      return 422;
    case ErrorCode::BackendFailure:
    case ErrorCode::FrameCountMismatch:
      return 502;
    case ErrorCode::Cancelled:
      return 503;
    case ErrorCode::SqrtNonConvergence:
    case ErrorCode::Internal:
      return 500;
    default:
      return 400;
  }
}

std::string api_error_json(const Error& e) {
  json j = {{"schema", kSchemaVersion},
            {"error",
             {{"code", error_code_name(e.code())},
              {"message", e.what()},
              {"detail", detail_json(e.detail())}}}};
  return j.dump();
}

std::shared_ptr<const IndexSnapshot> IndexSnapshot::build(index::PanoIndex store,
                                                          const std::filesystem::path& image_dir,
                                                          const index::GroupingParams& grouping) {
  auto snap = std::make_shared<IndexSnapshot>();
  auto owned = std::make_shared<const index::PanoIndex>(std::move(store));
  snap->catalog = std::make_shared<const planner::SegmentCatalog>(
      *owned, owned->group_trajectories(grouping));
  snap->store = std::move(owned);
  snap->panos = std::make_shared<session::FilePanoramaSource>(image_dir);
  return snap;
}

std::shared_ptr<const IndexSnapshot> IndexSnapshot::load(const std::filesystem::path& manifest,
                                                         std::filesystem::path image_dir,
                                                         const index::GroupingParams& grouping) {
  index::PanoIndex store;
  index::IngestReport report = store.ingest_manifest(manifest);
  if (image_dir.empty()) image_dir = manifest.parent_path();
  auto snap = build(std::move(store), image_dir, grouping);
  std::const_pointer_cast<IndexSnapshot>(snap)->report = std::move(report);
  return snap;
}

std::unique_ptr<session::GeneratorBackend> make_backend(const std::string& spec,
                                                        session::BackendCapability caps) {
  using session::MockGenerator;
  if (spec == "mock-echo") return std::make_unique<MockGenerator>(MockGenerator::Mode::Echo, caps);
  if (spec == "mock-pose-stamp") {
    return std::make_unique<MockGenerator>(MockGenerator::Mode::PoseStamp, caps);
  }
  constexpr std::string_view remote = "remote:";
  if (spec.starts_with(remote) && spec.size() > remote.size()) {
    return std::make_unique<session::RemoteGenerator>(spec.substr(remote.size()), caps);
  }
  throw Error(ErrorCode::BadRequest, "unknown backend: " + spec);
}

void ServiceConfig::apply_environment() {
  if (const char* v = std::getenv("PANORAG_INDEX")) index_path = v;
  if (const char* v = std::getenv("PANORAG_IMAGES")) image_dir = v;
  if (const char* v = std::getenv("PANORAG_SESSIONS")) session_dir = v;
  if (const char* v = std::getenv("PANORAG_BACKEND")) backend = v;
  if (const char* v = std::getenv("PANORAG_PORT")) {
    try {
      port = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadRequest, std::string("bad PANORAG_PORT: ") + v);
    }
  }
}

struct Service::Impl {
  struct Slot {
    std::mutex step_mu;  // one in-flight step
    std::mutex mu;       // guards state
    session::SessionState state;
  };

  ServiceConfig config;
  std::unique_ptr<session::GeneratorBackend> backend;
  mutable std::mutex snap_mu;
  std::shared_ptr<const IndexSnapshot> snap;
  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Slot>> sessions;
  httplib::Server server;
  int bound_port = -1;

  std::shared_ptr<const IndexSnapshot> snapshot() const {
    std::lock_guard lock(snap_mu);
    return snap;
  }

  std::filesystem::path session_path(const std::string& id) const {
    return config.session_dir / id;
  }

  std::shared_ptr<Slot> find_session(const std::string& id) {
    if (!valid_session_id(id)) throw Error(ErrorCode::NotFound, "no session " + id);
    std::lock_guard lock(sessions_mu);
    if (auto it = sessions.find(id); it != sessions.end()) return it->second;
    const auto dir = session_path(id);
    if (!std::filesystem::exists(dir / "state.json")) {
      throw Error(ErrorCode::NotFound, "no session " + id);
    }
    auto slot = std::make_shared<Slot>();
    slot->state = session::load_state(dir);
    sessions.emplace(id, slot);
    return slot;
  }

  session::SessionState copy_state(Slot& slot) {
    std::lock_guard lock(slot.mu);
    return slot.state;
  }

  void captures(const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("bbox")) throw Error(ErrorCode::BadRequest, "missing bbox parameter");
    std::vector<double> v;
    std::stringstream ss(req.get_param_value("bbox"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadRequest, "bbox must be four numbers");
      }
    }
    if (v.size() != 4 || v[0] > v[2] || v[1] > v[3] || v[0] < -90 || v[2] > 90 || v[1] < -180 ||
        v[3] > 180) {
      throw Error(ErrorCode::BadRequest, "bbox must be min_lat,min_lon,max_lat,max_lon");
    }
    const auto s = snapshot();
    json list = json::array();
    for (const auto& r : s->store->records()) {
      if (r.geo.lat < v[0] || r.geo.lat > v[2] || r.geo.lon < v[1] || r.geo.lon > v[3]) continue;
      list.push_back({{"id", r.id},
                      {"lat", r.geo.lat},
                      {"lon", r.geo.lon},
                      {"alt", r.geo.alt},
                      {"capture_time", r.capture_time},
                      {"trajectory_id", r.trajectory_id},
                      {"city", r.city}});
    }
    send_json(res, {{"captures", list}, {"count", list.size()}});
  }

  void plan(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req.body);
    const auto path = waypoints_from(body);
    const auto params = planner_from(body, config.session_defaults.planner);
    const auto s = snapshot();
    const auto plan = planner::plan_condition_path(path, *s->catalog, params);
    const auto diag = planner::validate_plan(plan, *s->store, params);
    send_json(res, {{"plan", plan_json(plan)}, {"diagnostics", diagnostics_json(diag)}});
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    json body;
    std::optional<ImageBuffer> first;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("request")) throw Error(ErrorCode::BadRequest, "missing request part");
      body = parse_body(req.get_file_value("request").content);
      if (req.has_file("first_image")) {
        try {
          first = decode_pfm(req.get_file_value("first_image").content);
        } catch (const Error& e) {
          throw Error(ErrorCode::BadRequest, std::string("first_image: ") + e.what());
        }
      }
    } else {
      body = parse_body(req.body);
    }

    session::SessionParams params = config.session_defaults;
    params.planner = planner_from(body, params.planner);
    params.seed = body.value("seed", params.seed);
    params.chunk_len = body.value("chunk_len", params.chunk_len);
    params.crop.out_w = body.value("width", params.crop.out_w);
    params.crop.out_h = body.value("height", params.crop.out_h);
    params.crop.fov_deg = body.value("fov_deg", params.crop.fov_deg);
    const auto path = waypoints_from(body);
    const std::string id = body.value("session_id", new_session_id());
    if (!valid_session_id(id)) throw Error(ErrorCode::BadRequest, "invalid session id");

    const auto s = snapshot();
    const ImageBuffer placeholder(params.crop.out_w, params.crop.out_h, 3, 0.0f);
    auto state = session::start_session(id, first ? *first : placeholder, path, *s->catalog, params);
    if (!first) {
      state.first_image = session::default_first_image(state, *s->catalog, *s->panos);
      state.current_first_image = state.first_image;
    }

    std::lock_guard lock(sessions_mu);
    if (sessions.contains(id) || std::filesystem::exists(session_path(id))) {
      throw Error(ErrorCode::BadRequest, "session " + id + " already exists");
    }
    session::save_state(state, session_path(id));
    auto slot = std::make_shared<Slot>();
    slot->state = std::move(state);
    send_json(res, session_json(slot->state), 201);
    sessions.emplace(id, std::move(slot));
  }

  void step_session(const httplib::Request& req, httplib::Response& res) {
    auto slot = find_session(req.matches[1]);
    std::unique_lock busy(slot->step_mu, std::try_to_lock);
    if (!busy.owns_lock()) {
      throw Error(ErrorCode::SessionBusy, "a step is already running for this session");
    }
    const auto current = copy_state(*slot);
    const auto s = snapshot();
    auto out = session::step(current, *backend, *s->catalog, *s->panos);
    session::save_state(out.state, session_path(current.session_id));
    json body = session_json(out.state);
    body["segment_index"] = out.state.generated_segments.size() - 1;
    {
      std::lock_guard lock(slot->mu);
      slot->state = std::move(out.state);
    }
    send_json(res, std::move(body));
  }

  void get_session(const httplib::Request& req, httplib::Response& res) {
    auto slot = find_session(req.matches[1]);
    send_json(res, session_json(copy_state(*slot)));
  }

  session::Segment segment_of(const httplib::Request& req) {
    auto slot = find_session(req.matches[1]);
    const auto st = copy_state(*slot);
    const std::size_t k = parse_index(req.matches[2]);
    if (k >= st.generated_segments.size()) {
      throw Error(ErrorCode::NotFound, "segment " + std::to_string(k) + " not generated");
    }
    return st.generated_segments[k];
  }

  void get_segment(const httplib::Request& req, httplib::Response& res) {
    res.set_content(encode_pfm_sequence(*segment_of(req)), kPfm);
  }

  void get_frame(const httplib::Request& req, httplib::Response& res) {
    const auto seg = segment_of(req);
    const std::size_t f = parse_index(req.matches[3]);
    if (f >= seg->size()) throw Error(ErrorCode::NotFound, "frame " + std::to_string(f) + " out of range");
    res.set_content(encode_pfm((*seg)[f]), kPfm);
  }

  void metrics(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      throw Error(ErrorCode::BadRequest, "metrics expects multipart/form-data");
    }
    const auto gen = frames_part(req, "gen");
    const auto gt = frames_part(req, "gt");
    const auto masks = frames_part(req, "masks");
    const bool has_real = req.has_file("features_real");
    const bool has_gen = req.has_file("features_gen");
    if (has_real != has_gen) {
      throw Error(ErrorCode::BadRequest, "features_real and features_gen go together");
    }
    if (gen.empty() && !has_real) throw Error(ErrorCode::BadRequest, "nothing to evaluate");
    if (gen.size() != gt.size()) throw Error(ErrorCode::DimMismatch, "gen and gt frame counts differ");

    json out;
    json warnings = json::array();
    if (!gen.empty()) {
      const auto full = metrics::video_metrics(gen, gt);
      out["psnr"] = full.psnr;
      out["ssim"] = full.ssim;
      out["frames"] = full.frames_used;
      if (!masks.empty()) {
        const auto stat = metrics::masked_video_metrics(gen, gt, masks);
        out["psnr_s"] = stat.psnr;
        out["ssim_s"] = stat.ssim;
        out["static_frames"] = stat.frames_used;
        for (const auto& w : stat.warnings) warnings.push_back(w);
      }
    }
    if (has_real) {
      std::istringstream real(req.get_file_value("features_real").content);
      std::istringstream fake(req.get_file_value("features_gen").content);
      const auto fid = metrics::fid_from_features(metrics::read_features(real),
                                                  metrics::read_features(fake));
      out["fid"] = fid.fid;
      out["fid_regularized"] = fid.regularized;
    }
    out["warnings"] = warnings;
    send_json(res, std::move(out));
  }

  void routes() {
    server.Get("/captures", guarded([this](auto& q, auto& r) { captures(q, r); }));
    server.Post("/plan", guarded([this](auto& q, auto& r) { plan(q, r); }));
    server.Post("/sessions", guarded([this](auto& q, auto& r) { create_session(q, r); }));
    server.Post(R"(/sessions/([^/]+)/step)",
                guarded([this](auto& q, auto& r) { step_session(q, r); }));
    server.Get(R"(/sessions/([^/]+))", guarded([this](auto& q, auto& r) { get_session(q, r); }));
    server.Get(R"(/sessions/([^/]+)/segments/(\d+))",
               guarded([this](auto& q, auto& r) { get_segment(q, r); }));
    server.Get(R"(/sessions/([^/]+)/segments/(\d+)/frames/(\d+))",
               guarded([this](auto& q, auto& r) { get_frame(q, r); }));
    server.Post("/metrics", guarded([this](auto& q, auto& r) { metrics(q, r); }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const ErrorCode code = res.status == 404 ? ErrorCode::NotFound : ErrorCode::BadRequest;
      const int status = res.status;
      send_error(res, Error(code, "no such endpoint"));
      res.status = status;
    });
    const int n = std::max(1, config.threads);
    server.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  const auto& c = impl_->config;
  impl_->snap = c.index_path.empty() ? IndexSnapshot::build(index::PanoIndex{}, c.image_dir)
                                     : IndexSnapshot::load(c.index_path, c.image_dir);
  impl_->backend = make_backend(c.backend, {c.session_defaults.chunk_len,
                                            c.session_defaults.crop.out_w,
                                            c.session_defaults.crop.out_h});
  std::filesystem::create_directories(c.session_dir);
  impl_->routes();
}

Service::Service(ServiceConfig config, std::shared_ptr<const IndexSnapshot> snapshot,
                 std::unique_ptr<session::GeneratorBackend> backend)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->snap = std::move(snapshot);
  impl_->backend = std::move(backend);
  std::filesystem::create_directories(impl_->config.session_dir);
  impl_->routes();
}

Service::~Service() { stop(); }

std::shared_ptr<const IndexSnapshot> Service::snapshot() const { return impl_->snapshot(); }

void Service::swap_index(std::shared_ptr<const IndexSnapshot> next) {
  std::lock_guard lock(impl_->snap_mu);
  impl_->snap = std::move(next);
}

int Service::bind() {
  auto& c = impl_->config;
  if (c.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(c.host);
  } else if (impl_->server.bind_to_port(c.host, c.port)) {
    impl_->bound_port = c.port;
  }
  if (impl_->bound_port <= 0) {
    throw Error(ErrorCode::Internal, "cannot bind " + c.host + ":" + std::to_string(c.port));
  }
  return impl_->bound_port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace panorag::gateway
