#include "panorag/cli.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <thread>
#include <chrono>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "panorag/error.hpp"
#include "panorag/eval_metrics.hpp"
#include "panorag/gateway.hpp"
#include "panorag/image.hpp"
#include "panorag/pair_miner.hpp"
#include "panorag/pano_index.hpp"
#include "panorag/pano_projection.hpp"
#include "panorag/retrieval_planner.hpp"
#include "panorag/session_engine.hpp"

namespace panorag::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + p.string());
  out << text;
}

std::pair<int, int> parse_size(const std::string& text) {
  int w = 0, h = 0;
  char x = 0;
  std::istringstream ss(text);
  if (!(ss >> w >> x >> h) || x != 'x' || w <= 0 || h <= 0 || !ss.eof()) {
    throw Error(ErrorCode::BadRequest, "size must look like 832x480");
  }
  return {w, h};
}

index::PanoIndex load_index(const fs::path& manifest) {
  index::PanoIndex store;
  if (!manifest.empty()) store.ingest_manifest(manifest);
  return store;
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::FileNotFound, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pfm" || ext == ".ppm" || ext == ".pgm")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<ImageBuffer> read_frames(const fs::path& dir) {
  std::vector<ImageBuffer> frames;
  for (const auto& f : image_files(dir)) frames.push_back(read_image(f));
  return frames;
}

volatile std::sig_atomic_t g_interrupted = 0;

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geo-registered panorama retrieval and autoregressive session engine", "panorag"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load a capture manifest and report rejected lines");
  fs::path ingest_manifest, ingest_rejects, ingest_report;
  double max_gap = 20.0;
  ingest->add_option("manifest", ingest_manifest, "Manifest (one JSON record per line)")->required();
  ingest->add_option("--rejects", ingest_rejects, "Write rejected lines to this file");
  ingest->add_option("--report", ingest_report, "Write the report to this file");
  ingest->add_option("--max-gap", max_gap, "Trajectory split distance in meters");

  // mine-pairs
  auto* mine = app.add_subcommand("mine-pairs", "Mine cross-trajectory training pairs");
  fs::path mine_manifest, mine_out, mine_examples, mine_stats;
  mining::MiningParams mp;
  std::uint64_t mine_seed = 0;
  mine->add_option("--manifest", mine_manifest, "Capture manifest")->required();
  mine->add_option("--n", mp.n, "Frames per target window");
  mine->add_option("--epsilon", mp.epsilon_m, "Mean alignment distance threshold (m)");
  mine->add_option("--stride", mp.window_stride, "Window stride (frames)");
  mine->add_option("--min-gap", mp.min_time_separation_s, "Minimum capture time separation (s)");
  mine->add_option("--threads", mp.threads, "Worker threads (0 = all cores)");
  mine->add_option("-o,--out", mine_out, "Pair manifest output")->required();
  mine->add_option("--stats", mine_stats, "Write pair statistics to this file");
  mine->add_option("--examples", mine_examples, "Also write training example manifests");
  mine->add_option("--seed", mine_seed, "Seed for training example sampling");

  // crop
  auto* crop = app.add_subcommand("crop", "Perspective crop of an equirectangular panorama");
  fs::path crop_pano, crop_out;
  double crop_yaw = 0.0, crop_pitch = 0.0, crop_fov = 65.0;
  std::string crop_size = "832x480";
  crop->add_option("--pano", crop_pano, "Panorama image")->required();
  crop->add_option("--yaw", crop_yaw, "Yaw in degrees (panorama azimuth)")->required();
  crop->add_option("--pitch", crop_pitch, "Pitch in degrees");
  crop->add_option("--fov", crop_fov, "Horizontal field of view in degrees");
  crop->add_option("--out", crop_size, "Output size WxH");
  crop->add_option("-o,--output", crop_out, "Output image (.ppm, .pgm, .pfm)")->required();

  // plan
  auto* plan = app.add_subcommand("plan", "Plan condition panoramas along a path");
  fs::path plan_manifest, plan_path, plan_out;
  planner::PlannerParams pp;
  plan->add_option("--manifest", plan_manifest, "Capture manifest (empty index if omitted)");
  plan->add_option("--path", plan_path, "Waypoint file (lat lon [alt] per line)")->required();
  plan->add_option("--corridor", pp.corridor_m, "Corridor half-width in meters");
  plan->add_option("--heading-tol", pp.heading_tol_deg, "Heading tolerance in degrees");
  plan->add_option("--switch-penalty", pp.switch_penalty, "Cost per trajectory switch");
  plan->add_option("-o,--out", plan_out, "Plan output (stdout if omitted)");

  // session-run
  auto* run_cmd = app.add_subcommand("session-run", "Run a full generation session offline");
  fs::path run_manifest, run_path, run_out, run_images, run_first;
  std::string run_backend = "mock-echo", run_size = "832x480";
  session::SessionParams sp;
  run_cmd->add_option("--manifest", run_manifest, "Capture manifest")->required();
  run_cmd->add_option("--path", run_path, "Waypoint file")->required();
  run_cmd->add_option("--images", run_images, "Panorama directory (default: manifest directory)");
  run_cmd->add_option("--backend", run_backend, "mock-echo, mock-pose-stamp or remote:<url>");
  run_cmd->add_option("--seed", sp.seed, "Session seed");
  run_cmd->add_option("--size", run_size, "Frame size WxH");
  run_cmd->add_option("--fov", sp.crop.fov_deg, "Horizontal field of view");
  run_cmd->add_option("--chunk-len", sp.chunk_len, "Frames per chunk");
  run_cmd->add_option("--corridor", sp.planner.corridor_m, "Corridor half-width in meters");
  run_cmd->add_option("--first-image", run_first, "First image (default: crop of the first pano)");
  run_cmd->add_option("--out-dir", run_out, "Output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Video metrics and FID");
  fs::path eval_gen, eval_gt, eval_masks, eval_freal, eval_fgen, eval_out;
  eval->add_option("--gen", eval_gen, "Generated frame directory");
  eval->add_option("--gt", eval_gt, "Ground truth frame directory");
  eval->add_option("--masks", eval_masks, "Dynamic-object mask directory (ground truth)");
  eval->add_option("--features-real", eval_freal, "Real feature file");
  eval->add_option("--features-gen", eval_fgen, "Generated feature file");
  eval->add_option("-o,--out", eval_out, "Report output (stdout if omitted)");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
  gateway::ServiceConfig sc;
  serve->add_option("--manifest", sc.index_path, "Capture manifest (PANORAG_INDEX)");
  serve->add_option("--images", sc.image_dir, "Panorama directory (PANORAG_IMAGES)");
  serve->add_option("--sessions", sc.session_dir, "Session store (PANORAG_SESSIONS)");
  serve->add_option("--backend", sc.backend, "Generator backend (PANORAG_BACKEND)");
  serve->add_option("--host", sc.host, "Listen address");
  serve->add_option("--port", sc.port, "Listen port (PANORAG_PORT)");
  serve->add_option("--threads", sc.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ingest->parsed()) {
      index::PanoIndex store;
      const auto report = store.ingest_manifest(
          ingest_manifest, ingest_rejects.empty() ? std::nullopt : std::optional(ingest_rejects));
      std::string text = report.to_text();
      const auto segs = store.group_trajectories({max_gap, 1.4});
      text += "segments " + std::to_string(segs.size()) + "\n";
      if (ingest_report.empty()) {
        out << text;
      } else {
        write_text(ingest_report, text);
      }
    } else if (mine->parsed()) {
      const auto store = load_index(mine_manifest);
      const auto segs = store.group_trajectories();
      const auto pairs = mining::mine_pairs(store, segs, mp);
      std::string lines;
      for (const auto& p : pairs) lines += mining::to_manifest_line(p) + "\n";
      write_text(mine_out, lines);
      const auto stats = mining::pair_statistics(pairs, mp.epsilon_m).to_text();
      if (mine_stats.empty()) {
        out << stats;
      } else {
        write_text(mine_stats, stats);
      }
      if (!mine_examples.empty()) {
        std::string ex;
        std::size_t skipped = 0;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          try {
            ex += projection::build_training_example(pairs[k], store, {}, {},
                                                     session::chunk_seed(mine_seed, k))
                      .to_manifest_line() +
                  "\n";
          } catch (const Error& e) {
            if (e.code() != ErrorCode::ConditionTooShort) throw;
            ++skipped;
          }
        }
        write_text(mine_examples, ex);
        if (skipped > 0) err << "skipped " << skipped << " pairs with a short condition span\n";
      }
    } else if (crop->parsed()) {
      projection::AugmentationParams ap;
      std::tie(ap.out_w, ap.out_h) = parse_size(crop_size);
      ap.fov_deg = crop_fov;
      write_image(crop_out, projection::crop_perspective(read_image(crop_pano), crop_yaw,
                                                         crop_pitch, ap));
    } else if (plan->parsed()) {
      const auto store = load_index(plan_manifest);
      const planner::SegmentCatalog catalog(store, store.group_trajectories());
      const auto path = planner::read_waypoints(read_text(plan_path));
      const auto result = planner::plan_condition_path(path, catalog, pp);
      const auto lines = planner::to_plan_lines(result);
      if (plan_out.empty()) {
        out << lines;
      } else {
        write_text(plan_out, lines);
        out << "steps " << result.steps.size() << "\nswitches " << result.switch_points.size()
            << "\n";
      }
    } else if (run_cmd->parsed()) {
      std::tie(sp.crop.out_w, sp.crop.out_h) = parse_size(run_size);
      const auto store = load_index(run_manifest);
      const planner::SegmentCatalog catalog(store, store.group_trajectories());
      session::FilePanoramaSource panos(run_images.empty() ? run_manifest.parent_path()
                                                           : run_images);
      const auto path = planner::read_waypoints(read_text(run_path));
      auto backend = gateway::make_backend(run_backend, {sp.chunk_len, sp.crop.out_w, sp.crop.out_h});
      const ImageBuffer placeholder(sp.crop.out_w, sp.crop.out_h, 3, 0.0f);
      auto state = session::start_session("run", run_first.empty() ? placeholder
                                                                   : read_image(run_first),
                                          path, catalog, sp);
      if (run_first.empty()) {
        state.first_image = session::default_first_image(state, catalog, panos);
        state.current_first_image = state.first_image;
      }
      while (state.status == session::Status::Active) {
        state = session::step(state, *backend, catalog, panos).state;
      }
      session::export_session(state, run_out);
      out << "chunks " << state.chunks.size() << "\nframes " << session::unique_frames(state).size()
          << "\nloop_closure_error_m " << session::loop_closure_error(state) << "\n";
    } else if (eval->parsed()) {
      metrics::MetricReport report;
      if (eval_gen.empty() != eval_gt.empty()) {
        throw Error(ErrorCode::BadRequest, "--gen and --gt go together");
      }
      if (eval_freal.empty() != eval_fgen.empty()) {
        throw Error(ErrorCode::BadRequest, "--features-real and --features-gen go together");
      }
      if (eval_gen.empty() && eval_freal.empty()) {
        throw Error(ErrorCode::BadRequest, "nothing to evaluate");
      }
      if (!eval_gen.empty()) {
        const auto gen = read_frames(eval_gen);
        const auto gt = read_frames(eval_gt);
        if (gen.size() != gt.size() || gen.empty()) {
          throw Error(ErrorCode::DimMismatch, "gen and gt need the same nonzero frame count");
        }
        const auto full = metrics::video_metrics(gen, gt);
        report.psnr = full.psnr;
        report.ssim = full.ssim;
        report.frames = full.frames_used;
        if (!eval_masks.empty()) {
          const auto masks = read_frames(eval_masks);
          const auto stat = metrics::masked_video_metrics(gen, gt, masks);
          report.psnr_s = stat.psnr;
          report.ssim_s = stat.ssim;
          report.static_frames = stat.frames_used;
          report.warnings = stat.warnings;
        }
      }
      if (!eval_freal.empty()) {
        const auto fid = metrics::fid_from_features(metrics::read_features(eval_freal),
                                                    metrics::read_features(eval_fgen));
        report.fid = fid.fid;
        report.fid_regularized = fid.regularized;
      }
      if (eval_out.empty()) {
        out << report.to_text();
      } else {
        write_text(eval_out, report.to_text());
      }
    } else if (serve->parsed()) {
      gateway::ServiceConfig env;
      env.apply_environment();
      // Flags win over the environment.
      if (serve->count("--manifest") == 0) sc.index_path = env.index_path;
      if (serve->count("--images") == 0) sc.image_dir = env.image_dir;
      if (serve->count("--sessions") == 0) sc.session_dir = env.session_dir;
      if (serve->count("--backend") == 0) sc.backend = env.backend;
      if (serve->count("--port") == 0) sc.port = env.port;
      gateway::Service service(sc);
      const int port = service.bind();
      out << "listening on " << sc.host << ":" << port << std::endl;
      static gateway::Service* active = nullptr;
      active = &service;
      std::signal(SIGINT, [](int) { g_interrupted = 1; });
      std::signal(SIGTERM, [](int) { g_interrupted = 1; });
      std::thread watcher([] {
        while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        if (active != nullptr) active->stop();
      });
      service.run();
      g_interrupted = 1;
      watcher.join();
      active = nullptr;
    }
  } catch (const Error& e) {
    err << error_code_name(e.code()) << ": " << e.what() << "\n";
    if (!e.detail().empty()) err << "detail: " << e.detail() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << error_code_name(ErrorCode::Internal) << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace panorag::cli
