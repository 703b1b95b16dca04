#include "panorag/remote_backend.hpp"

#include <chrono>
#include <future>

#include <httplib.h>
#include <json.hpp>

#include "panorag/error.hpp"

namespace panorag::session {

using nlohmann::json;

RemoteGenerator::RemoteGenerator(std::string base_url, BackendCapability caps)
    : base_url_(std::move(base_url)), caps_(caps) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string package_header_json(const ConditionPackage& package) {
  json poses = json::array();
  for (const auto& p : package.relative_poses) {
    json row = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) row.push_back(p.rotation(r, c));
      row.push_back(p.translation(r));
    }
    poses.push_back(std::move(row));
  }
  json j = {{"relative_poses", std::move(poses)},
            {"geo_frame_count", package.geo_frames.size()},
            {"seed", package.metadata.seed},
            {"chunk_index", package.metadata.chunk_index},
            {"chunk_first_step", package.metadata.chunk_first_step},
            {"drop_pose", package.metadata.drop_pose},
            {"drop_geo", package.metadata.drop_geo}};
  return j.dump();
}

ConditionPackage package_from_parts(const std::string& header_json,
                                    const std::string& first_image_pfm,
                                    const std::string& geo_frames_pfm) {
  auto j = json::parse(header_json, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::BadRequest, "package header is not JSON");
  ConditionPackage pkg;
  try {
    for (const auto& row : j.at("relative_poses")) {
      if (row.size() != 12) throw Error(ErrorCode::BadRequest, "pose needs 12 numbers");
      geodesy::SE3Pose p;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.rotation(r, c) = row[std::size_t(r * 4 + c)].get<double>();
        p.translation(r) = row[std::size_t(r * 4 + 3)].get<double>();
      }
      pkg.relative_poses.push_back(p);
    }
    pkg.metadata.seed = j.at("seed").get<std::uint64_t>();
    pkg.metadata.chunk_index = j.at("chunk_index").get<std::size_t>();
    pkg.metadata.chunk_first_step = j.at("chunk_first_step").get<std::size_t>();
    pkg.metadata.drop_pose = j.at("drop_pose").get<bool>();
    pkg.metadata.drop_geo = j.at("drop_geo").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadRequest, std::string("bad package header: ") + e.what());
  }
  pkg.first_image = decode_pfm(first_image_pfm);
  pkg.geo_frames = decode_pfm_sequence(geo_frames_pfm);
  if (pkg.geo_frames.size() != j.at("geo_frame_count").get<std::size_t>()) {
    throw Error(ErrorCode::BadRequest, "geo frame count does not match header");
  }
  return pkg;
}

std::vector<ImageBuffer> RemoteGenerator::generate(const ConditionPackage& package,
                                                   std::stop_token stop) {
  httplib::Client client(base_url_);
  client.set_read_timeout(std::chrono::minutes(10));
  httplib::MultipartFormDataItems items = {
      {"package", package_header_json(package), "", "application/json"},
      {"first_image", encode_pfm(package.first_image), "first.pfm", "image/x-portable-floatmap"},
      {"geo_frames", encode_pfm_sequence(package.geo_frames), "geo.pfm",
       "image/x-portable-floatmap"},
  };

  auto pending = std::async(std::launch::async, [&] { return client.Post("/generate", items); });
  while (pending.wait_for(std::chrono::milliseconds(20)) != std::future_status::ready) {
    if (stop.stop_requested()) {
      client.stop();
      pending.wait();
      throw Error(ErrorCode::Cancelled, "remote generation cancelled");
    }
  }
  auto res = pending.get();
  if (!res) {
    throw Error(ErrorCode::BackendFailure,
                "remote backend unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::BackendFailure,
                "remote backend returned HTTP " + std::to_string(res->status), res->body);
  }
  return decode_pfm_sequence(res->body);
}

}  // namespace panorag::session
