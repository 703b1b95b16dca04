#pragma once

#include <string>
#include <vector>

#include "panorag/session_engine.hpp"

namespace panorag::session {

/// Adapter for an out-of-process generator. One exchange per step:
///   POST {base_url}/generate, multipart/form-data with parts
///     "package"     JSON: relative poses (3x4 row-major), metadata
///     "first_image" PFM
///     "geo_frames"  back-to-back PFMs
///   200 response body: back-to-back PFMs, one per pose.
class RemoteGenerator final : public GeneratorBackend {
 public:
  RemoteGenerator(std::string base_url, BackendCapability caps = {});

  std::string id() const override { return "remote:" + base_url_; }
  BackendCapability capability() const override { return caps_; }
  std::vector<ImageBuffer> generate(const ConditionPackage& package,
                                    std::stop_token stop) override;

 private:
  std::string base_url_;
  BackendCapability caps_;
};

std::string package_header_json(const ConditionPackage& package);
ConditionPackage package_from_parts(const std::string& header_json,
                                    const std::string& first_image_pfm,
                                    const std::string& geo_frames_pfm);

}  // namespace panorag::session
