#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "panorag/image.hpp"

namespace panorag::metrics {

/// Reported PSNR for identical images (zero MSE).
inline constexpr double kPsnrCap = 99.0;

/// SSIM constants (data range 1): K1 = 0.01, K2 = 0.03, 11x11 Gaussian
/// window with sigma 1.5.
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr int kSsimRadius = 5;
inline constexpr double kSsimSigma = 1.5;

/// Dynamic-pixel mask: single channel, value > 0.5 marks a pixel as dynamic
/// (excluded from static metrics).

/// 10 log10(1 / MSE) over pixels not marked dynamic, capped at kPsnrCap.
/// Throws Error(DimMismatch) / Error(AllMasked).
double psnr(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask = nullptr);

/// Mean local SSIM over all full windows whose center pixel is not masked,
/// averaged over channels. Throws Error(DimMismatch) / Error(TooSmall) /
/// Error(AllMasked).
double ssim(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask = nullptr);

struct VideoMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t frames_used = 0;
  std::vector<std::string> warnings;  // one per skipped frame
};

/// Per-frame metrics averaged over frames. With masks, frames whose mask
/// covers every pixel are skipped with a warning; if all are skipped,
/// Error(AllMasked). `masks` empty means unmasked.
VideoMetrics video_metrics(std::span<const ImageBuffer> gen, std::span<const ImageBuffer> gt,
                           std::span<const ImageBuffer> masks = {});

/// Static-masked variant; masks come from the ground-truth segmentation.
VideoMetrics masked_video_metrics(std::span<const ImageBuffer> gen,
                                  std::span<const ImageBuffer> gt,
                                  std::span<const ImageBuffer> masks);

struct FidResult {
  double fid = 0.0;
  bool regularized = false;  // 1e-6 I added because n <= d
  double sqrt_residual = 0.0;
};

/// Frechet distance between Gaussian fits of two feature sets (rows are
/// samples). Throws Error(DimMismatch) / Error(SqrtNonConvergence) /
/// Error(BadRequest) for fewer than 2 rows.
FidResult fid_from_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen);

/// Feature file: little-endian uint32 n, uint32 d, then n*d float32 row-major.
Eigen::MatrixXd read_features(const std::filesystem::path& path);
Eigen::MatrixXd read_features(std::istream& in);
void write_features(const std::filesystem::path& path, const Eigen::MatrixXd& features);

struct MetricReport {
  std::optional<double> psnr, ssim, psnr_s, ssim_s, fid;
  bool fid_regularized = false;
  std::size_t frames = 0;
  std::size_t static_frames = 0;
  std::vector<std::string> warnings;

  /// "key = value" lines.
  std::string to_text() const;
};

}  // namespace panorag::metrics
