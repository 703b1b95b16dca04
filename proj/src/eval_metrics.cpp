#include "panorag/eval_metrics.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "panorag/error.hpp"

namespace panorag::metrics {
namespace {

void check_pair(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels ||
      a.data.size() != b.data.size()) {
    throw Error(ErrorCode::DimMismatch, "images differ in size");
  }
  if (mask != nullptr && (mask->width != a.width || mask->height != a.height)) {
    throw Error(ErrorCode::DimMismatch, "mask differs in size from the image");
  }
}

bool is_dynamic(const ImageBuffer* mask, std::size_t pixel) {
  return mask != nullptr && mask->data[pixel * mask->channels] > 0.5f;
}

std::array<double, 2 * kSsimRadius + 1> gaussian_window() {
  std::array<double, 2 * kSsimRadius + 1> w{};
  double sum = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    w[std::size_t(i + kSsimRadius)] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
    sum += w[std::size_t(i + kSsimRadius)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable weighted mean over every full window; output is
// (w - 2r) x (h - 2r), indexed by window center minus r.
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h) {
  static const auto kernel = gaussian_window();
  const int ow = w - 2 * kSsimRadius;
  const int oh = h - 2 * kSsimRadius;
  std::vector<double> rows(std::size_t(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * kSsimRadius; ++k) {
        acc += kernel[std::size_t(k)] * img[std::size_t(y) * w + x + k];
      }
      rows[std::size_t(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(std::size_t(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * kSsimRadius; ++k) {
        acc += kernel[std::size_t(k)] * rows[std::size_t(y + k) * ow + x];
      }
      out[std::size_t(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask) {
  check_pair(a, b, mask);
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t pixels = a.pixel_count();
  for (std::size_t p = 0; p < pixels; ++p) {
    if (is_dynamic(mask, p)) continue;
    for (int c = 0; c < a.channels; ++c) {
      const double d = double(a.data[p * a.channels + c]) - double(b.data[p * a.channels + c]);
      sum += d * d;
    }
    count += std::size_t(a.channels);
  }
  if (count == 0) throw Error(ErrorCode::AllMasked, "every pixel is masked");
  const double mse = sum / double(count);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask) {
  check_pair(a, b, mask);
  if (a.width < 2 * kSsimRadius + 1 || a.height < 2 * kSsimRadius + 1) {
    throw Error(ErrorCode::TooSmall, "image smaller than the SSIM window");
  }
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const int w = a.width;
  const int h = a.height;
  const int ow = w - 2 * kSsimRadius;
  const int oh = h - 2 * kSsimRadius;

  std::vector<double> sum(std::size_t(ow) * oh, 0.0);
  std::vector<double> x(std::size_t(w) * h), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
  for (int c = 0; c < a.channels; ++c) {
    for (std::size_t p = 0; p < x.size(); ++p) {
      x[p] = a.data[p * a.channels + c];
      y[p] = b.data[p * a.channels + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, w, h);
    const auto my = filter_valid(y, w, h);
    const auto mxx = filter_valid(xx, w, h);
    const auto myy = filter_valid(yy, w, h);
    const auto mxy = filter_valid(xy, w, h);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cov = mxy[i] - mx[i] * my[i];
      sum[i] += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
  }

  double total = 0.0;
  std::size_t centers = 0;
  for (int cy = 0; cy < oh; ++cy) {
    for (int cx = 0; cx < ow; ++cx) {
      const std::size_t center = std::size_t(cy + kSsimRadius) * w + (cx + kSsimRadius);
      if (is_dynamic(mask, center)) continue;
      total += sum[std::size_t(cy) * ow + cx];
      ++centers;
    }
  }
  if (centers == 0) throw Error(ErrorCode::AllMasked, "every SSIM window center is masked");
  return total / (double(centers) * a.channels);
}

VideoMetrics video_metrics(std::span<const ImageBuffer> gen, std::span<const ImageBuffer> gt,
                           std::span<const ImageBuffer> masks) {
  if (gen.size() != gt.size() || (!masks.empty() && masks.size() != gt.size())) {
    throw Error(ErrorCode::DimMismatch, "frame counts differ");
  }
  if (gen.empty()) throw Error(ErrorCode::BadRequest, "no frames to evaluate");
  VideoMetrics out;
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  for (std::size_t k = 0; k < gen.size(); ++k) {
    const ImageBuffer* mask = masks.empty() ? nullptr : &masks[k];
    try {
      const double p = psnr(gen[k], gt[k], mask);
      const double s = ssim(gen[k], gt[k], mask);
      psnr_sum += p;
      ssim_sum += s;
      ++out.frames_used;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllMasked) throw;
      out.warnings.push_back("frame " + std::to_string(k) + " skipped: fully dynamic");
    }
  }
  if (out.frames_used == 0) throw Error(ErrorCode::AllMasked, "every frame is fully masked");
  out.psnr = psnr_sum / double(out.frames_used);
  out.ssim = ssim_sum / double(out.frames_used);
  return out;
}

VideoMetrics masked_video_metrics(std::span<const ImageBuffer> gen,
                                  std::span<const ImageBuffer> gt,
                                  std::span<const ImageBuffer> masks) {
  if (masks.size() != gt.size()) throw Error(ErrorCode::DimMismatch, "one mask per frame required");
  return video_metrics(gen, gt, masks);
}

namespace {

struct SqrtResult {
  Eigen::MatrixXd root;
  double residual = 0.0;
};

// Square root of a symmetric positive semi-definite matrix; round-off
// negative eigenvalues are clamped to zero.
SqrtResult sqrt_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorCode::SqrtNonConvergence, "eigendecomposition did not converge");
  }
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  SqrtResult r;
  r.root = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
  const double scale = sym.norm();
  r.residual = scale > 0.0 ? (r.root * r.root - sym).norm() / scale : 0.0;
  return r;
}

}  // namespace

FidResult fid_from_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen) {
  if (real.cols() != gen.cols()) throw Error(ErrorCode::DimMismatch, "feature dimensions differ");
  if (real.rows() < 2 || gen.rows() < 2) {
    throw Error(ErrorCode::BadRequest, "need at least two feature rows per set");
  }
  const Eigen::Index d = real.cols();
  FidResult out;

  auto moments = [&](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / double(x.rows() - 1);
    if (x.rows() <= d) {
      cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
      out.regularized = true;
    }
  };
  Eigen::VectorXd mu_r, mu_g;
  Eigen::MatrixXd cov_r, cov_g;
  moments(real, mu_r, cov_r);
  moments(gen, mu_g, cov_g);

  // tr sqrt(Sr Sg) = tr sqrt(Sr^1/2 Sg Sr^1/2), the latter being symmetric.
  const SqrtResult half = sqrt_psd(cov_r);
  const SqrtResult cross = sqrt_psd(half.root * cov_g * half.root);
  out.sqrt_residual = std::max(half.residual, cross.residual);
  if (!(out.sqrt_residual < 1e-8)) {
    throw Error(ErrorCode::SqrtNonConvergence, "matrix square root residual too large");
  }

  const double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() -
                       2.0 * cross.root.trace();
  const double tol = 1e-9 * (1.0 + cov_r.trace() + cov_g.trace() + (mu_r - mu_g).squaredNorm());
  if (value < -tol) throw Error(ErrorCode::Internal, "negative Frechet distance");
  out.fid = std::max(0.0, value);
  return out;
}

Eigen::MatrixXd read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open feature file " + path.string());
  return read_features(in);
}

Eigen::MatrixXd read_features(std::istream& in) {
  auto read_u32 = [&] {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw Error(ErrorCode::ParseError, "truncated feature header");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  };
  const std::uint32_t n = read_u32();
  const std::uint32_t d = read_u32();
  Eigen::MatrixXd out(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      if (!in) throw Error(ErrorCode::ParseError, "truncated feature data");
      const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                 std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
      out(i, j) = std::bit_cast<float>(bits);
    }
  }
  return out;
}

void write_features(const std::filesystem::path& path, const Eigen::MatrixXd& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::FileNotFound, "cannot write feature file " + path.string());
  auto put_u32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(std::uint32_t(features.rows()));
  put_u32(std::uint32_t(features.cols()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      put_u32(std::bit_cast<std::uint32_t>(float(features(i, j))));
    }
  }
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(10);
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) out << key << " = " << *v << "\n";
  };
  out << "frames = " << frames << "\n";
  put("psnr", psnr);
  put("ssim", ssim);
  if (psnr_s) out << "static_frames = " << static_frames << "\n";
  put("psnr_s", psnr_s);
  put("ssim_s", ssim_s);
  put("fid", fid);
  if (fid) out << "fid_regularized = " << (fid_regularized ? "true" : "false") << "\n";
  out << "psnr_cap_db = " << kPsnrCap << "\n";
  for (const auto& w : warnings) out << "warning = " << w << "\n";
  return out.str();
}

}  // namespace panorag::metrics
