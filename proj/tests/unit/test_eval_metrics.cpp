#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "panorag/error.hpp"
#include "panorag/eval_metrics.hpp"
#include "test_util.hpp"

using namespace panorag;
using namespace panorag::metrics;

namespace {

// Values computed with scikit-image 0.25 (structural_similarity with
// gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
// data_range=1; peak_signal_noise_ratio with data_range=1) on
// a = hash_image(w, h, seed), b = blend(a, hash_image(w, h, seed + 1000)).
struct Frozen {
  std::uint32_t seed;
  int w, h;
  double ssim, psnr;
};
constexpr Frozen kFrozen[] = {
    {1, 24, 20, 0.8906189489270613, 18.155237764608728},
    {2, 32, 16, 0.8818527956689098, 18.306969545244552},
    {3, 17, 13, 0.8900861270093947, 18.39551798137226},
    {4, 40, 30, 0.8833543602987793, 18.13954885544926},
};

ImageBuffer random_mask(std::mt19937_64& rng, int w, int h, double p) {
  std::bernoulli_distribution b(p);
  ImageBuffer m(w, h, 1);
  for (auto& v : m.data) v = b(rng) ? 1.0f : 0.0f;
  return m;
}

}  // namespace

TEST_SUITE("eval_metrics") {
  TEST_CASE("matches frozen scikit-image values") {
    for (const auto& f : kFrozen) {
      const auto a = testutil::hash_image(f.w, f.h, f.seed);
      const auto b = testutil::blend(a, testutil::hash_image(f.w, f.h, f.seed + 1000));
      CHECK(ssim(a, b) == doctest::Approx(f.ssim).epsilon(1e-9));
      CHECK(psnr(a, b) == doctest::Approx(f.psnr).epsilon(1e-9));
      // The direct-window oracle agrees with the frozen values too.
      CHECK(oracle::ssim(a, b) == doctest::Approx(f.ssim).epsilon(1e-9));
    }
  }

  TEST_CASE("matches the direct-window oracle, with and without masks") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
      const auto a = testutil::random_image(rng, 30, 22);
      const auto b = testutil::random_image(rng, 30, 22);
      CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b)) < 1e-9);
      CHECK(std::abs(psnr(a, b) - oracle::psnr(a, b)) < 1e-9);
      const auto m = random_mask(rng, 30, 22, 0.3);
      CHECK(std::abs(ssim(a, b, &m) - oracle::ssim(a, b, &m)) < 1e-9);
      CHECK(std::abs(psnr(a, b, &m) - oracle::psnr(a, b, &m)) < 1e-9);
    }
  }

  TEST_CASE("identical images") {
    std::mt19937_64 rng(2);
    const auto a = testutil::random_image(rng, 16, 16);
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("empty mask equals unmasked bit for bit") {
    std::mt19937_64 rng(3);
    const auto a = testutil::random_image(rng, 20, 15);
    const auto b = testutil::random_image(rng, 20, 15);
    const ImageBuffer empty(20, 15, 1, 0.0f);
    CHECK(psnr(a, b, &empty) == psnr(a, b));
    CHECK(ssim(a, b, &empty) == ssim(a, b));
  }

  TEST_CASE("errors") {
    const ImageBuffer a(20, 20, 3, 0.5f), b(21, 20, 3, 0.5f), tiny(10, 10, 3, 0.5f);
    const ImageBuffer full(20, 20, 1, 1.0f);
    auto code_of = [](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return ErrorCode::Internal;
    };
    CHECK(code_of([&] { psnr(a, b); }) == ErrorCode::DimMismatch);
    CHECK(code_of([&] { ssim(tiny, tiny); }) == ErrorCode::TooSmall);
    CHECK(code_of([&] { psnr(a, a, &full); }) == ErrorCode::AllMasked);
    CHECK(code_of([&] { ssim(a, a, &full); }) == ErrorCode::AllMasked);
  }

  TEST_CASE("video metrics skip fully dynamic frames") {
    std::mt19937_64 rng(4);
    std::vector<ImageBuffer> gen, gt, masks;
    for (int i = 0; i < 3; ++i) {
      gen.push_back(testutil::random_image(rng, 16, 16));
      gt.push_back(testutil::random_image(rng, 16, 16));
      masks.push_back(ImageBuffer(16, 16, 1, i == 1 ? 1.0f : 0.0f));
    }
    const auto v = masked_video_metrics(gen, gt, masks);
    CHECK(v.frames_used == 2);
    CHECK(v.warnings.size() == 1);
    CHECK(v.psnr == doctest::Approx((psnr(gen[0], gt[0]) + psnr(gen[2], gt[2])) / 2.0));
    std::vector<ImageBuffer> all(3, ImageBuffer(16, 16, 1, 1.0f));
    CHECK_THROWS_AS(masked_video_metrics(gen, gt, all), Error);
    CHECK_THROWS_AS(video_metrics(gen, std::span(gt).first(2)), Error);
  }

  TEST_CASE("FID") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd x(200, 6), y(150, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 0.5 + 1.3 * g(rng);
    CHECK(std::abs(fid_from_features(x, x).fid) <= 1e-6);
    const auto r = fid_from_features(x, y);
    CHECK_FALSE(r.regularized);
    CHECK(r.fid == doctest::Approx(oracle::fid(x, y)).epsilon(1e-8));

    // n <= d regularizes.
    Eigen::MatrixXd small = x.topRows(4);
    const auto reg = fid_from_features(small, y.topRows(5));
    CHECK(reg.regularized);
    CHECK(reg.fid == doctest::Approx(oracle::fid(small, y.topRows(5))).epsilon(1e-6));

    Eigen::MatrixXd a1(50, 1), b1(60, 1);
    for (Eigen::Index i = 0; i < a1.rows(); ++i) a1(i) = g(rng);
    for (Eigen::Index i = 0; i < b1.rows(); ++i) b1(i) = 2.0 + 3.0 * g(rng);
    auto sd = [](const Eigen::MatrixXd& v) {
      const double m = v.mean();
      return std::sqrt((v.array() - m).square().sum() / double(v.rows() - 1));
    };
    const double closed = std::pow(a1.mean() - b1.mean(), 2) + std::pow(sd(a1) - sd(b1), 2);
    CHECK(std::abs(fid_from_features(a1, b1).fid - closed) < 1e-9);

    CHECK_THROWS_AS(fid_from_features(x, Eigen::MatrixXd(5, 3)), Error);
    CHECK_THROWS_AS(fid_from_features(x.topRows(1), y), Error);
  }

  TEST_CASE("feature files") {
    testutil::TempDir dir("feat");
    Eigen::MatrixXd m(3, 2);
    m << 1.5, -2.0, 0.25, 8.0, 1e-3, 7.0;
    write_features(dir / "f.bin", m);
    CHECK(std::filesystem::file_size(dir / "f.bin") == 8 + 6 * 4);
    const auto back = read_features(dir / "f.bin");
    CHECK(back.rows() == 3);
    CHECK(back.cols() == 2);
    CHECK((back - m).cwiseAbs().maxCoeff() < 1e-7);
    CHECK_THROWS_AS(read_features(dir / "missing.bin"), Error);
  }

  TEST_CASE("report text") {
    MetricReport r;
    r.psnr = 20.0;
    r.fid = 1.5;
    r.frames = 3;
    const auto text = r.to_text();
    CHECK(text.find("psnr = 20") != std::string::npos);
    CHECK(text.find("fid = 1.5") != std::string::npos);
    CHECK(text.find("ssim =") == std::string::npos);
  }
}
