#include <doctest.h>

#include "cmirror/baselines.hpp"
#include "cmirror/denoiser.hpp"
#include "cmirror/errors.hpp"

#include <cmath>
#include <random>

using namespace cmirror;

namespace {

Image uniform(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  return Image::NullaryExpr(h, w, [&] { return u(rng); });
}

Kernel shift_kernel(int K, int dy, int dx) {
  Kernel k = Kernel::Zero(K, K);
  k(K / 2 + dy, K / 2 + dx) = 1;
  return k;
}

Kernel gaussian_kernel(int K, double s) {
  Kernel k(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) k(i, j) = std::exp(-((i - K / 2) * (i - K / 2) + (j - K / 2) * (j - K / 2)) / (2 * s * s));
  return k / k.sum();
}

// affine pairs with strong warps that no identity-warp model can express
std::vector<CalibPair> warped_pairs(int L, int size, std::mt19937_64& rng) {
  SeidelConvModel gen(size, size, 3, 1, 1);
  gen.component(0, 0).warp.R << 1.03, 0.02, -0.02, 0.97;
  gen.component(0, 0).warp.t << 2.5, -1.5;
  gen.component(0, 0).kernel = gaussian_kernel(3, 0.7);
  gen.component(0, 0).weight.setOnes();
  std::vector<CalibPair> pairs;
  for (int l = 0; l < L; ++l) {
    CalibPair p;
    p.target = gaussian_blur(uniform(size, size, rng), 0.8);
    p.stack.slices = {forward(gen, p.target, 0)};
    pairs.push_back(p);
  }
  return pairs;
}

} // namespace

TEST_CASE("coordgate of an identity-warp model is the same operator") {
  std::mt19937_64 rng(1);
  SeidelConvModel m(16, 18, 3, 2, 1);
  m.component(0, 1).kernel = gaussian_kernel(3, 0.8);
  m.component(0, 0).weight = uniform(16, 18, rng);
  const Image x = uniform(16, 18, rng);
  CHECK((forward(coordgate_model(m), x, 0) == forward(m, x, 0)).all());
  m.component(0, 1).warp.t << 1.5, 0;
  const SeidelConvModel cg = coordgate_model(m);
  CHECK(cg.component(0, 1).warp.is_identity());
  CHECK(cg.component(0, 1).kernel.isApprox(m.component(0, 1).kernel));
}

TEST_CASE("coordgate keeps warps fixed and fits worse under strong warps") {
  std::mt19937_64 rng(2);
  const auto pairs = warped_pairs(4, 32, rng);
  CalibConfig cfg;
  cfg.components = 2;
  cfg.kernel_size = 5;
  cfg.images = 4;
  cfg.batch = 4;
  cfg.epochs = 10;
  const FitResult short_fit = fit_coordgate(pairs, cfg);
  for (int q = 0; q < 2; ++q) CHECK(short_fit.model.component(0, q).warp.is_identity());

  cfg.epochs = 250;
  cfg.lr = 1e-2;
  cfg.lambda_kern = 0;
  const FitResult cg = fit_coordgate(pairs, cfg);
  const FitResult sc = fit_model(pairs, cfg);
  MESSAGE("coordgate " << cg.loss_log.back() << " seidelconv " << sc.loss_log.back());
  CHECK(cg.loss_log.back() > sc.loss_log.back());
}

TEST_CASE("crossfade weights partition each axis exactly") {
  for (int length : {20, 64, 97, 160})
    for (int tiles : {1, 2, 3, 5})
      for (int overlap : {0, 4, 10}) {
        if (length / tiles <= overlap) continue;
        const auto w = crossfade_weights(length, tiles, overlap);
        REQUIRE(w.size() == std::size_t(tiles));
        Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(length);
        for (const auto& t : w) {
          CHECK((t >= 0).all());
          CHECK(((t * 1024).round() == t * 1024).all());
          sum += t;
        }
        CHECK((sum == 1.0).all());
      }
  CHECK_THROWS_AS(crossfade_weights(20, 5, 10), InputError);
}

TEST_CASE("patchwise blend weights sum to one at every pixel") {
  const PatchwiseModel m(70, 90, 3, 4, 5);
  Image sum = Image::Zero(70, 90);
  for (int t = 0; t < m.tiles(); ++t) {
    const Image w = m.blend_weight(t);
    const auto s = m.support(t);
    // zero outside the support
    Image outside = w;
    outside.block(s.y0, s.x0, s.y1 - s.y0, s.x1 - s.x0).setZero();
    CHECK((outside == 0.0).all());
    sum += w;
  }
  CHECK((sum == 1.0).all());
  CHECK(m.overlap() == 4);
  CHECK_THROWS_AS(PatchwiseModel(10, 10, 4, 4, 5), InputError);
}

TEST_CASE("single-tile delta patchwise model is the identity") {
  std::mt19937_64 rng(3);
  const Image x = uniform(20, 25, rng);
  CHECK((patchwise_forward(PatchwiseModel(20, 25, 1, 1, 7), x) == x).all());
}

TEST_CASE("two tiles with different shifts blend in the overlap band") {
  std::mt19937_64 rng(4);
  PatchwiseModel m(10, 40, 1, 2, 5, 8);
  m.kernel(0) = shift_kernel(5, 0, 1);
  m.kernel(1) = shift_kernel(5, 0, -1);
  const Image x = uniform(10, 40, rng);
  const Image a = convolve(x, m.kernel(0)), b = convolve(x, m.kernel(1));
  const Image w0 = m.blend_weight(0), w1 = m.blend_weight(1);
  const Image y = patchwise_forward(m, x);
  CHECK(((y - (w0 * a + w1 * b)).abs().maxCoeff()) < 1e-12);
  CHECK((y.col(2) == a.col(2)).all());
  CHECK((y.col(37) == b.col(37)).all());
  // inside the band both contribute
  CHECK(w0(5, 20) > 0);
  CHECK(w1(5, 20) > 0);
}

TEST_CASE("patchwise adjoint and gradients") {
  std::mt19937_64 rng(5);
  PatchwiseModel m(24, 30, 2, 3, 3);
  for (int t = 0; t < m.tiles(); ++t) m.kernel(t) = uniform(3, 3, rng);
  const Image x = uniform(24, 30, rng), y = uniform(24, 30, rng);
  CHECK((patchwise_forward(m, x) * y).sum() == doctest::Approx((x * patchwise_adjoint(m, y)).sum()).epsilon(1e-12));

  const Image target = uniform(24, 30, rng);
  const auto g = patchwise_gradients(m, x, patchwise_forward(m, x) - target);
  auto loss = [&](const PatchwiseModel& mm) { return 0.5 * (patchwise_forward(mm, x) - target).square().sum(); };
  for (int t = 0; t < m.tiles(); ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        PatchwiseModel p = m, n = m;
        p.kernel(t)(i, j) += 1e-6;
        n.kernel(t)(i, j) -= 1e-6;
        CHECK(g[t](i, j) == doctest::Approx((loss(p) - loss(n)) / 2e-6).epsilon(1e-5));
      }
}

TEST_CASE("patchwise fit of a uniform blur recovers the kernel in every tile") {
  std::mt19937_64 rng(6);
  const Kernel k = gaussian_kernel(5, 1.0);
  std::vector<CalibPair> pairs;
  for (int l = 0; l < 4; ++l) {
    CalibPair p;
    p.target = uniform(48, 48, rng);
    p.stack.slices = {convolve(p.target, k)};
    pairs.push_back(p);
  }
  PatchwiseConfig cfg;
  cfg.tiles_y = 2;
  cfg.tiles_x = 2;
  cfg.kernel_size = 5;
  cfg.epochs = 300;
  cfg.lr = 1e-2;
  cfg.lambda_kern = 0;
  const PatchwiseFit fit = patchwise_fit(pairs, cfg);
  REQUIRE(fit.slices.size() == 1u);
  double worst = 0;
  for (int t = 0; t < 4; ++t) worst = std::max(worst, std::sqrt((fit.slices[0].kernel(t) - k).square().mean()));
  CHECK(worst < 0.02);
}

TEST_CASE("stack average") {
  std::mt19937_64 rng(7);
  FocalStack one;
  one.slices = {uniform(5, 6, rng)};
  CHECK((stack_average(one) == one.slices[0]).all());
  FocalStack two;
  two.slices = {Image::Zero(5, 6), Image::Ones(5, 6)};
  CHECK((stack_average(two) == 0.5).all());
  FocalStack many;
  for (int k = 0; k < 5; ++k) many.slices.push_back(uniform(7, 9, rng));
  const Image avg = stack_average(many);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      double s = 0;
      for (int k = 0; k < 5; ++k) s += many.slices[k](y, x);
      CHECK(avg(y, x) == doctest::Approx(s / 5).epsilon(1e-14));
    }
}

TEST_CASE("petzval composite of identical slices is that slice") {
  std::mt19937_64 rng(8);
  const Image s = uniform(30, 30, rng);
  FocalStack st;
  st.slices = {s, s, s};
  const Image c = petzval_composite(st, 7);
  CHECK(((c - s).block(3, 3, 24, 24).abs().maxCoeff()) < 1e-12);
  FocalStack one;
  one.slices = {s};
  CHECK_THROWS_AS(petzval_composite(one, 7), InputError);
}

TEST_CASE("petzval composite picks the sharp half of each slice") {
  std::mt19937_64 rng(9);
  const Image sharp = uniform(40, 60, rng);
  const Image soft = gaussian_blur(sharp, 2.5);
  FocalStack st;
  st.slices.resize(3);
  st.slices[0] = soft;
  st.slices[0].leftCols(30) = sharp.leftCols(30);
  st.slices[1] = soft;
  st.slices[2] = soft;
  st.slices[2].rightCols(30) = sharp.rightCols(30);
  const Image c = petzval_composite(st, 7);
  // seam = 3 px of feathering plus the focus window half-width
  const int seam = 3 + 3;
  CHECK(((c - sharp).block(0, 0, 40, 30 - seam).abs().maxCoeff()) < 1e-12);
  CHECK(((c - sharp).block(0, 30 + seam, 40, 30 - seam).abs().maxCoeff()) < 1e-12);

  const Image fc = focus_measure(c, 7);
  for (const Image& sl : st.slices) {
    const Image fs = focus_measure(sl, 7);
    CHECK((fc >= fs - 1e-12).cast<double>().mean() >= 0.9);
  }
  auto masks = petzval_masks(st, 7);
  Image sum = Image::Zero(40, 60);
  for (const Image& m : masks) sum += m;
  CHECK(((sum - 1).abs().maxCoeff()) < 1e-12);
}

TEST_CASE("single-image baseline takes the slice focused at the center") {
  std::mt19937_64 rng(10);
  const Image sharp = uniform(48, 64, rng);
  const Image soft = gaussian_blur(sharp, 2.5);
  // slice 0: sharp only in the center; slice 1: sharp everywhere else, more sharp pixels overall
  FocalStack st;
  st.slices = {soft, sharp};
  st.slices[0].block(12, 16, 24, 32) = sharp.block(12, 16, 24, 32);
  st.slices[1].block(12, 16, 24, 32) = soft.block(12, 16, 24, 32);
  CHECK(sharpest_slice(st, 7) == 0);
  st.slices = {soft, sharp, sharp};
  CHECK(sharpest_slice(st, 7) == 1);
}

TEST_CASE("default patch grid") {
  CHECK(default_patch_grid(512, 640) == Eigen::Vector2i(8, 10));
  CHECK(default_patch_grid(128, 160) == Eigen::Vector2i(4, 5));
  CHECK(default_patch_grid(64, 64) == Eigen::Vector2i(2, 2));
  CHECK(default_patch_grid(20, 20) == Eigen::Vector2i(1, 1));
}
