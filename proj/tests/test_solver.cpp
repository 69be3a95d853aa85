#include <doctest.h>

#include "cmirror/denoiser.hpp"
#include "cmirror/errors.hpp"
#include "cmirror/solver.hpp"

#include <chrono>
#include <cmath>
#include <random>

using namespace cmirror;

namespace {

Image uniform(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  return Image::NullaryExpr(h, w, [&] { return u(rng); });
}

Image blocks(int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(y, x) = 0.2 + 0.6 * (((y / 6) + (x / 8)) % 2);
  return img;
}

SeidelConvModel blur_model(int h, int w, int n) {
  SeidelConvModel m(h, w, 5, 2, n);
  for (int k = 0; k < n; ++k)
    for (int q = 0; q < 2; ++q) {
      auto& c = m.component(k, q);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) c.kernel(i, j) = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / (1.0 + k + q));
      c.kernel /= c.kernel.sum();
      c.warp.t << 0.3 * q, -0.2 * k;
    }
  return m;
}

FocalStack render(const SeidelConvModel& m, const Image& truth, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, noise);
  FocalStack s;
  s.dz = 200;
  for (int k = 0; k < m.slices(); ++k)
    s.slices.push_back(forward(m, truth, k) + Image::NullaryExpr(truth.rows(), truth.cols(), [&] { return n(rng); }));
  return s;
}

std::string stub(const std::string& mode) { return std::string(CMIRROR_STUB) + " " + mode; }

DenoiserError::Kind failure_kind(const std::string& mode, double timeout) {
  SubprocessDenoiser d(stub(mode), timeout);
  try {
    d.denoise(Image::Constant(6, 7, 0.5), 0.01);
  } catch (const DenoiserError& e) {
    return e.kind();
  }
  FAIL("denoiser did not fail");
  return DenoiserError::Kind::spawn_failed;
}

} // namespace

TEST_CASE("tv prox trivial cases") {
  std::mt19937_64 rng(1);
  const Image x = uniform(12, 15, rng);
  CHECK((tv_prox(x, 0.0) == x).all());
  const Image c = Image::Constant(10, 10, 0.37);
  CHECK(((tv_prox(c, 5.0) - c).abs().maxCoeff()) < 1e-14);
}

TEST_CASE("tv prox flattens an impulse and keeps its mass") {
  Image x = Image::Zero(21, 21);
  x(10, 10) = 1;
  const Image p = tv_prox(x, 0.2, 200);
  CHECK(p(10, 10) < 1.0);
  CHECK(std::abs(p.sum() - 1.0) < 0.05);
}

TEST_CASE("tv prox lowers the prox objective") {
  std::mt19937_64 rng(2);
  const Image x = uniform(16, 16, rng);
  const double w = 0.05;
  const Image p = tv_prox(x, w);
  const double obj_p = 0.5 * (p - x).square().sum() + w * total_variation(p);
  CHECK(obj_p < w * total_variation(x));
  CHECK(std::abs(p.sum() - x.sum()) < 1e-9);
}

TEST_CASE("total variation oracle") {
  Image x(2, 2);
  x << 0, 3, 4, 0;
  // (0,0): dx 3, dy 4 → 5; (0,1): dy −3 → 3; (1,0): dx −4 → 4; (1,1): 0
  CHECK(total_variation(x) == doctest::Approx(12.0));
}

TEST_CASE("identity deconvolution returns the input") {
  std::mt19937_64 rng(3);
  const Image y = uniform(20, 24, rng);
  const SeidelConvModel m(20, 24, 3, 1, 1);
  FocalStack s;
  s.slices = {y};
  SolveConfig cfg;
  cfg.prior = Prior::none;
  cfg.iters = 10;
  cfg.init = InitKind::zeros;
  const SolveResult r = deconvolve(s, m, cfg);
  CHECK(((r.image - y).abs().maxCoeff()) < 1e-6);
}

TEST_CASE("logged objectives never increase") {
  const Image truth = blocks(32, 40);
  const SeidelConvModel m = blur_model(32, 40, 3);
  const FocalStack s = render(m, truth, 0.01, 4);
  for (Prior p : {Prior::none, Prior::l2, Prior::tv}) {
    SolveConfig cfg;
    cfg.prior = p;
    cfg.lambda = 1e-2;
    cfg.iters = 60;
    const SolveResult r = deconvolve(s, m, cfg);
    REQUIRE(r.loss_log.size() == 60u);
    for (std::size_t i = 1; i < r.loss_log.size(); ++i) CHECK(r.loss_log[i] <= r.loss_log[i - 1]);
    CHECK(r.step == doctest::Approx(0.9 / (2 * lipschitz_estimate(m, 30))).epsilon(1e-9));
  }
}

TEST_CASE("deconvolution sharpens a blurred stack") {
  const Image truth = blocks(32, 40);
  const SeidelConvModel m = blur_model(32, 40, 3);
  const FocalStack s = render(m, truth, 0.005, 5);
  SolveConfig cfg;
  cfg.lambda = 2e-3;
  cfg.iters = 150;
  const SolveResult r = deconvolve(s, m, cfg);
  double best = 1e9;
  for (const Image& sl : s.slices) best = std::min(best, (sl - truth).square().mean());
  CHECK((r.image - truth).square().mean() < 0.5 * best);
}

TEST_CASE("a huge tv weight flattens the result") {
  const Image truth = blocks(32, 40);
  const SeidelConvModel m = blur_model(32, 40, 3);
  const FocalStack s = render(m, truth, 0.01, 6);
  SolveConfig cfg;
  cfg.lambda = 1e4;
  cfg.iters = 100;
  cfg.tv_inner = 300;
  const SolveResult r = deconvolve(s, m, cfg);
  Image avg = Image::Zero(32, 40);
  for (const Image& sl : s.slices) avg += sl / 3.0;
  CHECK(total_variation(r.image) < 1e-2 * total_variation(avg));
}

TEST_CASE("initial estimates") {
  std::mt19937_64 rng(7);
  const Image a = uniform(16, 16, rng), b = uniform(16, 16, rng);
  CHECK(((initial_estimate({a, b}, InitKind::stack_average) - 0.5 * (a + b)).abs().maxCoeff()) < 1e-15);
  CHECK((initial_estimate({a, b}, InitKind::zeros) == 0.0).all());
  const Image blurred = gaussian_blur(a, 2.0);
  CHECK((initial_estimate({blurred, a}, InitKind::best_slice) == a).all());
}

TEST_CASE("solver input errors") {
  const SeidelConvModel m(8, 8, 3, 1, 2);
  FocalStack one;
  one.slices = {Image::Zero(8, 8)};
  CHECK_THROWS_AS(deconvolve(one, m, SolveConfig{}), InputError);
  FocalStack wrong;
  wrong.slices = {Image::Zero(8, 9), Image::Zero(8, 9)};
  CHECK_THROWS_AS(deconvolve(wrong, m, SolveConfig{}), InputError);
  SolveConfig bad;
  bad.iters = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = {};
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = {};
  bad.prior = Prior::pnp_external;
  FocalStack two;
  two.slices = {Image::Zero(8, 8), Image::Zero(8, 8)};
  CHECK_THROWS_AS(deconvolve(two, m, bad, nullptr), InputError);
  CHECK(parse_prior("pnp") == Prior::pnp_external);
  CHECK_THROWS_AS(parse_prior("dip"), InputError);
  CHECK_THROWS_AS(parse_init("middle"), InputError);
}

TEST_CASE("echo denoiser reduces pnp to the unregularized solver") {
  const Image truth = blocks(24, 28);
  const SeidelConvModel m = blur_model(24, 28, 2);
  const FocalStack s = render(m, truth, 0.01, 8);
  SolveConfig none;
  none.prior = Prior::none;
  none.iters = 50;
  SolveConfig pnp = none;
  pnp.prior = Prior::pnp_external;
  pnp.iters = 10;  // 10 × 5 data steps
  const Image ref = deconvolve(s, m, none).image;

  EchoDenoiser echo;
  CHECK(((deconvolve(s, m, pnp, &echo).image - ref).abs().maxCoeff()) < 1e-6);
  SubprocessDenoiser sub(stub("echo"));
  CHECK(((deconvolve(s, m, pnp, &sub).image - ref).abs().maxCoeff()) < 1e-6);
}

TEST_CASE("smoothing denoiser changes the pnp result") {
  const Image truth = blocks(24, 28);
  const SeidelConvModel m = blur_model(24, 28, 2);
  const FocalStack s = render(m, truth, 0.02, 9);
  SolveConfig cfg;
  cfg.prior = Prior::pnp_external;
  cfg.iters = 8;
  SmoothingDenoiser smooth;
  SubprocessDenoiser sub(stub("smooth"));
  const Image a = deconvolve(s, m, cfg, &smooth).image;
  const Image b = deconvolve(s, m, cfg, &sub).image;
  // the stub round-trips through float32
  CHECK(((a - b).abs().maxCoeff()) < 1e-4);
  EchoDenoiser echo;
  CHECK(((a - deconvolve(s, m, cfg, &echo).image).abs().maxCoeff()) > 1e-3);
}

TEST_CASE("denoiser protocol failures are typed") {
  CHECK(failure_kind("wrong-size", 10) == DenoiserError::Kind::wrong_dimensions);
  CHECK(failure_kind("malformed", 10) == DenoiserError::Kind::malformed_reply);
  CHECK(failure_kind("nan", 10) == DenoiserError::Kind::non_finite);
  CHECK(failure_kind("exit", 10) == DenoiserError::Kind::child_exited);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(failure_kind("hang", 0.5) == DenoiserError::Kind::timeout);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(5));
}

TEST_CASE("a broken denoiser stays broken") {
  SubprocessDenoiser d(stub("wrong-size"), 5);
  CHECK_THROWS_AS(d.denoise(Image::Zero(4, 4), 0.1), DenoiserError);
  CHECK_THROWS_AS(d.denoise(Image::Zero(4, 4), 0.1), DenoiserError);
  SubprocessDenoiser missing("/nonexistent/denoiser", 5);
  CHECK_THROWS_AS(missing.denoise(Image::Zero(4, 4), 0.1), DenoiserError);
}

TEST_CASE("the subprocess denoiser is reused across calls") {
  SubprocessDenoiser d(stub("echo"));
  std::mt19937_64 rng(10);
  for (int i = 0; i < 5; ++i) {
    const Image x = uniform(9 + i, 11, rng).cast<float>().cast<double>();
    CHECK((d.denoise(x, 0.01 * i) == x).all());
  }
}
