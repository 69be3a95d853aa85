#include <doctest.h>

#include "cmirror/errors.hpp"
#include "cmirror/operators.hpp"
#include "cmirror/seidelconv.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace cmirror;

namespace {

Image noise(int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Image::NullaryExpr(h, w, [&] { return n(rng); });
}

double dot(const Image& a, const Image& b) { return (a * b).sum(); }

// naive oracles, written directly from the definitions
double at_clamped(const Image& img, long y, long x) {
  y = std::clamp<long>(y, 0, img.rows() - 1);
  x = std::clamp<long>(x, 0, img.cols() - 1);
  return img(y, x);
}

Image naive_convolve(const Image& img, const Kernel& k) {
  const long r = k.rows() / 2;
  Image out = Image::Zero(img.rows(), img.cols());
  for (long y = 0; y < img.rows(); ++y)
    for (long x = 0; x < img.cols(); ++x)
      for (long i = -r; i <= r; ++i)
        for (long j = -r; j <= r; ++j) out(y, x) += k(r + i, r + j) * at_clamped(img, y - i, x - j);
  return out;
}

double naive_bilinear(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, double(img.cols() - 1));
  y = std::clamp(y, 0.0, double(img.rows() - 1));
  const long x0 = long(std::floor(x)), y0 = long(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * at_clamped(img, y0, x0) + fx * at_clamped(img, y0, x0 + 1)) +
         fy * ((1 - fx) * at_clamped(img, y0 + 1, x0) + fx * at_clamped(img, y0 + 1, x0 + 1));
}

Image naive_warp(const Image& img, const AffineWarp& w) {
  const Eigen::Vector2d c((img.cols() - 1) / 2.0, (img.rows() - 1) / 2.0);
  Image out(img.rows(), img.cols());
  for (long y = 0; y < img.rows(); ++y)
    for (long x = 0; x < img.cols(); ++x) {
      const Eigen::Vector2d s = w.R * (Eigen::Vector2d(x, y) - c) + w.t + c;
      out(y, x) = naive_bilinear(img, s.x(), s.y());
    }
  return out;
}

SeidelConvModel random_model(int h, int w, int K, int Q, int N, int ds, std::mt19937_64& rng) {
  SeidelConvModel m(h, w, K, Q, N, ds);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int k = 0; k < N; ++k)
    for (int q = 0; q < Q; ++q) {
      auto& c = m.component(k, q);
      c.warp.R(0, 0) = 1 + 0.03 * n(rng);
      c.warp.R(1, 1) = 1 + 0.03 * n(rng);
      c.warp.R(0, 1) = 0.03 * n(rng);
      c.warp.R(1, 0) = 0.03 * n(rng);
      // keep sample points off the integer grid so finite differences stay smooth
      c.warp.t = Eigen::Vector2d(0.37 + 0.2 * n(rng), -0.21 + 0.2 * n(rng));
      c.kernel = Kernel::NullaryExpr(K, K, [&] { return u(rng); });
      c.kernel /= c.kernel.sum();
      c.weight = Image::NullaryExpr(c.weight.rows(), c.weight.cols(), [&] { return u(rng); });
    }
  return m;
}

} // namespace

TEST_CASE("convolve matches the direct sum") {
  std::mt19937_64 rng(1);
  const Image img = noise(9, 12, rng);
  for (int K : {1, 3, 5}) {
    const Kernel k = noise(K, K, rng);
    CHECK(((convolve(img, k) - naive_convolve(img, k)).abs().maxCoeff()) < 1e-12);
  }
}

TEST_CASE("convolve is a true convolution") {
  Image img = Image::Zero(7, 7);
  img(3, 3) = 1;
  Kernel k = Kernel::Zero(3, 3);
  k(0, 2) = 1;  // offset (−1, +1)
  const Image out = convolve(img, k);
  CHECK(out(2, 4) == 1.0);
  CHECK(out.sum() == 1.0);
  CHECK((convolve(img, delta_kernel(5)) == img).all());
}

TEST_CASE("warp matches the bilinear oracle") {
  std::mt19937_64 rng(2);
  const Image img = noise(10, 13, rng);
  AffineWarp w;
  w.R << 1.05, 0.1, -0.07, 0.93;
  w.t << 1.3, -2.4;
  CHECK(((warp(img, w) - naive_warp(img, w)).abs().maxCoeff()) < 1e-12);
  CHECK((warp(img, AffineWarp::identity()) == img).all());
}

TEST_CASE("integer translations shift and replicate") {
  Image img(5, 6);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = double(i);
  AffineWarp w;
  w.t << 2, 0;
  const Image out = warp(img, w);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(out(y, x) == img(y, x + 2));
    CHECK(out(y, 5) == img(y, 5));
  }
}

TEST_CASE("adjoints pass the dot-product test") {
  std::mt19937_64 rng(3);
  const int h = 11, w = 14;
  const Image x = noise(h, w, rng), y = noise(h, w, rng);

  AffineWarp a;
  a.R << 0.9, 0.2, -0.15, 1.1;
  a.t << 2.7, -1.2;
  CHECK(dot(warp(x, a), y) == doctest::Approx(dot(x, warp_adjoint(y, a))).epsilon(1e-12));

  const Kernel k = noise(5, 5, rng);
  CHECK(dot(convolve(x, k), y) == doctest::Approx(dot(x, convolve_adjoint(y, k))).epsilon(1e-12));

  const Image padded = pad_replicate(x, 3);
  const Image yp = noise(padded.rows(), padded.cols(), rng);
  CHECK(dot(padded, yp) == doctest::Approx(dot(x, fold_replicate(yp, 3))).epsilon(1e-12));

  for (int f : {2, 3, 5}) {
    const int gh = (h - 1 + f - 1) / f + 1, gw = (w - 1 + f - 1) / f + 1;
    const Image g = noise(gh, gw, rng);
    const Image up = upsample_weight(g, f, h, w);
    REQUIRE(up.rows() == h);
    CHECK(dot(up, y) == doctest::Approx(dot(g, upsample_weight_adjoint(y, f, gh, gw))).epsilon(1e-12));
  }

  for (int ds : {1, 4}) {
    const SeidelConvModel m = random_model(h, w, 5, 3, 2, ds, rng);
    for (int k2 = 0; k2 < 2; ++k2)
      CHECK(dot(forward(m, x, k2), y) == doctest::Approx(dot(x, adjoint(m, y, k2))).epsilon(1e-12));
  }
}

TEST_CASE("identity model reproduces its input") {
  std::mt19937_64 rng(4);
  const Image x = noise(8, 9, rng);
  for (int Q : {1, 4}) {
    const SeidelConvModel m(8, 9, 5, Q, 2);
    CHECK(((forward(m, x, 1) - x).abs().maxCoeff()) < 1e-12);
  }
  // coarse weight grids of a constant also reproduce constants exactly
  const SeidelConvModel coarse(8, 9, 3, 2, 1, 4);
  CHECK(((forward(coarse, x, 0) - x).abs().maxCoeff()) < 1e-12);
}

TEST_CASE("forward is linear and matches a component-wise oracle") {
  std::mt19937_64 rng(5);
  const SeidelConvModel m = random_model(10, 12, 3, 3, 1, 1, rng);
  const Image a = noise(10, 12, rng), b = noise(10, 12, rng);
  const Image lhs = forward(m, 2.0 * a - 0.5 * b, 0);
  const Image rhs = 2.0 * forward(m, a, 0) - 0.5 * forward(m, b, 0);
  CHECK(((lhs - rhs).abs().maxCoeff()) < 1e-10);

  Image oracle = Image::Zero(10, 12);
  for (int q = 0; q < 3; ++q) {
    const auto& c = m.component(0, q);
    oracle += c.weight * naive_convolve(naive_warp(a, c.warp), c.kernel);
  }
  CHECK(((forward(m, a, 0) - oracle).abs().maxCoeff()) < 1e-12);
}

TEST_CASE("parameter gradients agree with finite differences") {
  std::mt19937_64 rng(6);
  const int h = 9, w = 10, K = 3, Q = 2;
  for (int ds : {1, 3}) {
    const SeidelConvModel m = random_model(h, w, K, Q, 1, ds, rng);
    const Image x = noise(h, w, rng), target = noise(h, w, rng);
    const double lam = 0.01;
    auto loss = [&](const SeidelConvModel& mm) {
      double l1 = 0;
      for (int q = 0; q < Q; ++q) l1 += mm.component(0, q).kernel.abs().sum();
      return 0.5 * (forward(mm, x, 0) - target).square().sum() + lam * l1;
    };
    const SliceGradient g = param_gradients(m, x, forward(m, x, 0) - target, 0, lam);
    REQUIRE(g.size() == std::size_t(Q));
    const double eps = 1e-6;
    auto fd = [&](auto&& poke) {
      SeidelConvModel p = m, n = m;
      poke(p, eps);
      poke(n, -eps);
      return (loss(p) - loss(n)) / (2 * eps);
    };
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-5 * std::max(1.0, std::abs(b)); };
    for (int q = 0; q < Q; ++q) {
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          CHECK(close(g[q].dR(i, j), fd([&](SeidelConvModel& mm, double e) { mm.component(0, q).warp.R(i, j) += e; })));
      for (int i = 0; i < 2; ++i)
        CHECK(close(g[q].dt(i), fd([&](SeidelConvModel& mm, double e) { mm.component(0, q).warp.t(i) += e; })));
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
          CHECK(close(g[q].dkernel(i, j), fd([&](SeidelConvModel& mm, double e) { mm.component(0, q).kernel(i, j) += e; })));
      const Image& wg = m.component(0, q).weight;
      REQUIRE(g[q].dweight.rows() == wg.rows());
      for (long i = 0; i < wg.rows(); ++i)
        for (long j = 0; j < wg.cols(); ++j)
          CHECK(close(g[q].dweight(i, j), fd([&](SeidelConvModel& mm, double e) { mm.component(0, q).weight(i, j) += e; })));
    }
  }
}

TEST_CASE("lipschitz estimate bounds the normal operator") {
  std::mt19937_64 rng(7);
  const SeidelConvModel m = random_model(12, 12, 3, 3, 2, 1, rng);
  const double L = lipschitz_estimate(m, 50);
  SeidelConvOperator op(m);
  CHECK(L == doctest::Approx(lipschitz_estimate(op, 50)).epsilon(1e-9));
  for (int t = 0; t < 10; ++t) {
    const Image x = noise(12, 12, rng);
    const double ratio = dot(normal_apply(op, x), x) / dot(x, x);
    CHECK(ratio <= L * (1 + 1e-6));
  }
  CHECK(lipschitz_estimate(SeidelConvModel(8, 8, 3, 2, 3), 30) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("projection keeps warps admissible") {
  AffineBounds b;
  AffineWarp w;
  w.R << 2, 0, 0, 2;
  w.t << 30, 40;
  project_affine(w, b);
  CHECK(std::abs(w.R.determinant() - 1) <= b.det + 1e-12);
  CHECK(w.t.norm() <= b.translation + 1e-12);
  AffineWarp flip;
  flip.R << -1, 0, 0, 1;
  project_affine(flip, b);
  CHECK(flip.R == Eigen::Matrix2d::Identity());
  AffineWarp ok;
  ok.R << 1.1, 0.05, 0, 0.95;
  ok.t << 2, 1;
  const AffineWarp before = ok;
  project_affine(ok, b);
  CHECK(ok.R == before.R);
  CHECK(ok.t == before.t);
}

TEST_CASE("model validation") {
  SeidelConvModel m(6, 6, 3, 2, 1);
  CHECK_NOTHROW(m.validate());
  m.component(0, 1).kernel = Kernel::Zero(5, 5);
  CHECK_THROWS_AS(m.validate(), InputError);
  SeidelConvModel n(6, 6, 3, 2, 1);
  n.component(0, 0).weight(1, 1) = std::nan("");
  CHECK_THROWS_AS(n.validate(), InputError);
  CHECK_THROWS_AS(SeidelConvModel(6, 6, 4, 2, 1), InputError);
}
