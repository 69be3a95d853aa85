#include <doctest.h>

#include "cmirror/calib.hpp"
#include "cmirror/errors.hpp"
#include "cmirror/simulate.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace cmirror;

namespace {

const FrameSize kFrame{128, 160};

Eigen::Vector2d axis(const AberrationSpec& s, FrameSize f) {
  return Eigen::Vector2d(0.5 * (f.width - 1), 0.5 * (f.height - 1)) + s.decenter;
}

AberrationSpec ideal_spec() {
  AberrationSpec s;
  s.petzval_radius_mm = std::numeric_limits<double>::infinity();
  s.coma_coeff = s.astig_coeff = s.distortion_coeff = 0;
  s.noise_sigma = 0;
  s.vignette_strength = 0;
  s.base_sigma_px = 0.05;
  return s;
}

} // namespace

TEST_CASE("sag vanishes on the optical axis") {
  const AberrationSpec s;
  CHECK(field_sag(s, axis(s, kFrame), kFrame) == 0.0);
}

TEST_CASE("sag closed form") {
  AberrationSpec s;
  s.pixel_pitch_um = 100;  // 30 px = 3 mm
  const Eigen::Vector2d p = axis(s, kFrame) + Eigen::Vector2d(18, 24);
  CHECK(field_sag(s, p, kFrame) == doctest::Approx(90.0).epsilon(1e-12));
}

TEST_CASE("sag is monotone in field radius") {
  const AberrationSpec s;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(0, 159), uy(0, 127);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector2d a(ux(rng), uy(rng)), b(ux(rng), uy(rng));
    const double ra = field_radius_px(s, a, kFrame), rb = field_radius_px(s, b, kFrame);
    if (ra <= rb) CHECK(field_sag(s, a, kFrame) <= field_sag(s, b, kFrame));
    else CHECK(field_sag(s, a, kFrame) >= field_sag(s, b, kFrame));
  }
}

TEST_CASE("in-focus on-axis psf is nearly a delta") {
  const AberrationSpec s;
  const Kernel k = local_psf(s, axis(s, kFrame), 0.0, kFrame);
  CHECK(k(k.rows() / 2, k.cols() / 2) > 0.95);
}

TEST_CASE("psf kernels are normalized and cover the blur") {
  const AberrationSpec s;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(0, 159), uy(0, 127), uz(-200, 600);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector2d p(ux(rng), uy(rng));
    const double z = uz(rng);
    const PsfShape shape = psf_shape(s, p, z, kFrame);
    const Kernel k = psf_kernel(shape);
    CHECK(std::abs(k.sum() - 1.0) < 1e-9);
    CHECK(k.rows() % 2 == 1);
    const double major = std::sqrt(shape.covariance.eigenvalues().real().maxCoeff());
    CHECK(k.rows() >= 4 * major);
  }
}

TEST_CASE("doubling the f-number halves defocus") {
  AberrationSpec a, b;
  b.f_number = 2 * a.f_number;
  const Eigen::Vector2d p(20, 30);
  for (double z : {0.0, 150.0, 400.0})
    CHECK(defocus_sigma_px(b, p, z, kFrame) == doctest::Approx(0.5 * defocus_sigma_px(a, p, z, kFrame)).epsilon(1e-14));
}

TEST_CASE("off-axis psfs elongate radially") {
  AberrationSpec s;
  s.astig_coeff = 0;
  const Eigen::Vector2d c = axis(s, kFrame);
  const Eigen::Vector2d p = c + Eigen::Vector2d(60, 0);
  const double z = field_sag(s, p, kFrame);  // in focus there, so only coma shapes it
  const PsfShape shape = psf_shape(s, p, z, kFrame);
  CHECK(shape.covariance(0, 0) > shape.covariance(1, 1));
  CHECK(shape.mean.isZero());
  s.distortion_coeff = 2.0;
  CHECK(psf_shape(s, p, z, kFrame).mean.x() > 0);
  CHECK(psf_shape(s, p, z, kFrame).mean.y() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ideal optics render the truth") {
  const Image truth = dead_leaves_scene(64, 80, 3);
  const RenderedStack r = render_stack(truth, ideal_spec(), 0, 200, 1, 1);
  CHECK(std::sqrt((r.stack.slices[0] - truth).square().mean()) < 1e-3);
}

TEST_CASE("rendering conserves energy without noise or vignetting") {
  AberrationSpec s;
  s.noise_sigma = 0;
  s.vignette_strength = 0;
  const Image truth = dead_leaves_scene(128, 160, 4);
  const RenderedStack r = render_stack(truth, s, 0, 200, 3, 1);
  for (const Image& sl : r.stack.slices) CHECK(std::abs(sl.sum() / truth.sum() - 1.0) < 0.01);
}

TEST_CASE("rendering is seeded") {
  const Image truth = dead_leaves_scene(48, 64, 5);
  const AberrationSpec s;
  const RenderedStack a = render_stack(truth, s, 0, 200, 2, 9), b = render_stack(truth, s, 0, 200, 2, 9);
  const RenderedStack c = render_stack(truth, s, 0, 200, 2, 10);
  for (int k = 0; k < 2; ++k) {
    CHECK((a.stack.slices[k] == b.stack.slices[k]).all());
    CHECK(!(a.stack.slices[k] == c.stack.slices[k]).all());
  }
  CHECK((dead_leaves_scene(48, 64, 5) == truth).all());
}

TEST_CASE("best-focus annulus moves outward with sensor position") {
  AberrationSpec s;
  s.noise_sigma = 0.002;
  const CalibTarget target{TargetKind::binary_random, 11, 0.5, 128, 160, 16, 5, 2};
  const Image truth = generate_target(target);
  const RenderedStack r = render_stack(truth, s, 0, 200, 3, 2);
  std::vector<Image> fm;
  for (const Image& sl : r.stack.slices) fm.push_back(focus_measure(sl, 7));

  // ring statistics about the optical axis: each slice's preferred ring
  const Eigen::Vector2d c = axis(s, kFrame);
  const int bins = 10;
  const double rmax = 110;
  std::vector<std::vector<double>> ring(3, std::vector<double>(bins, 0.0));
  std::vector<int> count(bins, 0);
  for (int y = 8; y < 120; ++y)
    for (int x = 8; x < 152; ++x) {
      const int b = std::min(bins - 1, int((Eigen::Vector2d(x, y) - c).norm() / rmax * bins));
      ++count[b];
      for (int k = 0; k < 3; ++k) ring[k][b] += fm[k](y, x);
    }
  std::vector<double> best_radius(3);
  for (int k = 0; k < 3; ++k) {
    double best = -1;
    for (int b = 0; b < bins; ++b) {
      if (count[b] < 50) continue;
      double total = 0;
      for (int j = 0; j < 3; ++j) total += ring[j][b];
      const double share = ring[k][b] / total;
      if (share > best) {
        best = share;
        best_radius[k] = (b + 0.5) * rmax / bins;
      }
    }
  }
  CHECK(best_radius[0] < best_radius[1]);
  CHECK(best_radius[1] < best_radius[2]);
}

TEST_CASE("vignetting is unity when disabled") {
  AberrationSpec s;
  s.vignette_strength = 0;
  CHECK((vignetting_frame(s, 300, kFrame) == 1.0).all());
  AberrationSpec v;
  const Image f = vignetting_frame(v, 0, kFrame);
  CHECK(f.maxCoeff() <= 1.0);
  CHECK(f.minCoeff() > 0.0);
}

TEST_CASE("aberration spec validation and config keys") {
  AberrationSpec s;
  s.focal_length_mm = 0;
  CHECK_THROWS_AS(s.validate(), InputError);
  s = {};
  s.f_number = -1;
  CHECK_THROWS_AS(s.validate(), InputError);
  s = {};
  s.petzval_radius_mm = 0;
  CHECK_THROWS_AS(s.validate(), InputError);

  std::istringstream in("focal_length_mm = 35\ncoma_coeff = 0.5\n");
  const AberrationSpec parsed = aberration_spec_from_config(KeyValueConfig::parse(in, "spec"));
  CHECK(parsed.focal_length_mm == 35);
  CHECK(parsed.coma_coeff == 0.5);

  std::istringstream bad("focal_lenght_mm = 35\n");
  CHECK_THROWS_AS(aberration_spec_from_config(KeyValueConfig::parse(bad, "spec")), InputError);
}

TEST_CASE("dead leaves scenes stay in range") {
  const Image s = dead_leaves_scene(128, 160, 1);
  CHECK(s.minCoeff() >= 0.0);
  CHECK(s.maxCoeff() <= 1.0);
  CHECK(s.maxCoeff() - s.minCoeff() > 0.5);
}
