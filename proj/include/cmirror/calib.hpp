#pragma once

#include "cmirror/config.hpp"
#include "cmirror/homography.hpp"
#include "cmirror/image.hpp"
#include "cmirror/seidelconv.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmirror {

// ---------------------------------------------------------------------------
// Radiometry

/// Dark frame plus vignetting frames captured at several axial positions.
struct RadiometricCal {
  Image offset;
  std::vector<std::pair<double, Image>> vignetting;  // (z µm, frame), sorted by z
  double epsilon_v = 1e-3;

  /// Sorts the vignetting list and checks shapes.
  void validate();
  /// Linear interpolation in z between the two nearest frames, clamped at the ends,
  /// floored at epsilon_v.
  Image vignetting_at(double z) const;
};

/// max(raw − offset, 0) ⊘ v(z).
Image radiometric_correct(const Image& raw, const RadiometricCal& cal, double z);
FocalStack radiometric_correct(const FocalStack& raw, const RadiometricCal& cal);

// ---------------------------------------------------------------------------
// Targets

enum class TargetKind { random_dots, aruco_grid_proxy, sector_star, binary_random };

TargetKind parse_target_kind(const std::string& s);

struct CalibTarget {
  TargetKind kind = TargetKind::random_dots;
  std::uint64_t seed = 0;
  double dot_density = 0.01;  // random_dots: seed-dot fraction; binary_random: fraction of ones
  int height = 0;             // canvas, monitor pixels
  int width = 0;
  int spokes = 16;            // sector_star
  int grid = 5;               // aruco_grid_proxy: grid×grid dots spanning the central 70%
  int cell = 4;               // binary_random: block size in pixels
};

/// Deterministic raster in [0, 1].
Image generate_target(const CalibTarget& t);

/// Distinct seed-dot positions of a random_dots target, exactly round(density·H·W).
std::vector<Eigen::Vector2i> random_dot_positions(const CalibTarget& t);

/// Monitor coordinates of the dots of an aruco_grid_proxy target.
std::vector<Eigen::Vector2d> grid_dot_positions(const CalibTarget& t);

/// Sector star value at angle θ (radians) for S spokes: 1 iff ⌊S·θ/π⌋ is even.
double sector_star_value(double theta, int spokes);

/// Renders an S-spoke star centered at `center` with radius `radius` onto `canvas`.
void draw_sector_star(Image& canvas, const Eigen::Vector2d& center, double radius, int spokes);

// ---------------------------------------------------------------------------
// Geometry

/// Intensity-weighted centroid of each expected dot over the disc of `search_radius`
/// around its position predicted by `guess`, after subtracting the median of the
/// search window border. Dots without signal are skipped.
std::vector<Correspondence> detect_dot_correspondences(const Image& capture,
                                                       const std::vector<Eigen::Vector2d>& monitor_points,
                                                       const Homography& guess, double search_radius);

// ---------------------------------------------------------------------------
// Focus

/// Local standard deviation over a window×window box divided by (local mean + 1e-6).
Image focus_measure(const Image& img, int window);

struct BestFocus {
  double z_best = 0.0;
  Image surface;  // per-pixel z of the sharpest slice
};

/// z_best maximizes the mean focus measure over the central (H/2)×(W/2) region.
/// Ties go to the smaller z.
BestFocus best_focus(const FocalStack& stack, int window);

// ---------------------------------------------------------------------------
// SeidelConv fitting

struct CalibConfig {
  int components = 31;
  int kernel_size = 11;
  int images = 10;  // L
  double lr = 5e-3;
  double lr_final_fraction = 0.05;  // cosine decay to lr·fraction; 1 keeps lr constant
  double lambda_kern = 1e-4;
  int epochs = 500;
  int batch = 4;
  std::uint64_t seed = 0;
  int weight_downsample = 1;
  bool nonnegative_weights = false;
  bool tie_warps_across_k = false;
  bool fit_warps = true;  // false: warps stay exactly identity (CoordGate-style)
  double init_sigma_R = 0.01;
  double init_sigma_t = 0.5;
  double translation_lr_scale = 0.0;  // ≤ 0: half the larger frame dimension
  AffineBounds bounds;

  void validate() const;
};

CalibConfig calib_config_from(const KeyValueConfig& cfg);

/// One calibration image: the displayed target resampled into sensor coordinates, and
/// its radiometrically corrected focal stack.
struct CalibPair {
  Image target;
  FocalStack stack;
};

struct FitResult {
  SeidelConvModel model;
  std::vector<double> loss_log;  // per epoch: mean batch objective
};

/// Mini-batch Adam on Σ_l Σ_k mean((A_k t_l − I_l^k)²) + λ_kern Σ ‖h‖₁, with the affine
/// projection after every step.
FitResult fit_model(const std::vector<CalibPair>& pairs, const CalibConfig& cfg);

/// Same, starting from `init` instead of the random initialization.
FitResult fit_model(const std::vector<CalibPair>& pairs, const CalibConfig& cfg, SeidelConvModel init);

/// Initial model of fit_model(): perturbed identity warps, delta + noise kernels, 1/Q weights.
SeidelConvModel initial_model(int height, int width, int slices, const CalibConfig& cfg);

} // namespace cmirror
