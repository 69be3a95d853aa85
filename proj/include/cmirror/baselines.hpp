#pragma once

#include "cmirror/calib.hpp"
#include "cmirror/image.hpp"
#include "cmirror/operators.hpp"
#include "cmirror/seidelconv.hpp"

#include <cstdint>
#include <vector>

namespace cmirror {

/// Copy of `model` with every warp set to exact identity.
SeidelConvModel coordgate_model(const SeidelConvModel& model);

/// CoordGate-style calibration: fit_model() with the warps held at identity.
FitResult fit_coordgate(const std::vector<CalibPair>& pairs, CalibConfig cfg);

// ---------------------------------------------------------------------------
// Patch-wise PSFs

/// One K×K kernel per tile of a tiles_y×tiles_x grid, cross-faded linearly over `overlap`
/// pixels around each tile boundary. Blend weights are multiples of 2⁻²⁰ and sum to
/// exactly 1 at every pixel.
class PatchwiseModel {
public:
  PatchwiseModel() = default;
  /// overlap < 0 selects K − 1. Kernels start as centered deltas.
  PatchwiseModel(int height, int width, int tiles_y, int tiles_x, int kernel_size, int overlap = -1);

  int height() const { return height_; }
  int width() const { return width_; }
  int tiles_y() const { return tiles_y_; }
  int tiles_x() const { return tiles_x_; }
  int tiles() const { return tiles_y_ * tiles_x_; }
  int kernel_size() const { return kernel_size_; }
  int overlap() const { return overlap_; }

  Kernel& kernel(int tile) { return kernels_[tile]; }
  const Kernel& kernel(int tile) const { return kernels_[tile]; }
  /// Full-frame blend weight of a tile.
  Image blend_weight(int tile) const;

  /// Row / column ranges where the tile's blend weight is nonzero: [y0, y1) × [x0, x1).
  struct Support {
    int y0, y1, x0, x1;
  };
  Support support(int tile) const;

private:
  friend Image patchwise_forward(const PatchwiseModel&, const Image&);
  friend Image patchwise_adjoint(const PatchwiseModel&, const Image&);
  friend std::vector<Kernel> patchwise_gradients(const PatchwiseModel&, const Image&, const Image&);

  int height_ = 0, width_ = 0, tiles_y_ = 1, tiles_x_ = 1, kernel_size_ = 1, overlap_ = 0;
  std::vector<Eigen::ArrayXd> row_weights_;  // per tile row, length H
  std::vector<Eigen::ArrayXd> col_weights_;  // per tile column, length W
  std::vector<Kernel> kernels_;
};

/// Per-axis cross-fade weights for `tiles` tiles over `length` pixels. Each weight is a
/// multiple of 1/1024 and the weights at every pixel sum to exactly 1.
std::vector<Eigen::ArrayXd> crossfade_weights(int length, int tiles, int overlap);

/// Default tile grid: square tiles of side max(32, H/8) px (8×10 on 512×640, 4×5 on 128×160).
Eigen::Vector2i default_patch_grid(int height, int width);

Image patchwise_forward(const PatchwiseModel& m, const Image& img);
Image patchwise_adjoint(const PatchwiseModel& m, const Image& residual);
/// Gradients of ½‖forward(img) − target‖² with respect to each tile kernel.
std::vector<Kernel> patchwise_gradients(const PatchwiseModel& m, const Image& img, const Image& residual);

struct PatchwiseConfig {
  int tiles_y = 0;  // 0: default_patch_grid
  int tiles_x = 0;
  int kernel_size = 11;
  int overlap = -1;
  double lr = 5e-3;
  double lr_final_fraction = 0.05;
  double lambda_kern = 1e-4;
  int epochs = 500;
  int batch = 4;
  std::uint64_t seed = 0;
};

/// One patch-wise model per focal slice, fitted with the same Adam schedule and ℓ1
/// penalty as fit_model().
struct PatchwiseFit {
  std::vector<PatchwiseModel> slices;
  std::vector<double> loss_log;
};

PatchwiseFit patchwise_fit(const std::vector<CalibPair>& pairs, const PatchwiseConfig& cfg);

class PatchwiseOperator : public BlurOperator {
public:
  explicit PatchwiseOperator(std::vector<PatchwiseModel> slices, std::vector<int> indices = {});
  int slices() const override { return static_cast<int>(indices_.size()); }
  int height() const override { return models_.front().height(); }
  int width() const override { return models_.front().width(); }
  Image apply(const Image& x, int k) const override { return patchwise_forward(models_[indices_[k]], x); }
  Image apply_adjoint(const Image& y, int k) const override {
    return patchwise_adjoint(models_[indices_[k]], y);
  }

private:
  std::vector<PatchwiseModel> models_;
  std::vector<int> indices_;
};

// ---------------------------------------------------------------------------
// Stack fusion

Image stack_average(const FocalStack& stack);

/// Per-slice feathered selection masks: one-hot argmax of focus_measure (ties → lower k),
/// smoothed by a 7×7 box and renormalised to sum 1.
std::vector<Image> petzval_masks(const FocalStack& stack, int window);

/// Σ_k mask_k ⊙ slice_k with petzval_masks().
Image petzval_composite(const FocalStack& stack, int window);

/// Index of the slice focused at the frame center: highest mean focus measure over the
/// on-axis (H/2)×(W/2) rectangle (ties → lower k). A single conventional capture.
int sharpest_slice(const FocalStack& stack, int window);

} // namespace cmirror
