#pragma once

#include "cmirror/image.hpp"

#include <Eigen/Dense>

#include <vector>

namespace cmirror {

/// Affine coordinate map about the image center c: p ↦ R (p − c) + t + c.
struct AffineWarp {
  Eigen::Matrix2d R = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  static AffineWarp identity() { return {}; }
  bool is_identity() const { return R == Eigen::Matrix2d::Identity() && t.isZero(0.0); }
};

/// Feasible set for calibrated warps: |det R − 1| ≤ det, |t| ≤ translation (px).
struct AffineBounds {
  double det = 0.25;
  double translation = 15.0;
};

/// Euclidean-style projection onto AffineBounds: rescales R to the nearest admissible
/// determinant and shortens t. Warps with det R ≤ 0 are reset to identity.
void project_affine(AffineWarp& w, const AffineBounds& bounds);

struct SeidelComponent {
  AffineWarp warp;
  Kernel kernel;  // K×K
  Image weight;   // weight grid; full resolution when weight_downsample == 1
};

/// Per-slice mixtures of Q warped-and-blurred copies of the latent image, for N slices.
/// Kernels are applied as true convolutions with replicate padding; warps are bilinear
/// with replicate boundary.
class SeidelConvModel {
public:
  SeidelConvModel() : SeidelConvModel(1, 1, 1, 1, 1) {}

  /// Identity-initialised: identity warps, centered delta kernels, weights 1/Q.
  SeidelConvModel(int height, int width, int kernel_size, int components, int slices,
                  int weight_downsample = 1);

  int height() const { return height_; }
  int width() const { return width_; }
  int kernel_size() const { return kernel_size_; }
  int components() const { return components_; }
  int slices() const { return slices_; }
  int weight_downsample() const { return weight_downsample_; }
  int weight_grid_height() const { return grid_height_; }
  int weight_grid_width() const { return grid_width_; }

  SeidelComponent& component(int k, int q) { return components_data_[index(k, q)]; }
  const SeidelComponent& component(int k, int q) const { return components_data_[index(k, q)]; }

  /// Weight map of (k, q) at full H×W resolution.
  Image full_weight(int k, int q) const;

  /// Throws InputError if any component disagrees with the declared dimensions or has
  /// non-finite parameters.
  void validate() const;

  bool operator==(const SeidelConvModel& other) const;

private:
  std::size_t index(int k, int q) const;

  int height_;
  int width_;
  int kernel_size_;
  int components_;
  int slices_;
  int weight_downsample_;
  int grid_height_;
  int grid_width_;
  std::vector<SeidelComponent> components_data_;
};

Kernel delta_kernel(int size);

/// output(p) = img(R (p − c) + t + c), bilinear, replicate boundary.
Image warp(const Image& img, const AffineWarp& w);
/// Exact adjoint of warp(): scatters each value with its bilinear weights.
Image warp_adjoint(const Image& img, const AffineWarp& w);

/// True convolution (kernel flipped relative to correlation), replicate padding.
Image convolve(const Image& img, const Kernel& kernel);
/// Exact adjoint of convolve(): cross-correlation followed by the padding fold.
Image convolve_adjoint(const Image& img, const Kernel& kernel);

/// Bilinear upsampling of a weight grid with node spacing `factor` to height×width.
Image upsample_weight(const Image& grid, int factor, int height, int width);
Image upsample_weight_adjoint(const Image& full, int factor, int grid_height, int grid_width);

/// Σ_q weight_q ⊙ convolve(warp(img, warp_q), kernel_q) for slice k.
Image forward(const SeidelConvModel& model, const Image& img, int k);
/// Exact adjoint of forward() for slice k.
Image adjoint(const SeidelConvModel& model, const Image& residual, int k);

/// Intermediate quantities of one forward evaluation, reused by the gradient.
struct SliceEvaluation {
  int slice = 0;
  Image input;
  std::vector<Image> warped_padded;  // warp(img) padded by K/2
  std::vector<Image> blurred;        // convolve(warp(img))
  std::vector<Image> weights;        // full-resolution weights
  Image output;
};

SliceEvaluation evaluate_slice(const SeidelConvModel& model, const Image& img, int k);

struct ComponentGradient {
  Eigen::Matrix2d dR = Eigen::Matrix2d::Zero();
  Eigen::Vector2d dt = Eigen::Vector2d::Zero();
  Kernel dkernel;
  Image dweight;  // same shape as the weight grid
};

using SliceGradient = std::vector<ComponentGradient>;

/// Gradients of ½‖forward(img) − target‖² + lambda_kern Σ_q ‖h_q‖₁ for slice k, where
/// residual = forward(img) − target. The ℓ1 part uses sign(h) with sign(0) = 0.
SliceGradient param_gradients(const SeidelConvModel& model, const Image& img,
                              const Image& residual, int k, double lambda_kern = 0.0);
SliceGradient param_gradients(const SeidelConvModel& model, const SliceEvaluation& eval,
                              const Image& residual, double lambda_kern = 0.0);

/// Power-iteration estimate of ‖Σ_k A_kᵀ A_k‖₂ over all slices.
double lipschitz_estimate(const SeidelConvModel& model, int iters);
/// Same for a single slice k.
double lipschitz_estimate(const SeidelConvModel& model, int k, int iters);

} // namespace cmirror
