#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace cmirror {

/// Single-channel raster, row-major, indexed (row, col) = (y, x).
/// Pixel (0,0) is top-left; continuous coordinates sit at pixel centers.
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;
using ImageF = ImageT<float>;

/// Square convolution kernel, K×K with K odd.
using Kernel = ImageT<double>;

/// Boolean mask over a frame.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FocalStack {
  std::vector<Image> slices;
  double z0 = 0.0;  // µm, axial position of slice 0
  double dz = 1.0;  // µm, constant step
  bool corrected = false;

  int size() const { return static_cast<int>(slices.size()); }
  int height() const { return slices.empty() ? 0 : static_cast<int>(slices.front().rows()); }
  int width() const { return slices.empty() ? 0 : static_cast<int>(slices.front().cols()); }
  double z(int k) const { return z0 + k * dz; }

  /// Throws InputError unless N ≥ 1, dz > 0 and all slices share dimensions.
  void validate() const;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.derived().array().isFinite().all();
}

/// Throws InputError naming `what` if the two images differ in shape.
void require_same_shape(const Image& a, const Image& b, const std::string& what);
void require_shape(const Image& a, int height, int width, const std::string& what);

/// Bilinear sample with replicate boundary (coordinates clamped to the frame).
double sample_bilinear(const Image& img, double x, double y);

/// Replicate-pad by r pixels on every side.
Image pad_replicate(const Image& img, int r);

/// Adjoint of pad_replicate: folds the border back onto the edge pixels.
Image fold_replicate(const Image& padded, int r);

} // namespace cmirror
