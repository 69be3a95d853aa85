#pragma once

#include "cmirror/image.hpp"

#include <Eigen/Dense>

#include <vector>

namespace cmirror {

/// Plane projective map, normalized so that H(2,2) = 1.
struct Homography {
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  Homography inverse() const;
  static Homography normalized(const Eigen::Matrix3d& m);
};

struct Correspondence {
  Eigen::Vector2d monitor;
  Eigen::Vector2d sensor;
};

struct HomographyEstimate {
  Homography homography;                // monitor → sensor
  double mean_transfer_error = 0.0;     // symmetric, px
};

/// Normalized DLT over all correspondences (least squares via SVD).
/// Throws InputError for fewer than 4 points or a rank-deficient design matrix.
HomographyEstimate estimate_homography(const std::vector<Correspondence>& correspondences);

/// Resamples `src` into a height×width frame: out(p) = src(H⁻¹ p), bilinear, replicate.
Image warp_homography(const Image& src, const Homography& src_to_dst, int height, int width);

} // namespace cmirror
