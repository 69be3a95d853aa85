#include "cmirror/homography.hpp"

#include "cmirror/errors.hpp"

#include <cmath>

namespace cmirror {

Eigen::Vector2d Homography::apply(const Eigen::Vector2d& p) const {
  const Eigen::Vector3d v = H * p.homogeneous();
  return v.hnormalized();
}

Homography Homography::inverse() const { return normalized(H.inverse()); }

Homography Homography::normalized(const Eigen::Matrix3d& m) {
  if (std::abs(m(2, 2)) < 1e-15) throw InputError("homography with H(2,2) = 0 cannot be normalized");
  Homography h;
  h.H = m / m(2, 2);
  if (std::abs(h.H.determinant()) <= 1e-12) throw InputError("homography is singular");
  return h;
}

namespace {

// Similarity moving the centroid to the origin with mean distance √2.
Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  if (dist <= 0.0) throw InputError("homography: all points coincide");
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d T;
  T << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return T;
}

} // namespace

HomographyEstimate estimate_homography(const std::vector<Correspondence>& corr) {
  const auto n = corr.size();
  if (n < 4) throw InputError("homography needs at least 4 correspondences");
  std::vector<Eigen::Vector2d> src, dst;
  for (const auto& c : corr) {
    src.push_back(c.monitor);
    dst.push_back(c.sensor);
  }
  const Eigen::Matrix3d Ts = normalizing_transform(src);
  const Eigen::Matrix3d Td = normalizing_transform(dst);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d x = Ts * src[i].homogeneous();
    const Eigen::Vector3d u = Td * dst[i].homogeneous();
    const auto r = static_cast<Eigen::Index>(2 * i);
    A.block<1, 3>(r, 3) = -u.z() * x.transpose();
    A.block<1, 3>(r, 6) = u.y() * x.transpose();
    A.block<1, 3>(r + 1, 0) = u.z() * x.transpose();
    A.block<1, 3>(r + 1, 6) = -u.x() * x.transpose();
  }
  // AᵀA keeps the SVD at 9×9 regardless of the number of points.
  const Eigen::Matrix<double, 9, 9> AtA = A.transpose() * A;
  Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(AtA, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) <= 1e-14 * sv(0)) throw InputError("homography: degenerate configuration (rank-deficient design)");
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  HomographyEstimate est;
  est.homography = Homography::normalized(Td.inverse() * Hn * Ts);
  const Homography inv = est.homography.inverse();
  double err = 0.0;
  for (const auto& c : corr) {
    err += 0.5 * ((est.homography.apply(c.monitor) - c.sensor).norm() + (inv.apply(c.sensor) - c.monitor).norm());
  }
  est.mean_transfer_error = err / static_cast<double>(n);
  return est;
}

Image warp_homography(const Image& src, const Homography& src_to_dst, int height, int width) {
  const Eigen::Matrix3d inv = src_to_dst.H.inverse();
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector3d v = inv * Eigen::Vector3d(x, y, 1.0);
      out(y, x) = sample_bilinear(src, v.x() / v.z(), v.y() / v.z());
    }
  }
  return out;
}

} // namespace cmirror
