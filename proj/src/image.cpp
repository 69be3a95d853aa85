#include "cmirror/image.hpp"

#include "cmirror/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cmirror {

void FocalStack::validate() const {
  if (slices.empty()) throw InputError("focal stack is empty");
  if (!(dz > 0.0)) throw InputError("focal stack step dz must be positive");
  for (const auto& s : slices) {
    if (s.rows() != slices.front().rows() || s.cols() != slices.front().cols())
      throw InputError("focal stack slices differ in size");
  }
}

void require_same_shape(const Image& a, const Image& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError(what + ": dimension mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

void require_shape(const Image& a, int height, int width, const std::string& what) {
  if (a.rows() != height || a.cols() != width) {
    throw InputError(what + ": expected " + std::to_string(height) + "x" + std::to_string(width) +
                     ", got " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

double sample_bilinear(const Image& img, double x, double y) {
  const auto h = img.rows();
  const auto w = img.cols();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const Eigen::Index x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(x), std::max<Eigen::Index>(w - 2, 0));
  const Eigen::Index y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(y), std::max<Eigen::Index>(h - 2, 0));
  const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, w - 1);
  const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x1)) +
         fy * ((1 - fx) * img(y1, x0) + fx * img(y1, x1));
}

Image pad_replicate(const Image& img, int r) {
  const auto h = img.rows();
  const auto w = img.cols();
  Image out(h + 2 * r, w + 2 * r);
  out.block(r, r, h, w) = img;
  for (int i = 0; i < r; ++i) {
    out.block(r, i, h, 1) = img.col(0);
    out.block(r, r + w + i, h, 1) = img.col(w - 1);
  }
  for (int i = 0; i < r; ++i) {
    out.row(i) = out.row(r);
    out.row(r + h + i) = out.row(r + h - 1);
  }
  return out;
}

Image fold_replicate(const Image& padded, int r) {
  const auto h = padded.rows() - 2 * r;
  const auto w = padded.cols() - 2 * r;
  // Fold rows first (full width), then columns.
  Image rows = padded.block(r, 0, h, padded.cols());
  for (int i = 0; i < r; ++i) {
    rows.row(0) += padded.row(i);
    rows.row(h - 1) += padded.row(r + h + i);
  }
  Image out = rows.block(0, r, h, w);
  for (int i = 0; i < r; ++i) {
    out.col(0) += rows.col(i);
    out.col(w - 1) += rows.col(r + w + i);
  }
  return out;
}

} // namespace cmirror
