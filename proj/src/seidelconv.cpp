#include "cmirror/seidelconv.hpp"

#include "cmirror/errors.hpp"
#include "cmirror/operators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cmirror {

namespace {

struct Center {
  double x;
  double y;
};

Center image_center(Eigen::Index height, Eigen::Index width) {
  return {0.5 * static_cast<double>(width - 1), 0.5 * static_cast<double>(height - 1)};
}

// Bilinear footprint of a clamped sample position.
struct Footprint {
  Eigen::Index x0, x1, y0, y1;
  double fx, fy;
  bool inside_x, inside_y;  // false when the coordinate was clamped
};

inline Footprint footprint(double x, double y, Eigen::Index h, Eigen::Index w) {
  Footprint f{};
  const double xmax = static_cast<double>(w - 1);
  const double ymax = static_cast<double>(h - 1);
  f.inside_x = x >= 0.0 && x <= xmax;
  f.inside_y = y >= 0.0 && y <= ymax;
  x = std::clamp(x, 0.0, xmax);
  y = std::clamp(y, 0.0, ymax);
  f.x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(x), std::max<Eigen::Index>(w - 2, 0));
  f.y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(y), std::max<Eigen::Index>(h - 2, 0));
  f.x1 = std::min<Eigen::Index>(f.x0 + 1, w - 1);
  f.y1 = std::min<Eigen::Index>(f.y0 + 1, h - 1);
  f.fx = x - static_cast<double>(f.x0);
  f.fy = y - static_cast<double>(f.y0);
  return f;
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

void require_kernel(const Kernel& kernel) {
  if (kernel.rows() != kernel.cols() || kernel.rows() % 2 == 0)
    throw InputError("kernel must be square with odd size");
}

// Σ_q of per-component images in fixed q order.
Image ordered_sum(const std::vector<Image>& parts) {
  Image acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc += parts[i];
  return acc;
}

} // namespace

// ---------------------------------------------------------------------------
// Model

SeidelConvModel::SeidelConvModel(int height, int width, int kernel_size, int components,
                                 int slices, int weight_downsample)
    : height_(height),
      width_(width),
      kernel_size_(kernel_size),
      components_(components),
      slices_(slices),
      weight_downsample_(weight_downsample) {
  if (height < 1 || width < 1) throw InputError("model dimensions must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InputError("kernel size must be odd");
  if (components < 1 || slices < 1) throw InputError("model needs Q >= 1 and N >= 1");
  if (weight_downsample < 1) throw InputError("weight_downsample must be >= 1");
  grid_height_ = ceil_div(height - 1, weight_downsample) + 1;
  grid_width_ = ceil_div(width - 1, weight_downsample) + 1;
  if (weight_downsample == 1) {
    grid_height_ = height;
    grid_width_ = width;
  }
  components_data_.resize(static_cast<std::size_t>(components) * slices);
  for (auto& c : components_data_) {
    c.kernel = delta_kernel(kernel_size);
    c.weight = Image::Constant(grid_height_, grid_width_, 1.0 / components);
  }
}

std::size_t SeidelConvModel::index(int k, int q) const {
  return static_cast<std::size_t>(k) * components_ + q;
}

Image SeidelConvModel::full_weight(int k, int q) const {
  return upsample_weight(component(k, q).weight, weight_downsample_, height_, width_);
}

void SeidelConvModel::validate() const {
  for (const auto& c : components_data_) {
    if (c.kernel.rows() != kernel_size_ || c.kernel.cols() != kernel_size_)
      throw InputError("component kernel size disagrees with model");
    if (c.weight.rows() != grid_height_ || c.weight.cols() != grid_width_)
      throw InputError("component weight map size disagrees with model");
    if (!all_finite(c.kernel) || !all_finite(c.weight) || !all_finite(c.warp.R) ||
        !all_finite(c.warp.t))
      throw InputError("model contains non-finite parameters");
  }
}

bool SeidelConvModel::operator==(const SeidelConvModel& o) const {
  if (height_ != o.height_ || width_ != o.width_ || kernel_size_ != o.kernel_size_ ||
      components_ != o.components_ || slices_ != o.slices_ ||
      weight_downsample_ != o.weight_downsample_)
    return false;
  for (std::size_t i = 0; i < components_data_.size(); ++i) {
    const auto& a = components_data_[i];
    const auto& b = o.components_data_[i];
    if (a.warp.R != b.warp.R || a.warp.t != b.warp.t || (a.kernel != b.kernel).any() ||
        (a.weight != b.weight).any())
      return false;
  }
  return true;
}

void project_affine(AffineWarp& w, const AffineBounds& bounds) {
  const double det = w.R.determinant();
  if (!(det > 0.0)) {
    w.R.setIdentity();
  } else if (std::abs(det - 1.0) > bounds.det) {
    const double target = det > 1.0 ? 1.0 + bounds.det : 1.0 - bounds.det;
    w.R *= std::sqrt(target / det);
  }
  const double n = w.t.norm();
  if (n > bounds.translation) w.t *= bounds.translation / n;
}

Kernel delta_kernel(int size) {
  Kernel k = Kernel::Zero(size, size);
  k(size / 2, size / 2) = 1.0;
  return k;
}

// ---------------------------------------------------------------------------
// Warp

Image warp(const Image& img, const AffineWarp& w) {
  const auto h = img.rows();
  const auto wd = img.cols();
  if (w.is_identity()) return img;
  const Center c = image_center(h, wd);
  Image out(h, wd);
  for (Eigen::Index y = 0; y < h; ++y) {
    const double py = static_cast<double>(y) - c.y;
    for (Eigen::Index x = 0; x < wd; ++x) {
      const double px = static_cast<double>(x) - c.x;
      const double sx = w.R(0, 0) * px + w.R(0, 1) * py + w.t(0) + c.x;
      const double sy = w.R(1, 0) * px + w.R(1, 1) * py + w.t(1) + c.y;
      const Footprint f = footprint(sx, sy, h, wd);
      out(y, x) = (1 - f.fy) * ((1 - f.fx) * img(f.y0, f.x0) + f.fx * img(f.y0, f.x1)) +
                  f.fy * ((1 - f.fx) * img(f.y1, f.x0) + f.fx * img(f.y1, f.x1));
    }
  }
  return out;
}

Image warp_adjoint(const Image& img, const AffineWarp& w) {
  const auto h = img.rows();
  const auto wd = img.cols();
  if (w.is_identity()) return img;
  const Center c = image_center(h, wd);
  Image out = Image::Zero(h, wd);
  for (Eigen::Index y = 0; y < h; ++y) {
    const double py = static_cast<double>(y) - c.y;
    for (Eigen::Index x = 0; x < wd; ++x) {
      const double px = static_cast<double>(x) - c.x;
      const double sx = w.R(0, 0) * px + w.R(0, 1) * py + w.t(0) + c.x;
      const double sy = w.R(1, 0) * px + w.R(1, 1) * py + w.t(1) + c.y;
      const Footprint f = footprint(sx, sy, h, wd);
      const double v = img(y, x);
      out(f.y0, f.x0) += (1 - f.fy) * (1 - f.fx) * v;
      out(f.y0, f.x1) += (1 - f.fy) * f.fx * v;
      out(f.y1, f.x0) += f.fy * (1 - f.fx) * v;
      out(f.y1, f.x1) += f.fy * f.fx * v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

Image convolve_padded(const Image& padded, const Kernel& kernel, Eigen::Index h, Eigen::Index w) {
  const int r = static_cast<int>(kernel.rows()) / 2;
  Image out = Image::Zero(h, w);
  for (int i = 0; i < kernel.rows(); ++i) {
    for (int j = 0; j < kernel.cols(); ++j) {
      const double v = kernel(i, j);
      if (v == 0.0) continue;
      out += v * padded.block(2 * r - i, 2 * r - j, h, w);
    }
  }
  return out;
}

} // namespace

Image convolve(const Image& img, const Kernel& kernel) {
  require_kernel(kernel);
  const int r = static_cast<int>(kernel.rows()) / 2;
  return convolve_padded(pad_replicate(img, r), kernel, img.rows(), img.cols());
}

Image convolve_adjoint(const Image& img, const Kernel& kernel) {
  require_kernel(kernel);
  const int r = static_cast<int>(kernel.rows()) / 2;
  const auto h = img.rows();
  const auto w = img.cols();
  Image padded = Image::Zero(h + 2 * r, w + 2 * r);
  for (int i = 0; i < kernel.rows(); ++i) {
    for (int j = 0; j < kernel.cols(); ++j) {
      const double v = kernel(i, j);
      if (v == 0.0) continue;
      padded.block(2 * r - i, 2 * r - j, h, w) += v * img;
    }
  }
  return fold_replicate(padded, r);
}

// ---------------------------------------------------------------------------
// Weight grids

Image upsample_weight(const Image& grid, int factor, int height, int width) {
  if (factor == 1) {
    require_shape(grid, height, width, "weight map");
    return grid;
  }
  Image out(height, width);
  const double inv = 1.0 / factor;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out(y, x) = sample_bilinear(grid, x * inv, y * inv);
  return out;
}

Image upsample_weight_adjoint(const Image& full, int factor, int grid_height, int grid_width) {
  if (factor == 1) return full;
  Image out = Image::Zero(grid_height, grid_width);
  const double inv = 1.0 / factor;
  for (Eigen::Index y = 0; y < full.rows(); ++y) {
    for (Eigen::Index x = 0; x < full.cols(); ++x) {
      const Footprint f = footprint(x * inv, y * inv, grid_height, grid_width);
      const double v = full(y, x);
      out(f.y0, f.x0) += (1 - f.fy) * (1 - f.fx) * v;
      out(f.y0, f.x1) += (1 - f.fy) * f.fx * v;
      out(f.y1, f.x0) += f.fy * (1 - f.fx) * v;
      out(f.y1, f.x1) += f.fy * f.fx * v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / adjoint

namespace {

void check_slice(const SeidelConvModel& model, const Image& img, int k, const char* what) {
  require_shape(img, model.height(), model.width(), what);
  if (k < 0 || k >= model.slices())
    throw InputError(std::string(what) + ": slice index " + std::to_string(k) + " out of range");
}

} // namespace

SliceEvaluation evaluate_slice(const SeidelConvModel& model, const Image& img, int k) {
  check_slice(model, img, k, "seidelconv forward");
  const int Q = model.components();
  const int r = model.kernel_size() / 2;
  SliceEvaluation ev;
  ev.slice = k;
  ev.input = img;
  ev.warped_padded.resize(Q);
  ev.blurred.resize(Q);
  ev.weights.resize(Q);
  std::vector<Image> terms(Q);
#pragma omp parallel for schedule(static)
  for (int q = 0; q < Q; ++q) {
    const auto& c = model.component(k, q);
    ev.warped_padded[q] = pad_replicate(warp(img, c.warp), r);
    ev.blurred[q] = convolve_padded(ev.warped_padded[q], c.kernel, img.rows(), img.cols());
    ev.weights[q] = model.full_weight(k, q);
    terms[q] = ev.weights[q] * ev.blurred[q];
  }
  ev.output = ordered_sum(terms);
  return ev;
}

Image forward(const SeidelConvModel& model, const Image& img, int k) {
  check_slice(model, img, k, "seidelconv forward");
  const int Q = model.components();
  std::vector<Image> terms(Q);
#pragma omp parallel for schedule(static)
  for (int q = 0; q < Q; ++q) {
    const auto& c = model.component(k, q);
    terms[q] = model.full_weight(k, q) * convolve(warp(img, c.warp), c.kernel);
  }
  return ordered_sum(terms);
}

Image adjoint(const SeidelConvModel& model, const Image& residual, int k) {
  check_slice(model, residual, k, "seidelconv adjoint");
  const int Q = model.components();
  std::vector<Image> terms(Q);
#pragma omp parallel for schedule(static)
  for (int q = 0; q < Q; ++q) {
    const auto& c = model.component(k, q);
    const Image weighted = model.full_weight(k, q) * residual;
    terms[q] = warp_adjoint(convolve_adjoint(weighted, c.kernel), c.warp);
  }
  return ordered_sum(terms);
}

// ---------------------------------------------------------------------------
// Parameter gradients

namespace {

ComponentGradient component_gradient(const SeidelConvModel& model, const SliceEvaluation& ev,
                                     const Image& residual, int q, double lambda_kern) {
  const auto& c = model.component(ev.slice, q);
  const int K = model.kernel_size();
  const int r = K / 2;
  const auto h = residual.rows();
  const auto w = residual.cols();
  ComponentGradient g;

  g.dweight = upsample_weight_adjoint(residual * ev.blurred[q], model.weight_downsample(),
                                      model.weight_grid_height(), model.weight_grid_width());

  const Image s = ev.weights[q] * residual;
  g.dkernel.resize(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      g.dkernel(i, j) = (s * ev.warped_padded[q].block(2 * r - i, 2 * r - j, h, w)).sum();
  if (lambda_kern != 0.0) {
    g.dkernel += lambda_kern * c.kernel.unaryExpr([](double v) {
      return static_cast<double>((v > 0.0) - (v < 0.0));
    });
  }

  // Back through the blur, then the chain rule through the bilinear sample position.
  const Image gu = convolve_adjoint(s, c.kernel);
  const Image& img = ev.input;
  const Center ctr = image_center(h, w);
  double dtx = 0, dty = 0, r00 = 0, r01 = 0, r10 = 0, r11 = 0;
  for (Eigen::Index y = 0; y < h; ++y) {
    const double py = static_cast<double>(y) - ctr.y;
    for (Eigen::Index x = 0; x < w; ++x) {
      const double gv = gu(y, x);
      if (gv == 0.0) continue;
      const double px = static_cast<double>(x) - ctr.x;
      const double sx = c.warp.R(0, 0) * px + c.warp.R(0, 1) * py + c.warp.t(0) + ctr.x;
      const double sy = c.warp.R(1, 0) * px + c.warp.R(1, 1) * py + c.warp.t(1) + ctr.y;
      const Footprint f = footprint(sx, sy, h, w);
      const double dsx = f.inside_x ? gv * ((1 - f.fy) * (img(f.y0, f.x1) - img(f.y0, f.x0)) +
                                            f.fy * (img(f.y1, f.x1) - img(f.y1, f.x0)))
                                    : 0.0;
      const double dsy = f.inside_y ? gv * ((1 - f.fx) * (img(f.y1, f.x0) - img(f.y0, f.x0)) +
                                            f.fx * (img(f.y1, f.x1) - img(f.y0, f.x1)))
                                    : 0.0;
      dtx += dsx;
      dty += dsy;
      r00 += dsx * px;
      r01 += dsx * py;
      r10 += dsy * px;
      r11 += dsy * py;
    }
  }
  g.dt << dtx, dty;
  g.dR << r00, r01, r10, r11;
  return g;
}

} // namespace

SliceGradient param_gradients(const SeidelConvModel& model, const SliceEvaluation& eval,
                              const Image& residual, double lambda_kern) {
  require_shape(residual, model.height(), model.width(), "seidelconv gradient residual");
  const int Q = model.components();
  SliceGradient grads(Q);
#pragma omp parallel for schedule(static)
  for (int q = 0; q < Q; ++q) grads[q] = component_gradient(model, eval, residual, q, lambda_kern);
  return grads;
}

SliceGradient param_gradients(const SeidelConvModel& model, const Image& img,
                              const Image& residual, int k, double lambda_kern) {
  return param_gradients(model, evaluate_slice(model, img, k), residual, lambda_kern);
}

double lipschitz_estimate(const SeidelConvModel& model, int iters) {
  return lipschitz_estimate(SeidelConvOperator(model), iters);
}

double lipschitz_estimate(const SeidelConvModel& model, int k, int iters) {
  return lipschitz_estimate(SeidelConvOperator(model, {k}), iters);
}

} // namespace cmirror
