#include "cmirror/baselines.hpp"

#include "cmirror/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cmirror {

SeidelConvModel coordgate_model(const SeidelConvModel& model) {
  SeidelConvModel out = model;
  for (int k = 0; k < out.slices(); ++k)
    for (int q = 0; q < out.components(); ++q) out.component(k, q).warp = AffineWarp::identity();
  return out;
}

FitResult fit_coordgate(const std::vector<CalibPair>& pairs, CalibConfig cfg) {
  cfg.fit_warps = false;
  return fit_model(pairs, cfg);
}

// ---------------------------------------------------------------------------
// Patch-wise

std::vector<Eigen::ArrayXd> crossfade_weights(int length, int tiles, int overlap) {
  if (tiles < 1 || tiles > length) throw InputError("tile grid does not cover the frame");
  if (overlap < 0) throw InputError("tile overlap must be >= 0");
  std::vector<int> b(static_cast<std::size_t>(tiles + 1));
  for (int i = 0; i <= tiles; ++i) b[i] = static_cast<int>(std::lround(static_cast<double>(i) * length / tiles));
  for (int i = 0; i < tiles; ++i)
    if (b[i + 1] - b[i] < std::max(1, overlap))
      throw InputError("tiles of " + std::to_string(b[i + 1] - b[i]) + " px are narrower than the overlap");

  // s_i: progress of the fade from tile i to tile i+1, quantized to 1/1024
  auto fade = [&](int i, int y) -> double {
    if (i < 1) return 1.0;
    if (i >= tiles) return 0.0;
    if (overlap == 0) return y >= b[i] ? 1.0 : 0.0;
    const double s = std::clamp((y + 0.5 - (b[i] - 0.5 * overlap)) / overlap, 0.0, 1.0);
    return std::round(s * 1024.0) / 1024.0;
  };
  std::vector<Eigen::ArrayXd> out(static_cast<std::size_t>(tiles), Eigen::ArrayXd::Zero(length));
  for (int i = 0; i < tiles; ++i)
    for (int y = 0; y < length; ++y) out[i][y] = fade(i, y) * (1.0 - fade(i + 1, y));
  return out;
}

Eigen::Vector2i default_patch_grid(int height, int width) {
  const double side = std::max(32.0, height / 8.0);
  return {std::max(1, static_cast<int>(std::lround(height / side))),
          std::max(1, static_cast<int>(std::lround(width / side)))};
}

PatchwiseModel::PatchwiseModel(int height, int width, int tiles_y, int tiles_x, int kernel_size, int overlap)
    : height_(height), width_(width), tiles_y_(tiles_y), tiles_x_(tiles_x), kernel_size_(kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InputError("patch kernel size must be odd");
  overlap_ = overlap < 0 ? kernel_size - 1 : overlap;
  row_weights_ = crossfade_weights(height, tiles_y, overlap_);
  col_weights_ = crossfade_weights(width, tiles_x, overlap_);
  kernels_.assign(static_cast<std::size_t>(tiles_y * tiles_x), delta_kernel(kernel_size));
}

Image PatchwiseModel::blend_weight(int tile) const {
  const auto& ry = row_weights_[tile / tiles_x_];
  const auto& cx = col_weights_[tile % tiles_x_];
  return (ry.matrix() * cx.matrix().transpose()).array();
}

PatchwiseModel::Support PatchwiseModel::support(int tile) const {
  auto range = [](const Eigen::ArrayXd& a, int& lo, int& hi) {
    lo = 0;
    hi = static_cast<int>(a.size());
    while (lo < hi && a[lo] == 0.0) ++lo;
    while (hi > lo && a[hi - 1] == 0.0) --hi;
  };
  Support s{};
  range(row_weights_[tile / tiles_x_], s.y0, s.y1);
  range(col_weights_[tile % tiles_x_], s.x0, s.x1);
  return s;
}

namespace {

Image tile_weight_block(const Eigen::ArrayXd& ry, const Eigen::ArrayXd& cx, const PatchwiseModel::Support& s) {
  return (ry.segment(s.y0, s.y1 - s.y0).matrix() * cx.segment(s.x0, s.x1 - s.x0).matrix().transpose()).array();
}

void require_frame(const PatchwiseModel& m, const Image& img, const char* what) {
  require_shape(img, m.height(), m.width(), what);
}

}  // namespace

Image patchwise_forward(const PatchwiseModel& m, const Image& img) {
  require_frame(m, img, "patchwise input");
  const int r = m.kernel_size_ / 2;
  const Image P = pad_replicate(img, r);
  Image out = Image::Zero(m.height_, m.width_);
  for (int t = 0; t < m.tiles(); ++t) {
    const auto s = m.support(t);
    const int bh = s.y1 - s.y0, bw = s.x1 - s.x0;
    const Kernel& h = m.kernels_[t];
    Image acc = Image::Zero(bh, bw);
    for (int i = 0; i < h.rows(); ++i)
      for (int j = 0; j < h.cols(); ++j)
        if (h(i, j) != 0.0) acc += h(i, j) * P.block(s.y0 + 2 * r - i, s.x0 + 2 * r - j, bh, bw);
    out.block(s.y0, s.x0, bh, bw) += tile_weight_block(m.row_weights_[t / m.tiles_x_], m.col_weights_[t % m.tiles_x_], s) * acc;
  }
  return out;
}

Image patchwise_adjoint(const PatchwiseModel& m, const Image& residual) {
  require_frame(m, residual, "patchwise residual");
  const int r = m.kernel_size_ / 2;
  Image Z = Image::Zero(m.height_ + 2 * r, m.width_ + 2 * r);
  for (int t = 0; t < m.tiles(); ++t) {
    const auto s = m.support(t);
    const int bh = s.y1 - s.y0, bw = s.x1 - s.x0;
    const Image sw = tile_weight_block(m.row_weights_[t / m.tiles_x_], m.col_weights_[t % m.tiles_x_], s) *
                     residual.block(s.y0, s.x0, bh, bw);
    const Kernel& h = m.kernels_[t];
    for (int i = 0; i < h.rows(); ++i)
      for (int j = 0; j < h.cols(); ++j)
        if (h(i, j) != 0.0) Z.block(s.y0 + 2 * r - i, s.x0 + 2 * r - j, bh, bw) += h(i, j) * sw;
  }
  return fold_replicate(Z, r);
}

std::vector<Kernel> patchwise_gradients(const PatchwiseModel& m, const Image& img, const Image& residual) {
  require_frame(m, img, "patchwise input");
  require_frame(m, residual, "patchwise residual");
  const int K = m.kernel_size_, r = K / 2;
  const Image P = pad_replicate(img, r);
  std::vector<Kernel> g(static_cast<std::size_t>(m.tiles()));
#pragma omp parallel for schedule(static)
  for (int t = 0; t < m.tiles(); ++t) {
    const auto s = m.support(t);
    const int bh = s.y1 - s.y0, bw = s.x1 - s.x0;
    const Image sw = tile_weight_block(m.row_weights_[t / m.tiles_x_], m.col_weights_[t % m.tiles_x_], s) *
                     residual.block(s.y0, s.x0, bh, bw);
    g[t].resize(K, K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) g[t](i, j) = (sw * P.block(s.y0 + 2 * r - i, s.x0 + 2 * r - j, bh, bw)).sum();
  }
  return g;
}

PatchwiseFit patchwise_fit(const std::vector<CalibPair>& pairs, const PatchwiseConfig& cfg) {
  if (pairs.empty()) throw InputError("patch-wise fit needs at least one image pair");
  if (!(cfg.lr > 0) || cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lambda_kern >= 0) ||
      !(cfg.lr_final_fraction > 0 && cfg.lr_final_fraction <= 1))
    throw InputError("invalid patch-wise fit configuration");
  const FocalStack& s0 = pairs.front().stack;
  const int N = s0.size(), H = s0.height(), W = s0.width();
  for (const auto& p : pairs) {
    p.stack.validate();
    if (p.stack.size() != N) throw InputError("calibration stacks disagree in N");
    require_shape(p.target, H, W, "calibration target");
    for (const auto& sl : p.stack.slices) require_shape(sl, H, W, "calibration slice");
  }
  Eigen::Vector2i grid = default_patch_grid(H, W);
  if (cfg.tiles_y > 0) grid.x() = cfg.tiles_y;
  if (cfg.tiles_x > 0) grid.y() = cfg.tiles_x;

  PatchwiseFit fit;
  fit.slices.assign(static_cast<std::size_t>(N), PatchwiseModel(H, W, grid.x(), grid.y(), cfg.kernel_size, cfg.overlap));
  const int T = fit.slices.front().tiles();
  const int K2 = cfg.kernel_size * cfg.kernel_size;
  const Eigen::Index P = static_cast<Eigen::Index>(N) * T * K2;
  Eigen::VectorXd theta(P), grad(P), m1 = Eigen::VectorXd::Zero(P), m2 = m1;
  auto kernel_at = [&](int k, int t) -> Kernel& { return fit.slices[k].kernel(t); };
  auto offset = [&](int k, int t) { return (static_cast<Eigen::Index>(k) * T + t) * K2; };
  for (int k = 0; k < N; ++k)
    for (int t = 0; t < T; ++t) theta.segment(offset(k, t), K2) = kernel_at(k, t).reshaped<Eigen::RowMajor>().matrix();

  const int L = static_cast<int>(pairs.size());
  const int B = std::min(cfg.batch, L);
  const long total_steps = static_cast<long>((L + B - 1) / B) * cfg.epochs;
  const double hw = static_cast<double>(H) * W;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(static_cast<std::size_t>(L));
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  constexpr double kPi = 3.14159265358979323846;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int b0 = 0; b0 < L; b0 += B) {
      const int nb = std::min(B, L - b0);
      grad.setZero();
      double data = 0.0;
      for (int bi = 0; bi < nb; ++bi) {
        const auto& pr = pairs[order[b0 + bi]];
        for (int k = 0; k < N; ++k) {
          const Image res = patchwise_forward(fit.slices[k], pr.target) - pr.stack.slices[k];
          data += res.square().sum() / hw;
          const auto g = patchwise_gradients(fit.slices[k], pr.target, res);
          for (int t = 0; t < T; ++t)
            grad.segment(offset(k, t), K2) += (2.0 / (nb * hw)) * g[t].reshaped<Eigen::RowMajor>().matrix();
        }
      }
      data /= nb;
      const double l1 = theta.cwiseAbs().sum();
      grad += cfg.lambda_kern * theta.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
      const double loss = data + cfg.lambda_kern * l1;
      if (!std::isfinite(loss)) throw ComputeError("patch-wise fit diverged at epoch " + std::to_string(epoch));
      epoch_loss += loss * nb;

      ++step;
      const double progress = total_steps > 1 ? static_cast<double>(step - 1) / (total_steps - 1) : 1.0;
      const double f = cfg.lr_final_fraction;
      const double lr = cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(kPi * progress)));
      m1 = 0.9 * m1 + 0.1 * grad;
      m2 = 0.999 * m2 + 0.001 * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(0.9, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(0.999, static_cast<double>(step));
      theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
      for (int k = 0; k < N; ++k)
        for (int t = 0; t < T; ++t)
          kernel_at(k, t).reshaped<Eigen::RowMajor>() = theta.segment(offset(k, t), K2).array();
    }
    fit.loss_log.push_back(epoch_loss / L);
  }
  return fit;
}

PatchwiseOperator::PatchwiseOperator(std::vector<PatchwiseModel> slices, std::vector<int> indices)
    : models_(std::move(slices)), indices_(std::move(indices)) {
  if (models_.empty()) throw InputError("patch-wise operator needs at least one slice");
  if (indices_.empty()) {
    indices_.resize(models_.size());
    std::iota(indices_.begin(), indices_.end(), 0);
  }
  for (int i : indices_)
    if (i < 0 || i >= static_cast<int>(models_.size())) throw InputError("patch-wise slice index out of range");
}

// ---------------------------------------------------------------------------
// Stack fusion

Image stack_average(const FocalStack& stack) {
  stack.validate();
  Image acc = stack.slices[0];
  for (int k = 1; k < stack.size(); ++k) acc += stack.slices[k];
  return acc / static_cast<double>(stack.size());
}

namespace {

Image box_filter(const Image& img, int r) {
  const Image P = pad_replicate(img, r);
  const Eigen::Index h = img.rows(), w = img.cols();
  Image rows = Image::Zero(P.rows(), w);
  for (int j = 0; j <= 2 * r; ++j) rows += P.block(0, j, P.rows(), w);
  Image out = Image::Zero(h, w);
  for (int i = 0; i <= 2 * r; ++i) out += rows.block(i, 0, h, w);
  return out / static_cast<double>((2 * r + 1) * (2 * r + 1));
}

}  // namespace

std::vector<Image> petzval_masks(const FocalStack& stack, int window) {
  stack.validate();
  if (stack.size() < 2) throw InputError("Petzval composite needs at least 2 slices");
  const int h = stack.height(), w = stack.width();
  Image best = focus_measure(stack.slices[0], window);
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(h, w);
  for (int k = 1; k < stack.size(); ++k) {
    const Image fm = focus_measure(stack.slices[k], window);
    const auto better = fm > best;
    arg = better.select(k, arg);
    best = better.select(fm, best);
  }
  std::vector<Image> masks;
  Image total = Image::Zero(h, w);
  for (int k = 0; k < stack.size(); ++k) {
    masks.push_back(box_filter((arg == k).cast<double>(), 3));
    total += masks.back();
  }
  for (auto& m : masks) m /= total;
  return masks;
}

Image petzval_composite(const FocalStack& stack, int window) {
  const auto masks = petzval_masks(stack, window);
  Image out = Image::Zero(stack.height(), stack.width());
  for (int k = 0; k < stack.size(); ++k) out += masks[k] * stack.slices[k];
  return out;
}

int sharpest_slice(const FocalStack& stack, int window) {
  stack.validate();
  const int h = stack.height(), w = stack.width();
  int best = 0;
  double score = -1.0;
  for (int k = 0; k < stack.size(); ++k) {
    // scored on the on-axis rectangle
    const double s = focus_measure(stack.slices[k], window).block(h / 4, w / 4, std::max(1, h / 2), std::max(1, w / 2)).mean();
    if (s > score) score = s, best = k;
  }
  return best;
}

} // namespace cmirror
