#include "cmirror/calib.hpp"

#include "cmirror/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cmirror {

// ---------------------------------------------------------------------------
// Radiometry

void RadiometricCal::validate() {
  if (vignetting.empty()) throw InputError("radiometric calibration has no vignetting frames");
  if (!(epsilon_v > 0.0)) throw InputError("epsilon_v must be positive");
  std::stable_sort(vignetting.begin(), vignetting.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [z, v] : vignetting) require_same_shape(offset, v, "vignetting frame");
}

Image RadiometricCal::vignetting_at(double z) const {
  if (vignetting.empty()) throw InputError("radiometric calibration has no vignetting frames");
  Image v;
  if (vignetting.size() == 1 || z <= vignetting.front().first) {
    v = vignetting.front().second;
  } else if (z >= vignetting.back().first) {
    v = vignetting.back().second;
  } else {
    std::size_t i = 1;
    while (vignetting[i].first < z) ++i;
    const auto& [z0, v0] = vignetting[i - 1];
    const auto& [z1, v1] = vignetting[i];
    const double a = (z - z0) / (z1 - z0);
    v = (1.0 - a) * v0 + a * v1;
  }
  return v.max(epsilon_v);
}

Image radiometric_correct(const Image& raw, const RadiometricCal& cal, double z) {
  require_same_shape(raw, cal.offset, "raw frame vs offset");
  const Image v = cal.vignetting_at(z);
  require_same_shape(raw, v, "raw frame vs vignetting");
  return (raw - cal.offset).max(0.0) / v;
}

FocalStack radiometric_correct(const FocalStack& raw, const RadiometricCal& cal) {
  raw.validate();
  FocalStack out;
  out.z0 = raw.z0;
  out.dz = raw.dz;
  out.corrected = true;
  out.slices.reserve(raw.slices.size());
  for (int k = 0; k < raw.size(); ++k) out.slices.push_back(radiometric_correct(raw.slices[k], cal, raw.z(k)));
  return out;
}

// ---------------------------------------------------------------------------
// Targets

TargetKind parse_target_kind(const std::string& s) {
  if (s == "random_dots") return TargetKind::random_dots;
  if (s == "aruco_grid_proxy") return TargetKind::aruco_grid_proxy;
  if (s == "sector_star") return TargetKind::sector_star;
  if (s == "binary_random") return TargetKind::binary_random;
  throw InputError("unknown target kind '" + s + "'");
}

namespace {

void check_canvas(const CalibTarget& t) {
  if (t.height < 1 || t.width < 1) throw InputError("target canvas must be non-empty");
}

void check_density(double d) {
  if (!(d > 0.0 && d < 1.0)) throw InputError("dot density must lie in (0, 1)");
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

std::vector<Eigen::Vector2i> random_dot_positions(const CalibTarget& t) {
  check_canvas(t);
  check_density(t.dot_density);
  const long total = static_cast<long>(t.height) * t.width;
  const long n = std::lround(t.dot_density * static_cast<double>(total));

  // partial Fisher-Yates: the first n entries become a uniform sample without replacement
  std::vector<long> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), 0L);
  std::mt19937_64 rng(t.seed);
  for (long i = 0; i < n; ++i) {
    std::uniform_int_distribution<long> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Eigen::Vector2i> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out.emplace_back(static_cast<int>(idx[i] % t.width), static_cast<int>(idx[i] / t.width));
  return out;
}

std::vector<Eigen::Vector2d> grid_dot_positions(const CalibTarget& t) {
  check_canvas(t);
  if (t.grid < 2) throw InputError("dot grid needs at least 2×2 dots");
  std::vector<Eigen::Vector2d> out;
  for (int i = 0; i < t.grid; ++i)
    for (int j = 0; j < t.grid; ++j) {
      const double fx = 0.15 + 0.7 * j / (t.grid - 1);
      const double fy = 0.15 + 0.7 * i / (t.grid - 1);
      out.emplace_back(fx * (t.width - 1), fy * (t.height - 1));
    }
  return out;
}

double sector_star_value(double theta, int spokes) {
  double a = std::fmod(theta, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  const long sector = static_cast<long>(std::floor(spokes * a / kPi));
  return sector % 2 == 0 ? 1.0 : 0.0;
}

void draw_sector_star(Image& canvas, const Eigen::Vector2d& center, double radius, int spokes) {
  if (spokes < 1) throw InputError("sector star needs at least one spoke");
  for (Eigen::Index y = 0; y < canvas.rows(); ++y)
    for (Eigen::Index x = 0; x < canvas.cols(); ++x) {
      const double dx = static_cast<double>(x) - center.x();
      const double dy = static_cast<double>(y) - center.y();
      if (dx * dx + dy * dy > radius * radius) continue;
      canvas(y, x) = sector_star_value(std::atan2(dy, dx), spokes);
    }
}

Image generate_target(const CalibTarget& t) {
  check_canvas(t);
  Image img = Image::Zero(t.height, t.width);
  switch (t.kind) {
    case TargetKind::random_dots: {
      for (const auto& p : random_dot_positions(t))
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int y = p.y() + dy, x = p.x() + dx;
            if (y >= 0 && y < t.height && x >= 0 && x < t.width) img(y, x) = 1.0;
          }
      break;
    }
    case TargetKind::aruco_grid_proxy: {
      const double r = std::max(1.5, std::min(t.height, t.width) / 40.0);
      for (const auto& c : grid_dot_positions(t)) {
        const int y0 = static_cast<int>(std::floor(c.y() - r)), y1 = static_cast<int>(std::ceil(c.y() + r));
        const int x0 = static_cast<int>(std::floor(c.x() - r)), x1 = static_cast<int>(std::ceil(c.x() + r));
        for (int y = std::max(0, y0); y <= std::min(t.height - 1, y1); ++y)
          for (int x = std::max(0, x0); x <= std::min(t.width - 1, x1); ++x)
            if ((x - c.x()) * (x - c.x()) + (y - c.y()) * (y - c.y()) <= r * r) img(y, x) = 1.0;
      }
      break;
    }
    case TargetKind::sector_star: {
      img.setConstant(0.5);
      const Eigen::Vector2d c(0.5 * (t.width - 1), 0.5 * (t.height - 1));
      draw_sector_star(img, c, 0.5 * std::min(t.height, t.width) - 1.0, t.spokes);
      break;
    }
    case TargetKind::binary_random: {
      check_density(t.dot_density);
      if (t.cell < 1) throw InputError("binary target cell must be >= 1 px");
      std::mt19937_64 rng(t.seed);
      std::bernoulli_distribution on(t.dot_density);
      const int gh = (t.height + t.cell - 1) / t.cell, gw = (t.width + t.cell - 1) / t.cell;
      for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j)
          if (on(rng)) img.block(i * t.cell, j * t.cell, std::min(t.cell, t.height - i * t.cell),
                                 std::min(t.cell, t.width - j * t.cell)).setConstant(1.0);
      break;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Geometry

std::vector<Correspondence> detect_dot_correspondences(const Image& capture,
                                                       const std::vector<Eigen::Vector2d>& monitor_points,
                                                       const Homography& guess, double search_radius) {
  std::vector<Correspondence> out;
  const int h = static_cast<int>(capture.rows()), w = static_cast<int>(capture.cols());
  const int r = static_cast<int>(std::ceil(search_radius));
  for (const auto& m : monitor_points) {
    const Eigen::Vector2d p = guess.apply(m);
    const int cx = static_cast<int>(std::lround(p.x())), cy = static_cast<int>(std::lround(p.y()));
    const int x0 = std::max(0, cx - r), x1 = std::min(w - 1, cx + r);
    const int y0 = std::max(0, cy - r), y1 = std::min(h - 1, cy + r);
    if (x0 > x1 || y0 > y1) continue;
    const auto win = capture.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1);
    // background: median of the window border
    std::vector<double> border;
    for (Eigen::Index j = 0; j < win.cols(); ++j) border.push_back(win(0, j)), border.push_back(win(win.rows() - 1, j));
    for (Eigen::Index i = 1; i + 1 < win.rows(); ++i) border.push_back(win(i, 0)), border.push_back(win(i, win.cols() - 1));
    std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
    const double bg = border[border.size() / 2];
    if (win.maxCoeff() - bg < 1e-6) continue;
    double sw = 0, sx = 0, sy = 0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if ((x - p.x()) * (x - p.x()) + (y - p.y()) * (y - p.y()) > search_radius * search_radius) continue;
        const double v = capture(y, x) - bg;
        if (v <= 0) continue;
        sw += v;
        sx += v * x;
        sy += v * y;
      }
    if (sw <= 0) continue;
    out.push_back({m, Eigen::Vector2d(sx / sw, sy / sw)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Focus

Image focus_measure(const Image& img, int window) {
  if (window < 3 || window % 2 == 0) throw InputError("focus window must be odd and >= 3");
  if (window > img.rows() || window > img.cols()) throw InputError("focus window larger than image");
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  const int r = window / 2;
  Image out(h, w);
  // windows are clipped at the frame; shifted two-pass variance, flat regions give exactly 0
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      const auto win = img.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1);
      const double ref = win(0, 0);
      const double dm = (win - ref).mean();
      const double var = (win - ref - dm).square().mean();
      out(y, x) = std::sqrt(var) / (ref + dm + 1e-6);
    }
  }
  return out;
}

BestFocus best_focus(const FocalStack& stack, int window) {
  stack.validate();
  if (stack.size() < 2) throw InputError("best focus needs at least 2 slices");
  const int h = stack.height(), w = stack.width();
  BestFocus out;
  out.surface = Image::Constant(h, w, stack.z(0));
  Image best;
  double best_score = -1.0;
  for (int k = 0; k < stack.size(); ++k) {
    const Image fm = focus_measure(stack.slices[k], window);
    const double score = fm.block(h / 4, w / 4, std::max(1, h / 2), std::max(1, w / 2)).mean();
    if (score > best_score) {
      best_score = score;
      out.z_best = stack.z(k);
    }
    if (k == 0) {
      best = fm;
      continue;
    }
    const auto better = fm > best;
    out.surface = better.select(stack.z(k), out.surface);
    best = better.select(fm, best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

void CalibConfig::validate() const {
  if (components < 1) throw InputError("calibration needs Q >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InputError("kernel size must be odd");
  if (images < 1) throw InputError("calibration needs L >= 1");
  if (!(lr > 0)) throw InputError("learning rate must be positive");
  if (!(lr_final_fraction > 0 && lr_final_fraction <= 1)) throw InputError("lr_final_fraction must lie in (0, 1]");
  if (!(lambda_kern >= 0)) throw InputError("lambda_kern must be >= 0");
  if (epochs < 1 || batch < 1) throw InputError("epochs and batch must be >= 1");
  if (weight_downsample < 1) throw InputError("weight_downsample must be >= 1");
  if (!(bounds.det > 0 && bounds.translation >= 0)) throw InputError("affine bounds must be positive");
}

CalibConfig calib_config_from(const KeyValueConfig& cfg) {
  CalibConfig c;
  c.components = static_cast<int>(cfg.get_int("components", c.components));
  c.kernel_size = static_cast<int>(cfg.get_int("kernel_size", c.kernel_size));
  c.images = static_cast<int>(cfg.get_int("images", c.images));
  c.lr = cfg.get_double("lr", c.lr);
  c.lr_final_fraction = cfg.get_double("lr_final_fraction", c.lr_final_fraction);
  c.lambda_kern = cfg.get_double("lambda_kern", c.lambda_kern);
  c.epochs = static_cast<int>(cfg.get_int("epochs", c.epochs));
  c.batch = static_cast<int>(cfg.get_int("batch", c.batch));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long>(c.seed)));
  c.weight_downsample = static_cast<int>(cfg.get_int("weight_downsample", c.weight_downsample));
  c.nonnegative_weights = cfg.get_bool("nonnegative_weights", c.nonnegative_weights);
  c.tie_warps_across_k = cfg.get_bool("tie_warps_across_k", c.tie_warps_across_k);
  c.fit_warps = cfg.get_bool("fit_warps", c.fit_warps);
  c.bounds.det = cfg.get_double("bound_det", c.bounds.det);
  c.bounds.translation = cfg.get_double("bound_t", c.bounds.translation);
  c.validate();
  return c;
}

SeidelConvModel initial_model(int height, int width, int slices, const CalibConfig& cfg) {
  cfg.validate();
  SeidelConvModel m(height, width, cfg.kernel_size, cfg.components, slices, cfg.weight_downsample);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nR(0.0, cfg.init_sigma_R), nt(0.0, cfg.init_sigma_t);
  std::uniform_real_distribution<double> uk(-1e-3, 1e-3);
  for (int k = 0; k < slices; ++k)
    for (int q = 0; q < cfg.components; ++q) {
      auto& c = m.component(k, q);
      if (cfg.fit_warps) {
        if (cfg.tie_warps_across_k && k > 0) {
          c.warp = m.component(0, q).warp;
        } else {
          for (int i = 0; i < 4; ++i) c.warp.R(i / 2, i % 2) += nR(rng);
          c.warp.t += Eigen::Vector2d(nt(rng), nt(rng));
          project_affine(c.warp, cfg.bounds);
        }
      }
      for (Eigen::Index i = 0; i < c.kernel.size(); ++i) c.kernel.data()[i] += uk(rng);
    }
  return m;
}

namespace {

// Flat view of every trainable scalar: per (k, q) record R(4), t(2), kernel, weight grid.
struct ParamLayout {
  std::size_t per_component = 0;
  std::size_t kernel_size = 0;
  std::size_t weight_size = 0;
  int slices = 0;
  int components = 0;

  explicit ParamLayout(const SeidelConvModel& m)
      : kernel_size(static_cast<std::size_t>(m.kernel_size()) * m.kernel_size()),
        weight_size(static_cast<std::size_t>(m.weight_grid_height()) * m.weight_grid_width()),
        slices(m.slices()),
        components(m.components()) {
    per_component = 6 + kernel_size + weight_size;
  }
  std::size_t total() const { return per_component * slices * components; }
  std::size_t base(int k, int q) const { return per_component * (static_cast<std::size_t>(k) * components + q); }
};

void pack(const SeidelConvModel& m, const ParamLayout& lay, Eigen::VectorXd& v) {
  v.resize(static_cast<Eigen::Index>(lay.total()));
  for (int k = 0; k < lay.slices; ++k)
    for (int q = 0; q < lay.components; ++q) {
      const auto& c = m.component(k, q);
      double* p = v.data() + lay.base(k, q);
      p[0] = c.warp.R(0, 0), p[1] = c.warp.R(0, 1), p[2] = c.warp.R(1, 0), p[3] = c.warp.R(1, 1);
      p[4] = c.warp.t.x(), p[5] = c.warp.t.y();
      std::copy_n(c.kernel.data(), lay.kernel_size, p + 6);
      std::copy_n(c.weight.data(), lay.weight_size, p + 6 + lay.kernel_size);
    }
}

void unpack(const Eigen::VectorXd& v, const ParamLayout& lay, SeidelConvModel& m) {
  for (int k = 0; k < lay.slices; ++k)
    for (int q = 0; q < lay.components; ++q) {
      auto& c = m.component(k, q);
      const double* p = v.data() + lay.base(k, q);
      c.warp.R << p[0], p[1], p[2], p[3];
      c.warp.t = Eigen::Vector2d(p[4], p[5]);
      std::copy_n(p + 6, lay.kernel_size, c.kernel.data());
      std::copy_n(p + 6 + lay.kernel_size, lay.weight_size, c.weight.data());
    }
}

void accumulate(const SliceGradient& g, int k, double scale, const ParamLayout& lay, Eigen::VectorXd& out) {
  for (int q = 0; q < lay.components; ++q) {
    const auto& c = g[q];
    double* p = out.data() + lay.base(k, q);
    p[0] += scale * c.dR(0, 0), p[1] += scale * c.dR(0, 1), p[2] += scale * c.dR(1, 0), p[3] += scale * c.dR(1, 1);
    p[4] += scale * c.dt.x(), p[5] += scale * c.dt.y();
    for (std::size_t i = 0; i < lay.kernel_size; ++i) p[6 + i] += scale * c.dkernel.data()[i];
    for (std::size_t i = 0; i < lay.weight_size; ++i) p[6 + lay.kernel_size + i] += scale * c.dweight.data()[i];
  }
}

void check_pairs(const std::vector<CalibPair>& pairs, const SeidelConvModel& m) {
  if (pairs.empty()) throw InputError("calibration needs at least one image pair");
  for (const auto& p : pairs) {
    p.stack.validate();
    if (p.stack.size() != m.slices()) throw InputError("calibration stacks disagree in N");
    require_shape(p.target, m.height(), m.width(), "calibration target");
    for (const auto& s : p.stack.slices) require_shape(s, m.height(), m.width(), "calibration slice");
  }
}

}  // namespace

FitResult fit_model(const std::vector<CalibPair>& pairs, const CalibConfig& cfg) {
  if (pairs.empty()) throw InputError("calibration needs at least one image pair");
  const auto& s = pairs.front().stack;
  return fit_model(pairs, cfg, initial_model(s.height(), s.width(), s.size(), cfg));
}

FitResult fit_model(const std::vector<CalibPair>& pairs, const CalibConfig& cfg, SeidelConvModel model) {
  cfg.validate();
  model.validate();
  check_pairs(pairs, model);
  if (model.kernel_size() != cfg.kernel_size || model.components() != cfg.components)
    throw InputError("initial model disagrees with calibration config");

  const int N = model.slices(), Q = model.components();
  const int L = static_cast<int>(pairs.size());
  const double hw = static_cast<double>(model.height()) * model.width();
  const ParamLayout lay(model);

  // per-parameter learning-rate scale and update mask
  Eigen::VectorXd lr_scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(lay.total()));
  const double t_scale = cfg.translation_lr_scale > 0 ? cfg.translation_lr_scale
                                                      : 0.5 * std::max(model.height(), model.width());
  for (int k = 0; k < N; ++k)
    for (int q = 0; q < Q; ++q) {
      const auto b = static_cast<Eigen::Index>(lay.base(k, q));
      if (!cfg.fit_warps) {
        lr_scale.segment(b, 6).setZero();
        model.component(k, q).warp = AffineWarp::identity();
      } else {
        lr_scale.segment(b + 4, 2).setConstant(t_scale);
      }
    }

  Eigen::VectorXd theta, grad(lr_scale.size()), m1 = Eigen::VectorXd::Zero(lr_scale.size()), m2 = m1;
  pack(model, lay, theta);

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const int B = std::min(cfg.batch, L);
  const int steps_per_epoch = (L + B - 1) / B;
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  long step = 0;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(static_cast<std::size_t>(L));
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  result.loss_log.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (int s0 = 0; s0 < L; s0 += B) {
      const int nb = std::min(B, L - s0);
      grad.setZero();
      double data = 0.0;
      for (int bi = 0; bi < nb; ++bi) {
        const auto& pair = pairs[order[s0 + bi]];
        for (int k = 0; k < N; ++k) {
          const SliceEvaluation ev = evaluate_slice(model, pair.target, k);
          const Image r = ev.output - pair.stack.slices[k];
          data += r.square().sum() / hw;
          accumulate(param_gradients(model, ev, r, 0.0), k, 2.0 / (nb * hw), lay, grad);
        }
      }
      data /= nb;
      double l1 = 0.0;
      for (int k = 0; k < N; ++k)
        for (int q = 0; q < Q; ++q) {
          const auto b = static_cast<Eigen::Index>(lay.base(k, q)) + 6;
          const auto& h = model.component(k, q).kernel;
          l1 += h.abs().sum();
          for (Eigen::Index i = 0; i < h.size(); ++i) {
            const double v = h.data()[i];
            grad[b + i] += cfg.lambda_kern * ((v > 0) - (v < 0));
          }
        }
      const double loss = data + cfg.lambda_kern * l1;
      if (!std::isfinite(loss) || !grad.allFinite())
        throw ComputeError("calibration diverged: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += loss * nb;

      if (cfg.tie_warps_across_k && cfg.fit_warps && N > 1)
        for (int q = 0; q < Q; ++q) {
          Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
          for (int k = 0; k < N; ++k) sum += grad.segment<6>(static_cast<Eigen::Index>(lay.base(k, q)));
          for (int k = 0; k < N; ++k) grad.segment<6>(static_cast<Eigen::Index>(lay.base(k, q))) = sum;
        }

      ++step;
      const double progress = total_steps > 1 ? static_cast<double>(step - 1) / (total_steps - 1) : 1.0;
      const double f = cfg.lr_final_fraction;
      const double lr = cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(kPi * progress)));
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      theta.array() -= lr * lr_scale.array() * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);

      unpack(theta, lay, model);
      for (int k = 0; k < N; ++k)
        for (int q = 0; q < Q; ++q) {
          auto& c = model.component(k, q);
          if (cfg.fit_warps) project_affine(c.warp, cfg.bounds);
          if (cfg.nonnegative_weights) c.weight = c.weight.max(0.0);
        }
      pack(model, lay, theta);
    }
    result.loss_log.push_back(epoch_loss / L);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace cmirror
