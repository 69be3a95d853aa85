#include "cmirror/solver.hpp"

#include "cmirror/calib.hpp"
#include "cmirror/errors.hpp"

#include <cmath>

namespace cmirror {

Prior parse_prior(const std::string& s) {
  if (s == "tv") return Prior::tv;
  if (s == "l2") return Prior::l2;
  if (s == "none") return Prior::none;
  if (s == "pnp" || s == "pnp_external") return Prior::pnp_external;
  throw InputError("unknown prior '" + s + "' (expected tv, l2, none or pnp)");
}

InitKind parse_init(const std::string& s) {
  if (s == "stack_average") return InitKind::stack_average;
  if (s == "best_slice") return InitKind::best_slice;
  if (s == "zeros") return InitKind::zeros;
  throw InputError("unknown init '" + s + "' (expected stack_average, best_slice or zeros)");
}

std::string to_string(Prior p) {
  switch (p) {
    case Prior::tv: return "tv";
    case Prior::l2: return "l2";
    case Prior::none: return "none";
    case Prior::pnp_external: return "pnp";
  }
  return "?";
}

void SolveConfig::validate() const {
  if (!(lambda >= 0)) throw InputError("lambda must be >= 0");
  if (iters < 1) throw InputError("iters must be >= 1");
  if (!(sigma_min > 0 && sigma_max >= sigma_min)) throw InputError("need sigma_max >= sigma_min > 0");
  if (tv_inner < 1 || pnp_data_steps < 1 || power_iters < 1) throw InputError("inner iteration counts must be >= 1");
  if (!std::isfinite(step)) throw InputError("step must be finite");
}

// ---------------------------------------------------------------------------
// TV

namespace {

// forward differences, zero across the last row / column
void gradient(const Image& x, Image& gx, Image& gy) {
  const Eigen::Index h = x.rows(), w = x.cols();
  gx = Image::Zero(h, w);
  gy = Image::Zero(h, w);
  if (w > 1) gx.leftCols(w - 1) = x.rightCols(w - 1) - x.leftCols(w - 1);
  if (h > 1) gy.topRows(h - 1) = x.bottomRows(h - 1) - x.topRows(h - 1);
}

// −(adjoint of gradient)
Image divergence(const Image& px, const Image& py) {
  const Eigen::Index h = px.rows(), w = px.cols();
  Image d = Image::Zero(h, w);
  if (w > 1) {
    d.leftCols(w - 1) += px.leftCols(w - 1);
    d.rightCols(w - 1) -= px.leftCols(w - 1);
  }
  if (h > 1) {
    d.topRows(h - 1) += py.topRows(h - 1);
    d.bottomRows(h - 1) -= py.topRows(h - 1);
  }
  return d;
}

}  // namespace

double total_variation(const Image& img) {
  Image gx, gy;
  gradient(img, gx, gy);
  return (gx.square() + gy.square()).sqrt().sum();
}

Image tv_prox(const Image& img, double weight, int inner_iters) {
  if (!(weight > 0)) return img;
  const Eigen::Index h = img.rows(), w = img.cols();
  Image px = Image::Zero(h, w), py = px, rx = px, ry = px, gx, gy;
  double t = 1.0;
  const double tau = 1.0 / (8.0 * weight);
  for (int it = 0; it < inner_iters; ++it) {
    gradient(img + weight * divergence(rx, ry), gx, gy);
    Image qx = rx + tau * gx, qy = ry + tau * gy;
    const Image norm = (qx.square() + qy.square()).sqrt().max(1.0);
    qx /= norm;
    qy /= norm;
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    rx = qx + ((t - 1.0) / tn) * (qx - px);
    ry = qy + ((t - 1.0) / tn) * (qy - py);
    px = std::move(qx);
    py = std::move(qy);
    t = tn;
  }
  return img + weight * divergence(px, py);
}

// ---------------------------------------------------------------------------

double data_objective(const BlurOperator& op, const std::vector<Image>& m, const Image& x) {
  double f = 0.0;
  for (int k = 0; k < op.slices(); ++k) f += (op.apply(x, k) - m[k]).square().sum();
  return f;
}

Image initial_estimate(const std::vector<Image>& m, InitKind init) {
  if (m.empty()) throw InputError("no measurements");
  switch (init) {
    case InitKind::zeros: return Image::Zero(m[0].rows(), m[0].cols());
    case InitKind::stack_average: {
      Image acc = m[0];
      for (std::size_t k = 1; k < m.size(); ++k) acc += m[k];
      return acc / static_cast<double>(m.size());
    }
    case InitKind::best_slice: {
      const int win = std::min<Eigen::Index>({7, m[0].rows(), m[0].cols()}) >= 7 ? 7 : 3;
      std::size_t best = 0;
      double score = -1.0;
      for (std::size_t k = 0; k < m.size(); ++k) {
        const double s = focus_measure(m[k], win).mean();
        if (s > score) score = s, best = k;
      }
      return m[best];
    }
  }
  return m[0];
}

namespace {

struct Problem {
  const BlurOperator& op;
  const std::vector<Image>& m;
  Prior prior;
  double lambda;
  int tv_inner;

  double regularizer(const Image& x) const {
    switch (prior) {
      case Prior::tv: return lambda * total_variation(x);
      case Prior::l2: return lambda * x.square().sum();
      default: return 0.0;
    }
  }
  double objective(const Image& x) const { return data_objective(op, m, x) + regularizer(x); }

  Image data_gradient(const Image& x) const {
    Image g = Image::Zero(x.rows(), x.cols());
    for (int k = 0; k < op.slices(); ++k) g += op.apply_adjoint(op.apply(x, k) - m[k], k);
    return 2.0 * g;
  }

  Image prox(const Image& v, double s) const {
    switch (prior) {
      case Prior::tv: return tv_prox(v, s * lambda, tv_inner);
      case Prior::l2: return v / (1.0 + 2.0 * s * lambda);
      default: return v;
    }
  }
};

// Accelerated proximal gradient with restart. A step that would raise the objective
// resets the momentum and retries from x; if even that fails, x is kept.
struct Fista {
  const Problem& p;
  double s;
  Image x, y;
  double fx = 0.0;
  double t = 1.0;
  bool y_is_x = true;

  Fista(const Problem& prob, double step, Image x0) : p(prob), s(step), x(std::move(x0)), y(x) {
    fx = p.objective(x);
  }

  void iterate() {
    Image z = p.prox(y - s * p.data_gradient(y), s);
    double fz = p.objective(z);
    if (fz <= fx) {
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = z + ((t - 1.0) / tn) * (z - x);
      x = std::move(z);
      fx = fz;
      t = tn;
      y_is_x = false;
      return;
    }
    t = 1.0;
    if (!y_is_x) {
      z = p.prox(x - s * p.data_gradient(x), s);
      fz = p.objective(z);
      if (fz <= fx) {
        x = std::move(z);
        fx = fz;
      }
    }
    y = x;
    y_is_x = true;
  }

  // Replaces x (e.g. by a denoised copy), keeping the momentum displacement y − x.
  void reset_point(Image nx) {
    if ((nx == x).all()) return;
    y = nx + (y - x);
    x = std::move(nx);
    fx = p.objective(x);
  }
};

}  // namespace

SolveResult deconvolve(const BlurOperator& op, const std::vector<Image>& m, const SolveConfig& cfg,
                       Denoiser* denoiser) {
  cfg.validate();
  if (static_cast<int>(m.size()) != op.slices())
    throw InputError("measurement count " + std::to_string(m.size()) + " does not match operator slices " +
                     std::to_string(op.slices()));
  for (const auto& y : m) {
    require_shape(y, op.height(), op.width(), "measurement");
    if (!all_finite(y)) throw InputError("measurement contains non-finite pixels");
  }
  if (cfg.prior == Prior::pnp_external && denoiser == nullptr)
    throw InputError("prior pnp needs a denoiser");

  SolveResult res;
  res.step = cfg.step > 0 ? cfg.step : 0.9 / (2.0 * lipschitz_estimate(op, cfg.power_iters));
  if (!std::isfinite(res.step) || !(res.step > 0)) throw ComputeError("could not determine a step size");

  const Prior inner_prior = cfg.prior == Prior::pnp_external ? Prior::none : cfg.prior;
  const Problem prob{op, m, inner_prior, cfg.lambda, cfg.tv_inner};
  Fista f(prob, res.step, initial_estimate(m, cfg.init));

  res.loss_log.reserve(static_cast<std::size_t>(cfg.iters));
  if (cfg.prior != Prior::pnp_external) {
    for (int i = 0; i < cfg.iters; ++i) {
      f.iterate();
      res.loss_log.push_back(f.fx);
    }
  } else {
    const double la = std::log(cfg.sigma_max), lb = std::log(cfg.sigma_min);
    for (int i = 0; i < cfg.iters; ++i) {
      for (int j = 0; j < cfg.pnp_data_steps; ++j) f.iterate();
      const double a = cfg.iters > 1 ? static_cast<double>(i) / (cfg.iters - 1) : 0.0;
      f.reset_point(denoiser->denoise(f.x, std::exp(la + a * (lb - la))));
      res.loss_log.push_back(f.fx);
    }
  }
  if (!all_finite(f.x)) throw ComputeError("deconvolution produced non-finite pixels");
  res.image = std::move(f.x);
  return res;
}

SolveResult deconvolve(const FocalStack& stack, const SeidelConvModel& model, const SolveConfig& cfg,
                       Denoiser* denoiser) {
  stack.validate();
  if (stack.size() != model.slices())
    throw InputError("stack has " + std::to_string(stack.size()) + " slices but model has " +
                     std::to_string(model.slices()));
  if (stack.height() != model.height() || stack.width() != model.width())
    throw InputError("stack dimensions do not match model");
  const SeidelConvOperator op(model);
  return deconvolve(op, stack.slices, cfg, denoiser);
}

} // namespace cmirror
