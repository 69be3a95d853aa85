#pragma once

#include "cmirror/config.hpp"
#include "cmirror/denoiser.hpp"
#include "cmirror/image.hpp"
#include "cmirror/operators.hpp"
#include "cmirror/seidelconv.hpp"

#include <string>
#include <vector>

namespace cmirror {

enum class Prior { tv, l2, none, pnp_external };
enum class InitKind { stack_average, best_slice, zeros };

Prior parse_prior(const std::string& s);  // tv | l2 | none | pnp | pnp_external
InitKind parse_init(const std::string& s);
std::string to_string(Prior p);

struct SolveConfig {
  double lambda = 1e-5;
  int iters = 100;
  Prior prior = Prior::tv;
  double sigma_max = 5e-2;
  double sigma_min = 1e-3;
  double step = 0.0;  // ≤ 0: 0.9 / L̂ from power iteration
  InitKind init = InitKind::stack_average;
  int tv_inner = 20;
  int pnp_data_steps = 5;
  int power_iters = 30;

  void validate() const;
};

struct SolveResult {
  Image image;
  std::vector<double> loss_log;  // objective after each outer iteration
  double step = 0.0;
};

/// min_x Σ_k ‖A_k x − y_k‖² + λ R(x).
/// tv / l2 / none: FISTA with restart on objective increase; the logged objective never
/// increases. pnp_external: per outer iteration `pnp_data_steps` accelerated data steps,
/// then x ← D(x, σ_i) with σ log-spaced from sigma_max to sigma_min. λ is unused there.
SolveResult deconvolve(const BlurOperator& op, const std::vector<Image>& measurements,
                       const SolveConfig& cfg, Denoiser* denoiser = nullptr);

SolveResult deconvolve(const FocalStack& stack, const SeidelConvModel& model, const SolveConfig& cfg,
                       Denoiser* denoiser = nullptr);

/// Σ_k ‖A_k x − y_k‖².
double data_objective(const BlurOperator& op, const std::vector<Image>& measurements, const Image& x);

/// Isotropic total variation with forward differences (Neumann boundary).
double total_variation(const Image& img);

/// Proximal map of weight·TV by fast projected gradient on the dual, `inner_iters` steps.
/// Preserves the image sum.
Image tv_prox(const Image& img, double weight, int inner_iters = 20);

/// Starting point: mean of the measurements, the sharpest one, or zeros.
Image initial_estimate(const std::vector<Image>& measurements, InitKind init);

} // namespace cmirror
