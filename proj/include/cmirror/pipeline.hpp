#pragma once

#include "cmirror/baselines.hpp"
#include "cmirror/calib.hpp"
#include "cmirror/dataset.hpp"
#include "cmirror/metrics.hpp"
#include "cmirror/solver.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cmirror {

/// Comparison methods, in table order:
/// seidelconv coordgate patchwise11 patchwise21 avg petzval single.
const std::vector<std::string>& all_methods();

/// Comma-separated list; every entry must be a known method. Empty → all_methods().
std::vector<std::string> parse_methods(const std::string& csv);

struct EvaluationConfig {
  CalibConfig calib;
  PatchwiseConfig patch;
  SolveConfig solve;
  int focus_window = 7;
};

/// Calibrated models, fitted on first use.
class MethodModels {
public:
  MethodModels(const std::vector<CalibPair>& pairs, const EvaluationConfig& cfg) : pairs_(pairs), cfg_(cfg) {}

  void set_seidelconv(SeidelConvModel m) { seidel_ = std::move(m); }
  const SeidelConvModel& seidelconv();
  const SeidelConvModel& coordgate();
  const std::vector<PatchwiseModel>& patchwise(int kernel_size);

  /// Loss logs of the fits performed so far, by method name.
  std::vector<std::pair<std::string, std::vector<double>>> logs;

private:
  const std::vector<CalibPair>& pairs_;
  EvaluationConfig cfg_;
  std::optional<SeidelConvModel> seidel_, coordgate_;
  std::optional<std::vector<PatchwiseModel>> patch11_, patch21_;
};

/// Deconvolves `stack` the way `method` prescribes. All methods share cfg.solve.
Image reconstruct(const std::string& method, MethodModels& models, const FocalStack& stack,
                  const EvaluationConfig& cfg, Denoiser* denoiser = nullptr);

struct MethodResult {
  Image image;
  MethodMetrics metrics;
};

struct EvaluationResult {
  std::vector<MethodResult> rows;
  HomographyEstimate homography;
  Image reference;  // scene ground truth in sensor pixels
};

/// Calibrates what `methods` need on ds, reconstructs the held-out scene with each, and
/// scores against its ground truth.
EvaluationResult evaluate_methods(const CalibDataset& ds, const std::vector<std::string>& methods,
                                  const EvaluationConfig& cfg, const SeidelConvModel* seidelconv = nullptr);

/// Metrics of every raw slice of a stack against the truth.
std::vector<MethodMetrics> raw_slice_metrics(const FocalStack& stack, const Image& truth);

struct SelftestResult {
  std::vector<MethodMetrics> rows;
  MethodMetrics best_raw;
  bool passed = false;
};

/// Small end-to-end run (simulate → calibrate → deconvolve → evaluate) on a 64×64 frame.
/// Artifacts go to `out_dir`: dataset/, model.scnv, seidelconv.pfm, report.txt, table.txt.
SelftestResult run_selftest(const std::filesystem::path& out_dir, std::uint64_t seed);

} // namespace cmirror
