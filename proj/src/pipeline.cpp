#include "cmirror/pipeline.hpp"

#include "cmirror/errors.hpp"
#include "cmirror/io.hpp"

#include <fstream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;

namespace cmirror {

const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> m{"seidelconv", "coordgate", "patchwise11", "patchwise21",
                                          "avg",        "petzval",   "single"};
  return m;
}

std::vector<std::string> parse_methods(const std::string& csv) {
  if (csv.empty()) return all_methods();
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (std::find(all_methods().begin(), all_methods().end(), item) == all_methods().end())
      throw InputError("unknown method '" + item + "'");
    if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
  }
  if (out.empty()) throw InputError("no methods selected");
  return out;
}

const SeidelConvModel& MethodModels::seidelconv() {
  if (!seidel_) {
    FitResult r = fit_model(pairs_, cfg_.calib);
    logs.emplace_back("seidelconv", r.loss_log);
    seidel_ = std::move(r.model);
  }
  return *seidel_;
}

const SeidelConvModel& MethodModels::coordgate() {
  if (!coordgate_) {
    FitResult r = fit_coordgate(pairs_, cfg_.calib);
    logs.emplace_back("coordgate", r.loss_log);
    coordgate_ = std::move(r.model);
  }
  return *coordgate_;
}

const std::vector<PatchwiseModel>& MethodModels::patchwise(int kernel_size) {
  auto& slot = kernel_size == 11 ? patch11_ : patch21_;
  if (!slot) {
    PatchwiseConfig pc = cfg_.patch;
    pc.kernel_size = kernel_size;
    PatchwiseFit r = patchwise_fit(pairs_, pc);
    logs.emplace_back("patchwise" + std::to_string(kernel_size), r.loss_log);
    slot = std::move(r.slices);
  }
  return *slot;
}

Image reconstruct(const std::string& method, MethodModels& models, const FocalStack& stack,
                  const EvaluationConfig& cfg, Denoiser* denoiser) {
  if (method == "seidelconv") return deconvolve(stack, models.seidelconv(), cfg.solve, denoiser).image;
  if (method == "coordgate") return deconvolve(stack, models.coordgate(), cfg.solve, denoiser).image;
  if (method == "patchwise11" || method == "patchwise21") {
    const PatchwiseOperator op(models.patchwise(method == "patchwise11" ? 11 : 21));
    return deconvolve(op, stack.slices, cfg.solve, denoiser).image;
  }
  // single-measurement baselines keep the calibrated SeidelConv PSFs
  const SeidelConvModel& model = models.seidelconv();
  if (stack.size() != model.slices()) throw InputError("stack and model disagree in N");
  auto full = std::make_shared<SeidelConvOperator>(model);
  if (method == "avg") {
    std::vector<Image> masks(static_cast<std::size_t>(stack.size()),
                             Image::Constant(stack.height(), stack.width(), 1.0 / stack.size()));
    const MaskedMixtureOperator op(full, std::move(masks));
    return deconvolve(op, {stack_average(stack)}, cfg.solve, denoiser).image;
  }
  if (method == "petzval") {
    if (stack.size() < 2) {
      return deconvolve(*full, stack.slices, cfg.solve, denoiser).image;
    }
    auto masks = petzval_masks(stack, cfg.focus_window);
    Image composite = Image::Zero(stack.height(), stack.width());
    for (int k = 0; k < stack.size(); ++k) composite += masks[k] * stack.slices[k];
    const MaskedMixtureOperator op(full, std::move(masks));
    return deconvolve(op, {composite}, cfg.solve, denoiser).image;
  }
  if (method == "single") {
    const int k = sharpest_slice(stack, cfg.focus_window);
    const SeidelConvOperator op(model, {k});
    return deconvolve(op, {stack.slices[k]}, cfg.solve, denoiser).image;
  }
  throw InputError("unknown method '" + method + "'");
}

EvaluationResult evaluate_methods(const CalibDataset& ds, const std::vector<std::string>& methods,
                                  const EvaluationConfig& cfg, const SeidelConvModel* seidelconv) {
  if (!ds.has_scene) throw InputError("evaluation needs a dataset with scene/display.pfm");
  const PreparedCalibration prep = prepare_calibration(ds);
  const FocalStack scene = corrected_scene(ds);
  MethodModels models(prep.pairs, cfg);
  if (seidelconv) models.set_seidelconv(*seidelconv);
  EvaluationResult res;
  res.homography = prep.homography;
  res.reference = scene_reference(ds, prep.homography.homography);
  for (const auto& m : methods) {
    MethodResult r;
    r.image = reconstruct(m, models, scene, cfg);
    r.metrics = evaluate_reconstruction(m, r.image, res.reference);
    res.rows.push_back(std::move(r));
  }
  return res;
}

std::vector<MethodMetrics> raw_slice_metrics(const FocalStack& stack, const Image& truth) {
  std::vector<MethodMetrics> out;
  for (int k = 0; k < stack.size(); ++k)
    out.push_back(evaluate_reconstruction("slice" + std::to_string(k), stack.slices[k], truth));
  return out;
}

SelftestResult run_selftest(const fs::path& out_dir, std::uint64_t seed) {
  FixtureConfig f;
  f.height = 64;
  f.width = 64;
  f.images = 6;
  f.seed = seed;
  f.monitor_margin = 6;
  f.grid_dots = 4;
  f.spec.pixel_pitch_um = 128.0;  // keeps the corner sag near that of the full-size fixture
  const Image truth = dead_leaves_scene(f.height, f.width, seed + 1);
  const CalibDataset ds = simulate_dataset(f, &truth);

  fs::create_directories(out_dir);
  write_dataset(ds, out_dir / "dataset");
  const CalibDataset loaded = read_dataset(out_dir / "dataset");

  EvaluationConfig cfg;
  cfg.calib.components = 4;
  cfg.calib.kernel_size = 9;
  cfg.calib.epochs = 80;
  cfg.calib.batch = 2;
  cfg.calib.weight_downsample = 4;
  cfg.calib.seed = seed;
  cfg.calib.lr = 2e-2;
  cfg.solve.iters = 60;
  cfg.solve.lambda = 3e-3;
  cfg.patch.epochs = 80;
  cfg.patch.batch = 2;
  cfg.patch.seed = seed;
  cfg.patch.lr = 2e-2;

  const PreparedCalibration prep = prepare_calibration(loaded);
  MethodModels models(prep.pairs, cfg);
  save_model(models.seidelconv(), out_dir / "model.scnv");
  const SeidelConvModel model = load_model(out_dir / "model.scnv");
  models.set_seidelconv(model);

  const FocalStack scene = corrected_scene(loaded);
  const Image reference = scene_reference(loaded, prep.homography.homography);
  SelftestResult res;
  for (const auto& m : {std::string("seidelconv"), std::string("avg"), std::string("single")}) {
    const Image img = reconstruct(m, models, scene, cfg);
    if (m == "seidelconv") write_pfm(img, out_dir / "seidelconv.pfm");
    res.rows.push_back(evaluate_reconstruction(m, img, reference));
  }
  const auto raw = raw_slice_metrics(scene, reference);
  res.best_raw = *std::max_element(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return a.psnr_full < b.psnr_full;
  });

  KeyValueList kv = comparison_key_values(res.rows);
  kv.emplace_back("best_raw.psnr_full", format_double(res.best_raw.psnr_full));
  kv.emplace_back("homography.mean_transfer_error", format_double(prep.homography.mean_transfer_error));
  write_key_values(kv, out_dir / "report.txt");
  std::ofstream(out_dir / "table.txt") << format_comparison_table(res.rows);
  res.passed = res.rows.front().psnr_full > res.best_raw.psnr_full;
  return res;
}

} // namespace cmirror
