#include "cmirror/errors.hpp"
#include "cmirror/io.hpp"
#include "cmirror/parallel.hpp"
#include "cmirror/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

namespace fs = std::filesystem;
using namespace cmirror;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  bool verbose = false;
};

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

// Relative paths inside a config file are resolved against the file's directory.
fs::path resolve(const KeyValueConfig& cfg, const std::string& value) {
  const fs::path p(value);
  if (p.is_absolute() || cfg.source().empty() || cfg.source() == "<memory>") return p;
  return fs::path(cfg.source()).parent_path() / p;
}

KeyValueConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw InputError("config file not found: " + path);
  return KeyValueConfig::parse_file(path);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw InputError(what + " not found: " + p.string());
}

std::unique_ptr<Denoiser> make_denoiser(const std::string& cmd, double timeout) {
  if (cmd.empty()) throw InputError("prior pnp needs --denoiser-cmd (or builtin:smooth / builtin:echo)");
  if (cmd == "builtin:smooth") return std::make_unique<SmoothingDenoiser>();
  if (cmd == "builtin:echo") return std::make_unique<EchoDenoiser>();
  return std::make_unique<SubprocessDenoiser>(cmd, timeout);
}

// --- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string truth, spec, out;
  std::optional<double> z0, dz;
  std::optional<int> n;
};

int run_simulate(const SimulateArgs& a, const Globals& g) {
  FixtureConfig f = a.spec.empty() ? FixtureConfig{} : fixture_from_config(load_config(a.spec));
  f.seed = g.seed;
  if (a.z0) f.z0 = *a.z0;
  if (a.dz) f.dz = *a.dz;
  if (a.n) f.n = *a.n;
  Image truth;
  if (!a.truth.empty()) {
    require_file(a.truth, "truth image");
    truth = read_pfm(a.truth);
    f.height = static_cast<int>(truth.rows());
    f.width = static_cast<int>(truth.cols());
  } else {
    truth = dead_leaves_scene(f.height, f.width, g.seed + 1);
  }
  f.validate();
  const CalibDataset ds = simulate_dataset(f, &truth);
  write_dataset(ds, a.out);
  log(g, "wrote " + std::to_string(ds.targets.size()) + " calibration stacks to " + a.out);
  return 0;
}

// --- calibrate ------------------------------------------------------------

const std::set<std::string>& calib_keys() {
  static const std::set<std::string> k{"components", "kernel_size", "images", "lr", "lr_final_fraction",
                                       "lambda_kern", "epochs", "batch", "seed", "weight_downsample",
                                       "nonnegative_weights", "tie_warps_across_k", "fit_warps", "bound_det",
                                       "bound_t"};
  return k;
}

struct CalibrateArgs {
  std::string data, config, out, log;
  bool coordgate = false;
};

int run_calibrate(const CalibrateArgs& a, const Globals& g) {
  const KeyValueConfig cfg = load_config(a.config);
  cfg.require_known(calib_keys());
  CalibConfig cc = calib_config_from(cfg);
  if (!cfg.has("seed")) cc.seed = g.seed;
  if (a.coordgate) cc.fit_warps = false;
  const CalibDataset ds = read_dataset(a.data);
  const PreparedCalibration prep = prepare_calibration(ds);
  log(g, "homography from " + std::to_string(prep.correspondences) + " dots, mean transfer error " +
             format_double(prep.homography.mean_transfer_error) + " px");
  const FitResult fit = fit_model(prep.pairs, cc);
  save_model(fit.model, a.out);
  if (!a.log.empty()) {
    std::ofstream out(a.log);
    if (!out) throw InputError("cannot write " + a.log);
    for (std::size_t i = 0; i < fit.loss_log.size(); ++i) out << i << " " << format_double(fit.loss_log[i]) << "\n";
  }
  log(g, "final loss " + format_double(fit.loss_log.back()));
  return 0;
}

// --- deconvolve -----------------------------------------------------------

struct DeconvolveArgs {
  std::string config, stack, model, data, truth, prior, init, denoiser_cmd, out, report;
  std::optional<double> lambda, sigma_min, sigma_max, denoiser_timeout;
  std::optional<int> iters;
};

void write_report(const KeyValueList& kv, const std::string& path) {
  if (fs::path(path).extension() == ".json") {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : kv) {
      char* end = nullptr;
      const double d = std::strtod(v.c_str(), &end);
      if (!v.empty() && *end == '\0') j[k] = d;
      else j[k] = v;
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << j.dump(2) << "\n";
  } else {
    write_key_values(kv, path);
  }
}

int run_deconvolve(DeconvolveArgs a, const Globals& g) {
  const KeyValueConfig cfg = load_config(a.config);
  cfg.require_known({"stack", "model", "data", "truth", "prior", "lambda", "iters", "sigma_min", "sigma_max",
                     "denoiser_cmd", "denoiser_timeout", "init", "out", "report"});
  auto from_cfg = [&](std::string& field, const char* key) {
    if (field.empty() && cfg.has(key)) field = resolve(cfg, cfg.get_string(key)).string();
  };
  from_cfg(a.stack, "stack");
  from_cfg(a.model, "model");
  from_cfg(a.data, "data");
  from_cfg(a.truth, "truth");
  from_cfg(a.out, "out");
  from_cfg(a.report, "report");
  if (a.prior.empty()) a.prior = cfg.get_string("prior", "tv");
  if (a.init.empty()) a.init = cfg.get_string("init", "stack_average");
  if (a.denoiser_cmd.empty()) a.denoiser_cmd = cfg.get_string("denoiser_cmd", "");

  SolveConfig sc;
  sc.prior = parse_prior(a.prior);
  sc.init = parse_init(a.init);
  sc.lambda = a.lambda.value_or(cfg.get_double("lambda", sc.lambda));
  sc.iters = a.iters.value_or(static_cast<int>(cfg.get_int("iters", sc.iters)));
  sc.sigma_min = a.sigma_min.value_or(cfg.get_double("sigma_min", sc.sigma_min));
  sc.sigma_max = a.sigma_max.value_or(cfg.get_double("sigma_max", sc.sigma_max));
  const double timeout = a.denoiser_timeout.value_or(cfg.get_double("denoiser_timeout", 30.0));
  sc.validate();

  if (a.model.empty()) throw InputError("deconvolve needs --model");
  if (a.out.empty()) throw InputError("deconvolve needs --out");
  require_file(a.model, "model file");
  const SeidelConvModel model = load_model(a.model);

  std::optional<CalibDataset> ds;
  if (!a.data.empty()) ds = read_dataset(a.data);
  FocalStack stack;
  if (!a.stack.empty()) {
    require_file(fs::path(a.stack) / "stack.txt", "stack");
    stack = read_stack(a.stack);
  } else if (ds && ds->has_scene) {
    stack = ds->scene_stack;
  } else {
    throw InputError("deconvolve needs --stack or a --data directory with a scene");
  }
  if (!stack.corrected) {
    if (ds) {
      RadiometricCal cal = ds->radiometry;
      cal.validate();
      stack = radiometric_correct(stack, cal);
    } else {
      log(g, "stack is not radiometrically corrected and no --data given; using it as is");
    }
  }
  Image truth;
  if (!a.truth.empty()) {
    require_file(a.truth, "truth image");
    truth = read_pfm(a.truth);
  } else if (ds && ds->has_scene && a.stack.empty()) {
    truth = scene_reference(*ds, calibrate_homography(*ds).homography);
  }

  std::unique_ptr<Denoiser> den;
  if (sc.prior == Prior::pnp_external) den = make_denoiser(a.denoiser_cmd, timeout);
  const SolveResult res = deconvolve(stack, model, sc, den.get());
  write_pfm(res.image, a.out);

  KeyValueList kv{{"prior", to_string(sc.prior)},
                  {"iters", std::to_string(sc.iters)},
                  {"lambda", format_double(sc.lambda)},
                  {"step", format_double(res.step)},
                  {"final_loss", format_double(res.loss_log.back())}};
  if (truth.size() > 0) {
    require_same_shape(truth, res.image, "truth vs reconstruction");
    const MethodMetrics m = evaluate_reconstruction("deconvolve", res.image, truth);
    kv.emplace_back("psnr_full", format_double(m.psnr_full));
    kv.emplace_back("psnr_on_axis", format_double(m.psnr_on_axis));
    kv.emplace_back("psnr_off_axis", format_double(m.psnr_off_axis));
    kv.emplace_back("ssim_full", format_double(m.ssim_full));
    kv.emplace_back("ssim_on_axis", format_double(m.ssim_on_axis));
    kv.emplace_back("ssim_off_axis", format_double(m.ssim_off_axis));
  }
  if (!a.report.empty()) write_report(kv, a.report);
  for (const auto& [k, v] : kv) log(g, k + " = " + v);
  return 0;
}

// --- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string data, methods, config, model, out, table;
};

EvaluationConfig evaluation_config(const KeyValueConfig& cfg, std::uint64_t seed) {
  std::set<std::string> keys = calib_keys();
  keys.insert({"patch_tiles_y", "patch_tiles_x", "patch_epochs", "patch_lr", "prior", "lambda", "iters",
               "focus_window"});
  cfg.require_known(keys);
  EvaluationConfig e;
  e.calib = calib_config_from(cfg);
  if (!cfg.has("seed")) e.calib.seed = seed;
  e.patch.tiles_y = static_cast<int>(cfg.get_int("patch_tiles_y", 0));
  e.patch.tiles_x = static_cast<int>(cfg.get_int("patch_tiles_x", 0));
  e.patch.epochs = static_cast<int>(cfg.get_int("patch_epochs", e.calib.epochs));
  e.patch.lr = cfg.get_double("patch_lr", e.calib.lr);
  e.patch.lr_final_fraction = e.calib.lr_final_fraction;
  e.patch.lambda_kern = e.calib.lambda_kern;
  e.patch.batch = e.calib.batch;
  e.patch.seed = e.calib.seed;
  e.solve.prior = parse_prior(cfg.get_string("prior", "tv"));
  if (e.solve.prior == Prior::pnp_external) throw InputError(cfg.source() + ": evaluate supports tv, l2 or none");
  e.solve.lambda = cfg.get_double("lambda", e.solve.lambda);
  e.solve.iters = static_cast<int>(cfg.get_int("iters", e.solve.iters));
  e.solve.validate();
  e.focus_window = static_cast<int>(cfg.get_int("focus_window", e.focus_window));
  return e;
}

int run_evaluate(const EvaluateArgs& a, const Globals& g) {
  const auto methods = parse_methods(a.methods);
  const EvaluationConfig cfg = evaluation_config(load_config(a.config), g.seed);
  const CalibDataset ds = read_dataset(a.data);
  std::optional<SeidelConvModel> model;
  if (!a.model.empty()) {
    require_file(a.model, "model file");
    model = load_model(a.model);
  }
  const EvaluationResult res = evaluate_methods(ds, methods, cfg, model ? &*model : nullptr);
  std::vector<MethodMetrics> rows;
  for (const auto& r : res.rows) rows.push_back(r.metrics);
  const std::string table = format_comparison_table(rows);
  std::cout << table;
  if (!a.table.empty()) std::ofstream(a.table) << table;
  if (!a.out.empty()) write_key_values(comparison_key_values(rows), a.out);
  return 0;
}

// --- report ---------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int run_report(const ReportArgs& a, const Globals&) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<MethodMetrics, int>> acc;
  for (const auto& path : a.inputs) {
    require_file(path, "metrics file");
    for (const auto& m : parse_comparison(KeyValueConfig::parse_file(path))) {
      auto it = acc.find(m.method);
      if (it == acc.end()) {
        order.push_back(m.method);
        acc.emplace(m.method, std::make_pair(m, 1));
        continue;
      }
      auto& [s, n] = it->second;
      s.psnr_full += m.psnr_full, s.psnr_on_axis += m.psnr_on_axis, s.psnr_off_axis += m.psnr_off_axis;
      s.ssim_full += m.ssim_full, s.ssim_on_axis += m.ssim_on_axis, s.ssim_off_axis += m.ssim_off_axis;
      ++n;
    }
  }
  std::vector<MethodMetrics> rows;
  for (const auto& name : order) {
    auto [s, n] = acc.at(name);
    s.psnr_full /= n, s.psnr_on_axis /= n, s.psnr_off_axis /= n;
    s.ssim_full /= n, s.ssim_on_axis /= n, s.ssim_off_axis /= n;
    rows.push_back(s);
  }
  std::cout << format_comparison_table(rows);
  if (!a.out.empty()) write_key_values(comparison_key_values(rows), a.out);
  return 0;
}

// --- selftest -------------------------------------------------------------

int run_selftest_cmd(const std::string& out, const Globals& g) {
  const SelftestResult r = run_selftest(out, g.seed);
  std::vector<MethodMetrics> rows = r.rows;
  rows.push_back(r.best_raw);
  std::cout << format_comparison_table(rows);
  std::cout << (r.passed ? "selftest passed\n" : "selftest FAILED: deconvolution did not beat the best raw slice\n");
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmirror: spatially varying PSF calibration and focal-stack deconvolution"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->default_val(0);
  app.add_option("--threads", g.threads, "Worker threads (0: runtime default)")->check(CLI::NonNegativeNumber);
  app.add_flag("--verbose", g.verbose, "Progress on stderr");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Render a synthetic calibration dataset");
  sim->add_option("--truth", sa.truth, "Scene ground truth (PFM); dead-leaves if omitted");
  sim->add_option("--spec", sa.spec, "Optics and rig key-value file");
  sim->add_option("--z0", sa.z0, "First axial position (um)");
  sim->add_option("--dz", sa.dz, "Axial step (um)");
  sim->add_option("--n", sa.n, "Number of slices");
  sim->add_option("--out", sa.out, "Output dataset directory")->required();

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Fit a SeidelConv model to a calibration dataset");
  cal->add_option("--data", ca.data, "Dataset directory")->required();
  cal->add_option("--config", ca.config, "Calibration key-value file");
  cal->add_option("--out", ca.out, "Model file")->required();
  cal->add_option("--log", ca.log, "Per-epoch loss log");
  cal->add_flag("--coordgate", ca.coordgate, "Hold warps at identity");

  DeconvolveArgs da;
  auto* dec = app.add_subcommand("deconvolve", "Reconstruct a latent image from a focal stack");
  dec->add_option("--config", da.config, "Job key-value file");
  dec->add_option("--stack", da.stack, "Focal stack directory");
  dec->add_option("--model", da.model, "Model file");
  dec->add_option("--data", da.data, "Dataset directory (radiometry, default scene)");
  dec->add_option("--truth", da.truth, "Ground truth for the report");
  dec->add_option("--prior", da.prior, "tv | l2 | none | pnp");
  dec->add_option("--init", da.init, "stack_average | best_slice | zeros");
  dec->add_option("--lambda", da.lambda, "Prior weight");
  dec->add_option("--iters", da.iters, "Outer iterations");
  dec->add_option("--sigma-min", da.sigma_min, "Final PnP noise level");
  dec->add_option("--sigma-max", da.sigma_max, "Initial PnP noise level");
  dec->add_option("--denoiser-cmd", da.denoiser_cmd, "Denoiser command, or builtin:smooth / builtin:echo");
  dec->add_option("--denoiser-timeout", da.denoiser_timeout, "Seconds per denoiser call");
  dec->add_option("--out", da.out, "Output PFM");
  dec->add_option("--report", da.report, "Metrics report (.json or key-value)");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Compare reconstruction methods on a dataset scene");
  ev->add_option("--data", ea.data, "Dataset directory with scene/")->required();
  ev->add_option("--methods", ea.methods, "Comma-separated methods");
  ev->add_option("--config", ea.config, "Evaluation key-value file");
  ev->add_option("--model", ea.model, "Pre-calibrated SeidelConv model");
  ev->add_option("--out", ea.out, "Machine-readable metrics");
  ev->add_option("--table", ea.table, "Text table");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Aggregate metrics files into one table");
  rep->add_option("--in", ra.inputs, "Metrics files from evaluate")->required();
  rep->add_option("--out", ra.out, "Aggregated machine-readable metrics");

  std::string st_out = "selftest_out";
  auto* st = app.add_subcommand("selftest", "Run the bundled 64x64 end-to-end fixture");
  st->add_option("--out", st_out, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g.threads > 0) set_thread_count(g.threads);
    if (*sim) return run_simulate(sa, g);
    if (*cal) return run_calibrate(ca, g);
    if (*dec) return run_deconvolve(da, g);
    if (*ev) return run_evaluate(ea, g);
    if (*rep) return run_report(ra, g);
    if (*st) return run_selftest_cmd(st_out, g);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ComputeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
