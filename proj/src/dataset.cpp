#include "cmirror/dataset.hpp"

#include "cmirror/errors.hpp"
#include "cmirror/io.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace fs = std::filesystem;

namespace cmirror {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedTag : std::uint64_t { kOffset = 1, kTargets = 2, kCaptures = 3, kGrid = 4, kScene = 5 };

std::string index_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

std::string z_name(double z) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "z%04ld.pfm", std::lround(z));
  return buf;
}

}  // namespace

void FixtureConfig::validate() const {
  spec.validate();
  if (height < 16 || width < 16) throw InputError("fixture frame must be at least 16×16");
  if (n < 1 || images < 1) throw InputError("fixture needs n >= 1 and images >= 1");
  if (!(dz > 0)) throw InputError("fixture dz must be > 0");
  if (monitor_margin < 0) throw InputError("monitor margin must be >= 0");
  if (grid_dots < 3) throw InputError("dot grid needs at least 3×3 dots");
}

FixtureConfig fixture_from_config(const KeyValueConfig& cfg) {
  auto keys = aberration_spec_keys();
  keys.insert({"height", "width", "z0", "dz", "n", "images", "target_kind", "dot_density", "grid_dots",
               "monitor_margin", "rotation_deg", "perspective", "offset_level", "offset_pattern", "seed"});
  cfg.require_known(keys);
  FixtureConfig f;
  f.spec = aberration_spec_from_config(cfg, false);
  f.height = static_cast<int>(cfg.get_int("height", f.height));
  f.width = static_cast<int>(cfg.get_int("width", f.width));
  f.z0 = cfg.get_double("z0", f.z0);
  f.dz = cfg.get_double("dz", f.dz);
  f.n = static_cast<int>(cfg.get_int("n", f.n));
  f.images = static_cast<int>(cfg.get_int("images", f.images));
  if (cfg.has("target_kind")) f.target_kind = parse_target_kind(cfg.get_string("target_kind"));
  f.dot_density = cfg.get_double("dot_density", f.dot_density);
  f.grid_dots = static_cast<int>(cfg.get_int("grid_dots", f.grid_dots));
  f.monitor_margin = static_cast<int>(cfg.get_int("monitor_margin", f.monitor_margin));
  f.rotation_deg = cfg.get_double("rotation_deg", f.rotation_deg);
  f.perspective = cfg.get_double("perspective", f.perspective);
  f.offset_level = cfg.get_double("offset_level", f.offset_level);
  f.offset_pattern = cfg.get_double("offset_pattern", f.offset_pattern);
  f.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long>(f.seed)));
  f.validate();
  return f;
}

Homography CalibDataset::nominal_homography() const {
  Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
  T.block<2, 1>(0, 2) = -monitor_offset;
  return Homography::normalized(T);
}

Homography fixture_homography(const FixtureConfig& f) {
  const double m = f.monitor_margin;
  const Eigen::Vector2d cm(0.5 * (f.width + 2 * m - 1), 0.5 * (f.height + 2 * m - 1));
  const Eigen::Vector2d cs(0.5 * (f.width - 1), 0.5 * (f.height - 1));
  const double a = f.rotation_deg * 3.14159265358979323846 / 180.0;
  Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity(), from_center = Eigen::Matrix3d::Identity();
  to_center.block<2, 1>(0, 2) = -cm;
  from_center.block<2, 1>(0, 2) = cs;
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  rot.block<2, 2>(0, 0) << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
  persp(2, 0) = f.perspective;
  persp(2, 1) = -0.5 * f.perspective;
  return Homography::normalized(from_center * rot * persp * to_center);
}

FocalStack simulate_capture(const FixtureConfig& f, const Image& sensor_image, const Image& offset,
                            std::uint64_t seed) {
  FocalStack s = render_stack(sensor_image, f.spec, f.z0, f.dz, f.n, seed).stack;
  for (auto& sl : s.slices) sl += offset;
  return s;
}

Image monitor_canvas(const FixtureConfig& f, const Image& img) {
  const int m = f.monitor_margin;
  if (img.rows() == f.height + 2 * m && img.cols() == f.width + 2 * m) return img;
  require_shape(img, f.height, f.width, "scene");
  return pad_replicate(img, m);
}

CalibDataset simulate_dataset(const FixtureConfig& f, const Image* scene) {
  f.validate();
  CalibDataset ds;
  ds.z0 = f.z0;
  ds.dz = f.dz;
  ds.n = f.n;
  ds.height = f.height;
  ds.width = f.width;
  ds.monitor_height = f.height + 2 * f.monitor_margin;
  ds.monitor_width = f.width + 2 * f.monitor_margin;
  ds.monitor_offset = Eigen::Vector2d::Constant(f.monitor_margin);
  ds.grid_dots = f.grid_dots;
  ds.grid_slice = f.n / 2;
  const FrameSize frame{f.height, f.width};
  const Homography Htrue = fixture_homography(f);

  std::mt19937_64 rng(mix(f.seed, kOffset));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ds.radiometry.offset = Image(f.height, f.width);
  for (Eigen::Index i = 0; i < ds.radiometry.offset.size(); ++i)
    ds.radiometry.offset.data()[i] = std::max(0.0, f.offset_level + f.offset_pattern * u(rng));
  for (int k = 0; k < f.n; ++k)
    ds.radiometry.vignetting.emplace_back(f.z0 + k * f.dz, vignetting_frame(f.spec, f.z0 + k * f.dz, frame));
  ds.radiometry.validate();

  for (int l = 0; l < f.images; ++l) {
    CalibTarget t;
    t.kind = f.target_kind;
    t.seed = mix(f.seed, kTargets) + static_cast<std::uint64_t>(l);
    t.dot_density = f.dot_density;
    t.height = ds.monitor_height;
    t.width = ds.monitor_width;
    ds.targets.push_back(generate_target(t));
    const Image on_sensor = warp_homography(ds.targets.back(), Htrue, f.height, f.width);
    ds.stacks.push_back(simulate_capture(f, on_sensor, ds.radiometry.offset, mix(f.seed, kCaptures) + l));
  }

  CalibTarget g;
  g.kind = TargetKind::aruco_grid_proxy;
  g.grid = f.grid_dots;
  g.height = ds.monitor_height;
  g.width = ds.monitor_width;
  ds.grid_target = generate_target(g);
  const Image grid_on_sensor = warp_homography(ds.grid_target, Htrue, f.height, f.width);
  ds.grid_capture = render_stack(grid_on_sensor, f.spec, f.z0 + ds.grid_slice * f.dz, f.dz, 1, mix(f.seed, kGrid))
                        .stack.slices[0] +
                    ds.radiometry.offset;

  if (scene) {
    ds.has_scene = true;
    ds.scene_display = monitor_canvas(f, *scene);
    ds.scene_stack = simulate_capture(f, warp_homography(ds.scene_display, Htrue, f.height, f.width),
                                      ds.radiometry.offset, mix(f.seed, kScene));
  }
  return ds;
}

void write_dataset(const CalibDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "targets");
  fs::create_directories(dir / "stacks");
  fs::create_directories(dir / "vignetting");
  fs::create_directories(dir / "grid");
  write_key_values({{"z0", format_double(ds.z0)},
                    {"dz", format_double(ds.dz)},
                    {"n", std::to_string(ds.n)},
                    {"images", std::to_string(ds.targets.size())},
                    {"height", std::to_string(ds.height)},
                    {"width", std::to_string(ds.width)},
                    {"monitor_height", std::to_string(ds.monitor_height)},
                    {"monitor_width", std::to_string(ds.monitor_width)},
                    {"monitor_offset_x", format_double(ds.monitor_offset.x())},
                    {"monitor_offset_y", format_double(ds.monitor_offset.y())},
                    {"grid_dots", std::to_string(ds.grid_dots)},
                    {"grid_slice", std::to_string(ds.grid_slice)},
                    {"epsilon_v", format_double(ds.radiometry.epsilon_v)}},
                   dir / "meta.toml");
  for (std::size_t l = 0; l < ds.targets.size(); ++l) {
    const std::string name = index_name(static_cast<int>(l));
    write_pfm(ds.targets[l], dir / "targets" / (name + ".pfm"));
    write_stack(ds.stacks[l], dir / "stacks" / name);
  }
  write_pfm(ds.radiometry.offset, dir / "offset.pfm");
  for (const auto& [z, v] : ds.radiometry.vignetting) write_pfm(v, dir / "vignetting" / z_name(z));
  write_pfm(ds.grid_target, dir / "grid" / "target.pfm");
  write_pfm(ds.grid_capture, dir / "grid" / "capture.pfm");
  if (ds.has_scene) {
    fs::create_directories(dir / "scene");
    write_pfm(ds.scene_display, dir / "scene" / "display.pfm");
    write_stack(ds.scene_stack, dir / "scene" / "stack");
  }
}

CalibDataset read_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.toml";
  if (!fs::exists(meta_path)) throw InputError("dataset metadata not found: " + meta_path.string());
  const KeyValueConfig meta = KeyValueConfig::parse_file(meta_path);
  meta.require_known({"z0", "dz", "n", "images", "height", "width", "monitor_height", "monitor_width",
                      "monitor_offset_x", "monitor_offset_y", "grid_dots", "grid_slice", "epsilon_v"});
  CalibDataset ds;
  ds.z0 = meta.get_double("z0");
  ds.dz = meta.get_double("dz");
  ds.n = static_cast<int>(meta.get_int("n"));
  const int L = static_cast<int>(meta.get_int("images"));
  ds.height = static_cast<int>(meta.get_int("height"));
  ds.width = static_cast<int>(meta.get_int("width"));
  ds.monitor_height = static_cast<int>(meta.get_int("monitor_height"));
  ds.monitor_width = static_cast<int>(meta.get_int("monitor_width"));
  ds.monitor_offset = {meta.get_double("monitor_offset_x", 0.0), meta.get_double("monitor_offset_y", 0.0)};
  ds.grid_dots = static_cast<int>(meta.get_int("grid_dots", 5));
  ds.grid_slice = static_cast<int>(meta.get_int("grid_slice", 0));
  ds.radiometry.epsilon_v = meta.get_double("epsilon_v", 1e-3);
  if (ds.n < 1 || L < 0 || ds.height < 1 || ds.width < 1 || ds.grid_slice < 0 || ds.grid_slice >= ds.n)
    throw InputError(meta_path.string() + ": inconsistent dataset dimensions");

  for (int l = 0; l < L; ++l) {
    const std::string name = index_name(l);
    ds.targets.push_back(read_pfm(dir / "targets" / (name + ".pfm")));
    require_shape(ds.targets.back(), ds.monitor_height, ds.monitor_width, "target " + name);
    FocalStack s = read_stack(dir / "stacks" / name);
    if (s.size() != ds.n || s.height() != ds.height || s.width() != ds.width)
      throw InputError("stack " + name + " disagrees with " + meta_path.string());
    ds.stacks.push_back(std::move(s));
  }
  ds.radiometry.offset = read_pfm(dir / "offset.pfm");
  require_shape(ds.radiometry.offset, ds.height, ds.width, "offset frame");
  const fs::path vdir = dir / "vignetting";
  if (fs::is_directory(vdir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(vdir))
      if (e.path().extension() == ".pfm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      const std::string stem = p.stem().string();
      if (stem.size() < 2 || stem[0] != 'z') throw InputError("unexpected vignetting file " + p.string());
      std::size_t used = 0;
      double z = 0;
      try {
        z = std::stod(stem.substr(1), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != stem.size() - 1) throw InputError("cannot read axial position from " + p.string());
      ds.radiometry.vignetting.emplace_back(z, read_pfm(p));
    }
  }
  ds.radiometry.validate();
  ds.grid_target = read_pfm(dir / "grid" / "target.pfm");
  ds.grid_capture = read_pfm(dir / "grid" / "capture.pfm");
  require_shape(ds.grid_capture, ds.height, ds.width, "grid capture");
  if (fs::exists(dir / "scene" / "display.pfm")) {
    ds.has_scene = true;
    ds.scene_display = read_pfm(dir / "scene" / "display.pfm");
    require_shape(ds.scene_display, ds.monitor_height, ds.monitor_width, "scene display");
    ds.scene_stack = read_stack(dir / "scene" / "stack");
    if (ds.scene_stack.size() != ds.n) throw InputError("scene stack disagrees with dataset n");
  }
  return ds;
}

HomographyEstimate calibrate_homography(const CalibDataset& ds, std::size_t* correspondences) {
  RadiometricCal cal = ds.radiometry;
  cal.validate();
  CalibTarget g;
  g.kind = TargetKind::aruco_grid_proxy;
  g.grid = ds.grid_dots;
  g.height = ds.monitor_height;
  g.width = ds.monitor_width;
  const auto dots = grid_dot_positions(g);
  const double spacing = 0.7 * std::min(ds.monitor_height, ds.monitor_width) / (ds.grid_dots - 1);
  const Image grid = radiometric_correct(ds.grid_capture, cal, ds.z0 + ds.grid_slice * ds.dz);
  const auto corr = detect_dot_correspondences(grid, dots, ds.nominal_homography(), std::min(12.0, 0.4 * spacing));
  if (correspondences) *correspondences = corr.size();
  return estimate_homography(corr);
}

PreparedCalibration prepare_calibration(const CalibDataset& ds) {
  RadiometricCal cal = ds.radiometry;
  cal.validate();
  PreparedCalibration out;
  out.homography = calibrate_homography(ds, &out.correspondences);

  for (std::size_t l = 0; l < ds.targets.size(); ++l) {
    CalibPair p;
    p.target = warp_homography(ds.targets[l], out.homography.homography, ds.height, ds.width);
    p.stack = radiometric_correct(ds.stacks[l], cal);
    out.pairs.push_back(std::move(p));
  }
  return out;
}

FocalStack corrected_scene(const CalibDataset& ds) {
  if (!ds.has_scene) throw InputError("dataset has no scene");
  RadiometricCal cal = ds.radiometry;
  cal.validate();
  return radiometric_correct(ds.scene_stack, cal);
}

Image scene_reference(const CalibDataset& ds, const Homography& monitor_to_sensor) {
  if (!ds.has_scene) throw InputError("dataset has no scene");
  return warp_homography(ds.scene_display, monitor_to_sensor, ds.height, ds.width);
}

} // namespace cmirror
