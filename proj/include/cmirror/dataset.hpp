#pragma once

#include "cmirror/calib.hpp"
#include "cmirror/homography.hpp"
#include "cmirror/image.hpp"
#include "cmirror/simulate.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cmirror {

/// Synthetic monitor-calibration rig.
struct FixtureConfig {
  int height = 128;
  int width = 160;
  AberrationSpec spec;
  double z0 = 0.0;
  double dz = 200.0;
  int n = 3;
  int images = 8;  // L calibration targets
  TargetKind target_kind = TargetKind::random_dots;
  double dot_density = 0.04;
  int grid_dots = 5;
  int monitor_margin = 8;     // monitor canvas exceeds the sensor by this much on each side
  double rotation_deg = 0.6;  // monitor-to-sensor in-plane rotation
  double perspective = 2e-5;  // projective term of the monitor-to-sensor map
  double offset_level = 0.02;
  double offset_pattern = 0.005;  // fixed-pattern amplitude of the dark frame
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fixture keys accepted by fixture_from_config, in addition to the AberrationSpec keys.
FixtureConfig fixture_from_config(const KeyValueConfig& cfg);

/// On-disk calibration dataset:
///   meta.toml              key = value: z0 dz n images height width monitor_height
///                          monitor_width monitor_offset_x monitor_offset_y grid_dots
///                          grid_slice epsilon_v
///   targets/NNN.pfm        displayed targets, monitor pixels
///   stacks/NNN/k.pfm       raw captures of target NNN at z0 + k·dz
///   offset.pfm             dark frame
///   vignetting/zZZZZ.pfm   flat-field frame at axial position ZZZZ µm
///   grid/target.pfm        dot-grid target, monitor pixels
///   grid/capture.pfm       raw capture of the dot grid at slice grid_slice
///   scene/display.pfm      optional held-out scene, monitor pixels
///   scene/stack/           raw focal stack of the scene (stack.txt + k.pfm)
struct CalibDataset {
  double z0 = 0.0;
  double dz = 200.0;
  int n = 1;
  int height = 0;
  int width = 0;
  int monitor_height = 0;
  int monitor_width = 0;
  Eigen::Vector2d monitor_offset = Eigen::Vector2d::Zero();  // nominal sensor = monitor − offset
  int grid_dots = 5;
  int grid_slice = 0;

  std::vector<Image> targets;
  std::vector<FocalStack> stacks;
  RadiometricCal radiometry;
  Image grid_target;
  Image grid_capture;

  bool has_scene = false;
  Image scene_display;  // monitor pixels
  FocalStack scene_stack;

  /// Pure translation by −monitor_offset.
  Homography nominal_homography() const;
};

/// The monitor → sensor map used by simulate_dataset for this fixture.
Homography fixture_homography(const FixtureConfig& f);

/// Places a sensor-sized image in the middle of the monitor canvas, replicating its
/// border into the margin. Monitor-sized images pass through unchanged.
Image monitor_canvas(const FixtureConfig& f, const Image& img);

/// Renders the calibration set, radiometric frames, the dot grid, and (when `scene` is
/// non-null) a held-out scene shown on the monitor like the targets.
CalibDataset simulate_dataset(const FixtureConfig& f, const Image* scene = nullptr);

/// Raw capture of a sensor-space image under the fixture optics, with dark offset.
FocalStack simulate_capture(const FixtureConfig& f, const Image& sensor_image, const Image& offset,
                            std::uint64_t seed);

void write_dataset(const CalibDataset& ds, const std::filesystem::path& dir);
CalibDataset read_dataset(const std::filesystem::path& dir);

struct PreparedCalibration {
  std::vector<CalibPair> pairs;
  HomographyEstimate homography;
  std::size_t correspondences = 0;
};

/// Dot-grid detection followed by DLT.
HomographyEstimate calibrate_homography(const CalibDataset& ds, std::size_t* correspondences = nullptr);

/// Dot detection → DLT → targets resampled into the sensor frame; stacks corrected.
PreparedCalibration prepare_calibration(const CalibDataset& ds);

/// Radiometrically corrected scene stack.
FocalStack corrected_scene(const CalibDataset& ds);

/// Ground truth of the scene in sensor pixels: the displayed image resampled through the
/// calibrated monitor-to-sensor homography, as for the calibration targets.
Image scene_reference(const CalibDataset& ds, const Homography& monitor_to_sensor);

} // namespace cmirror
