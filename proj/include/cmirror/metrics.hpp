#pragma once

#include "cmirror/config.hpp"
#include "cmirror/image.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

namespace cmirror {

/// On-axis = centered (H/2)×(W/2) rectangle; off-axis = its complement.
struct RegionSplit {
  Mask on_axis;
  Mask off_axis;

  static RegionSplit for_frame(int height, int width);
};

Mask full_mask(int height, int width);

/// Identical inputs report this instead of +∞.
inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB for data range [0, 1], over masked pixels.
double psnr(const Image& a, const Image& b, const Mask& mask);
double psnr(const Image& a, const Image& b);

/// Gaussian-window SSIM (11×11, σ = 1.5, C1 = 0.01², C2 = 0.03²) averaged over the
/// windows whose center pixel lies in the mask. Windows are fully inside the frame.
double ssim(const Image& a, const Image& b, const Mask& mask);
double ssim(const Image& a, const Image& b);

struct MtfPoint {
  double frequency;  // line pairs per pixel
  double contrast;
};

using MtfCurve = std::vector<MtfPoint>;

/// Contrast (I95 − I5)/(I95 + I5) around circles of the given radii about a sector star
/// with `spokes` periods; frequency = spokes / (2π r).
MtfCurve sector_star_mtf(const Image& img, const Eigen::Vector2d& center, int spokes,
                         const std::vector<double>& radii);

struct Mtf30 {
  double frequency = 0.0;
  bool reached = false;  // false when no point reaches 0.3 contrast
};

/// Highest frequency with contrast ≥ 0.3, linearly interpolated at the crossing.
Mtf30 mtf30(MtfCurve curve);

/// Per-method metrics row for comparison tables.
struct MethodMetrics {
  std::string method;
  double psnr_full = 0, psnr_on_axis = 0, psnr_off_axis = 0;
  double ssim_full = 0, ssim_on_axis = 0, ssim_off_axis = 0;
};

MethodMetrics evaluate_reconstruction(const std::string& method, const Image& estimate, const Image& truth);

/// Text table with "PSNR/SSIM" pairs in On-Axis and Off-Axis columns.
std::string format_comparison_table(const std::vector<MethodMetrics>& rows);
/// Machine-readable `<method>.<metric> = value` lines.
KeyValueList comparison_key_values(const std::vector<MethodMetrics>& rows);
/// Inverse of comparison_key_values (method order follows first appearance).
std::vector<MethodMetrics> parse_comparison(const KeyValueConfig& cfg);

} // namespace cmirror
