#pragma once

#include "cmirror/config.hpp"
#include "cmirror/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>

namespace cmirror {

/// Parameters of the synthetic single-mirror optic. Blur shapes are Gaussian: defocus
/// from field curvature, radial elongation (coma), tangential elongation (astigmatism),
/// and an optional radial centroid displacement (distortion, off by default), all about a
/// decentered optical axis.
struct AberrationSpec {
  double focal_length_mm = 50.0;
  double f_number = 1.0;
  double petzval_radius_mm = 50.0;  // a single mirror's Petzval radius equals its focal length
  double coma_coeff = 1.0;          // px of extra radial σ at normalized field radius 1
  double astig_coeff = 0.8;         // px of extra tangential σ at normalized field radius 1 (∝ r²)
  double distortion_coeff = 0.0;    // px of radial displacement at normalized field radius 1 (∝ r³)
  Eigen::Vector2d decenter{4.0, -3.0};  // px, optical axis offset from the frame center
  double pixel_pitch_um = 64.0;
  double base_sigma_px = 0.3;   // in-focus blur floor
  double noise_sigma = 0.005;
  double vignette_strength = 0.3;
  int control_grid = 16;

  /// Throws InputError on non-positive focal length, f-number or Petzval radius.
  void validate() const;
};

/// Keys read by aberration_spec_from_config; strict mode rejects any other key.
const std::set<std::string>& aberration_spec_keys();
AberrationSpec aberration_spec_from_config(const KeyValueConfig& cfg, bool strict = true);
KeyValueList to_key_values(const AberrationSpec& spec);

struct FrameSize {
  int height = 0;
  int width = 0;
};

/// Distance of p = (x, y) from the decentered optical axis, in pixels.
double field_radius_px(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame);
/// Field radius normalized by the frame half-diagonal.
double normalized_field_radius(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame);

/// Axial focus offset of the curved focal surface at p, in µm: r² / (2 R_p).
double field_sag(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame);

/// Geometric defocus blur |z − sag(p)| / (2 F#) in pixels.
double defocus_sigma_px(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z,
                        FrameSize frame);

struct PsfShape {
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();  // px², (x, y) axes
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();            // px
};

PsfShape psf_shape(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z, FrameSize frame);

/// Normalized kernel sampled from a Gaussian PSF shape; size is the smallest odd K'
/// whose half-width covers 2σ_major + |mean|.
Kernel psf_kernel(const PsfShape& shape);

/// psf_kernel(psf_shape(...)).
Kernel local_psf(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z, FrameSize frame);

/// Multiplicative falloff at axial position z (µm); identically 1 when vignette_strength = 0.
Image vignetting_frame(const AberrationSpec& spec, double sensor_z, FrameSize frame);

struct RenderedStack {
  FocalStack stack;                // vignetted, noisy, not offset-corrected
  std::vector<Image> blur_sigma;   // per-slice major-axis PSF σ map (px)
  AberrationSpec spec;
};

/// Blur only: spatially varying Gaussian PSFs interpolated bilinearly between a
/// control grid of PSF shapes, replicate boundary.
Image render_slice_optics(const Image& truth, const AberrationSpec& spec, double sensor_z);

/// Focal stack at z0 + k·dz with vignetting and seeded Gaussian noise.
RenderedStack render_stack(const Image& truth, const AberrationSpec& spec, double z0, double dz,
                           int n, std::uint64_t seed);

/// Dead-leaves scene: overlapping discs with power-law radii and uniform gray levels,
/// plus a faint smooth shading. Values in [0, 1].
Image dead_leaves_scene(int height, int width, std::uint64_t seed);

} // namespace cmirror
