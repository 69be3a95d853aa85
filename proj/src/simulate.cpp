#include "cmirror/simulate.hpp"

#include "cmirror/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace cmirror {

void AberrationSpec::validate() const {
  if (!(focal_length_mm > 0.0)) throw InputError("aberration spec: focal_length_mm must be > 0");
  if (!(f_number > 0.0)) throw InputError("aberration spec: f_number must be > 0");
  if (!(petzval_radius_mm > 0.0)) throw InputError("aberration spec: petzval_radius_mm must be > 0");
  if (!(pixel_pitch_um > 0.0)) throw InputError("aberration spec: pixel_pitch_um must be > 0");
  if (noise_sigma < 0.0 || base_sigma_px < 0.0) throw InputError("aberration spec: negative sigma");
  if (control_grid < 2) throw InputError("aberration spec: control_grid must be >= 2");
}

const std::set<std::string>& aberration_spec_keys() {
  static const std::set<std::string> keys{"focal_length_mm", "f_number", "petzval_radius_mm", "coma_coeff",
                                          "astig_coeff", "distortion_coeff", "decenter_x", "decenter_y",
                                          "pixel_pitch_um", "base_sigma_px", "noise_sigma", "vignette_strength",
                                          "control_grid"};
  return keys;
}

AberrationSpec aberration_spec_from_config(const KeyValueConfig& cfg, bool strict) {
  if (strict) cfg.require_known(aberration_spec_keys());
  AberrationSpec s;
  s.focal_length_mm = cfg.get_double("focal_length_mm", s.focal_length_mm);
  // Petzval radius follows the focal length unless given explicitly.
  s.petzval_radius_mm = cfg.get_double("petzval_radius_mm", s.focal_length_mm);
  s.f_number = cfg.get_double("f_number", s.f_number);
  s.coma_coeff = cfg.get_double("coma_coeff", s.coma_coeff);
  s.astig_coeff = cfg.get_double("astig_coeff", s.astig_coeff);
  s.distortion_coeff = cfg.get_double("distortion_coeff", s.distortion_coeff);
  s.decenter.x() = cfg.get_double("decenter_x", s.decenter.x());
  s.decenter.y() = cfg.get_double("decenter_y", s.decenter.y());
  s.pixel_pitch_um = cfg.get_double("pixel_pitch_um", s.pixel_pitch_um);
  s.base_sigma_px = cfg.get_double("base_sigma_px", s.base_sigma_px);
  s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
  s.vignette_strength = cfg.get_double("vignette_strength", s.vignette_strength);
  s.control_grid = static_cast<int>(cfg.get_int("control_grid", s.control_grid));
  s.validate();
  return s;
}

KeyValueList to_key_values(const AberrationSpec& s) {
  return {{"focal_length_mm", format_double(s.focal_length_mm)},
          {"f_number", format_double(s.f_number)},
          {"petzval_radius_mm", format_double(s.petzval_radius_mm)},
          {"coma_coeff", format_double(s.coma_coeff)},
          {"astig_coeff", format_double(s.astig_coeff)},
          {"distortion_coeff", format_double(s.distortion_coeff)},
          {"decenter_x", format_double(s.decenter.x())},
          {"decenter_y", format_double(s.decenter.y())},
          {"pixel_pitch_um", format_double(s.pixel_pitch_um)},
          {"base_sigma_px", format_double(s.base_sigma_px)},
          {"noise_sigma", format_double(s.noise_sigma)},
          {"vignette_strength", format_double(s.vignette_strength)},
          {"control_grid", std::to_string(s.control_grid)}};
}

namespace {

Eigen::Vector2d optical_center(const AberrationSpec& spec, FrameSize frame) {
  return Eigen::Vector2d(0.5 * (frame.width - 1), 0.5 * (frame.height - 1)) + spec.decenter;
}

double half_diagonal(FrameSize frame) {
  return std::hypot(0.5 * (frame.width - 1), 0.5 * (frame.height - 1));
}

} // namespace

double field_radius_px(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame) {
  return (p - optical_center(spec, frame)).norm();
}

double normalized_field_radius(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame) {
  const double hd = half_diagonal(frame);
  return hd > 0.0 ? field_radius_px(spec, p, frame) / hd : 0.0;
}

double field_sag(const AberrationSpec& spec, const Eigen::Vector2d& p, FrameSize frame) {
  const double r_mm = field_radius_px(spec, p, frame) * spec.pixel_pitch_um / 1000.0;
  return r_mm * r_mm / (2.0 * spec.petzval_radius_mm) * 1000.0;
}

double defocus_sigma_px(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z,
                        FrameSize frame) {
  return std::abs(sensor_z - field_sag(spec, p, frame)) / (2.0 * spec.f_number) / spec.pixel_pitch_um;
}

PsfShape psf_shape(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z, FrameSize frame) {
  const Eigen::Vector2d d = p - optical_center(spec, frame);
  const double r = d.norm();
  const double rn = normalized_field_radius(spec, p, frame);
  const Eigen::Vector2d radial = r > 1e-9 ? Eigen::Vector2d(d / r) : Eigen::Vector2d(1.0, 0.0);
  const Eigen::Vector2d tangential(-radial.y(), radial.x());
  const double sd = defocus_sigma_px(spec, p, sensor_z, frame);
  const double sb2 = sd * sd + spec.base_sigma_px * spec.base_sigma_px;
  const double coma = spec.coma_coeff * rn;
  const double astig = spec.astig_coeff * rn * rn;
  PsfShape s;
  s.covariance = (sb2 + coma * coma) * radial * radial.transpose() +
                 (sb2 + astig * astig) * tangential * tangential.transpose();
  s.mean = spec.distortion_coeff * rn * rn * rn * radial;
  return s;
}

Kernel psf_kernel(const PsfShape& shape) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(shape.covariance);
  const double major = std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * major + shape.mean.norm())));
  const int size = 2 * radius + 1;
  const Eigen::Matrix2d inv = (shape.covariance + 1e-12 * Eigen::Matrix2d::Identity()).inverse();
  Kernel k(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const Eigen::Vector2d s(j - radius - shape.mean.x(), i - radius - shape.mean.y());
      k(i, j) = std::exp(-0.5 * s.dot(inv * s));
    }
  }
  return k / k.sum();
}

Kernel local_psf(const AberrationSpec& spec, const Eigen::Vector2d& p, double sensor_z, FrameSize frame) {
  return psf_kernel(psf_shape(spec, p, sensor_z, frame));
}

Image vignetting_frame(const AberrationSpec& spec, double sensor_z, FrameSize frame) {
  Image v(frame.height, frame.width);
  const double axial = 1.0 - 0.25 * spec.vignette_strength * sensor_z / 1000.0;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double rn = normalized_field_radius(spec, Eigen::Vector2d(x, y), frame);
      v(y, x) = (1.0 - spec.vignette_strength * rn * rn) * axial;
    }
  }
  return v;
}

namespace {

// Interpolated PSF shape at every pixel, stored as (cxx, cxy, cyy, mx, my).
struct ShapeField {
  std::array<Image, 5> c;
};

ShapeField shape_field(const AberrationSpec& spec, double sensor_z, FrameSize frame) {
  const int g = spec.control_grid;
  std::array<Image, 5> nodes;
  for (auto& n : nodes) n.resize(g, g);
  const double sx = frame.width > 1 ? (frame.width - 1.0) / (g - 1) : 0.0;
  const double sy = frame.height > 1 ? (frame.height - 1.0) / (g - 1) : 0.0;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const PsfShape s = psf_shape(spec, Eigen::Vector2d(j * sx, i * sy), sensor_z, frame);
      nodes[0](i, j) = s.covariance(0, 0);
      nodes[1](i, j) = s.covariance(0, 1);
      nodes[2](i, j) = s.covariance(1, 1);
      nodes[3](i, j) = s.mean.x();
      nodes[4](i, j) = s.mean.y();
    }
  }
  ShapeField f;
  for (auto& c : f.c) c.resize(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double gx = sx > 0 ? x / sx : 0.0;
      const double gy = sy > 0 ? y / sy : 0.0;
      for (int c = 0; c < 5; ++c) f.c[c](y, x) = sample_bilinear(nodes[c], gx, gy);
    }
  }
  return f;
}

} // namespace

Image render_slice_optics(const Image& truth, const AberrationSpec& spec, double sensor_z) {
  spec.validate();
  const FrameSize frame{static_cast<int>(truth.rows()), static_cast<int>(truth.cols())};
  const ShapeField field = shape_field(spec, sensor_z, frame);
  Image out(frame.height, frame.width);
  const int h = frame.height;
  const int w = frame.width;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      PsfShape s;
      s.covariance << field.c[0](y, x), field.c[1](y, x), field.c[1](y, x), field.c[2](y, x);
      s.mean << field.c[3](y, x), field.c[4](y, x);
      const Kernel k = psf_kernel(s);
      const int r = static_cast<int>(k.rows()) / 2;
      double acc = 0.0;
      for (int i = 0; i < k.rows(); ++i) {
        const int yy = std::clamp(y - (i - r), 0, h - 1);
        for (int j = 0; j < k.cols(); ++j) {
          const int xx = std::clamp(x - (j - r), 0, w - 1);
          acc += k(i, j) * truth(yy, xx);
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

RenderedStack render_stack(const Image& truth, const AberrationSpec& spec, double z0, double dz,
                           int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw InputError("render_stack: n must be >= 1");
  if (!(dz > 0.0)) throw InputError("render_stack: dz must be > 0");
  const FrameSize frame{static_cast<int>(truth.rows()), static_cast<int>(truth.cols())};
  RenderedStack out;
  out.spec = spec;
  out.stack.z0 = z0;
  out.stack.dz = dz;
  out.stack.corrected = false;
  for (int k = 0; k < n; ++k) {
    const double z = z0 + k * dz;
    Image slice = vignetting_frame(spec, z, frame) * render_slice_optics(truth, spec, z);
    if (spec.noise_sigma > 0.0) {
      std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(k) + 1);
      std::normal_distribution<double> noise(0.0, spec.noise_sigma);
      for (Eigen::Index i = 0; i < slice.size(); ++i) slice.data()[i] += noise(rng);
    }
    out.stack.slices.push_back(std::move(slice));

    const ShapeField field = shape_field(spec, z, frame);
    Image sigma(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y) {
      for (int x = 0; x < frame.width; ++x) {
        Eigen::Matrix2d c;
        c << field.c[0](y, x), field.c[1](y, x), field.c[1](y, x), field.c[2](y, x);
        sigma(y, x) = std::sqrt(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(c).eigenvalues().maxCoeff());
      }
    }
    out.blur_sigma.push_back(std::move(sigma));
  }
  return out;
}

Image dead_leaves_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Image img = Image::Constant(height, width, 0.5);
  const double rmin = 1.5;
  const double rmax = std::max(rmin + 1.0, std::min(height, width) / 5.0);
  const double a = std::pow(rmin, -2.0);
  const double b = std::pow(rmax, -2.0);
  double covered = 0.0;
  const double target = 4.0 * height * width;
  for (int n = 0; n < 200000 && covered < target; ++n) {
    const double r = std::pow(a - uni(rng) * (a - b), -0.5);
    const double cx = uni(rng) * width;
    const double cy = uni(rng) * height;
    const double gray = 0.1 + 0.8 * uni(rng);
    covered += std::numbers::pi * r * r;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r) img(y, x) = gray;
  }
  const double phase = 2.0 * std::numbers::pi * uni(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img(y, x) += 0.05 * std::sin(2.0 * std::numbers::pi * (x + 0.7 * y) / std::max(width, 1) + phase);
  return img.cwiseMax(0.0).cwiseMin(1.0);
}

} // namespace cmirror
