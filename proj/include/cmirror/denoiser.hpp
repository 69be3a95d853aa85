#pragma once

#include "cmirror/errors.hpp"
#include "cmirror/image.hpp"

#include <string>
#include <sys/types.h>

namespace cmirror {

/// Black-box denoiser D(x, σ) used as the plug-and-play prior.
class Denoiser {
public:
  virtual ~Denoiser() = default;
  virtual Image denoise(const Image& x, double sigma) = 0;
};

class DenoiserError : public ComputeError {
public:
  enum class Kind { spawn_failed, child_exited, malformed_reply, wrong_dimensions, non_finite, timeout };

  DenoiserError(Kind kind, const std::string& what) : ComputeError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

const char* to_string(DenoiserError::Kind kind);

/// External denoiser speaking the line-plus-PFM protocol over its standard streams:
///   request: "DENOISE sigma=<float>\n" followed by one PFM frame
///   reply:   one PFM frame of the same dimensions
/// The child is started once (`/bin/sh -c command`) and reused for every call.
/// Any protocol failure kills the child and throws DenoiserError; later calls fail fast.
class SubprocessDenoiser : public Denoiser {
public:
  explicit SubprocessDenoiser(std::string command, double timeout_seconds = 30.0);
  ~SubprocessDenoiser() override;
  SubprocessDenoiser(const SubprocessDenoiser&) = delete;
  SubprocessDenoiser& operator=(const SubprocessDenoiser&) = delete;

  Image denoise(const Image& x, double sigma) override;

private:
  [[noreturn]] void fail(DenoiserError::Kind kind, const std::string& what);
  void shutdown();

  std::string command_;
  double timeout_;
  pid_t pid_ = -1;
  int fd_ = -1;
  bool broken_ = false;
};

/// Separable Gaussian filter, replicate boundary; sigma_px ≤ 0 returns the input.
Image gaussian_blur(const Image& img, double sigma_px);

/// Built-in smoothing prior: Gaussian filter with std `px_per_sigma`·σ pixels.
class SmoothingDenoiser : public Denoiser {
public:
  explicit SmoothingDenoiser(double px_per_sigma = 25.0) : px_per_sigma_(px_per_sigma) {}
  Image denoise(const Image& x, double sigma) override { return gaussian_blur(x, px_per_sigma_ * sigma); }

private:
  double px_per_sigma_;
};

/// Returns its input. Useful for checking that the PnP loop degenerates to least squares.
class EchoDenoiser : public Denoiser {
public:
  Image denoise(const Image& x, double) override { return x; }
};

} // namespace cmirror
