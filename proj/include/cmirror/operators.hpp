#pragma once

#include "cmirror/image.hpp"

#include <memory>
#include <vector>

namespace cmirror {

class SeidelConvModel;

/// A family of linear blur operators A_k, one per measurement, sharing one latent image.
class BlurOperator {
public:
  virtual ~BlurOperator() = default;

  virtual int slices() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual Image apply(const Image& x, int k) const = 0;
  virtual Image apply_adjoint(const Image& y, int k) const = 0;
};

/// SeidelConv slices, optionally restricted to a subset of slice indices. The model is
/// held by reference and must outlive the operator.
class SeidelConvOperator : public BlurOperator {
public:
  explicit SeidelConvOperator(const SeidelConvModel& model);
  SeidelConvOperator(const SeidelConvModel& model, std::vector<int> slice_indices);

  int slices() const override { return static_cast<int>(indices_.size()); }
  int height() const override;
  int width() const override;
  Image apply(const Image& x, int k) const override;
  Image apply_adjoint(const Image& y, int k) const override;

private:
  const SeidelConvModel& model_;
  std::vector<int> indices_;
};

/// Collapses all slices of `inner` into one measurement: Σ_k m_k ⊙ A_k x.
/// Uniform masks 1/N give the operator of a focal-stack average; per-pixel selection
/// masks give the operator of an all-in-focus composite.
class MaskedMixtureOperator : public BlurOperator {
public:
  MaskedMixtureOperator(std::shared_ptr<const BlurOperator> inner, std::vector<Image> masks);

  int slices() const override { return 1; }
  int height() const override { return inner_->height(); }
  int width() const override { return inner_->width(); }
  Image apply(const Image& x, int k) const override;
  Image apply_adjoint(const Image& y, int k) const override;

private:
  std::shared_ptr<const BlurOperator> inner_;
  std::vector<Image> masks_;
};

/// Σ_k A_kᵀ A_k x, summed in slice order.
Image normal_apply(const BlurOperator& op, const Image& x);

/// Power-iteration estimate of ‖Σ_k A_kᵀ A_k‖₂. The starting vector is a fixed
/// pseudo-random image, so the result is deterministic.
double lipschitz_estimate(const BlurOperator& op, int iters);

} // namespace cmirror
