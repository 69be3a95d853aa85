#include "cmirror/operators.hpp"

#include "cmirror/errors.hpp"
#include "cmirror/seidelconv.hpp"

#include <random>

namespace cmirror {

SeidelConvOperator::SeidelConvOperator(const SeidelConvModel& model) : model_(model) {
  for (int k = 0; k < model.slices(); ++k) indices_.push_back(k);
}

SeidelConvOperator::SeidelConvOperator(const SeidelConvModel& model, std::vector<int> slice_indices)
    : model_(model), indices_(std::move(slice_indices)) {
  for (int k : indices_)
    if (k < 0 || k >= model.slices()) throw InputError("slice index out of range for model");
}

int SeidelConvOperator::height() const { return model_.height(); }
int SeidelConvOperator::width() const { return model_.width(); }

Image SeidelConvOperator::apply(const Image& x, int k) const {
  return forward(model_, x, indices_.at(k));
}

Image SeidelConvOperator::apply_adjoint(const Image& y, int k) const {
  return adjoint(model_, y, indices_.at(k));
}

MaskedMixtureOperator::MaskedMixtureOperator(std::shared_ptr<const BlurOperator> inner,
                                             std::vector<Image> masks)
    : inner_(std::move(inner)), masks_(std::move(masks)) {
  if (static_cast<int>(masks_.size()) != inner_->slices())
    throw InputError("mixture operator needs one mask per slice");
  for (const auto& m : masks_) require_shape(m, inner_->height(), inner_->width(), "mixture mask");
}

Image MaskedMixtureOperator::apply(const Image& x, int) const {
  Image acc = Image::Zero(height(), width());
  for (int k = 0; k < inner_->slices(); ++k) acc += masks_[k] * inner_->apply(x, k);
  return acc;
}

Image MaskedMixtureOperator::apply_adjoint(const Image& y, int) const {
  Image acc = Image::Zero(height(), width());
  for (int k = 0; k < inner_->slices(); ++k) acc += inner_->apply_adjoint(masks_[k] * y, k);
  return acc;
}

Image normal_apply(const BlurOperator& op, const Image& x) {
  Image acc = Image::Zero(op.height(), op.width());
  for (int k = 0; k < op.slices(); ++k) acc += op.apply_adjoint(op.apply(x, k), k);
  return acc;
}

double lipschitz_estimate(const BlurOperator& op, int iters) {
  if (iters < 1) throw InputError("lipschitz_estimate needs iters >= 1");
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Image v(op.height(), op.width());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = uni(rng);
  v /= std::sqrt(v.square().sum());
  double estimate = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Image mv = normal_apply(op, v);
    const double n = std::sqrt(mv.square().sum());
    if (n == 0.0) return 0.0;
    estimate = n;
    v = mv / n;
  }
  return estimate;
}

} // namespace cmirror
