#include "cmirror/metrics.hpp"

#include "cmirror/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace cmirror {

RegionSplit RegionSplit::for_frame(int height, int width) {
  RegionSplit s;
  s.on_axis = Mask::Constant(height, width, false);
  s.on_axis.block(height / 4, width / 4, height / 2, width / 2).setConstant(true);
  s.off_axis = !s.on_axis;
  return s;
}

Mask full_mask(int height, int width) { return Mask::Constant(height, width, true); }

double psnr(const Image& a, const Image& b, const Mask& mask) {
  require_same_shape(a, b, "psnr");
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw InputError("psnr: mask size mismatch");
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!mask.data()[i]) continue;
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
    ++count;
  }
  if (count == 0) throw InputError("psnr: empty mask");
  const double mse = sum / count;
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& a, const Image& b) {
  return psnr(a, b, full_mask(static_cast<int>(a.rows()), static_cast<int>(a.cols())));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Eigen::VectorXd gaussian_taps() {
  Eigen::VectorXd g(kSsimWindow);
  const int r = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) g(i) = std::exp(-0.5 * (i - r) * (i - r) / (kSsimSigma * kSsimSigma));
  return g / g.sum();
}

// 'valid' separable filtering with the SSIM window.
Image filter_valid(const Image& img, const Eigen::VectorXd& g) {
  const auto h = img.rows();
  const auto w = img.cols();
  const auto n = g.size();
  Image rows = Image::Zero(h, w - n + 1);
  for (Eigen::Index j = 0; j < n; ++j) rows += g(j) * img.block(0, j, h, w - n + 1);
  Image out = Image::Zero(h - n + 1, w - n + 1);
  for (Eigen::Index i = 0; i < n; ++i) out += g(i) * rows.block(i, 0, h - n + 1, w - n + 1);
  return out;
}

} // namespace

double ssim(const Image& a, const Image& b, const Mask& mask) {
  require_same_shape(a, b, "ssim");
  if (a.rows() < kSsimWindow || a.cols() < kSsimWindow) throw InputError("ssim: image smaller than 11x11 window");
  const Eigen::VectorXd g = gaussian_taps();
  const Image mu_a = filter_valid(a, g);
  const Image mu_b = filter_valid(b, g);
  const Image aa = filter_valid(a * a, g) - mu_a * mu_a;
  const Image bb = filter_valid(b * b, g) - mu_b * mu_b;
  const Image ab = filter_valid(a * b, g) - mu_a * mu_b;
  const Image map = ((2 * mu_a * mu_b + kC1) * (2 * ab + kC2)) /
                    ((mu_a * mu_a + mu_b * mu_b + kC1) * (aa + bb + kC2));
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < map.rows(); ++i)
    for (Eigen::Index j = 0; j < map.cols(); ++j)
      if (mask(i + r, j + r)) {
        sum += map(i, j);
        ++count;
      }
  if (count == 0) throw InputError("ssim: no window centers inside the mask");
  return sum / count;
}

double ssim(const Image& a, const Image& b) {
  return ssim(a, b, full_mask(static_cast<int>(a.rows()), static_cast<int>(a.cols())));
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

MtfCurve sector_star_mtf(const Image& img, const Eigen::Vector2d& center, int spokes,
                         const std::vector<double>& radii) {
  if (spokes < 1) throw InputError("sector_star_mtf: spokes must be >= 1");
  const double w = static_cast<double>(img.cols() - 1);
  const double h = static_cast<double>(img.rows() - 1);
  if (center.x() < 0 || center.x() > w || center.y() < 0 || center.y() > h)
    throw InputError("sector_star_mtf: star center outside the frame");
  MtfCurve curve;
  for (double r : radii) {
    if (!(r > 0.0) || center.x() - r < 0 || center.x() + r > w || center.y() - r < 0 || center.y() + r > h)
      throw InputError("sector_star_mtf: radius " + std::to_string(r) + " exceeds the frame");
    const int n = 4 * spokes * static_cast<int>(std::ceil(r));
    std::vector<double> samples(n);
    for (int i = 0; i < n; ++i) {
      const double th = 2.0 * std::numbers::pi * i / n;
      samples[i] = sample_bilinear(img, center.x() + r * std::cos(th), center.y() + r * std::sin(th));
    }
    const double hi = percentile(samples, 0.95);
    const double lo = percentile(samples, 0.05);
    const double contrast = (hi - lo) / std::max(hi + lo, 1e-6);
    curve.push_back({spokes / (2.0 * std::numbers::pi * r), contrast});
  }
  return curve;
}

Mtf30 mtf30(MtfCurve curve) {
  std::sort(curve.begin(), curve.end(), [](const MtfPoint& a, const MtfPoint& b) { return a.frequency < b.frequency; });
  constexpr double level = 0.3;
  if (curve.empty() || curve.front().contrast < level) return {};
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const auto& a = curve[i];
    const auto& b = curve[i + 1];
    if (b.contrast < level) {
      const double f = a.frequency + (a.contrast - level) / (a.contrast - b.contrast) * (b.frequency - a.frequency);
      return {f, true};
    }
  }
  return {curve.back().frequency, true};
}

MethodMetrics evaluate_reconstruction(const std::string& method, const Image& estimate, const Image& truth) {
  const auto split = RegionSplit::for_frame(static_cast<int>(truth.rows()), static_cast<int>(truth.cols()));
  MethodMetrics m;
  m.method = method;
  m.psnr_full = psnr(estimate, truth);
  m.psnr_on_axis = psnr(estimate, truth, split.on_axis);
  m.psnr_off_axis = psnr(estimate, truth, split.off_axis);
  m.ssim_full = ssim(estimate, truth);
  m.ssim_on_axis = ssim(estimate, truth, split.on_axis);
  m.ssim_off_axis = ssim(estimate, truth, split.off_axis);
  return m;
}

std::string format_comparison_table(const std::vector<MethodMetrics>& rows) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(14) << "Method" << std::setw(14) << "Full" << std::setw(16) << "On-Axis"
     << "Off-Axis\n";
  os << std::setw(14) << "" << std::setw(14) << "PSNR/SSIM" << std::setw(16) << "PSNR/SSIM" << "PSNR/SSIM\n";
  const auto pair = [](double p, double s) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(1) << p << "/" << std::setprecision(2) << s;
    return c.str();
  };
  for (const auto& r : rows) {
    os << std::setw(14) << r.method << std::setw(14) << pair(r.psnr_full, r.ssim_full) << std::setw(16)
       << pair(r.psnr_on_axis, r.ssim_on_axis) << pair(r.psnr_off_axis, r.ssim_off_axis) << "\n";
  }
  return os.str();
}

KeyValueList comparison_key_values(const std::vector<MethodMetrics>& rows) {
  KeyValueList kv;
  for (const auto& r : rows) {
    kv.emplace_back(r.method + ".psnr_full", format_double(r.psnr_full));
    kv.emplace_back(r.method + ".psnr_on_axis", format_double(r.psnr_on_axis));
    kv.emplace_back(r.method + ".psnr_off_axis", format_double(r.psnr_off_axis));
    kv.emplace_back(r.method + ".ssim_full", format_double(r.ssim_full));
    kv.emplace_back(r.method + ".ssim_on_axis", format_double(r.ssim_on_axis));
    kv.emplace_back(r.method + ".ssim_off_axis", format_double(r.ssim_off_axis));
  }
  return kv;
}

std::vector<MethodMetrics> parse_comparison(const KeyValueConfig& cfg) {
  std::vector<MethodMetrics> rows;
  const auto find = [&](const std::string& method) -> MethodMetrics& {
    for (auto& r : rows)
      if (r.method == method) return r;
    rows.push_back(MethodMetrics{});
    rows.back().method = method;
    return rows.back();
  };
  for (const auto& key : cfg.keys()) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos) throw InputError(cfg.source() + ": metric key '" + key + "' lacks a method prefix");
    const std::string field = key.substr(dot + 1);
    MethodMetrics& m = find(key.substr(0, dot));
    const double v = cfg.get_double(key);
    if (field == "psnr_full") m.psnr_full = v;
    else if (field == "psnr_on_axis") m.psnr_on_axis = v;
    else if (field == "psnr_off_axis") m.psnr_off_axis = v;
    else if (field == "ssim_full") m.ssim_full = v;
    else if (field == "ssim_on_axis") m.ssim_on_axis = v;
    else if (field == "ssim_off_axis") m.ssim_off_axis = v;
    else throw InputError(cfg.source() + ": unknown metric '" + field + "'");
  }
  return rows;
}

} // namespace cmirror
