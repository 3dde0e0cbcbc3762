#include "djscc/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "djscc/error.hpp"

namespace djscc {

double mse_value(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("metric of mismatched shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  if (max_val <= 0.0) throw Error("psnr max_val must be positive");
  const double m = mse_value(a, b);
  if (m == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(max_val * max_val / m));
}

namespace {

struct Plane {
  std::vector<double> px;
  std::size_t h = 0, w = 0;
};

struct Terms {
  double ssim;
  double cs;
};

std::vector<double> gaussian_taps(const MsSsimConfig& cfg) {
  std::vector<double> taps(cfg.window);
  const double c = (static_cast<double>(cfg.window) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < cfg.window; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * cfg.sigma * cfg.sigma));
    s += taps[i];
  }
  for (double& t : taps) t /= s;
  return taps;
}

// Separable 'valid' gaussian filter.
std::vector<double> blur(const std::vector<double>& img, std::size_t h, std::size_t w,
                         const std::vector<double>& taps) {
  const std::size_t k = taps.size();
  const std::size_t ow = w - k + 1, oh = h - k + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += taps[i] * img[y * w + x + i];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += taps[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

Terms plane_terms(const Plane& a, const Plane& b, const MsSsimConfig& cfg, const std::vector<double>& taps) {
  if (a.h < cfg.window || a.w < cfg.window) {
    throw ShapeError("image plane " + std::to_string(a.h) + "x" + std::to_string(a.w) + " is smaller than the " +
                     std::to_string(cfg.window) + "-pixel SSIM window");
  }
  const std::size_t n = a.px.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.px[i] * a.px[i];
    bb[i] = b.px[i] * b.px[i];
    ab[i] = a.px[i] * b.px[i];
  }
  const auto mu_a = blur(a.px, a.h, a.w, taps);
  const auto mu_b = blur(b.px, a.h, a.w, taps);
  const auto e_aa = blur(aa, a.h, a.w, taps);
  const auto e_bb = blur(bb, a.h, a.w, taps);
  const auto e_ab = blur(ab, a.h, a.w, taps);
  const double c1 = (cfg.k1 * cfg.max_val) * (cfg.k1 * cfg.max_val);
  const double c2 = (cfg.k2 * cfg.max_val) * (cfg.k2 * cfg.max_val);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    const double lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  const double m = static_cast<double>(mu_a.size());
  return {ssim_sum / m, cs_sum / m};
}

Plane downsample(const Plane& p) {
  Plane out;
  out.h = p.h / 2;
  out.w = p.w / 2;
  out.px.resize(out.h * out.w);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      out.px[y * out.w + x] = 0.25 * (p.px[2 * y * p.w + 2 * x] + p.px[2 * y * p.w + 2 * x + 1] +
                                      p.px[(2 * y + 1) * p.w + 2 * x] + p.px[(2 * y + 1) * p.w + 2 * x + 1]);
    }
  }
  return out;
}

std::vector<Plane> split_planes(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() < 2 || s.size() > 4) throw ShapeError("image metric expects rank 2-4, got " + shape_str(s));
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t count = t.numel() / (h * w);
  std::vector<Plane> planes(count);
  for (std::size_t p = 0; p < count; ++p) {
    planes[p].h = h;
    planes[p].w = w;
    planes[p].px.assign(t.data().begin() + p * h * w, t.data().begin() + (p + 1) * h * w);
  }
  return planes;
}

double plane_ms_ssim(Plane a, Plane b, const MsSsimConfig& cfg, const std::vector<double>& taps) {
  const std::size_t scales = effective_scales(a.h, a.w, cfg);
  double wsum = 0.0;
  for (std::size_t s = 0; s < scales; ++s) wsum += cfg.weights.at(s);
  double result = 1.0;
  for (std::size_t s = 0; s < scales; ++s) {
    const Terms t = plane_terms(a, b, cfg, taps);
    const double weight = cfg.weights[s] / wsum;
    const double term = s + 1 == scales ? t.ssim : t.cs;
    result *= std::pow(std::max(term, 0.0), weight);
    if (s + 1 < scales) {
      a = downsample(a);
      b = downsample(b);
    }
  }
  return result;
}

}  // namespace

std::size_t effective_scales(std::size_t h, std::size_t w, const MsSsimConfig& cfg) {
  const std::size_t min_dim = std::min(h, w);
  std::size_t s = std::max<std::size_t>(1, std::min(cfg.scales, cfg.weights.size()));
  while (s > 1 && cfg.window * (std::size_t{1} << (s - 1)) > min_dim) --s;
  return s;
}

double ssim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim of mismatched shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto pa = split_planes(a);
  const auto pb = split_planes(b);
  const auto taps = gaussian_taps(cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += plane_terms(pa[i], pb[i], cfg, taps).ssim;
  return s / static_cast<double>(pa.size());
}

double ms_ssim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ms_ssim of mismatched shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (cfg.weights.empty()) throw Error("ms_ssim needs at least one scale weight");
  const auto pa = split_planes(a);
  const auto pb = split_planes(b);
  const auto taps = gaussian_taps(cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += plane_ms_ssim(pa[i], pb[i], cfg, taps);
  return s / static_cast<double>(pa.size());
}

}  // namespace djscc
