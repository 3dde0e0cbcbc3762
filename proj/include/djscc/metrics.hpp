#pragma once

#include <cstddef>
#include <vector>

#include "djscc/tensor.hpp"

namespace djscc {

inline constexpr double kPsnrCapDb = 200.0;

struct MsSsimConfig {
  std::size_t scales = 5;
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double max_val = 1.0;
};

/// Mean squared difference over every element. The training loss evaluates the
/// same sum in the same order, so the two agree bit for bit.
double mse_value(const Tensor& a, const Tensor& b);

/// 10 log10(max_val^2 / mse); identical inputs give kPsnrCapDb.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Images are [H,W], [C,H,W] or [N,C,H,W]. Planes are scored independently
// and averaged (over channels, then over the batch).

/// Mean of the gaussian-windowed SSIM map ('valid' windows only).
double ssim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg = {});

/// Multi-scale SSIM: contrast-structure terms of the finer scales raised to
/// their weights, times the full SSIM of the coarsest scale raised to its
/// weight, with 2x2 average pooling between scales. Scale count is reduced
/// (weights renormalized) when the image is too small for the requested count.
double ms_ssim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg = {});

/// Largest scale count <= cfg.scales with window * 2^(s-1) <= min(h, w), at least 1.
std::size_t effective_scales(std::size_t h, std::size_t w, const MsSsimConfig& cfg);

}  // namespace djscc
