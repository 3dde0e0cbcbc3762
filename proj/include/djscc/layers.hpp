#pragma once

#include <cstddef>

#include "djscc/autodiff.hpp"

namespace djscc {

// Dividing raw dB by this keeps the SNR input O(1) next to pooled features.
inline constexpr double kSnrScale = 20.0;
// Floor added after the softplus map for GDN parameters.
inline constexpr double kGdnFloor = 1e-6;

/// Cross-correlation of x[N,C,H,W] with kernel[Co,C,k,k] plus bias[Co].
/// Output spatial size is floor((H + 2*pad - k) / stride) + 1.
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad);

/// Transpose convolution; kernel is [C,Co,k,k]. Output spatial size is
/// (H - 1) * stride - 2 * pad + k + output_pad, with output_pad < stride.
/// This is the exact adjoint of conv2d over the output geometry.
Var tconv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad, std::size_t output_pad = 0);

/// Per-channel leaky slope; slope has one entry per channel (dim 1 of x).
Var prelu(Var x, Var slope);

/// Non-overlapping k-by-k window mean; k must divide both spatial dims.
Var avg_pool(Var x, std::size_t k);

/// Divisive normalization across channels at every spatial position:
/// y_c = x_c / sqrt(beta_c + sum_j gamma_cj * x_j^2). beta and gamma are the
/// effective (already positive) values.
Var gdn(Var x, Var beta, Var gamma);
/// Multiplicative mirror: y_c = x_c * sqrt(beta_c + sum_j gamma_cj * x_j^2).
Var igdn(Var x, Var beta, Var gamma);

/// softplus(raw) + kGdnFloor, the map used to keep GDN parameters positive.
Var positive(Var raw);

/// x[N,in] * weight[out,in]^T + bias[out].
Var dense(Var x, Var weight, Var bias);

/// [N,C,H,W] -> [N,C] spatial mean.
Var global_avg_pool(Var x);
/// [N,C] -> [N,C+1] with a constant last column.
Var append_constant(Var x, double value);
/// x[N,C,H,W] scaled by factors[N,C].
Var scale_channels(Var x, Var factors);

struct DenseParams {
  Var weight;
  Var bias;
};

/// Pooled per-channel statistics and snr_db / kSnrScale go through one dense
/// layer; 2 * sigmoid of its output scales each channel by a factor in (0, 2).
Var snr_fuse_dense(Var features, double snr_db, const DenseParams& fuse);

struct AttentionParams {
  DenseParams squeeze;  // [C/2, C+1]
  Var slope;            // PReLU slope over the bottleneck, [C/2]
  DenseParams excite;   // [C, C/2]
};

/// Squeeze-excitation gate conditioned on SNR: global pool, append
/// snr_db / kSnrScale, dense + PReLU, dense + sigmoid, multiply channels by the
/// resulting gates in (0, 1).
Var channel_attention(Var features, double snr_db, const AttentionParams& p);

}  // namespace djscc
