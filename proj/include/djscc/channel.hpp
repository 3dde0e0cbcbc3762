#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "djscc/autodiff.hpp"
#include "djscc/rng.hpp"

namespace djscc {

enum class ChannelKind { Awgn, Rayleigh };

std::string to_string(ChannelKind kind);
ChannelKind parse_channel_kind(const std::string& text);

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 10.0;
  std::uint64_t seed = 0;
};

/// Complex fading gain for one transmitted block.
struct FadingDraw {
  double h_re = 1.0;
  double h_im = 0.0;
  double magnitude() const;
};

inline constexpr double kSnrCapDb = 200.0;
inline constexpr double kDeepFadeThreshold = 1e-6;

/// Per-component noise std for unit signal power: 10^(-snr_db / 20).
double snr_to_sigma(double snr_db);

/// Scales x to mean power exactly 1, i.e. x * sqrt(k / sum x^2).
Tensor power_normalize(const Tensor& x);

/// y = x + n with n ~ N(0, sigma^2).
Tensor awgn_transmit(const Tensor& x, const ChannelConfig& cfg, Rng& rng);

struct RayleighOutput {
  Tensor y;
  FadingDraw h;
};

/// Consecutive real pairs form complex symbols; one draw h = (a + ib)/sqrt(2)
/// covers the whole block and y_c = h x_c + n_c with per-component std sigma.
RayleighOutput rayleigh_transmit(const Tensor& x, const ChannelConfig& cfg, Rng& rng);
/// Same, with a caller-supplied gain.
Tensor rayleigh_transmit(const Tensor& x, const FadingDraw& h, double snr_db, Rng& rng);

/// Perfect-CSI equalization y / h per complex symbol. Throws DeepFadeError when |h| <= 1e-6.
Tensor equalize(const Tensor& y, const FadingDraw& h);

/// 10 log10(sum x^2 / sum (y - x)^2), capped at kSnrCapDb when y == x.
double measure_empirical_snr(const Tensor& x, const Tensor& y);

FadingDraw draw_fading(Rng& rng);

// ---------------------------------------------------------------------------
// Taped variants used inside training graphs. A latent batch is [N, ...] and
// every batch element is one transmitted block.

/// One channel use for a whole batch: additive noise plus one gain per element.
struct ChannelRealization {
  ChannelKind kind = ChannelKind::Awgn;
  Tensor noise;                    // same shape as the latent batch
  std::vector<FadingDraw> fading;  // one per batch element (Rayleigh only)
};

/// Draws noise for the configured SNR and, for Rayleigh, one gain per element,
/// redrawing any gain in a deep fade. A noiseless realization (zeros) is used when
/// noiseless is set.
ChannelRealization draw_realization(ChannelKind kind, double snr_db, const Shape& latent_shape, Rng& rng,
                                    bool noiseless = false);

/// Row-wise power normalization of [N, ...].
Var power_normalize(Var x);
/// Applies a realization and, for Rayleigh, equalizes with the known gain.
Var transmit(Var x, const ChannelRealization& realization);
/// Multiplies each element's complex pairs by its own gain (constant).
Var complex_scale(Var x, const std::vector<FadingDraw>& gains);

}  // namespace djscc
