#include "djscc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "djscc/error.hpp"
#include "djscc/ops.hpp"

namespace djscc {

std::string to_string(ChannelKind kind) { return kind == ChannelKind::Awgn ? "awgn" : "rayleigh"; }

ChannelKind parse_channel_kind(const std::string& text) {
  if (text == "awgn" || text == "AWGN") return ChannelKind::Awgn;
  if (text == "rayleigh" || text == "Rayleigh") return ChannelKind::Rayleigh;
  throw ConfigError("unknown channel kind '" + text + "' (expected awgn or rayleigh)");
}

double FadingDraw::magnitude() const { return std::hypot(h_re, h_im); }

double snr_to_sigma(double snr_db) { return std::pow(10.0, -snr_db / 20.0); }

Tensor power_normalize(const Tensor& x) {
  double energy = 0.0;
  for (double v : x.data()) energy += v * v;
  if (energy == 0.0) throw Error("cannot power-normalize an all-zero latent");
  const double s = std::sqrt(static_cast<double>(x.numel()) / energy);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * s;
  return out;
}

Tensor awgn_transmit(const Tensor& x, const ChannelConfig& cfg, Rng& rng) {
  const double sigma = snr_to_sigma(cfg.snr_db);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] + sigma * rng.normal();
  return y;
}

FadingDraw draw_fading(Rng& rng) {
  const double a = rng.normal();
  const double b = rng.normal();
  return {a / std::numbers::sqrt2, b / std::numbers::sqrt2};
}

static void require_even(const Tensor& x) {
  if (x.numel() % 2 != 0) {
    throw ShapeError("Rayleigh channel pairs reals into complex symbols; length " + std::to_string(x.numel()) +
                     " is odd");
  }
}

Tensor rayleigh_transmit(const Tensor& x, const FadingDraw& h, double snr_db, Rng& rng) {
  require_even(x);
  const double sigma = snr_to_sigma(snr_db);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); i += 2) {
    const double re = x[i], im = x[i + 1];
    y[i] = h.h_re * re - h.h_im * im + sigma * rng.normal();
    y[i + 1] = h.h_re * im + h.h_im * re + sigma * rng.normal();
  }
  return y;
}

RayleighOutput rayleigh_transmit(const Tensor& x, const ChannelConfig& cfg, Rng& rng) {
  require_even(x);
  FadingDraw h = draw_fading(rng);
  Tensor y = rayleigh_transmit(x, h, cfg.snr_db, rng);
  return {std::move(y), h};
}

Tensor equalize(const Tensor& y, const FadingDraw& h) {
  require_even(y);
  const double mag2 = h.h_re * h.h_re + h.h_im * h.h_im;
  if (std::sqrt(mag2) <= kDeepFadeThreshold) {
    throw DeepFadeError("fading gain magnitude below 1e-6; redraw the channel");
  }
  Tensor x(y.shape());
  for (std::size_t i = 0; i < y.numel(); i += 2) {
    const double re = y[i], im = y[i + 1];
    x[i] = (re * h.h_re + im * h.h_im) / mag2;
    x[i + 1] = (im * h.h_re - re * h.h_im) / mag2;
  }
  return x;
}

double measure_empirical_snr(const Tensor& x, const Tensor& y) {
  if (x.numel() != y.numel()) {
    throw ShapeError("measure_empirical_snr of " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    signal += x[i] * x[i];
    const double d = y[i] - x[i];
    noise += d * d;
  }
  if (noise == 0.0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(signal / noise));
}

ChannelRealization draw_realization(ChannelKind kind, double snr_db, const Shape& latent_shape, Rng& rng,
                                    bool noiseless) {
  if (latent_shape.empty()) throw ShapeError("latent batch needs a leading batch dimension");
  ChannelRealization r;
  r.kind = kind;
  r.noise = Tensor(latent_shape);
  if (kind == ChannelKind::Rayleigh) {
    r.fading.reserve(latent_shape[0]);
    for (std::size_t b = 0; b < latent_shape[0]; ++b) {
      FadingDraw h = draw_fading(rng);
      while (h.magnitude() <= kDeepFadeThreshold) h = draw_fading(rng);
      r.fading.push_back(h);
    }
  }
  if (!noiseless) rng.fill_normal(r.noise.data(), snr_to_sigma(snr_db));
  return r;
}

Var power_normalize(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("power_normalize needs a batch dimension");
  const std::size_t n = xv.dim(0);
  const std::size_t k = xv.numel() / n;
  std::vector<double> scales(n), energies(n);
  Tensor out(xv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    double e = 0.0;
    for (std::size_t i = 0; i < k; ++i) e += xv[b * k + i] * xv[b * k + i];
    if (e == 0.0) throw Error("cannot power-normalize an all-zero latent");
    energies[b] = e;
    scales[b] = std::sqrt(static_cast<double>(k) / e);
    for (std::size_t i = 0; i < k; ++i) out[b * k + i] = xv[b * k + i] * scales[b];
  }
  return x.tape()->record(std::move(out), {x}, [n, k, scales, energies](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    auto& gx = *ctx.grad(0);
    for (std::size_t b = 0; b < n; ++b) {
      // d/dx [s x] = s (I - x x^T / |x|^2)
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += xv[b * k + i] * ctx.grad_out[b * k + i];
      const double proj = dot / energies[b];
      for (std::size_t i = 0; i < k; ++i) {
        gx[b * k + i] += scales[b] * (ctx.grad_out[b * k + i] - xv[b * k + i] * proj);
      }
    }
  });
}

Var complex_scale(Var x, const std::vector<FadingDraw>& gains) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0);
  const std::size_t k = xv.numel() / n;
  if (gains.size() != n) throw ShapeError("one fading gain per batch element is required");
  if (k % 2 != 0) throw ShapeError("complex pairing needs an even latent length, got " + std::to_string(k));
  Tensor out(xv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const FadingDraw& h = gains[b];
    for (std::size_t i = b * k; i < (b + 1) * k; i += 2) {
      out[i] = h.h_re * xv[i] - h.h_im * xv[i + 1];
      out[i + 1] = h.h_re * xv[i + 1] + h.h_im * xv[i];
    }
  }
  return x.tape()->record(std::move(out), {x}, [n, k, gains](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    // Adjoint of multiplication by h is multiplication by conj(h).
    for (std::size_t b = 0; b < n; ++b) {
      const FadingDraw& h = gains[b];
      for (std::size_t i = b * k; i < (b + 1) * k; i += 2) {
        const double gr = ctx.grad_out[i], gi = ctx.grad_out[i + 1];
        gx[i] += h.h_re * gr + h.h_im * gi;
        gx[i + 1] += h.h_re * gi - h.h_im * gr;
      }
    }
  });
}

Var transmit(Var x, const ChannelRealization& realization) {
  if (realization.noise.shape() != x.shape()) {
    throw ShapeError("channel realization " + shape_str(realization.noise.shape()) + " for latent " +
                     shape_str(x.shape()));
  }
  Tape& tape = *x.tape();
  if (realization.kind == ChannelKind::Awgn) return add(x, tape.constant(realization.noise));
  Var faded = add(complex_scale(x, realization.fading), tape.constant(realization.noise));
  std::vector<FadingDraw> inverse;
  inverse.reserve(realization.fading.size());
  for (const FadingDraw& h : realization.fading) {
    const double mag2 = h.h_re * h.h_re + h.h_im * h.h_im;
    inverse.push_back({h.h_re / mag2, -h.h_im / mag2});
  }
  return complex_scale(faded, inverse);
}

}  // namespace djscc
