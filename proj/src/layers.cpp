#include "djscc/layers.hpp"

#include <cmath>
#include <string>

#include "djscc/error.hpp"
#include "djscc/ops.hpp"
#include "kernels.hpp"

namespace djscc {

namespace {

void expect_rank(const Var& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
  }
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  expect_rank(x, 4, "conv2d input");
  expect_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != xs[1]) {
    throw ShapeError("conv2d kernel " + shape_str(ks) + " does not accept input " + shape_str(xs));
  }
  if (ks[2] != ks[3]) throw ShapeError("conv2d kernel must be square, got " + shape_str(ks));
  if (bias.shape() != Shape{ks[0]}) throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " for kernel " + shape_str(ks));
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t co = ks[0], k = ks[2];
  if (h + 2 * pad < k || w + 2 * pad < k) {
    throw ShapeError("conv2d kernel " + std::to_string(k) + " larger than padded input " + shape_str(xs));
  }
  const kernels::Window win{c, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
  const std::size_t plane = win.out_height * win.out_width;
  const std::size_t ck = c * k * k;

  Tensor out({n, co, win.out_height, win.out_width});
  std::vector<double> cols(ck * plane);
  const double* kd = kernel.value().data().data();
  const double* bd = bias.value().data().data();
  for (std::size_t b = 0; b < n; ++b) {
    kernels::im2col(win, x.value().data().data() + b * c * h * w, cols.data());
    double* o = out.data().data() + b * co * plane;
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t j = 0; j < plane; ++j) o[oc * plane + j] = bd[oc];
    }
    kernels::gemm_nn(co, plane, ck, kd, cols.data(), o);
  }

  return x.tape()->record(std::move(out), {x, kernel, bias}, [win, n, co, ck, plane](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const Tensor& kv = ctx.input(1);
    auto* gx = ctx.grad(0);
    auto* gk = ctx.grad(1);
    auto* gb = ctx.grad(2);
    const std::size_t in_plane = win.channels * win.height * win.width;
    std::vector<double> cols(ck * plane), cols_t(ck * plane), gcols(ck * plane);
    for (std::size_t b = 0; b < n; ++b) {
      const double* go = ctx.grad_out.data() + b * co * plane;
      if (gb) {
        for (std::size_t oc = 0; oc < co; ++oc) {
          double s = 0.0;
          for (std::size_t j = 0; j < plane; ++j) s += go[oc * plane + j];
          (*gb)[oc] += s;
        }
      }
      if (gk) {
        kernels::im2col(win, xv.data().data() + b * in_plane, cols.data());
        kernels::transpose(ck, plane, cols.data(), cols_t.data());
        kernels::gemm_nn(co, ck, plane, go, cols_t.data(), gk->data());
      }
      if (gx) {
        std::fill(gcols.begin(), gcols.end(), 0.0);
        kernels::gemm_tn(ck, plane, co, kv.data().data(), go, gcols.data());
        kernels::col2im(win, gcols.data(), gx->data() + b * in_plane);
      }
    }
  });
}

Var tconv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad, std::size_t output_pad) {
  expect_rank(x, 4, "tconv2d input");
  expect_rank(kernel, 4, "tconv2d kernel");
  if (stride == 0) throw ShapeError("tconv2d stride must be positive");
  if (output_pad >= stride) throw ShapeError("tconv2d output_pad must be smaller than stride");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[0] != xs[1]) {
    throw ShapeError("tconv2d kernel " + shape_str(ks) + " does not accept input " + shape_str(xs));
  }
  if (ks[2] != ks[3]) throw ShapeError("tconv2d kernel must be square, got " + shape_str(ks));
  if (bias.shape() != Shape{ks[1]}) throw ShapeError("tconv2d bias " + shape_str(bias.shape()) + " for kernel " + shape_str(ks));
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t co = ks[1], k = ks[2];
  const long oh = static_cast<long>((h - 1) * stride + k + output_pad) - static_cast<long>(2 * pad);
  const long ow = static_cast<long>((w - 1) * stride + k + output_pad) - static_cast<long>(2 * pad);
  if (oh <= 0 || ow <= 0) throw ShapeError("tconv2d padding leaves no output for input " + shape_str(xs));
  // The output plane is the "image" and the input grid is the sliding window grid.
  const kernels::Window win{co, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), k, stride, pad, h, w};
  const std::size_t plane = h * w;
  const std::size_t cok = co * k * k;
  const std::size_t out_plane = win.height * win.width;

  Tensor out({n, co, win.height, win.width});
  std::vector<double> cols(cok * plane);
  const double* kd = kernel.value().data().data();
  const double* bd = bias.value().data().data();
  for (std::size_t b = 0; b < n; ++b) {
    std::fill(cols.begin(), cols.end(), 0.0);
    kernels::gemm_tn(cok, plane, c, kd, x.value().data().data() + b * c * plane, cols.data());
    double* o = out.data().data() + b * co * out_plane;
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t j = 0; j < out_plane; ++j) o[oc * out_plane + j] = bd[oc];
    }
    kernels::col2im(win, cols.data(), o);
  }

  return x.tape()->record(std::move(out), {x, kernel, bias}, [win, n, c, cok, plane, out_plane](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const Tensor& kv = ctx.input(1);
    auto* gx = ctx.grad(0);
    auto* gk = ctx.grad(1);
    auto* gb = ctx.grad(2);
    const std::size_t co = win.channels;
    std::vector<double> cols(cok * plane), cols_t(cok * plane);
    for (std::size_t b = 0; b < n; ++b) {
      const double* go = ctx.grad_out.data() + b * co * out_plane;
      if (gb) {
        for (std::size_t oc = 0; oc < co; ++oc) {
          double s = 0.0;
          for (std::size_t j = 0; j < out_plane; ++j) s += go[oc * out_plane + j];
          (*gb)[oc] += s;
        }
      }
      if (!gx && !gk) continue;
      kernels::im2col(win, go, cols.data());
      if (gx) kernels::gemm_nn(c, plane, cok, kv.data().data(), cols.data(), gx->data() + b * c * plane);
      if (gk) {
        kernels::transpose(cok, plane, cols.data(), cols_t.data());
        kernels::gemm_nn(c, cok, plane, xv.data().data() + b * c * plane, cols_t.data(), gk->data());
      }
    }
  });
}

Var prelu(Var x, Var slope) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("prelu expects [N,C,...], got " + shape_str(xs));
  if (slope.shape() != Shape{xs[1]}) {
    throw ShapeError("prelu slope " + shape_str(slope.shape()) + " for input " + shape_str(xs));
  }
  const std::size_t channels = xs[1];
  const std::size_t inner = x.numel() / (xs[0] * channels);
  const Tensor& xv = x.value();
  const Tensor& av = slope.value();
  Tensor out(xs);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double a = av[(i / inner) % channels];
    out[i] = xv[i] >= 0.0 ? xv[i] : a * xv[i];
  }
  return x.tape()->record(std::move(out), {x, slope}, [channels, inner](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const Tensor& av = ctx.input(1);
    auto* gx = ctx.grad(0);
    auto* ga = ctx.grad(1);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const std::size_t ch = (i / inner) % channels;
      const double g = ctx.grad_out[i];
      if (xv[i] >= 0.0) {
        if (gx) (*gx)[i] += g;
      } else {
        if (gx) (*gx)[i] += g * av[ch];
        if (ga) (*ga)[ch] += g * xv[i];
      }
    }
  });
}

Var avg_pool(Var x, std::size_t k) {
  expect_rank(x, 4, "avg_pool input");
  const Shape& xs = x.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (k == 0 || k > h || k > w) {
    throw ShapeError("avg_pool window " + std::to_string(k) + " exceeds spatial dims of " + shape_str(xs));
  }
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("avg_pool window " + std::to_string(k) + " does not divide " + shape_str(xs));
  }
  const std::size_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  const Tensor& xv = x.value();
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.data().data() + p * h * w;
    double* dst = out.data().data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) s += src[(y * k + i) * w + xx * k + j];
        }
        dst[y * ow + xx] = s * inv;
      }
    }
  }
  return x.tape()->record(std::move(out), {x}, [n, c, h, w, k, oh, ow, inv](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    for (std::size_t p = 0; p < n * c; ++p) {
      const double* go = ctx.grad_out.data() + p * oh * ow;
      double* dst = gx.data() + p * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) dst[y * w + xx] += go[(y / k) * ow + xx / k] * inv;
      }
    }
  });
}

namespace {

// Shared forward/backward of GDN (divisive) and IGDN (multiplicative).
Var divisive_norm(Var x, Var beta, Var gamma, bool inverse) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("gdn expects [N,C,...], got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1];
  if (beta.shape() != Shape{c} || gamma.shape() != Shape{c, c}) {
    throw ShapeError("gdn parameters " + shape_str(beta.shape()) + "/" + shape_str(gamma.shape()) +
                     " for input " + shape_str(xs));
  }
  const std::size_t plane = x.numel() / (n * c);
  const Tensor& xv = x.value();
  const double* bv = beta.value().data().data();
  const double* gv = gamma.value().data().data();

  Tensor out(xs);
  std::vector<double> sq(c * plane), norm(c * plane);
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = xv.data().data() + b * c * plane;
    for (std::size_t i = 0; i < c * plane; ++i) sq[i] = xb[i] * xb[i];
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < plane; ++p) norm[ch * plane + p] = bv[ch];
    }
    kernels::gemm_nn(c, plane, c, gv, sq.data(), norm.data());
    double* ob = out.data().data() + b * c * plane;
    for (std::size_t i = 0; i < c * plane; ++i) {
      const double s = std::sqrt(norm[i]);
      ob[i] = inverse ? xb[i] * s : xb[i] / s;
    }
  }

  return x.tape()->record(std::move(out), {x, beta, gamma}, [n, c, plane, inverse](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const double* bv = ctx.input(1).data().data();
    const double* gv = ctx.input(2).data().data();
    auto* gx = ctx.grad(0);
    auto* gbeta = ctx.grad(1);
    auto* ggamma = ctx.grad(2);
    std::vector<double> sq(c * plane), norm(c * plane), u(c * plane), sq_t(c * plane), back(c * plane);
    for (std::size_t b = 0; b < n; ++b) {
      const double* xb = xv.data().data() + b * c * plane;
      const double* go = ctx.grad_out.data() + b * c * plane;
      for (std::size_t i = 0; i < c * plane; ++i) sq[i] = xb[i] * xb[i];
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) norm[ch * plane + p] = bv[ch];
      }
      kernels::gemm_nn(c, plane, c, gv, sq.data(), norm.data());
      // u = dL/dnorm
      for (std::size_t i = 0; i < c * plane; ++i) {
        const double s = std::sqrt(norm[i]);
        u[i] = inverse ? go[i] * xb[i] / (2.0 * s) : -0.5 * go[i] * xb[i] / (norm[i] * s);
      }
      if (gbeta) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (std::size_t p = 0; p < plane; ++p) s += u[ch * plane + p];
          (*gbeta)[ch] += s;
        }
      }
      if (ggamma) {
        kernels::transpose(c, plane, sq.data(), sq_t.data());
        kernels::gemm_nn(c, c, plane, u.data(), sq_t.data(), ggamma->data());
      }
      if (gx) {
        std::fill(back.begin(), back.end(), 0.0);
        kernels::gemm_tn(c, plane, c, gv, u.data(), back.data());
        double* gxb = gx->data() + b * c * plane;
        for (std::size_t i = 0; i < c * plane; ++i) {
          const double s = std::sqrt(norm[i]);
          gxb[i] += (inverse ? go[i] * s : go[i] / s) + 2.0 * xb[i] * back[i];
        }
      }
    }
  });
}

}  // namespace

Var gdn(Var x, Var beta, Var gamma) { return divisive_norm(x, beta, gamma, false); }
Var igdn(Var x, Var beta, Var gamma) { return divisive_norm(x, beta, gamma, true); }

Var positive(Var raw) { return add_scalar(softplus(raw), kGdnFloor); }

Var dense(Var x, Var weight, Var bias) {
  expect_rank(x, 2, "dense input");
  expect_rank(weight, 2, "dense weight");
  const std::size_t n = x.shape()[0], in = x.shape()[1], outd = weight.shape()[0];
  if (weight.shape()[1] != in || bias.shape() != Shape{outd}) {
    throw ShapeError("dense weight " + shape_str(weight.shape()) + " / bias " + shape_str(bias.shape()) +
                     " for input " + shape_str(x.shape()));
  }
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  Tensor out({n, outd});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < outd; ++o) {
      double s = bv[o];
      for (std::size_t i = 0; i < in; ++i) s += xv[b * in + i] * wv[o * in + i];
      out[b * outd + o] = s;
    }
  }
  return x.tape()->record(std::move(out), {x, weight, bias}, [n, in, outd](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const Tensor& wv = ctx.input(1);
    auto* gx = ctx.grad(0);
    auto* gw = ctx.grad(1);
    auto* gb = ctx.grad(2);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < outd; ++o) {
        const double g = ctx.grad_out[b * outd + o];
        if (gb) (*gb)[o] += g;
        for (std::size_t i = 0; i < in; ++i) {
          if (gx) (*gx)[b * in + i] += g * wv[o * in + i];
          if (gw) (*gw)[o * in + i] += g * xv[b * in + i];
        }
      }
    }
  });
}

Var global_avg_pool(Var x) {
  expect_rank(x, 4, "global_avg_pool input");
  const Shape& xs = x.shape();
  const std::size_t nc = xs[0] * xs[1], plane = xs[2] * xs[3];
  const Tensor& xv = x.value();
  Tensor out({xs[0], xs[1]});
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += xv[p * plane + j];
    out[p] = s / static_cast<double>(plane);
  }
  return x.tape()->record(std::move(out), {x}, [nc, plane](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t p = 0; p < nc; ++p) {
      const double g = ctx.grad_out[p] * inv;
      for (std::size_t j = 0; j < plane; ++j) gx[p * plane + j] += g;
    }
  });
}

Var append_constant(Var x, double value) {
  expect_rank(x, 2, "append_constant input");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const Tensor& xv = x.value();
  Tensor out({n, c + 1});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < c; ++i) out[b * (c + 1) + i] = xv[b * c + i];
    out[b * (c + 1) + c] = value;
  }
  return x.tape()->record(std::move(out), {x}, [n, c](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < c; ++i) gx[b * c + i] += ctx.grad_out[b * (c + 1) + i];
    }
  });
}

Var scale_channels(Var x, Var factors) {
  expect_rank(x, 4, "scale_channels input");
  const Shape& xs = x.shape();
  if (factors.shape() != Shape{xs[0], xs[1]}) {
    throw ShapeError("scale_channels factors " + shape_str(factors.shape()) + " for input " + shape_str(xs));
  }
  const std::size_t nc = xs[0] * xs[1], plane = xs[2] * xs[3];
  const Tensor& xv = x.value();
  const Tensor& fv = factors.value();
  Tensor out(xs);
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t j = 0; j < plane; ++j) out[p * plane + j] = xv[p * plane + j] * fv[p];
  }
  return x.tape()->record(std::move(out), {x, factors}, [nc, plane](const BackwardContext& ctx) {
    const Tensor& xv = ctx.input(0);
    const Tensor& fv = ctx.input(1);
    auto* gx = ctx.grad(0);
    auto* gf = ctx.grad(1);
    for (std::size_t p = 0; p < nc; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) {
        const double g = ctx.grad_out[p * plane + j];
        if (gx) (*gx)[p * plane + j] += g * fv[p];
        s += g * xv[p * plane + j];
      }
      if (gf) (*gf)[p] += s;
    }
  });
}

Var snr_fuse_dense(Var features, double snr_db, const DenseParams& fuse) {
  Var stats = append_constant(global_avg_pool(features), snr_db / kSnrScale);
  Var factors = scale(sigmoid(dense(stats, fuse.weight, fuse.bias)), 2.0);
  return scale_channels(features, factors);
}

Var channel_attention(Var features, double snr_db, const AttentionParams& p) {
  Var stats = append_constant(global_avg_pool(features), snr_db / kSnrScale);
  Var hidden = prelu(dense(stats, p.squeeze.weight, p.squeeze.bias), p.slope);
  Var gates = sigmoid(dense(hidden, p.excite.weight, p.excite.bias));
  return scale_channels(features, gates);
}

}  // namespace djscc
