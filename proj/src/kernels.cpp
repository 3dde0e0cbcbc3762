#include "kernels.hpp"

namespace djscc::kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* __restrict brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = r0 + kBlock < rows ? r0 + kBlock : rows;
      const std::size_t c1 = c0 + kBlock < cols ? c0 + kBlock : cols;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

void im2col(const Window& w, const double* image, double* cols) {
  const std::size_t plane = w.out_height * w.out_width;
  for (std::size_t c = 0; c < w.channels; ++c) {
    const double* img = image + c * w.height * w.width;
    for (std::size_t ki = 0; ki < w.kernel; ++ki) {
      for (std::size_t kj = 0; kj < w.kernel; ++kj) {
        double* row = cols + ((c * w.kernel + ki) * w.kernel + kj) * plane;
        for (std::size_t oy = 0; oy < w.out_height; ++oy) {
          const long iy = static_cast<long>(oy * w.stride + ki) - static_cast<long>(w.pad);
          double* dst = row + oy * w.out_width;
          if (iy < 0 || iy >= static_cast<long>(w.height)) {
            for (std::size_t ox = 0; ox < w.out_width; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = img + static_cast<std::size_t>(iy) * w.width;
          for (std::size_t ox = 0; ox < w.out_width; ++ox) {
            const long ix = static_cast<long>(ox * w.stride + kj) - static_cast<long>(w.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const Window& w, const double* cols, double* image) {
  const std::size_t plane = w.out_height * w.out_width;
  for (std::size_t c = 0; c < w.channels; ++c) {
    double* img = image + c * w.height * w.width;
    for (std::size_t ki = 0; ki < w.kernel; ++ki) {
      for (std::size_t kj = 0; kj < w.kernel; ++kj) {
        const double* row = cols + ((c * w.kernel + ki) * w.kernel + kj) * plane;
        for (std::size_t oy = 0; oy < w.out_height; ++oy) {
          const long iy = static_cast<long>(oy * w.stride + ki) - static_cast<long>(w.pad);
          if (iy < 0 || iy >= static_cast<long>(w.height)) continue;
          double* dst = img + static_cast<std::size_t>(iy) * w.width;
          const double* src = row + oy * w.out_width;
          for (std::size_t ox = 0; ox < w.out_width; ++ox) {
            const long ix = static_cast<long>(ox * w.stride + kj) - static_cast<long>(w.pad);
            if (ix >= 0 && ix < static_cast<long>(w.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace djscc::kernels
