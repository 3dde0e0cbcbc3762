#pragma once

// Dense kernels shared by the convolution and normalization layers. All loops
// run in a fixed order so results are bit-reproducible.

#include <cstddef>

namespace djscc::kernels {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// out[cols, rows] = in[rows, cols]^T
void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

struct Window {
  std::size_t channels;
  std::size_t height, width;          // image plane
  std::size_t kernel;                 // square kernel
  std::size_t stride, pad;
  std::size_t out_height, out_width;  // sliding grid
};

// cols[C*k*k, Ho*Wo] from image[C, H, W]; taps outside the image read zero.
void im2col(const Window& w, const double* image, double* cols);
// Adjoint of im2col: image[C, H, W] += scatter(cols).
void col2im(const Window& w, const double* cols, double* image);

}  // namespace djscc::kernels
