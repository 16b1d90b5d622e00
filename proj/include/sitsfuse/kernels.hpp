#pragma once

// OpenMP-parallel dense kernels behind the autodiff ops. Every kernel
// parallelizes over output elements only, so results are bitwise identical
// for any thread count. Serial reference versions live in reference_kernels.hpp.

#include <cstddef>

namespace sitsfuse::kernels {

/// c[n×m] (+)= a[n×k] · b[k×m]
void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m, bool accumulate);

/// c[n×m] (+)= a[n×k] · b[m×k]ᵀ
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate);

/// c[k×m] (+)= a[n×k]ᵀ · b[n×m]
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate);

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel, stride, padding;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

/// y[N×O×oh×ow] = conv(x[N×C×H×W], w[O×C×k×k]) + bias[O]
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);

/// Accumulates into dx (may be null), dw and db.
void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db);

/// Stride-2, 2×2 transposed convolution: y[N×O×2H×2W], w[C×O×2×2].
void conv_transpose2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                               std::size_t o, const double* x, const double* weight,
                               const double* bias, double* y);
void conv_transpose2x2_backward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                std::size_t o, const double* x, const double* weight,
                                const double* dy, double* dx, double* dweight, double* dbias);

/// Population mean and standard deviation over the middle axis:
/// x[N×S×D] -> y[N×2D] = [mean | std].
void set_mean_std_forward(std::size_t n, std::size_t s, std::size_t d, const double* x, double* y);
/// Accumulates into dx. A zero standard deviation propagates zero gradient.
void set_mean_std_backward(std::size_t n, std::size_t s, std::size_t d, const double* x,
                           const double* y, const double* dy, double* dx);

}  // namespace sitsfuse::kernels
