#include "sitsfuse/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace sitsfuse::kernels {
namespace {

// Below this many multiply-adds the thread team costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t i1 = std::min(rows, i0 + kBlock), j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

}  // namespace

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m, bool accumulate) {
  const bool parallel = n * k * m > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict crow = c + i * m;
    if (!accumulate) std::fill(crow, crow + m, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* __restrict brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate) {
  std::vector<double> bt(k * m);
  transpose(b, bt.data(), m, k);
  matmul(a, bt.data(), c, n, k, m, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * m, 0.0);
  const bool parallel = n * k * m > kParallelWork;
  // Each thread owns a contiguous band of output rows and sweeps all of n, so
  // every output element is summed in the same order regardless of threads.
#pragma omp parallel if (parallel)
  {
    const std::size_t threads = static_cast<std::size_t>(omp_get_num_threads());
    const std::size_t tid = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t band = (k + threads - 1) / threads;
    const std::size_t p0 = std::min(k, tid * band), p1 = std::min(k, p0 + band);
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = a + i * k;
      const double* __restrict brow = b + i * m;
      for (std::size_t p = p0; p < p1; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        double* __restrict crow = c + p * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

namespace {

// col[(C·k·k) × (N·P)], column index = image · P + output pixel.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), P = oh * ow;
  const std::size_t NP = g.batch * P, kk = g.kernel * g.kernel;
  const std::size_t rows = g.in_channels * kk;
#pragma omp parallel for schedule(static) if (rows * NP > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ch = r / kk, ki = (r % kk) / g.kernel, kj = r % g.kernel;
    double* out = col + r * NP;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* img = x + (n * g.in_channels + ch) * g.height * g.width;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                              ix < static_cast<long>(g.width);
          out[n * P + oy * ow + ox] = inside ? img[iy * static_cast<long>(g.width) + ix] : 0.0;
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), P = oh * ow;
  const std::size_t NP = g.batch * P, kk = g.kernel * g.kernel;
  // Parallel over (image, channel) planes: each plane is written by one thread.
  const std::size_t planes = g.batch * g.in_channels;
#pragma omp parallel for schedule(static) if (planes * kk * P > kParallelWork)
  for (std::size_t plane = 0; plane < planes; ++plane) {
    const std::size_t n = plane / g.in_channels, ch = plane % g.in_channels;
    double* img = dx + plane * g.height * g.width;
    for (std::size_t q = 0; q < kk; ++q) {
      const std::size_t ki = q / g.kernel, kj = q % g.kernel;
      const double* in = col + (ch * kk + q) * NP + n * P;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
        if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
          if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
          img[iy * static_cast<long>(g.width) + ix] += in[oy * ow + ox];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t P = g.out_height() * g.out_width(), NP = g.batch * P;
  const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
  std::vector<double> col(ckk * NP), out(g.out_channels * NP);
  im2col(g, x, col.data());
  matmul(w, col.data(), out.data(), g.out_channels, ckk, NP, false);
#pragma omp parallel for schedule(static) if (g.batch * g.out_channels * P > kParallelWork)
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const double b = bias ? bias[o] : 0.0;
      const double* src = out.data() + o * NP + n * P;
      double* dst = y + (n * g.out_channels + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db) {
  const std::size_t P = g.out_height() * g.out_width(), NP = g.batch * P;
  const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
  std::vector<double> grad(g.out_channels * NP);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      std::memcpy(grad.data() + o * NP + n * P, dy + (n * g.out_channels + o) * P,
                  P * sizeof(double));
  if (db)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      double s = 0.0;
      for (std::size_t q = 0; q < NP; ++q) s += grad[o * NP + q];
      db[o] += s;
    }
  std::vector<double> col(ckk * NP);
  im2col(g, x, col.data());
  if (dw) matmul_nt(grad.data(), col.data(), dw, g.out_channels, NP, ckk, true);
  if (dx) {
    matmul_tn(w, grad.data(), col.data(), g.out_channels, ckk, NP, false);
    col2im_add(g, col.data(), dx);
  }
}

void conv_transpose2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                               std::size_t o, const double* x, const double* weight,
                               const double* bias, double* y) {
  const std::size_t H2 = 2 * h, W2 = 2 * w;
#pragma omp parallel for collapse(2) schedule(static) if (n * o * h * w * c * 4 > kParallelWork)
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* out = y + (b * o + oc) * H2 * W2;
      std::fill(out, out + H2 * W2, bias ? bias[oc] : 0.0);
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* in = x + (b * c + ic) * h * w;
        const double* k = weight + (ic * o + oc) * 4;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double v = in[i * w + j];
            out[(2 * i) * W2 + 2 * j] += v * k[0];
            out[(2 * i) * W2 + 2 * j + 1] += v * k[1];
            out[(2 * i + 1) * W2 + 2 * j] += v * k[2];
            out[(2 * i + 1) * W2 + 2 * j + 1] += v * k[3];
          }
      }
    }
}

void conv_transpose2x2_backward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                std::size_t o, const double* x, const double* weight,
                                const double* dy, double* dx, double* dweight, double* dbias) {
  const std::size_t H2 = 2 * h, W2 = 2 * w;
  const bool parallel = n * o * h * w * c * 4 > kParallelWork;
  if (dx) {
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ic = 0; ic < c; ++ic) {
        double* gin = dx + (b * c + ic) * h * w;
        for (std::size_t oc = 0; oc < o; ++oc) {
          const double* g = dy + (b * o + oc) * H2 * W2;
          const double* k = weight + (ic * o + oc) * 4;
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
              gin[i * w + j] += g[(2 * i) * W2 + 2 * j] * k[0] + g[(2 * i) * W2 + 2 * j + 1] * k[1] +
                                g[(2 * i + 1) * W2 + 2 * j] * k[2] +
                                g[(2 * i + 1) * W2 + 2 * j + 1] * k[3];
        }
      }
  }
  if (dweight) {
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oc = 0; oc < o; ++oc) {
        double acc[4] = {0, 0, 0, 0};
        for (std::size_t b = 0; b < n; ++b) {
          const double* in = x + (b * c + ic) * h * w;
          const double* g = dy + (b * o + oc) * H2 * W2;
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
              const double v = in[i * w + j];
              acc[0] += v * g[(2 * i) * W2 + 2 * j];
              acc[1] += v * g[(2 * i) * W2 + 2 * j + 1];
              acc[2] += v * g[(2 * i + 1) * W2 + 2 * j];
              acc[3] += v * g[(2 * i + 1) * W2 + 2 * j + 1];
            }
        }
        for (int q = 0; q < 4; ++q) dweight[(ic * o + oc) * 4 + q] += acc[q];
      }
  }
  if (dbias)
    for (std::size_t oc = 0; oc < o; ++oc) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* g = dy + (b * o + oc) * H2 * W2;
        for (std::size_t q = 0; q < H2 * W2; ++q) s += g[q];
      }
      dbias[oc] += s;
    }
}

void set_mean_std_forward(std::size_t n, std::size_t s, std::size_t d, const double* x, double* y) {
#pragma omp parallel for schedule(static) if (n * s * d > kParallelWork)
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = x + r * s * d;
    double* mean = y + r * 2 * d;
    double* sd = mean + d;
    std::fill(mean, mean + 2 * d, 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += in[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double dev = in[i * d + j] - mean[j];
        sd[j] += dev * dev;
      }
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(sd[j] / static_cast<double>(s));
  }
}

void set_mean_std_backward(std::size_t n, std::size_t s, std::size_t d, const double* x,
                           const double* y, const double* dy, double* dx) {
  const double inv = 1.0 / static_cast<double>(s);
#pragma omp parallel for schedule(static) if (n * s * d > kParallelWork)
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = x + r * s * d;
    const double* mean = y + r * 2 * d;
    const double* sd = mean + d;
    const double* gmean = dy + r * 2 * d;
    const double* gsd = gmean + d;
    double* out = dx + r * s * d;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double g = gmean[j] * inv;
        if (sd[j] > 0.0) g += gsd[j] * (in[i * d + j] - mean[j]) * inv / sd[j];
        out[i * d + j] += g;
      }
  }
}

}  // namespace sitsfuse::kernels
