#include "sitsfuse/reference_kernels.hpp"

#include <cmath>

namespace sitsfuse::reference {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] = s;
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[p * m + j] : 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a[i * k + p] * b[i * m + j];
      c[p * m + j] = s;
    }
}

namespace {

double input_at(const kernels::ConvGeometry& g, const double* x, std::size_t n, std::size_t c,
                long y, long xx) {
  if (y < 0 || xx < 0 || y >= static_cast<long>(g.height) || xx >= static_cast<long>(g.width))
    return 0.0;
  return x[((n * g.in_channels + c) * g.height + static_cast<std::size_t>(y)) * g.width +
           static_cast<std::size_t>(xx)];
}

}  // namespace

void conv2d_forward(const kernels::ConvGeometry& g, const double* x, const double* w,
                    const double* bias, double* y) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = bias ? bias[o] : 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long iy = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.padding);
                s += w[((o * g.in_channels + c) * k + ki) * k + kj] * input_at(g, x, n, c, iy, ix);
              }
          y[((n * g.out_channels + o) * oh + i) * ow + j] = s;
        }
}

void conv2d_backward(const kernels::ConvGeometry& g, const double* x, const double* w,
                     const double* dy, double* dx, double* dw, double* db) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double gy = dy[((n * g.out_channels + o) * oh + i) * ow + j];
          if (db) db[o] += gy;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long iy = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                const std::size_t wi = ((o * g.in_channels + c) * k + ki) * k + kj;
                const std::size_t xi = ((n * g.in_channels + c) * g.height +
                                        static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix);
                if (dw) dw[wi] += gy * x[xi];
                if (dx) dx[xi] += gy * w[wi];
              }
        }
}

void conv_transpose2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                               std::size_t o, const double* x, const double* weight,
                               const double* bias, double* y) {
  const std::size_t H2 = 2 * h, W2 = 2 * w;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t yy = 0; yy < H2; ++yy)
        for (std::size_t xx = 0; xx < W2; ++xx) {
          double s = bias ? bias[oc] : 0.0;
          const std::size_t q = (yy % 2) * 2 + (xx % 2);
          for (std::size_t ic = 0; ic < c; ++ic)
            s += x[((b * c + ic) * h + yy / 2) * w + xx / 2] * weight[(ic * o + oc) * 4 + q];
          y[((b * o + oc) * H2 + yy) * W2 + xx] = s;
        }
}

void set_mean_std_forward(std::size_t n, std::size_t s, std::size_t d, const double* x, double* y) {
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < s; ++i) sum += x[(r * s + i) * d + j];
      const double mean = sum / static_cast<double>(s);
      double ss = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        const double dev = x[(r * s + i) * d + j] - mean;
        ss += dev * dev;
      }
      y[r * 2 * d + j] = mean;
      y[r * 2 * d + d + j] = std::sqrt(ss / static_cast<double>(s));
    }
}

}  // namespace sitsfuse::reference
