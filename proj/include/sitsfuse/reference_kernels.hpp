#pragma once

// Straightforward serial implementations of the kernels in kernels.hpp.
// Kept for testing and benchmarking; nothing in the library calls them.

#include "sitsfuse/kernels.hpp"

namespace sitsfuse::reference {

void matmul(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
               std::size_t m, bool accumulate);

void conv2d_forward(const kernels::ConvGeometry& g, const double* x, const double* w,
                    const double* bias, double* y);
void conv2d_backward(const kernels::ConvGeometry& g, const double* x, const double* w,
                     const double* dy, double* dx, double* dw, double* db);

void conv_transpose2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                               std::size_t o, const double* x, const double* weight,
                               const double* bias, double* y);

void set_mean_std_forward(std::size_t n, std::size_t s, std::size_t d, const double* x, double* y);

}  // namespace sitsfuse::reference
