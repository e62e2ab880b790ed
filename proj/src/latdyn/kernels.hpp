#pragma once

#include <cstddef>

namespace latdyn::kernels {

// Elementwise tanh, accurate to a few ulp over the whole real line.
// Written as a branch-free loop so the compiler can vectorize it; libm tanh
// dominates network evaluation cost otherwise.
void tanh_inplace(double* data, std::size_t n) noexcept;

// grad[i] *= 1 - y[i]^2
void tanh_backward(const double* y, double* grad, std::size_t n) noexcept;

}  // namespace latdyn::kernels
