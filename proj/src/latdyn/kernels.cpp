#include "latdyn/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>

namespace latdyn::kernels {

void tanh_inplace(double* __restrict data, std::size_t n) noexcept {
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kInvLn2 = 1.44269504088896338700e+00;
  constexpr double kRoundShift = 6755399441055744.0;  // 1.5 * 2^52
  // tanh saturates to 1 in double precision well before |x| = 20.
  constexpr double kClamp = 20.0;
#pragma omp simd
  for (std::size_t j = 0; j < n; ++j) {
    const double x = data[j];
    double y = std::fabs(x);
    y = y < kClamp ? y : kClamp;
    const double u = -2.0 * y;
    const double k = (u * kInvLn2 + kRoundShift) - kRoundShift;
    const double r = (u - k * kLn2Hi) - k * kLn2Lo;
    // expm1(r) on |r| <= ln2/2 by its Taylor series through r^13.
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r * r + r;
    const std::int64_t bits = (static_cast<std::int64_t>(k) + 1023) << 52;
    double scale;
    std::memcpy(&scale, &bits, sizeof scale);
    const double em1 = scale * p + (scale - 1.0);  // expm1(-2|x|)
    const double t = -em1 / (2.0 + em1);
    data[j] = std::copysign(t, x);
  }
}

void tanh_backward(const double* __restrict y, double* __restrict grad, std::size_t n) noexcept {
#pragma omp simd
  for (std::size_t j = 0; j < n; ++j) grad[j] *= 1.0 - y[j] * y[j];
}

}  // namespace latdyn::kernels
