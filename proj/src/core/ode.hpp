#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

namespace harvsim::ode {

// Dormand-Prince 5(4) embedded pair. One trial step of size h from (t, y):
// fills y5 with the 5th-order solution and err with the difference against
// the embedded 4th-order solution. k[0] must hold f(t, y) on entry; on exit
// k[6] holds f(t + h, y5), reusable as the next step's k[0] (FSAL).
template <std::size_t N, class Rhs>
void dopri5_step(Rhs&& f, double t, const std::array<double, N>& y, double h,
                 std::array<double, N> (&k)[7], std::array<double, N>& y5,
                 std::array<double, N>& err) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                          e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;

  std::array<double, N> tmp;
  for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + h * a21 * k[0][i];
  f(t + c2 * h, tmp, k[1]);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + h * (a31 * k[0][i] + a32 * k[1][i]);
  f(t + c3 * h, tmp, k[2]);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] + h * (a41 * k[0][i] + a42 * k[1][i] + a43 * k[2][i]);
  f(t + c4 * h, tmp, k[3]);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] + h * (a51 * k[0][i] + a52 * k[1][i] + a53 * k[2][i] + a54 * k[3][i]);
  f(t + c5 * h, tmp, k[4]);
  for (std::size_t i = 0; i < N; ++i)
    tmp[i] = y[i] +
             h * (a61 * k[0][i] + a62 * k[1][i] + a63 * k[2][i] + a64 * k[3][i] + a65 * k[4][i]);
  f(t + h, tmp, k[5]);
  for (std::size_t i = 0; i < N; ++i)
    y5[i] = y[i] +
            h * (b1 * k[0][i] + b3 * k[2][i] + b4 * k[3][i] + b5 * k[4][i] + b6 * k[5][i]);
  f(t + h, y5, k[6]);
  for (std::size_t i = 0; i < N; ++i) {
    const double y4 = y[i] + h * (e1 * k[0][i] + e3 * k[2][i] + e4 * k[3][i] + e5 * k[4][i] +
                                  e6 * k[5][i] + e7 * k[6][i]);
    err[i] = y5[i] - y4;
  }
}

// Scaled RMS norm of the local error estimate: <= 1 means accept.
template <std::size_t N>
double error_norm(const std::array<double, N>& err, const std::array<double, N>& y0,
                  const std::array<double, N>& y1, const std::array<double, N>& atol,
                  double rtol) {
  double sum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double scale = atol[i] + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(N));
}

// Standard step-size update for a 5th-order error estimate.
inline double next_step_factor(double err_norm) {
  if (err_norm <= 0.0) return 5.0;
  return std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 5.0);
}

// Cubic Hermite interpolant on [t, t+h] at fraction theta in [0, 1], from
// endpoint values and slopes. Used only to seed event brackets; located
// events are always re-stepped with the real integrator.
template <std::size_t N>
std::array<double, N> hermite(const std::array<double, N>& y0, const std::array<double, N>& f0,
                              const std::array<double, N>& y1, const std::array<double, N>& f1,
                              double h, double theta) {
  const double t2 = theta * theta, t3 = t2 * theta;
  const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + theta;
  const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  std::array<double, N> out;
  for (std::size_t i = 0; i < N; ++i)
    out[i] = h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i];
  return out;
}

}  // namespace harvsim::ode
