#pragma once

#include <array>
#include <cmath>
#include <complex>

namespace opf_resid {

/// Power leaving one end `a` of a branch towards `b`:
///
///   P = Gaa Va^2 + Va Vb (Gab cos t + Bab sin t)
///   Q = -Baa Va^2 + Va Vb (Gab sin t - Bab cos t),   t = theta_a - theta_b
///
/// Derivatives are ordered (Va, Vb, theta_a, theta_b). For a plain line this
/// is the textbook expression with Gab = G_ij, Baa = B_ij (+ charging).
struct EndFlow {
  double p = 0.0;
  double q = 0.0;
  std::array<double, 4> dp{};
  std::array<double, 4> dq{};
  std::array<std::array<double, 4>, 4> hp{};
  std::array<std::array<double, 4>, 4> hq{};
};

inline EndFlow end_flow(double va, double vb, double dtheta,
                        std::complex<double> yaa, std::complex<double> yab,
                        bool with_hessian) {
  const double gaa = yaa.real();
  const double baa = yaa.imag();
  const double g = yab.real();
  const double b = yab.imag();
  const double c = std::cos(dtheta);
  const double s = std::sin(dtheta);
  const double kp = g * c + b * s;   // P coupling
  const double kq = g * s - b * c;   // Q coupling
  // d(kp)/dt = -kq, d(kq)/dt = kp

  EndFlow e;
  const double vv = va * vb;
  e.p = gaa * va * va + vv * kp;
  e.q = -baa * va * va + vv * kq;

  e.dp = {2.0 * gaa * va + vb * kp, va * kp, -vv * kq, vv * kq};
  e.dq = {-2.0 * baa * va + vb * kq, va * kq, vv * kp, -vv * kp};

  if (with_hessian) {
    auto fill = [](std::array<std::array<double, 4>, 4>& h, double aa,
                   double ab, double k_dt, double va_, double vb_,
                   double vv_dtdt) {
      // k_dt is d(coupling)/dt, vv_dtdt is Va Vb d2(coupling)/dt2.
      h[0][0] = aa;
      h[0][1] = h[1][0] = ab;
      h[0][2] = h[2][0] = vb_ * k_dt;
      h[0][3] = h[3][0] = -vb_ * k_dt;
      h[1][1] = 0.0;
      h[1][2] = h[2][1] = va_ * k_dt;
      h[1][3] = h[3][1] = -va_ * k_dt;
      h[2][2] = vv_dtdt;
      h[3][3] = vv_dtdt;
      h[2][3] = h[3][2] = -vv_dtdt;
    };
    fill(e.hp, 2.0 * gaa, kp, -kq, va, vb, -vv * kp);
    fill(e.hq, -2.0 * baa, kq, kp, va, vb, -vv * kq);
  }
  return e;
}

}  // namespace opf_resid
