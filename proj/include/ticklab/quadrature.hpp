#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace ticklab {

namespace detail {

template <class F>
double simpson_adapt(F& f, double a, double fa, double b, double fb, double m,
                     double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return simpson_adapt(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         simpson_adapt(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson quadrature with absolute tolerance.
template <class F>
double integrate(F&& f, double a, double b, double abs_tol = 1e-12,
                 int max_depth = 48) {
  if (!(b > a)) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_adapt(f, a, fa, b, fb, m, fm, whole, abs_tol,
                               max_depth);
}

// Integrates across known kinks/jumps by splitting at the interior knots.
template <class F>
double integrate_with_knots(F&& f, const std::vector<double>& knots,
                            double abs_tol = 1e-12) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i)
    if (knots[i + 1] > knots[i])
      sum += integrate(f, knots[i], knots[i + 1], abs_tol);
  return sum;
}

}  // namespace ticklab
