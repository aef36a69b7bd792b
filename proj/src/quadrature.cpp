#include "addlink/quadrature.hpp"

#include "addlink/error.hpp"

#include <cmath>
#include <numbers>

namespace addlink {

QuadratureRule
gauss_legendre(int order, double a, double b)
{
  if (order < 1)
    throw UsageError("quadrature order must be positive");

  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);

  // Newton iteration on P_order, roots symmetric about 0.
  const int m = (order + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16)
        break;
    }
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = mid - half * z;
    rule.nodes[order - 1 - i] = mid + half * z;
    rule.weights[i] = half * w;
    rule.weights[order - 1 - i] = half * w;
  }
  return rule;
}

QuadratureRule
composite_gauss_legendre(std::span<const double> breakpoints, int order)
{
  if (breakpoints.size() < 2)
    throw UsageError("composite quadrature needs at least two breakpoints");
  QuadratureRule rule;
  const auto base = gauss_legendre(order);
  for (std::size_t p = 0; p + 1 < breakpoints.size(); ++p) {
    const double a = breakpoints[p];
    const double b = breakpoints[p + 1];
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (int i = 0; i < order; ++i) {
      rule.nodes.push_back(mid + half * base.nodes[i]);
      rule.weights.push_back(half * base.weights[i]);
    }
  }
  return rule;
}

double
trapezoid(std::span<const double> x, std::span<const double> y)
{
  if (x.size() != y.size())
    throw UsageError("trapezoid: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i)
    sum += 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
  return sum;
}

} // namespace addlink
