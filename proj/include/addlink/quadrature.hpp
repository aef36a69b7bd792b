#pragma once

#include <span>
#include <vector>

namespace addlink {

struct QuadratureRule
{
  std::vector<double> nodes;
  std::vector<double> weights;

  template<typename F>
  double integrate(F&& f) const
  {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      sum += weights[i] * f(nodes[i]);
    return sum;
  }
};

//! Gauss-Legendre rule with `order` nodes on [a, b].
QuadratureRule gauss_legendre(int order, double a = -1.0, double b = 1.0);

//! Gauss-Legendre rule of the given order on every panel between
//! consecutive breakpoints. Exact for piecewise polynomials of degree
//! below 2 * order whose pieces match the panels.
QuadratureRule composite_gauss_legendre(std::span<const double> breakpoints,
                                        int order);

//! Trapezoid rule for samples on an arbitrary increasing grid.
double trapezoid(std::span<const double> x, std::span<const double> y);

} // namespace addlink
