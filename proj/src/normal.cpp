#include "addlink/normal.hpp"

#include "addlink/error.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>

namespace addlink {

double
normal_cdf(double x)
{
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double
normal_quantile(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw UsageError("normal quantile: probability must lie in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

} // namespace addlink
