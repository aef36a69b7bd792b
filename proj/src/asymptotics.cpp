#include "addlink/asymptotics.hpp"

#include "addlink/error.hpp"
#include "addlink/normal.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace addlink {

namespace {

double
fp_squared(const Link& link, double v)
{
  const double fp = link.Fp(v);
  return fp * fp;
}

void
check_ingredients(const LocalIngredients& ing, bool need_variance)
{
  if (ing.weight.size() != ing.index.size())
    throw UsageError("asymptotics: ingredient lengths differ");
  if (need_variance && ing.variance.size() != ing.index.size())
    throw UsageError("asymptotics: conditional variance is required");
}

} // namespace

LocalIngredients
kernel_ingredients(double x,
                   const PilotFit& pilot,
                   const Dataset& data,
                   const Kernel& kernel,
                   double h,
                   const VarianceProvider& variance)
{
  const Eigen::Index j = pilot.coordinate;
  const double m = pilot.target(x);
  const double nh = static_cast<double>(data.n()) * h;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if (std::abs(data.x(i, j) - x) < h)
      keep.push_back(i);

  Eigen::VectorXd var_all;
  if (variance)
    var_all = variance(x);

  LocalIngredients ing;
  const auto k = static_cast<Eigen::Index>(keep.size());
  ing.weight.resize(k);
  ing.d_weight.resize(k);
  ing.index.resize(k);
  if (variance)
    ing.variance.resize(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const Eigen::Index i = keep[r];
    const double u = (x - data.x(i, j)) / h;
    ing.weight[r] = kernel(u) / nh;
    ing.d_weight[r] = kernel.derivative(u) / (nh * h);
    ing.index[r] = pilot.mu + m + pilot.others[i];
    if (variance)
      ing.variance[r] = var_all[i];
  }
  return ing;
}

DEstimates
estimate_D0_D1_D2(const LocalIngredients& ing, const Link& link)
{
  check_ingredients(ing, false);
  DEstimates d;
  const bool with_var = ing.variance.size() == ing.index.size();
  for (Eigen::Index i = 0; i < ing.index.size(); ++i) {
    const double f2 = fp_squared(link, ing.index[i]);
    d.d0 += 2.0 * ing.weight[i] * f2;
    if (ing.d_weight.size() == ing.index.size())
      d.d1 += 2.0 * ing.d_weight[i] * f2;
    if (with_var)
      d.d2 += ing.weight[i] * f2 / ing.variance[i];
  }
  return d;
}

double
estimate_beta1(const LocalIngredients& ing,
               const Link& link,
               double m1,
               double m2,
               double c_h,
               Smoother smoother,
               double a_k)
{
  check_ingredients(ing, false);
  double d0 = 0.0;
  double d1 = 0.0;
  double gf = 0.0;
  for (Eigen::Index i = 0; i < ing.index.size(); ++i) {
    const auto v = link.eval(ing.index[i]);
    const double g = v.fpp * m1 * m1 + v.fp * m2;
    gf += ing.weight[i] * g * v.fp;
    d0 += 2.0 * ing.weight[i] * v.fp * v.fp;
    if (ing.d_weight.size() == ing.index.size())
      d1 += 2.0 * ing.d_weight[i] * v.fp * v.fp;
  }
  if (!(d0 > 0.0))
    throw NumericalError("bias estimate: D0 is not positive");
  double num = gf;
  if (smoother == Smoother::local_constant)
    num += m1 * d1;
  return c_h * c_h * a_k * num / d0;
}

double
estimate_V1(const LocalIngredients& ing,
            const Link& link,
            double c_h,
            const Eigen::VectorXd& weights,
            double b_k)
{
  check_ingredients(ing, true);
  const bool weighted = weights.size() > 0;
  if (weighted && weights.size() != ing.index.size())
    throw UsageError("variance estimate: weight vector has the wrong length");
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < ing.index.size(); ++i) {
    const double w = weighted ? weights[i] : 1.0;
    const double f2 = fp_squared(link, ing.index[i]);
    num += ing.weight[i] * w * w * ing.variance[i] * f2;
    den += ing.weight[i] * w * f2;
  }
  if (!(den > 1e-12))
    throw NumericalError("variance estimate: D0 below threshold");
  return b_k * num / (c_h * den * den);
}

double
estimate_V1_optimal(const LocalIngredients& ing,
                    const Link& link,
                    double c_h,
                    double b_k)
{
  check_ingredients(ing, true);
  const double d2 = estimate_D0_D1_D2(ing, link).d2;
  if (!(d2 > 1e-12))
    throw NumericalError("variance estimate: D2 below threshold");
  return b_k / (c_h * d2);
}

DerivativeEstimator::DerivativeEstimator(std::vector<double> grid,
                                         std::vector<double> values)
  : grid_(std::move(grid))
  , values_(std::move(values))
{
  if (grid_.size() != values_.size() || grid_.size() < 2)
    throw UsageError("derivative estimator: need matching grid and values");
  for (std::size_t k = 1; k < grid_.size(); ++k)
    if (!(grid_[k] > grid_[k - 1]))
      throw UsageError("derivative estimator: grid must be increasing");
}

double
DerivativeEstimator::default_bandwidth(Eigen::Index n)
{
  return 0.2 * std::pow(static_cast<double>(n), -0.1);
}

double
DerivativeEstimator::operator()(double x, int ell, double g) const
{
  if (ell < 1 || ell > 2)
    throw UsageError("derivative estimator: order must be 1 or 2");
  if (!(g > 0.0))
    throw UsageError("derivative estimator: bandwidth must be positive");
  const double lo = x - g;
  const double hi = x + g;
  auto first = std::upper_bound(grid_.begin(), grid_.end(), lo);
  auto last = std::lower_bound(grid_.begin(), grid_.end(), hi);
  if (last - first < 8) {
    throw NumericalError(fmt::format(
      "derivative estimator: fewer than 8 grid points within g = {:.4g} of "
      "x = {:.4g}",
      g,
      x));
  }

  const Kernel l;
  auto lderiv = [&](double u) {
    return ell == 1 ? l.derivative(u) : l.second_derivative(u);
  };
  // Three-point Gauss-Legendre is exact for the degree-5 integrand
  // (polynomial L^(ell) times the linear interpolant) on every cell.
  static constexpr std::array<double, 3> node{ -0.7745966692414834, 0.0,
                                               0.7745966692414834 };
  static constexpr std::array<double, 3> wt{ 5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0 };

  double sum = 0.0;
  const std::size_t begin =
    first == grid_.begin() ? 0 : static_cast<std::size_t>(first - grid_.begin()) - 1;
  const std::size_t end = std::min(grid_.size() - 1,
                                   static_cast<std::size_t>(last - grid_.begin()));
  for (std::size_t k = begin; k < end; ++k) {
    const double a = std::max(grid_[k], lo);
    const double b = std::min(grid_[k + 1], hi);
    if (!(b > a))
      continue;
    const double slope =
      (values_[k + 1] - values_[k]) / (grid_[k + 1] - grid_[k]);
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    for (int q = 0; q < 3; ++q) {
      const double v = mid + half * node[q];
      const double m = values_[k] + slope * (v - grid_[k]);
      sum += half * wt[q] * lderiv((x - v) / g) * m;
    }
  }
  return sum / std::pow(g, 1 + ell);
}

std::vector<double>
estimate_derivative(std::span<const double> grid,
                    std::span<const double> values,
                    int ell,
                    double g,
                    std::span<const double> at)
{
  const DerivativeEstimator est({ grid.begin(), grid.end() },
                                { values.begin(), values.end() });
  std::vector<double> out;
  out.reserve(at.size());
  for (double x : at)
    out.push_back(est(x, ell, g));
  return out;
}

ConditionalVariance::ConditionalVariance(const Dataset& data,
                                         Eigen::VectorXd squared_residuals,
                                         std::vector<double> bandwidths,
                                         double floor)
  : data_(&data)
  , sq_(std::move(squared_residuals))
  , h_(std::move(bandwidths))
  , floor_(floor)
{
  if (sq_.size() != data.n())
    throw UsageError("conditional variance: residual length mismatch");
  if (static_cast<Eigen::Index>(h_.size()) != data.d())
    throw UsageError("conditional variance: one bandwidth per covariate");
  for (double h : h_)
    if (!(h > 0.0))
      throw UsageError("conditional variance: bandwidths must be positive");
  global_mean_ = sq_.mean();
  order_.resize(data.n());
  std::iota(order_.begin(), order_.end(), Eigen::Index{ 0 });
  std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) {
    return data.x(a, 0) < data.x(b, 0);
  });
  sorted_.resize(order_.size());
  for (std::size_t r = 0; r < order_.size(); ++r)
    sorted_[r] = data.x(order_[r], 0);
}

ConditionalVariance::Value
ConditionalVariance::at(std::span<const double> x) const
{
  const Eigen::Index d = data_->d();
  if (static_cast<Eigen::Index>(x.size()) != d)
    throw UsageError("conditional variance: point has the wrong dimension");
  auto first = std::upper_bound(sorted_.begin(), sorted_.end(), x[0] - h_[0]);
  auto last = std::lower_bound(first, sorted_.end(), x[0] + h_[0]);
  double num = 0.0;
  double den = 0.0;
  for (auto it = first; it != last; ++it) {
    const Eigen::Index i = order_[static_cast<std::size_t>(it - sorted_.begin())];
    double k = 1.0;
    for (Eigen::Index j = 0; j < d && k > 0.0; ++j)
      k *= kernel_((data_->x(i, j) - x[j]) / h_[j]);
    if (k == 0.0)
      continue;
    num += k * sq_[i];
    den += k;
  }
  if (!(den > 0.0))
    return { std::max(global_mean_, floor_), global_mean_ < floor_, true };
  const double v = num / den;
  if (!(v >= floor_))
    return { floor_, true, false };
  return { v, false, false };
}

Eigen::VectorXd
ConditionalVariance::at_samples(int* flagged) const
{
  const Eigen::Index d = data_->d();
  Eigen::VectorXd out(data_->n());
  std::vector<double> x(d);
  int count = 0;
  for (Eigen::Index i = 0; i < data_->n(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j)
      x[j] = data_->x(i, j);
    const auto v = at(x);
    out[i] = v.value;
    count += (v.floored || v.fallback) ? 1 : 0;
  }
  if (flagged)
    *flagged = count;
  return out;
}

VarianceProvider
ConditionalVariance::provider(Eigen::Index j) const
{
  return [this, j](double target) {
    const Eigen::Index d = data_->d();
    Eigen::VectorXd out(data_->n());
    std::vector<double> x(d);
    for (Eigen::Index i = 0; i < data_->n(); ++i) {
      for (Eigen::Index c = 0; c < d; ++c)
        x[c] = c == j ? target : data_->x(i, c);
      out[i] = at(x).value;
    }
    return out;
  };
}

Eigen::VectorXd
squared_residuals(const Dataset& data,
                  const Link& link,
                  const Eigen::VectorXd& index)
{
  if (index.size() != data.n())
    throw UsageError("squared residuals: index length mismatch");
  Eigen::VectorXd out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double r = data.y[i] - link.F(index[i]);
    out[i] = r * r;
  }
  return out;
}

CiMode
ci_mode_by_name(std::string_view name)
{
  if (name == "undersmoothed")
    return CiMode::undersmoothed;
  if (name == "bias-corrected")
    return CiMode::bias_corrected;
  throw UsageError(fmt::format(
    "unknown interval mode '{}' (valid: undersmoothed, bias-corrected)", name));
}

std::string_view
ci_mode_name(CiMode mode)
{
  return mode == CiMode::undersmoothed ? "undersmoothed" : "bias-corrected";
}

AsymptoticSummary
confidence_interval(std::span<const double> grid,
                    std::span<const double> estimate,
                    std::span<const double> beta,
                    std::span<const double> variance,
                    Eigen::Index n,
                    double alpha,
                    CiMode mode,
                    double gamma)
{
  if (!(alpha > 0.0 && alpha < 1.0))
    throw UsageError("confidence level: alpha must lie in (0, 1)");
  if (mode == CiMode::undersmoothed && !(gamma > 0.2 && gamma < 1.0))
    throw UsageError("undersmoothing exponent must lie in (1/5, 1)");
  const std::size_t m = grid.size();
  if (estimate.size() != m || variance.size() != m ||
      (mode == CiMode::bias_corrected && beta.size() != m))
    throw UsageError("confidence interval: input lengths differ");

  const double z = normal_quantile(1.0 - alpha / 2.0);
  const double nd = static_cast<double>(n);
  const double rate = mode == CiMode::bias_corrected
                        ? std::pow(nd, -0.4)
                        : std::pow(nd, -(1.0 - gamma) / 2.0);

  AsymptoticSummary s;
  s.mode = mode;
  s.alpha = alpha;
  s.gamma = gamma;
  s.grid.assign(grid.begin(), grid.end());
  s.estimate.assign(estimate.begin(), estimate.end());
  s.variance.assign(variance.begin(), variance.end());
  if (beta.size() == m)
    s.beta.assign(beta.begin(), beta.end());
  else
    s.beta.assign(m, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < m; ++k) {
    const double v = variance[k];
    if (v < 0.0)
      throw NumericalError("confidence interval: negative variance");
    double centre = estimate[k];
    if (mode == CiMode::bias_corrected)
      centre -= rate * beta[k];
    const double half = z * rate * std::sqrt(v);
    s.lower.push_back(centre - half);
    s.upper.push_back(centre + half);
  }
  return s;
}

} // namespace addlink
