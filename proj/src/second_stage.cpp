#include "addlink/second_stage.hpp"

#include "addlink/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace addlink {

namespace {

void
check_bandwidth(double h)
{
  if (!(h > 0.0 && h <= 2.0))
    throw UsageError(fmt::format("bandwidth h = {} outside (0, 2]", h));
}

double
ipow(double v, int p)
{
  return p == 0 ? 1.0 : p == 1 ? v : v * v;
}

} // namespace

Smoother
smoother_by_name(std::string_view name)
{
  if (name == "local-linear" || name == "ll")
    return Smoother::local_linear;
  if (name == "local-constant" || name == "lc")
    return Smoother::local_constant;
  throw UsageError(fmt::format(
    "unknown smoother '{}' (valid: local-linear, local-constant)", name));
}

std::string_view
smoother_name(Smoother s)
{
  return s == Smoother::local_linear ? "local-linear" : "local-constant";
}

Hessian
hessian_by_name(std::string_view name)
{
  if (name == "exact")
    return Hessian::exact;
  if (name == "expected")
    return Hessian::expected;
  if (name == "safeguarded")
    return Hessian::safeguarded;
  throw UsageError(fmt::format(
    "unknown Hessian '{}' (valid: exact, expected, safeguarded)", name));
}

std::string_view
hessian_name(Hessian h)
{
  switch (h) {
    case Hessian::exact:
      return "exact";
    case Hessian::expected:
      return "expected";
    case Hessian::safeguarded:
      return "safeguarded";
  }
  return "";
}

PilotFit
pilot_from_first_stage(const FirstStageFit& fit,
                       const Dataset& data,
                       Eigen::Index j)
{
  if (j < 0 || j >= data.d())
    throw UsageError(fmt::format("coordinate {} out of range", j + 1));
  const Eigen::MatrixXd values = fit.component_values(data.x);
  PilotFit pilot;
  pilot.coordinate = j;
  pilot.mu = fit.mu();
  pilot.others = values.rowwise().sum() - values.col(j);
  pilot.target = [fit, j](double v) { return fit.component(j, v); };
  return pilot;
}

double
s_prime(int power,
        double x,
        const PilotFit& pilot,
        const Dataset& data,
        const Link& link,
        const Kernel& kernel,
        double h,
        const WeightProvider& weight)
{
  if (power < 0 || power > 1)
    throw UsageError("s_prime: power must be 0 or 1");
  const double m = pilot.target(x);
  Eigen::VectorXd w;
  if (weight)
    w = weight(x);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double u = data.x(i, pilot.coordinate) - x;
    const double k = kernel(u / h);
    if (k == 0.0)
      continue;
    const auto v = link.eval(pilot.mu + m + pilot.others[i]);
    const double r = data.y[i] - v.f;
    sum += r * v.fp * ipow(u, power) * k * (weight ? w[i] : 1.0);
  }
  return -2.0 * sum;
}

double
s_double_prime(int power,
               double x,
               const PilotFit& pilot,
               const Dataset& data,
               const Link& link,
               const Kernel& kernel,
               double h,
               const WeightProvider& weight)
{
  if (power < 0 || power > 2)
    throw UsageError("s_double_prime: power must be 0, 1 or 2");
  const double m = pilot.target(x);
  Eigen::VectorXd w;
  if (weight)
    w = weight(x);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double u = data.x(i, pilot.coordinate) - x;
    const double k = kernel(u / h);
    if (k == 0.0)
      continue;
    const auto v = link.eval(pilot.mu + m + pilot.others[i]);
    const double r = data.y[i] - v.f;
    sum +=
      (v.fp * v.fp - r * v.fpp) * ipow(u, power) * k * (weight ? w[i] : 1.0);
  }
  return 2.0 * sum;
}

ComponentSmoother::ComponentSmoother(const Dataset& data,
                                     const Link& link,
                                     PilotFit pilot,
                                     SecondStageConfig config)
  : data_(data)
  , link_(link)
  , pilot_(std::move(pilot))
  , config_(std::move(config))
{
  check_bandwidth(config_.h);
  if (pilot_.coordinate < 0 || pilot_.coordinate >= data.d())
    throw UsageError("second stage: coordinate out of range");
  if (pilot_.others.size() != data.n())
    throw UsageError("second stage: pilot does not match the data");
  if (!pilot_.target)
    throw UsageError("second stage: pilot has no target function");
  const auto col = data.x.col(pilot_.coordinate);
  order_.resize(data.n());
  std::iota(order_.begin(), order_.end(), Eigen::Index{ 0 });
  std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) {
    return col[a] < col[b];
  });
  sorted_.resize(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i)
    sorted_[i] = col[order_[i]];
}

LocalSums
ComponentSmoother::sums(double x) const
{
  const double h = config_.h;
  const double m = pilot_.target(x);
  Eigen::VectorXd w;
  if (config_.weight)
    w = config_.weight(x);

  LocalSums s;
  auto first = std::upper_bound(sorted_.begin(), sorted_.end(), x - h);
  auto last = std::lower_bound(first, sorted_.end(), x + h);
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (auto it = first; it != last; ++it) {
    const auto pos = static_cast<std::size_t>(it - sorted_.begin());
    const Eigen::Index i = order_[pos];
    const double u = *it - x;
    double k = config_.kernel(u / h);
    if (k == 0.0)
      continue;
    if (config_.weight)
      k *= w[i];
    if (*it != previous) {
      ++s.distinct;
      previous = *it;
    }
    const auto v = link_.eval(pilot_.mu + m + pilot_.others[i]);
    const double r = data_.y[i] - v.f;
    const double score = r * v.fp;
    const double expected = v.fp * v.fp;
    const double curv = expected - r * v.fpp;
    s.kernel_mass += k;
    s.sp0 += score * k;
    s.sp1 += score * u * k;
    s.spp0 += curv * k;
    s.spp1 += curv * u * k;
    s.spp2 += curv * u * u * k;
    s.epp0 += expected * k;
    s.epp1 += expected * u * k;
    s.epp2 += expected * u * u * k;
  }
  s.sp0 *= -2.0;
  s.sp1 *= -2.0;
  s.spp0 *= 2.0;
  s.spp1 *= 2.0;
  s.spp2 *= 2.0;
  s.epp0 *= 2.0;
  s.epp1 *= 2.0;
  s.epp2 *= 2.0;
  return s;
}

namespace {

//! Replaces the exact second derivatives by the expected ones when the
//! configured policy asks for it.
void
select_hessian(LocalSums& s, Hessian policy, bool linear)
{
  bool use_expected = policy == Hessian::expected;
  if (policy == Hessian::safeguarded) {
    const bool pd =
      linear ? s.spp0 > 0.0 && s.spp0 * s.spp2 - s.spp1 * s.spp1 > 0.0
             : s.spp0 > 0.0;
    use_expected = !pd;
  }
  if (use_expected) {
    s.spp0 = s.epp0;
    s.spp1 = s.epp1;
    s.spp2 = s.epp2;
  }
}

} // namespace

double
ComponentSmoother::local_linear_step(double x) const
{
  LocalSums s = sums(x);
  select_hessian(s, config_.hessian, true);
  const double den = s.spp0 * s.spp2 - s.spp1 * s.spp1;
  const double scale = 2.0 * s.kernel_mass;
  if (s.distinct < 2 || !(std::abs(den) >= 1e-12 * scale * scale) ||
      scale <= 0.0) {
    throw DegenerateWindow(fmt::format(
      "local-linear step at x = {:.6g}: degenerate kernel window "
      "({} distinct points, h = {:.6g})",
      x,
      s.distinct,
      config_.h));
  }
  const double num = s.spp2 * s.sp0 - s.spp1 * s.sp1;
  return pilot_.target(x) - num / den;
}

double
ComponentSmoother::local_constant_step(double x) const
{
  LocalSums s = sums(x);
  select_hessian(s, config_.hessian, false);
  const double scale = 2.0 * s.kernel_mass;
  if (scale <= 0.0 || !(std::abs(s.spp0) >= 1e-12 * scale)) {
    throw DegenerateWindow(
      fmt::format("local-constant step at x = {:.6g}: empty kernel window "
                  "(h = {:.6g})",
                  x,
                  config_.h));
  }
  return pilot_.target(x) - s.sp0 / s.spp0;
}

double
ComponentSmoother::step(double x) const
{
  return config_.smoother == Smoother::local_linear ? local_linear_step(x)
                                                    : local_constant_step(x);
}

double
local_linear_step(double x,
                  const PilotFit& pilot,
                  const Dataset& data,
                  const Link& link,
                  const SecondStageConfig& config)
{
  return ComponentSmoother(data, link, pilot, config).local_linear_step(x);
}

double
local_constant_step(double x,
                    const PilotFit& pilot,
                    const Dataset& data,
                    const Link& link,
                    const SecondStageConfig& config)
{
  return ComponentSmoother(data, link, pilot, config).local_constant_step(x);
}

ComponentEstimate
estimate_component(const PilotFit& pilot,
                   const Dataset& data,
                   const Link& link,
                   const SecondStageConfig& config,
                   std::span<const double> grid)
{
  const ComponentSmoother smoother(data, link, pilot, config);
  ComponentEstimate est;
  est.coordinate = pilot.coordinate;
  est.h = config.h;
  est.smoother = config.smoother;
  est.weighted = static_cast<bool>(config.weight);
  est.grid.assign(grid.begin(), grid.end());
  for (double x : grid) {
    if (!(std::abs(x) <= 1.0))
      throw UsageError(fmt::format("grid point {} outside [-1, 1]", x));
    est.mtilde.push_back(pilot.target(x));
    est.boundary.push_back(std::abs(x) > 1.0 - config.h);
    try {
      est.values.push_back(smoother.step(x));
    } catch (const DegenerateWindow&) {
      est.values.push_back(std::numeric_limits<double>::quiet_NaN());
      ++est.missing;
    }
  }
  return est;
}

std::vector<double>
uniform_grid(int n)
{
  if (n < 1)
    throw UsageError("grid size must be positive");
  if (n == 1)
    return { 0.0 };
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i)
    g[i] = -1.0 + 2.0 * i / (n - 1);
  g.back() = 1.0;
  return g;
}

VarianceMinWeight::VarianceMinWeight(const PilotFit& pilot,
                                     const Dataset& data,
                                     const Link& link,
                                     const Kernel& kernel,
                                     double h,
                                     VarianceProvider variance,
                                     double exponent,
                                     double floor)
  : pilot_(pilot)
  , data_(&data)
  , link_(link)
  , kernel_(kernel)
  , h_(h)
  , variance_(std::move(variance))
  , exponent_(exponent)
  , floor_(floor)
  , clamped_(std::make_shared<std::atomic<int>>(0))
{
  check_bandwidth(h);
  if (!variance_)
    throw UsageError("variance-minimizing weight: no variance estimate");
  if (!(exponent > 0.0))
    throw UsageError("variance-minimizing weight: exponent must be positive");
}

double
VarianceMinWeight::normalization(double x, const Eigen::VectorXd& w) const
{
  const double m = pilot_.target(x);
  const Eigen::Index j = pilot_.coordinate;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data_->n(); ++i) {
    const double k = kernel_((data_->x(i, j) - x) / h_);
    if (k == 0.0)
      continue;
    const double fp = link_.Fp(pilot_.mu + m + pilot_.others[i]);
    sum += k * w[i] * fp * fp;
  }
  return sum / (static_cast<double>(data_->n()) * h_);
}

Eigen::VectorXd
VarianceMinWeight::operator()(double x) const
{
  Eigen::VectorXd var = variance_(x);
  if (var.size() != data_->n())
    throw UsageError("variance-minimizing weight: wrong variance length");
  Eigen::VectorXd w(var.size());
  int clamped = 0;
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    double v = var[i];
    if (!(v >= floor_)) {
      v = floor_;
      ++clamped;
    }
    w[i] = std::pow(v, -exponent_);
  }
  if (clamped > 0)
    *clamped_ += clamped;
  const double norm = normalization(x, w);
  if (!(norm > 0.0)) {
    throw DegenerateWindow(fmt::format(
      "variance-minimizing weight at x = {:.6g}: empty kernel window", x));
  }
  return w / norm;
}

} // namespace addlink
