#include "addlink/montecarlo.hpp"

#include "addlink/error.hpp"
#include "addlink/normal.hpp"
#include "addlink/parallel.hpp"
#include "addlink/quadrature.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace addlink {

namespace {

constexpr double kPi = std::numbers::pi;

double
normal_pdf(double x)
{
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

//! Coefficient of the second component: Phi(3x) for the benchmark design,
//! 3 (Phi(3x) - 1/2) for the heteroskedastic one.
double
phi_scale(DgpKind kind)
{
  return kind == DgpKind::heteroskedastic ? 3.0 : 1.0;
}

} // namespace

DgpKind
dgp_by_name(std::string_view name)
{
  if (name == "benchmark")
    return DgpKind::benchmark;
  if (name == "heteroskedastic")
    return DgpKind::heteroskedastic;
  if (name == "linear-identity")
    return DgpKind::linear_identity;
  throw UsageError(fmt::format(
    "unknown dgp '{}' (valid: benchmark, heteroskedastic, linear-identity)", name));
}

std::string_view
dgp_name(DgpKind kind)
{
  switch (kind) {
    case DgpKind::benchmark:
      return "benchmark";
    case DgpKind::heteroskedastic:
      return "heteroskedastic";
    case DgpKind::linear_identity:
      return "linear-identity";
  }
  return "";
}

Dgp::Dgp(DgpKind kind, int d)
  : kind_(kind)
  , d_(d)
  , link_(kind == DgpKind::linear_identity ? identity_link() : logit_link())
{
  if (d < 2)
    throw UsageError("dgp: at least two covariates required");
}

double
Dgp::mu() const
{
  switch (kind_) {
    case DgpKind::benchmark:
      return 0.5;
    case DgpKind::heteroskedastic:
      return 0.0;
    case DgpKind::linear_identity:
      return 0.5;
  }
  return 0.0;
}

double
Dgp::component(int j, double x) const
{
  if (kind_ == DgpKind::linear_identity)
    return (j == 0 ? 0.8 : j == 1 ? -0.5 : 0.3) * x;
  if (j == 0)
    return std::sin(kPi * x);
  if (j == 1)
    return phi_scale(kind_) * (normal_cdf(3.0 * x) - 0.5);
  return x;
}

double
Dgp::component_derivative(int j, double x, int order) const
{
  if (order < 1 || order > 2)
    throw UsageError("dgp: derivative order must be 1 or 2");
  if (kind_ == DgpKind::linear_identity || j >= 2) {
    if (order == 2)
      return 0.0;
    return kind_ == DgpKind::linear_identity
             ? (j == 0 ? 0.8 : j == 1 ? -0.5 : 0.3)
             : 1.0;
  }
  if (j == 0)
    return order == 1 ? kPi * std::cos(kPi * x)
                      : -kPi * kPi * std::sin(kPi * x);
  const double a = phi_scale(kind_);
  return order == 1 ? a * 3.0 * normal_pdf(3.0 * x)
                    : -a * 27.0 * x * normal_pdf(3.0 * x);
}

double
Dgp::index(std::span<const double> x) const
{
  double v = mu();
  for (int j = 0; j < d_; ++j)
    v += component(j, x[j]);
  return v;
}

double
Dgp::probability(std::span<const double> x) const
{
  return link_.F(index(x));
}

double
Dgp::conditional_variance(std::span<const double> x) const
{
  if (kind_ == DgpKind::linear_identity)
    return 0.0;
  const double p = probability(x);
  return p * (1.0 - p);
}

PilotFit
Dgp::truth_pilot(const Dataset& data, int j) const
{
  PilotFit p;
  p.coordinate = j;
  p.mu = mu();
  p.others = Eigen::VectorXd::Zero(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i)
    for (int c = 0; c < d_; ++c)
      if (c != j)
        p.others[i] += component(c, data.x(i, c));
  const Dgp self = *this;
  p.target = [self, j](double v) { return self.component(j, v); };
  return p;
}

Eigen::VectorXd
Dgp::true_index(const Dataset& data) const
{
  Eigen::VectorXd out(data.n());
  std::vector<double> row(d_);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (int c = 0; c < d_; ++c)
      row[c] = data.x(i, c);
    out[i] = index(row);
  }
  return out;
}

Dataset
generate_sample(const Dgp& dgp, Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 gen(seed);
  Eigen::MatrixXd x(n, dgp.d());
  Eigen::VectorXd y(n);
  std::vector<double> row(dgp.d());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < dgp.d(); ++j) {
      row[j] = 2.0 * uniform01(gen) - 1.0;
      x(i, j) = row[j];
    }
    if (dgp.kind() == DgpKind::linear_identity)
      y[i] = dgp.index(row);
    else
      y[i] = uniform01(gen) < dgp.probability(row) ? 1.0 : 0.0;
  }
  return cube_dataset(std::move(y), std::move(x));
}

OracleDerivatives
oracle_derivatives(double x,
                   double b0,
                   double b1,
                   const PilotFit& truth,
                   const Dataset& data,
                   const Link& link,
                   const Kernel& kernel,
                   double h)
{
  OracleDerivatives d;
  d.gradient.setZero();
  d.hessian.setZero();
  d.gauss_newton.setZero();
  const Eigen::Index j = truth.coordinate;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double u = data.x(i, j) - x;
    const double k = kernel(u / h);
    if (k == 0.0)
      continue;
    const auto v = link.eval(truth.mu + b0 + b1 * u + truth.others[i]);
    const double r = data.y[i] - v.f;
    const Eigen::Vector2d z(1.0, u);
    d.objective += k * r * r;
    d.gradient += -2.0 * k * r * v.fp * z;
    d.gauss_newton += 2.0 * k * v.fp * v.fp * z * z.transpose();
    d.hessian += 2.0 * k * (v.fp * v.fp - r * v.fpp) * z * z.transpose();
  }
  return d;
}

Eigen::Vector2d
oracle_newton_step(double x,
                   double b0,
                   double b1,
                   const PilotFit& truth,
                   const Dataset& data,
                   const Link& link,
                   const Kernel& kernel,
                   double h)
{
  const auto d = oracle_derivatives(x, b0, b1, truth, data, link, kernel, h);
  return Eigen::Vector2d(b0, b1) - d.hessian.inverse() * d.gradient;
}

OracleResult
oracle_fit(double x,
           const PilotFit& truth,
           const Dataset& data,
           const Link& link,
           const Kernel& kernel,
           double h)
{
  if (!(h > 0.0 && h <= 2.0))
    throw UsageError(fmt::format("oracle: bandwidth {} outside (0, 2]", h));
  {
    const Eigen::Index j = truth.coordinate;
    int distinct = 0;
    double first = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index i = 0; i < data.n() && distinct < 2; ++i) {
      if (kernel((data.x(i, j) - x) / h) > 0.0) {
        if (distinct == 0 || data.x(i, j) != first) {
          first = data.x(i, j);
          ++distinct;
        }
      }
    }
    if (distinct < 2) {
      throw DegenerateWindow(
        fmt::format("oracle at x = {:.6g}: fewer than two distinct points "
                    "within h = {:.6g}",
                    x,
                    h));
    }
  }

  OracleResult res;
  res.b0 = truth.target(x);
  res.b1 = 0.0;
  for (int it = 0; it <= 100; ++it) {
    auto d = oracle_derivatives(x, res.b0, res.b1, truth, data, link, kernel, h);
    res.gradient_norm = d.gradient.norm();
    res.iterations = it;
    if (res.gradient_norm <= 1e-10)
      return res;
    if (it == 100)
      break;
    Eigen::Matrix2d hess = d.hessian;
    if (!(hess(0, 0) > 0.0 && hess.determinant() > 0.0))
      hess = d.gauss_newton;
    const Eigen::Vector2d step = -hess.ldlt().solve(d.gradient);
    double alpha = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half, alpha *= 0.5) {
      const double nb0 = res.b0 + alpha * step[0];
      const double nb1 = res.b1 + alpha * step[1];
      const auto nd =
        oracle_derivatives(x, nb0, nb1, truth, data, link, kernel, h);
      if (nd.objective <= d.objective + 1e-13 * std::abs(d.objective)) {
        moved = nb0 != res.b0 || nb1 != res.b1;
        res.b0 = nb0;
        res.b1 = nb1;
        break;
      }
    }
    if (!moved)
      break;
  }
  throw NumericalError(
    fmt::format("oracle at x = {:.6g}: no convergence (gradient norm {:.3g})",
                x,
                res.gradient_norm));
}

Estimator
estimator_by_name(std::string_view name)
{
  if (name == "two-stage-ll")
    return Estimator::two_stage_ll;
  if (name == "two-stage-lc")
    return Estimator::two_stage_lc;
  if (name == "oracle")
    return Estimator::oracle;
  throw UsageError(fmt::format(
    "unknown estimator '{}' (valid: two-stage-ll, two-stage-lc, oracle)", name));
}

std::string_view
estimator_name(Estimator e)
{
  switch (e) {
    case Estimator::two_stage_ll:
      return "two-stage-ll";
    case Estimator::two_stage_lc:
      return "two-stage-lc";
    case Estimator::oracle:
      return "oracle";
  }
  return "";
}

TrimRule
trim_by_name(std::string_view name)
{
  if (name == "boundary")
    return TrimRule::boundary;
  if (name == "none")
    return TrimRule::none;
  if (name == "fixed")
    return TrimRule::fixed;
  throw UsageError(
    fmt::format("unknown trim rule '{}' (valid: boundary, none, fixed)", name));
}

std::string_view
trim_name(TrimRule t)
{
  switch (t) {
    case TrimRule::boundary:
      return "boundary";
    case TrimRule::none:
      return "none";
    case TrimRule::fixed:
      return "fixed";
  }
  return "";
}

double
integrated_squared_error(std::span<const double> grid,
                         std::span<const double> estimate,
                         std::span<const double> target,
                         TrimRule trim,
                         double h,
                         double trim_a,
                         double density)
{
  if (estimate.size() != grid.size() || target.size() != grid.size())
    throw UsageError("ISE: input lengths differ");
  const double limit = trim == TrimRule::boundary ? 1.0 - h
                       : trim == TrimRule::fixed  ? trim_a
                                                  : 1.0;
  std::vector<double> x, e, t;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (std::abs(grid[k]) > limit + 1e-12)
      continue;
    if (!std::isfinite(estimate[k]))
      throw DegenerateWindow(
        fmt::format("ISE: missing estimate at x = {:.6g}", grid[k]));
    x.push_back(grid[k]);
    e.push_back(estimate[k]);
    t.push_back(target[k]);
  }
  if (x.size() < 2) {
    throw UsageError(fmt::format(
      "ISE: trimmed region |x| <= {:.4g} holds fewer than two grid points",
      limit));
  }
  const double width = x.back() - x.front();
  const double ce = trapezoid(x, e) / width;
  const double ct = trapezoid(x, t) / width;
  std::vector<double> sq(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double diff = (e[k] - ce) - (t[k] - ct);
    sq[k] = diff * diff;
  }
  return density * trapezoid(x, sq);
}

void
ExperimentConfig::validate() const
{
  if (replications < 1)
    throw UsageError("experiment: at least one replication required");
  if (n < 2)
    throw UsageError("experiment: sample size too small");
  if (d < 2)
    throw UsageError("experiment: d must be at least 2");
  if (components.empty())
    throw UsageError("experiment: no components to evaluate");
  if (h.size() != components.size())
    throw UsageError(fmt::format(
      "experiment: {} bandwidths given for {} components", h.size(),
      components.size()));
  for (int c : components)
    if (c < 0 || c >= d)
      throw UsageError(fmt::format("experiment: component {} out of range",
                                   c + 1));
  if (static_cast<int>(kappa.size()) > d)
    throw UsageError("experiment: more series lengths than covariates");
  if (grid_points < 2)
    throw UsageError("experiment: grid needs at least two points");
  if (!(ise_density > 0.0))
    throw UsageError("experiment: ISE density must be positive");
}

std::vector<std::vector<double>>
estimate_replication(const ExperimentConfig& config,
                     const Dgp& dgp,
                     const Dataset& data,
                     std::span<const double> grid)
{
  const Kernel kernel;
  std::vector<std::vector<double>> out;
  const auto nan = std::numeric_limits<double>::quiet_NaN();

  if (config.estimator == Estimator::oracle) {
    for (std::size_t c = 0; c < config.components.size(); ++c) {
      const int j = config.components[c];
      const PilotFit truth = dgp.truth_pilot(data, j);
      std::vector<double> values;
      values.reserve(grid.size());
      for (double x : grid) {
        try {
          values.push_back(
            oracle_fit(x, truth, data, dgp.link(), kernel, config.h[c]).b0);
        } catch (const DegenerateWindow&) {
          values.push_back(nan);
        }
      }
      out.push_back(std::move(values));
    }
    return out;
  }

  FirstStageConfig fs = config.first_stage;
  fs.kappa_per_coordinate = config.kappa;
  fs.kappa_per_coordinate.resize(config.d, config.nuisance_kappa);
  const FirstStageFit fit = fit_first_stage(data, dgp.link(), fs);
  for (std::size_t c = 0; c < config.components.size(); ++c) {
    const int j = config.components[c];
    SecondStageConfig sc;
    sc.h = config.h[c];
    sc.smoother = config.estimator == Estimator::two_stage_ll
                    ? Smoother::local_linear
                    : Smoother::local_constant;
    sc.hessian = config.hessian;
    out.push_back(
      estimate_component(
        pilot_from_first_stage(fit, data, j), data, dgp.link(), sc, grid)
        .values);
  }
  return out;
}

EimseReport
run_experiment(const ExperimentConfig& config)
{
  config.validate();
  const Dgp dgp(config.dgp, config.d);
  const auto grid = uniform_grid(config.grid_points);
  const std::size_t reps = static_cast<std::size_t>(config.replications);
  const std::size_t ncomp = config.components.size();

  std::vector<std::vector<double>> targets(ncomp);
  for (std::size_t c = 0; c < ncomp; ++c)
    for (double x : grid)
      targets[c].push_back(dgp.component(config.components[c], x));

  std::vector<std::vector<double>> ise(reps, std::vector<double>(ncomp));
  std::vector<char> failed(reps, 0);
  parallel_for(reps, config.threads, [&](std::size_t r) {
    try {
      const Dataset data = generate_sample(dgp, config.n, config.seed + r);
      const auto est = estimate_replication(config, dgp, data, grid);
      for (std::size_t c = 0; c < ncomp; ++c) {
        ise[r][c] = integrated_squared_error(
          grid,
          est[c],
          targets[c],
          config.trim,
          config.h[c],
          config.trim_a,
          config.ise_density);
      }
    } catch (const NumericalError&) {
      failed[r] = 1;
    }
  });

  EimseReport report;
  report.config = config;
  for (std::size_t r = 0; r < reps; ++r) {
    if (failed[r]) {
      ++report.failures;
      report.failed_replications.push_back(static_cast<int>(r));
    }
  }
  report.replications = static_cast<int>(reps) - report.failures;
  if (report.failures > 0.05 * static_cast<double>(reps)) {
    throw NumericalError(
      fmt::format("experiment aborted: {} of {} replications failed",
                  report.failures,
                  reps));
  }
  for (std::size_t c = 0; c < ncomp; ++c) {
    ComponentReport cr;
    cr.component = config.components[c];
    for (std::size_t r = 0; r < reps; ++r)
      if (!failed[r])
        cr.ise.push_back(ise[r][c]);
    const double m = static_cast<double>(cr.ise.size());
    double sum = 0.0;
    for (double v : cr.ise)
      sum += v;
    cr.eimse = sum / m;
    double ss = 0.0;
    for (double v : cr.ise)
      ss += (v - cr.eimse) * (v - cr.eimse);
    cr.standard_error = cr.ise.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
    report.components.push_back(std::move(cr));
  }
  return report;
}

} // namespace addlink
