#include "addlink/bandwidth.hpp"

#include "addlink/asymptotics.hpp"
#include "addlink/parallel.hpp"
#include "addlink/quadrature.hpp"

#include <fmt/format.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace addlink {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

//! Observations sorted on one coordinate, for window queries.
struct SortedCoordinate
{
  SortedCoordinate(const Dataset& data, Eigen::Index j)
  {
    order.resize(data.n());
    std::iota(order.begin(), order.end(), Eigen::Index{ 0 });
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return data.x(a, j) < data.x(b, j);
    });
    values.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      values[r] = data.x(order[r], j);
  }

  std::vector<Eigen::Index> order;
  std::vector<double> values;
};

//! D^_j(X_i^j) = (1/(n h)) sum_k K_h(X_k^j - X_i^j) F'(index_k)^2.
Eigen::VectorXd
d_hat_at_samples(const Dataset& data,
                 Eigen::Index j,
                 const Eigen::VectorXd& fp2,
                 const Kernel& kernel,
                 double h)
{
  const SortedCoordinate s(data, j);
  const double nh = static_cast<double>(data.n()) * h;
  Eigen::VectorXd out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double x = data.x(i, j);
    auto first = std::upper_bound(s.values.begin(), s.values.end(), x - h);
    auto last = std::lower_bound(first, s.values.end(), x + h);
    double sum = 0.0;
    for (auto it = first; it != last; ++it) {
      const auto k = s.order[static_cast<std::size_t>(it - s.values.begin())];
      sum += kernel((*it - x) / h) * fp2[k];
    }
    out[i] = sum / nh;
  }
  return out;
}

} // namespace

double
plugin_Ch1(std::span<const double> grid,
           std::span<const double> weight,
           std::span<const double> beta_tilde,
           std::span<const double> v_tilde,
           double h)
{
  const std::size_t m = grid.size();
  if (weight.size() != m || beta_tilde.size() != m || v_tilde.size() != m)
    throw UsageError("plug-in bandwidth: input lengths differ");
  std::vector<double> x, wv, wb;
  for (std::size_t k = 0; k < m; ++k) {
    if (std::abs(grid[k]) > 1.0 - h + 1e-12)
      continue;
    if (weight[k] < 0.0)
      throw UsageError("plug-in bandwidth: weight must be nonnegative");
    x.push_back(grid[k]);
    wv.push_back(weight[k] * v_tilde[k]);
    wb.push_back(weight[k] * beta_tilde[k] * beta_tilde[k]);
  }
  if (x.size() < 2)
    throw UsageError("plug-in bandwidth: fewer than two interior grid points");
  const double iv = trapezoid(x, wv);
  const double ib = trapezoid(x, wb);
  if (!std::isfinite(iv) || !std::isfinite(ib))
    throw NumericalError("plug-in bandwidth: non-finite ingredient");
  if (!(ib > 1e-12 * std::max(1.0, std::abs(iv)))) {
    throw ZeroBias(
      "plug-in bandwidth: the estimated bias integral is zero (the component "
      "looks linear); use undersmoothing or choose the bandwidth manually");
  }
  if (!(iv > 0.0))
    throw NumericalError("plug-in bandwidth: variance integral not positive");
  return std::pow(0.25 * iv / ib, 0.2);
}

PluginResult
plugin_bandwidths(const Dataset& data,
                  const FirstStageFit& fit,
                  const Link& link,
                  const PluginOptions& options)
{
  const auto n = static_cast<double>(data.n());
  const double h0 = options.pilot_c_h * std::pow(n, -0.2);
  if (!(h0 > 0.0 && h0 < 1.0))
    throw UsageError("plug-in bandwidth: pilot bandwidth outside (0, 1)");

  std::vector<PilotFit> pilots;
  for (Eigen::Index j = 0; j < data.d(); ++j)
    pilots.push_back(pilot_from_first_stage(fit, data, j));
  const PlsEvaluator fitter(
    data, fit.mu(), pilots, link, options.smoother, options.kernel);
  const std::vector<double> c0(data.d(), options.pilot_c_h);
  const Eigen::VectorXd index = fitter.index_hat(c0);
  const ConditionalVariance variance(
    data,
    squared_residuals(data, link, index),
    std::vector<double>(data.d(), options.variance_factor * h0));

  const double g = options.derivative_bandwidth > 0.0
                     ? options.derivative_bandwidth
                     : DerivativeEstimator::default_bandwidth(data.n());
  const auto fine = uniform_grid(options.estimate_grid);
  std::vector<double> xs;
  for (int k = 0; k < options.integration_grid; ++k)
    xs.push_back(-(1.0 - h0) + 2.0 * (1.0 - h0) * k /
                                 (options.integration_grid - 1));
  const std::vector<double> w(xs.size(), 1.0 / (2.0 * (1.0 - h0)));

  PluginResult result;
  result.pilot_h = h0;
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    SecondStageConfig cfg;
    cfg.h = h0;
    cfg.smoother = options.smoother;
    cfg.kernel = options.kernel;
    const auto est = estimate_component(pilots[j], data, link, cfg, fine);
    if (est.missing > 0) {
      throw DegenerateWindow(fmt::format(
        "plug-in bandwidth: {} degenerate pilot estimates for coordinate {}",
        est.missing,
        j + 1));
    }
    const DerivativeEstimator deriv(est.grid, est.values);
    const auto provider = variance.provider(j);
    std::vector<double> beta(xs.size()), v(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto ing =
        kernel_ingredients(xs[k], pilots[j], data, options.kernel, h0, provider);
      beta[k] = estimate_beta1(ing,
                               link,
                               deriv(xs[k], 1, g),
                               deriv(xs[k], 2, g),
                               1.0,
                               options.smoother);
      v[k] = estimate_V1(ing, link, 1.0);
    }
    result.c_h.push_back(plugin_Ch1(xs, w, beta, v, h0));
  }
  return result;
}

PlsEvaluator::PlsEvaluator(const Dataset& data,
                           double mu,
                           std::vector<PilotFit> pilots,
                           const Link& link,
                           Smoother smoother,
                           Kernel kernel,
                           double variance_factor)
  : data_(data)
  , mu_(mu)
  , pilots_(std::move(pilots))
  , link_(link)
  , smoother_(smoother)
  , kernel_(kernel)
  , variance_factor_(variance_factor)
{
  if (static_cast<Eigen::Index>(pilots_.size()) != data.d())
    throw UsageError("PLS: one pilot fit per covariate required");
  if (!(variance_factor > 0.0))
    throw UsageError("PLS: variance bandwidth factor must be positive");
}

PlsEvaluator::PlsEvaluator(const Dataset& data,
                           const FirstStageFit& fit,
                           const Link& link,
                           Smoother smoother,
                           Kernel kernel,
                           double variance_factor)
  : PlsEvaluator(data,
                 fit.mu(),
                 [&] {
                   std::vector<PilotFit> p;
                   for (Eigen::Index j = 0; j < data.d(); ++j)
                     p.push_back(pilot_from_first_stage(fit, data, j));
                   return p;
                 }(),
                 link,
                 smoother,
                 kernel,
                 variance_factor)
{}

double
PlsEvaluator::bandwidth(double c) const
{
  return c * std::pow(static_cast<double>(data_.n()), -0.2);
}

const Eigen::VectorXd&
PlsEvaluator::component_at_samples(Eigen::Index j, double c) const
{
  const auto key = std::make_pair(j, c);
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      if (it->second.degenerate)
        throw DegenerateWindow(fmt::format(
          "PLS: degenerate fit for coordinate {} at C = {}", j + 1, c));
      return it->second.values;
    }
  }
  Cached entry;
  const double h = bandwidth(c);
  if (!(h > 0.0 && h <= 2.0))
    throw UsageError(fmt::format("PLS: bandwidth {} outside (0, 2]", h));
  SecondStageConfig cfg;
  cfg.h = h;
  cfg.smoother = smoother_;
  cfg.kernel = kernel_;
  const ComponentSmoother smoother(data_, link_, pilots_.at(j), cfg);
  entry.values.resize(data_.n());
  try {
    for (Eigen::Index i = 0; i < data_.n(); ++i)
      entry.values[i] = smoother.step(data_.x(i, j));
  } catch (const DegenerateWindow&) {
    entry.degenerate = true;
  }
  std::lock_guard lock(mutex_);
  auto [it, inserted] = cache_.emplace(key, std::move(entry));
  if (it->second.degenerate)
    throw DegenerateWindow(
      fmt::format("PLS: degenerate fit for coordinate {} at C = {}", j + 1, c));
  return it->second.values;
}

Eigen::VectorXd
PlsEvaluator::index_hat(std::span<const double> c) const
{
  if (static_cast<Eigen::Index>(c.size()) != d())
    throw UsageError("PLS: one bandwidth constant per covariate required");
  Eigen::VectorXd index = Eigen::VectorXd::Constant(data_.n(), mu_);
  for (Eigen::Index j = 0; j < d(); ++j)
    index += component_at_samples(j, c[j]);
  return index;
}

PlsTerms
PlsEvaluator::evaluate(std::span<const double> c) const
{
  Eigen::VectorXd index;
  try {
    index = index_hat(c);
  } catch (const DegenerateWindow&) {
    return { kInf, kInf, kInf };
  }
  const Eigen::Index n = data_.n();
  const Eigen::VectorXd sq = squared_residuals(data_, link_, index);
  Eigen::VectorXd fp2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double fp = link_.Fp(index[i]);
    fp2[i] = fp * fp;
  }
  std::vector<double> hv(d());
  for (Eigen::Index j = 0; j < d(); ++j)
    hv[j] = variance_factor_ * bandwidth(c[j]);
  const Eigen::VectorXd v_hat = ConditionalVariance(data_, sq, hv).at_samples();

  Eigen::VectorXd inv_sum = Eigen::VectorXd::Zero(n);
  const double nd = static_cast<double>(n);
  for (Eigen::Index j = 0; j < d(); ++j) {
    const double h = bandwidth(c[j]);
    const Eigen::VectorXd dj = d_hat_at_samples(data_, j, fp2, kernel_, h);
    if (!(dj.minCoeff() > 0.0))
      return { kInf, kInf, kInf };
    inv_sum += (nd * h * dj.array()).inverse().matrix();
  }

  PlsTerms t;
  t.rss = sq.mean();
  t.penalty =
    2.0 * kernel_.k0() / nd *
    (fp2.array() * v_hat.array() * inv_sum.array()).sum();
  t.total = t.rss + t.penalty;
  return t;
}

double
pls_objective(std::span<const double> c, const PlsEvaluator& evaluator)
{
  return evaluator.evaluate(c).total;
}

std::vector<double>
PlsConfig::candidates() const
{
  validate();
  if (grid_points == 1)
    return { std::sqrt(c_lo * c_hi) };
  std::vector<double> out(grid_points);
  const double a = std::log(c_lo);
  const double b = std::log(c_hi);
  for (int k = 0; k < grid_points; ++k)
    out[k] = std::exp(a + (b - a) * k / (grid_points - 1));
  out.front() = c_lo;
  out.back() = c_hi;
  return out;
}

void
PlsConfig::validate() const
{
  if (!(c_lo > 0.0 && c_lo < c_hi))
    throw UsageError("PLS: search box must satisfy 0 < c_lo < c_hi");
  if (grid_points < 1)
    throw UsageError("PLS: at least one grid point per coordinate required");
}

namespace {

constexpr std::size_t kMaxTensorGrid = 4096;

struct PolishState
{
  const PlsEvaluator* evaluator;
  double log_lo, log_hi;
  std::vector<PlsTraceRow>* trace;
  double* best;
};

double
polish_objective(const gsl_vector* v, void* params)
{
  auto* s = static_cast<PolishState*>(params);
  std::vector<double> c(v->size);
  for (std::size_t j = 0; j < v->size; ++j) {
    const double lc = gsl_vector_get(v, j);
    if (!(lc >= s->log_lo && lc <= s->log_hi))
      return 1e300;
    c[j] = std::exp(lc);
  }
  const PlsTerms t = s->evaluator->evaluate(c);
  if (t.total < *s->best)
    *s->best = t.total;
  s->trace->push_back({ "polish", c, t, *s->best });
  return std::isfinite(t.total) ? t.total : 1e300;
}

} // namespace

PlsResult
minimize_pls(const PlsEvaluator& evaluator, const PlsConfig& config)
{
  const auto cand = config.candidates();
  const auto d = static_cast<std::size_t>(evaluator.d());
  const std::size_t g = cand.size();

  // Warm the per-coordinate cache so that grid evaluations only assemble.
  parallel_for(d * g, config.threads, [&](std::size_t k) {
    try {
      evaluator.component_at_samples(static_cast<Eigen::Index>(k / g),
                                     cand[k % g]);
    } catch (const DegenerateWindow&) {
    }
  });

  PlsResult result;
  result.objective = kInf;
  double best = kInf;
  auto record = [&](const std::vector<double>& c, const PlsTerms& t) {
    if (t.total < best) {
      best = t.total;
      result.c = c;
      result.objective = t.total;
    }
    result.trace.push_back({ "grid", c, t, best });
  };

  double tensor = 1.0;
  for (std::size_t j = 0; j < d; ++j)
    tensor *= static_cast<double>(g);

  if (tensor <= static_cast<double>(kMaxTensorGrid)) {
    // Full tensor grid in lexicographic order, first coordinate slowest,
    // so strict improvement keeps the lexicographically smallest argmin.
    const auto total = static_cast<std::size_t>(tensor);
    std::vector<std::vector<double>> points(total, std::vector<double>(d));
    for (std::size_t k = 0; k < total; ++k) {
      std::size_t rest = k;
      for (std::size_t j = d; j-- > 0;) {
        points[k][j] = cand[rest % g];
        rest /= g;
      }
    }
    std::vector<PlsTerms> terms(total);
    parallel_for(total, config.threads, [&](std::size_t k) {
      terms[k] = evaluator.evaluate(points[k]);
    });
    for (std::size_t k = 0; k < total; ++k)
      record(points[k], terms[k]);
  } else {
    // Cyclic coordinate search from the centre of the grid.
    std::vector<double> c(d, cand[g / 2]);
    record(c, evaluator.evaluate(c));
    for (int sweep = 0; sweep < 20; ++sweep) {
      bool moved = false;
      for (std::size_t j = 0; j < d; ++j) {
        const std::vector<double> start = result.c;
        std::vector<PlsTerms> terms(g);
        std::vector<std::vector<double>> points(g, start);
        for (std::size_t k = 0; k < g; ++k)
          points[k][j] = cand[k];
        parallel_for(g, config.threads, [&](std::size_t k) {
          terms[k] = evaluator.evaluate(points[k]);
        });
        for (std::size_t k = 0; k < g; ++k)
          record(points[k], terms[k]);
        moved = moved || result.c != start;
      }
      if (!moved)
        break;
    }
  }

  if (!std::isfinite(result.objective)) {
    throw NumericalError(
      "PLS: every candidate bandwidth gave a degenerate fit; widen the search "
      "box");
  }

  if (config.polish && g > 1) {
    PolishState state{ &evaluator,       std::log(config.c_lo),
                       std::log(config.c_hi), &result.trace, &best };
    gsl_multimin_function fn{ &polish_objective, d, &state };
    gsl_vector* x = gsl_vector_alloc(d);
    gsl_vector* step = gsl_vector_alloc(d);
    const double spacing = (state.log_hi - state.log_lo) / (g - 1);
    for (std::size_t j = 0; j < d; ++j) {
      gsl_vector_set(x, j, std::log(result.c[j]));
      gsl_vector_set(step, j, 0.5 * spacing);
    }
    gsl_multimin_fminimizer* s =
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, d);
    gsl_multimin_fminimizer_set(s, &fn, x, step);
    for (int it = 0; it < config.polish_iterations; ++it) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS)
        break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-3) ==
          GSL_SUCCESS)
        break;
    }
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);

    for (const auto& row : result.trace) {
      if (row.stage == "polish" && row.terms.total < result.objective) {
        result.objective = row.terms.total;
        result.c = row.c;
      }
    }
  }
  return result;
}

double
average_squared_error(const Eigen::VectorXd& index_hat,
                      const Eigen::VectorXd& index_true,
                      const Link& link)
{
  if (index_hat.size() != index_true.size() || index_hat.size() == 0)
    throw UsageError("ASE: index vectors differ in length");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < index_hat.size(); ++i) {
    const double e = link.F(index_hat[i]) - link.F(index_true[i]);
    sum += e * e;
  }
  return sum / static_cast<double>(index_hat.size());
}

} // namespace addlink
