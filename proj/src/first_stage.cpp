#include "addlink/first_stage.hpp"

#include "addlink/error.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace addlink {

namespace {

struct Evaluation
{
  double objective;
  Eigen::VectorXd residual; // Y - F(index)
  Eigen::VectorXd fp;       // F'(index)
};

Evaluation
evaluate(const Eigen::VectorXd& theta,
         const Eigen::MatrixXd& design,
         const Eigen::VectorXd& y,
         const Link& link)
{
  const Eigen::VectorXd index = design * theta;
  Evaluation e{ 0.0, Eigen::VectorXd(y.size()), Eigen::VectorXd(y.size()) };
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const auto v = link.eval(index[i]);
    e.residual[i] = y[i] - v.f;
    e.fp[i] = v.fp;
  }
  e.objective = e.residual.squaredNorm() / static_cast<double>(y.size());
  if (!std::isfinite(e.objective))
    throw NumericalError("first stage: non-finite objective");
  return e;
}

Eigen::VectorXd
project(Eigen::VectorXd theta, double c)
{
  return theta.cwiseMax(-c).cwiseMin(c);
}

//! Gradient components that could still decrease the objective without
//! leaving the box.
double
projected_gradient_norm(const Eigen::VectorXd& theta,
                        const Eigen::VectorXd& grad,
                        double c)
{
  double norm = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    double g = grad[k];
    if ((theta[k] >= c && g < 0.0) || (theta[k] <= -c && g > 0.0))
      g = 0.0;
    norm = std::max(norm, std::abs(g));
  }
  return norm;
}

double
initial_intercept(const Eigen::VectorXd& y, const Link& link, double c)
{
  const double target = y.mean();
  double lo = -c;
  double hi = c;
  if (!(link.F(lo) < target && target < link.F(hi)))
    return 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (link.F(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace

std::vector<int>
FirstStageConfig::kappa_for(Eigen::Index d) const
{
  if (kappa_per_coordinate.empty())
    return std::vector<int>(d, kappa);
  if (static_cast<Eigen::Index>(kappa_per_coordinate.size()) != d) {
    throw UsageError(
      fmt::format("first stage: {} series lengths given for {} covariates",
                  kappa_per_coordinate.size(),
                  d));
  }
  return kappa_per_coordinate;
}

void
FirstStageConfig::validate() const
{
  if (kappa < 1)
    throw UsageError("first stage: kappa must be at least 1");
  for (int k : kappa_per_coordinate)
    if (k < 1)
      throw UsageError("first stage: kappa must be at least 1");
  if (!(c_theta > 0.0))
    throw UsageError("first stage: c_theta must be positive");
  if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0))
    throw UsageError("first stage: tolerances must be positive");
  if (max_iterations < 1)
    throw UsageError("first stage: max_iterations must be positive");
}

double
FirstStageFit::component(Eigen::Index j, double v) const
{
  const auto& b = basis.coordinate(j);
  const auto k = static_cast<std::size_t>(b.kappa());
  std::vector<double> p(k);
  b.eval_all(v, p);
  const Eigen::Index off = basis.block_offset(j);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    sum += theta[off + static_cast<Eigen::Index>(i)] * p[i];
  return sum;
}

double
FirstStageFit::additive(std::span<const double> x) const
{
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    sum += component(static_cast<Eigen::Index>(j), x[j]);
  return sum;
}

Eigen::MatrixXd
FirstStageFit::component_values(const Eigen::MatrixXd& x) const
{
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out(i, j) = component(j, x(i, j));
  return out;
}

double
objective(const Eigen::VectorXd& theta,
          const Eigen::MatrixXd& design,
          const Eigen::VectorXd& y,
          const Link& link)
{
  double sum = 0.0;
  const Eigen::VectorXd index = design * theta;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = y[i] - link.F(index[i]);
    sum += r * r;
  }
  return sum / static_cast<double>(y.size());
}

double
objective(const Eigen::VectorXd& theta,
          const Dataset& data,
          const AdditiveBasis& basis,
          const Link& link)
{
  if (theta.size() != basis.dimension())
    throw UsageError("objective: theta has the wrong length");
  return objective(theta, basis.design(data.x), data.y, link);
}

FirstStageFit
fit_first_stage(const Dataset& data,
                const Link& link,
                const FirstStageConfig& config)
{
  config.validate();
  AdditiveBasis basis(
    config.family, config.kappa_for(data.d()), config.quadrature_order);
  return fit_first_stage(data, basis, link, config);
}

FirstStageFit
fit_first_stage(const Dataset& data,
                const AdditiveBasis& basis,
                const Link& link,
                const FirstStageConfig& config)
{
  config.validate();
  const Eigen::Index n = data.n();
  const Eigen::Index dim = basis.dimension();
  if (basis.coordinates() != data.d())
    throw UsageError("first stage: basis and data dimensions differ");
  if (n <= dim) {
    throw DataError(fmt::format(
      "first stage not identifiable: n = {} does not exceed d(kappa) = {}",
      n,
      dim));
  }

  const Eigen::MatrixXd design = basis.design(data.x);
  {
    const Eigen::MatrixXd gram =
      design.transpose() * design / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram,
                                                       Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (ev.minCoeff() <= 1e-12 * ev.maxCoeff()) {
      throw NumericalError(
        fmt::format("first stage: singular design (min eigenvalue {:.3g} of "
                    "n^-1 sum P P'); reduce kappa",
                    ev.minCoeff()));
    }
  }

  const double c = config.c_theta;
  const double scale = 2.0 / static_cast<double>(n);

  FirstStageFit fit{ basis, Eigen::VectorXd::Zero(dim), false, 0.0, 0, {} };
  fit.theta[0] = initial_intercept(data.y, link, c);
  Evaluation current = evaluate(fit.theta, design, data.y, link);
  fit.objective_trace.push_back(current.objective);

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const Eigen::MatrixXd jac = design.array().colwise() * current.fp.array();
    const Eigen::VectorXd grad = -scale * (jac.transpose() * current.residual);
    if (projected_gradient_norm(fit.theta, grad, c) <=
        config.gradient_tolerance) {
      fit.converged = true;
      break;
    }

    Eigen::MatrixXd normal = jac.transpose() * jac;
    const Eigen::VectorXd rhs = jac.transpose() * current.residual;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal,
                                                       Eigen::EigenvaluesOnly);
    const double min_ev = eig.eigenvalues().minCoeff();
    if (min_ev < 1e-10) {
      const double lambda =
        1e-10 - min_ev + 1e-8 * std::max(1.0, eig.eigenvalues().maxCoeff());
      normal.diagonal().array() += lambda;
    }
    const Eigen::VectorXd step = normal.ldlt().solve(rhs);

    // Backtracking on the projected path with an Armijo condition.
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    Evaluation next;
    for (int halving = 0; halving < 60; ++halving, alpha *= 0.5) {
      trial = project(fit.theta + alpha * step, c);
      next = evaluate(trial, design, data.y, link);
      const double predicted = grad.dot(trial - fit.theta);
      if (next.objective <= current.objective + 1e-4 * predicted) {
        accepted = true;
        break;
      }
    }
    fit.iterations = iter + 1;
    if (!accepted)
      break;

    const double rel_step = (trial - fit.theta).lpNorm<Eigen::Infinity>() /
                            std::max(1.0, fit.theta.lpNorm<Eigen::Infinity>());
    fit.theta = trial;
    current = std::move(next);
    fit.objective_trace.push_back(current.objective);
    if (rel_step <= config.step_tolerance) {
      const Eigen::MatrixXd j2 = design.array().colwise() * current.fp.array();
      const Eigen::VectorXd g2 = -scale * (j2.transpose() * current.residual);
      fit.converged =
        projected_gradient_norm(fit.theta, g2, c) <= config.gradient_tolerance;
      break;
    }
  }
  fit.objective = current.objective;
  return fit;
}

double
eval_mtilde_j(const FirstStageFit& fit, Eigen::Index j, double v)
{
  return fit.component(j, v);
}

double
eval_mtilde(const FirstStageFit& fit, std::span<const double> x)
{
  return fit.additive(x);
}

QHat
q_hat_diagnostic(const FirstStageFit& fit,
                 const Dataset& data,
                 const Link& link)
{
  const Eigen::MatrixXd design = fit.basis.design(data.x);
  const Eigen::VectorXd index = design * fit.theta;
  Eigen::VectorXd fp2(index.size());
  for (Eigen::Index i = 0; i < index.size(); ++i) {
    const double fp = link.Fp(index[i]);
    fp2[i] = fp * fp;
  }
  QHat q;
  q.matrix = design.transpose() * fp2.asDiagonal() * design /
             static_cast<double>(data.n());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q.matrix,
                                                     Eigen::EigenvaluesOnly);
  q.min_eigenvalue = eig.eigenvalues().minCoeff();
  return q;
}

} // namespace addlink
