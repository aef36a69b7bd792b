#pragma once

#include "addlink/basis.hpp"
#include "addlink/data.hpp"
#include "addlink/link.hpp"

#include <Eigen/Dense>

#include <vector>

namespace addlink {

struct FirstStageConfig
{
  BasisFamily family = BasisFamily::orthonormal_bspline;
  int quadrature_order = 64;
  //! Series length for every coordinate unless `kappa_per_coordinate` is
  //! non-empty.
  int kappa = 2;
  std::vector<int> kappa_per_coordinate;
  double c_theta = 100.0;
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;
  double step_tolerance = 1e-12;

  std::vector<int> kappa_for(Eigen::Index d) const;
  void validate() const;
};

struct FirstStageFit
{
  AdditiveBasis basis;
  Eigen::VectorXd theta;
  bool converged = false;
  double objective = 0.0;
  int iterations = 0;
  //! Objective at the start and after every accepted step.
  std::vector<double> objective_trace;

  double mu() const { return theta[0]; }
  Eigen::Index d() const { return basis.coordinates(); }

  //! m~_j(v); j is zero-based.
  double component(Eigen::Index j, double v) const;
  //! sum_j m~_j(x^j), excluding the intercept.
  double additive(std::span<const double> x) const;
  //! n x d matrix of m~_j(X_ij).
  Eigen::MatrixXd component_values(const Eigen::MatrixXd& x) const;
};

//! n^{-1} sum_i {Y_i - F[P(X_i)' theta]}^2 for a precomputed design P.
double objective(const Eigen::VectorXd& theta,
                 const Eigen::MatrixXd& design,
                 const Eigen::VectorXd& y,
                 const Link& link);

double objective(const Eigen::VectorXd& theta,
                 const Dataset& data,
                 const AdditiveBasis& basis,
                 const Link& link);

FirstStageFit fit_first_stage(const Dataset& data,
                              const Link& link,
                              const FirstStageConfig& config);

FirstStageFit fit_first_stage(const Dataset& data,
                              const AdditiveBasis& basis,
                              const Link& link,
                              const FirstStageConfig& config);

double eval_mtilde_j(const FirstStageFit& fit, Eigen::Index j, double v);
double eval_mtilde(const FirstStageFit& fit, std::span<const double> x);

struct QHat
{
  Eigen::MatrixXd matrix;
  double min_eigenvalue = 0.0;
};

//! n^{-1} sum_i F'[P(X_i)' theta]^2 P(X_i) P(X_i)'.
QHat q_hat_diagnostic(const FirstStageFit& fit,
                      const Dataset& data,
                      const Link& link);

//! Minimum eigenvalue below which the conditioning diagnostic warns.
inline constexpr double q_hat_warning_threshold = 1e-8;

} // namespace addlink
