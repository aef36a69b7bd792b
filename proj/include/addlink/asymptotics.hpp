#pragma once

#include "addlink/data.hpp"
#include "addlink/kernel.hpp"
#include "addlink/link.hpp"
#include "addlink/second_stage.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace addlink {

//! A discrete stand-in for the integrals over x~ that appear in the
//! asymptotic bias and variance at a fixed x = x^j:
//!   int phi(x~) f_X(x, x~) dx~        ~  sum_i weight[i]   phi(x~_i)
//!   int phi(x~) d/dx f_X(x, x~) dx~   ~  sum_i d_weight[i] phi(x~_i)
//! with index[i] = mu + m_j(x) + m_{-j}(x~_i) and, optionally, the
//! conditional variance of U at (x, x~_i).
struct LocalIngredients
{
  Eigen::VectorXd weight;
  Eigen::VectorXd d_weight;
  Eigen::VectorXd index;
  Eigen::VectorXd variance;
};

//! Kernel localization over the sample: weight_i = K_h(X_i^j - x) / (nh),
//! d_weight_i = K'((x - X_i^j)/h) / (nh^2). Only observations inside the
//! window are kept.
LocalIngredients kernel_ingredients(double x,
                                    const PilotFit& pilot,
                                    const Dataset& data,
                                    const Kernel& kernel,
                                    double h,
                                    const VarianceProvider& variance = {});

struct DEstimates
{
  double d0 = 0.0; // 2 int F'^2 f
  double d1 = 0.0; // 2 int F'^2 df/dx
  double d2 = 0.0; // int Var^{-1} F'^2 f (0 without a variance)
};

DEstimates estimate_D0_D1_D2(const LocalIngredients& ing, const Link& link);

//! Asymptotic bias of n^{2/5}(m^_j - m_j) at C_h = h n^{1/5}, given the
//! first two derivatives of m_j at x:
//!   local linear:   C_h^2 A_K D0^{-1} int g F' f,
//!   local constant: C_h^2 A_K D0^{-1} [int g F' f + m_j' D1],
//! with g = F'' m_j'^2 + F' m_j''.
double estimate_beta1(const LocalIngredients& ing,
                      const Link& link,
                      double m1,
                      double m2,
                      double c_h,
                      Smoother smoother,
                      double a_k = Kernel::A_K);

//! Asymptotic variance B_K C_h^{-1} int w^2 Var F'^2 f / (int w F'^2 f)^2.
//! Without weights this is 4 B_K C_h^{-1} D0^{-2} int Var F'^2 f.
double estimate_V1(const LocalIngredients& ing,
                   const Link& link,
                   double c_h,
                   const Eigen::VectorXd& weights = {},
                   double b_k = Kernel::B_K);

//! Variance under the weight proportional to 1 / Var(U | x, x~):
//! B_K / (C_h D2).
double estimate_V1_optimal(const LocalIngredients& ing,
                           const Link& link,
                           double c_h,
                           double b_k = Kernel::B_K);

//! Derivative of order ell in {1, 2} of a function known on an increasing
//! grid, g^{-1-ell} int L^{(ell)}((x - v)/g) m(v) dv with L the quartic
//! kernel and m linearly interpolated. Only the part of the L-window
//! covered by the grid contributes.
class DerivativeEstimator
{
public:
  DerivativeEstimator(std::vector<double> grid, std::vector<double> values);

  double operator()(double x, int ell, double g) const;

  static double default_bandwidth(Eigen::Index n);

private:
  std::vector<double> grid_;
  std::vector<double> values_;
};

std::vector<double> estimate_derivative(std::span<const double> grid,
                                        std::span<const double> values,
                                        int ell,
                                        double g,
                                        std::span<const double> at);

//! Nadaraya-Watson regression of squared residuals on X with a product
//! quartic kernel.
class ConditionalVariance
{
public:
  struct Value
  {
    double value;
    bool floored;  // raw estimate below the floor
    bool fallback; // empty window, global mean used
  };

  ConditionalVariance(const Dataset& data,
                      Eigen::VectorXd squared_residuals,
                      std::vector<double> bandwidths,
                      double floor = 1e-6);

  Value at(std::span<const double> x) const;

  //! Estimates at every sample point.
  Eigen::VectorXd at_samples(int* flagged = nullptr) const;

  //! Var(U | x^j = x, X~_i) for every observation i.
  VarianceProvider provider(Eigen::Index j) const;

  double floor() const noexcept { return floor_; }

private:
  const Dataset* data_;
  Eigen::VectorXd sq_;
  std::vector<double> h_;
  double floor_;
  double global_mean_;
  Kernel kernel_;
  std::vector<Eigen::Index> order_; // sorted on the first coordinate
  std::vector<double> sorted_;
};

//! {Y_i - F(index_i)}^2.
Eigen::VectorXd squared_residuals(const Dataset& data,
                                  const Link& link,
                                  const Eigen::VectorXd& index);

enum class CiMode
{
  bias_corrected,
  undersmoothed
};

CiMode ci_mode_by_name(std::string_view name);
std::string_view ci_mode_name(CiMode mode);

struct AsymptoticSummary
{
  std::vector<double> grid;
  std::vector<double> estimate;
  std::vector<double> beta;
  std::vector<double> variance;
  std::vector<double> lower;
  std::vector<double> upper;
  CiMode mode = CiMode::undersmoothed;
  double alpha = 0.05;
  double gamma = 0.3;
};

//! Bias-corrected: m^ - n^{-2/5} beta +- z n^{-2/5} sqrt(V).
//! Undersmoothed (h = C_h n^{-gamma}): m^ +- z n^{-(1 - gamma)/2} sqrt(V),
//! beta unused. NaN estimates give NaN bounds.
AsymptoticSummary confidence_interval(std::span<const double> grid,
                                      std::span<const double> estimate,
                                      std::span<const double> beta,
                                      std::span<const double> variance,
                                      Eigen::Index n,
                                      double alpha,
                                      CiMode mode,
                                      double gamma = 0.3);

} // namespace addlink
