#pragma once

#include "addlink/data.hpp"
#include "addlink/first_stage.hpp"
#include "addlink/kernel.hpp"
#include "addlink/link.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace addlink {

enum class Smoother
{
  local_linear,
  local_constant
};

Smoother smoother_by_name(std::string_view name);
std::string_view smoother_name(Smoother s);

//! Starting values for the Newton step on one coordinate j: the intercept,
//! the function m_j being refined, and the sum of the other components at
//! each observation, m_{-j}(X~_i).
struct PilotFit
{
  Eigen::Index coordinate = 0;
  double mu = 0.0;
  std::function<double(double)> target;
  Eigen::VectorXd others;
};

PilotFit pilot_from_first_stage(const FirstStageFit& fit,
                                const Dataset& data,
                                Eigen::Index j);

//! w(x, X~_i) for every observation i at target point x.
using WeightProvider = std::function<Eigen::VectorXd(double x)>;

//! Literal sums over all observations, with K_h(v) = K(v / h):
//! S'_{n,p}(x) = -2 sum_i {Y_i - F(eta_i)} F'(eta_i) (X_i^j - x)^p K_h(X_i^j - x) w_i,
//! eta_i = mu + m_j(x) + m_{-j}(X~_i).
double s_prime(int power,
               double x,
               const PilotFit& pilot,
               const Dataset& data,
               const Link& link,
               const Kernel& kernel,
               double h,
               const WeightProvider& weight = {});

//! S''_{n,p}(x) = 2 sum_i [F'(eta_i)^2 - {Y_i - F(eta_i)} F''(eta_i)]
//! (X_i^j - x)^p K_h(X_i^j - x) w_i.
double s_double_prime(int power,
                      double x,
                      const PilotFit& pilot,
                      const Dataset& data,
                      const Link& link,
                      const Kernel& kernel,
                      double h,
                      const WeightProvider& weight = {});

//! Which second-derivative matrix the Newton step uses.
enum class Hessian
{
  //! S'' exactly as defined, residual times F'' term included.
  exact,
  //! F'^2 term only (its expectation at the truth).
  expected,
  //! Exact when the local matrix is positive definite, else expected.
  safeguarded
};

Hessian hessian_by_name(std::string_view name);
std::string_view hessian_name(Hessian h);

struct LocalSums
{
  double sp0 = 0.0, sp1 = 0.0;
  double spp0 = 0.0, spp1 = 0.0, spp2 = 0.0;
  //! Expected-Hessian counterparts of spp0..spp2.
  double epp0 = 0.0, epp1 = 0.0, epp2 = 0.0;
  double kernel_mass = 0.0; // sum_i K_h w_i
  int distinct = 0;         // distinct X_i^j with K_h > 0
};

struct SecondStageConfig
{
  double h = 0.5;
  Smoother smoother = Smoother::local_linear;
  Kernel kernel;
  WeightProvider weight;
  Hessian hessian = Hessian::expected;
};

//! Second-stage smoother for one coordinate. Keeps the observations sorted
//! on X^j so every evaluation touches only its kernel window.
class ComponentSmoother
{
public:
  ComponentSmoother(const Dataset& data,
                    const Link& link,
                    PilotFit pilot,
                    SecondStageConfig config);

  LocalSums sums(double x) const;

  //! Local-linear or local-constant Newton step at x; throws
  //! DegenerateWindow when the local system is too ill-conditioned.
  double step(double x) const;
  double local_linear_step(double x) const;
  double local_constant_step(double x) const;

  const PilotFit& pilot() const noexcept { return pilot_; }
  const SecondStageConfig& config() const noexcept { return config_; }

private:
  const Dataset& data_;
  Link link_;
  PilotFit pilot_;
  SecondStageConfig config_;
  std::vector<Eigen::Index> order_;
  std::vector<double> sorted_;
};

double local_linear_step(double x,
                         const PilotFit& pilot,
                         const Dataset& data,
                         const Link& link,
                         const SecondStageConfig& config);

double local_constant_step(double x,
                           const PilotFit& pilot,
                           const Dataset& data,
                           const Link& link,
                           const SecondStageConfig& config);

struct ComponentEstimate
{
  Eigen::Index coordinate = 0;
  std::vector<double> grid;
  std::vector<double> mtilde;
  //! NaN where the local system was degenerate.
  std::vector<double> values;
  std::vector<bool> boundary;
  double h = 0.0;
  Smoother smoother = Smoother::local_linear;
  bool weighted = false;
  int missing = 0;
};

ComponentEstimate estimate_component(const PilotFit& pilot,
                                     const Dataset& data,
                                     const Link& link,
                                     const SecondStageConfig& config,
                                     std::span<const double> grid);

//! n equally spaced points from -1 to 1.
std::vector<double> uniform_grid(int n);

//! Var(U | x^j = x, X~_i) at every observation i.
using VarianceProvider = std::function<Eigen::VectorXd(double x)>;

//! Weight proportional to Var(U | x, x~)^{-exponent}, scaled at each target
//! point so that (1/(nh)) sum_i K_h(X_i^j - x) w_i F'(eta_i)^2 = 1.
//! Keeps a reference to `data`, which must outlive it.
class VarianceMinWeight
{
public:
  VarianceMinWeight(const PilotFit& pilot,
                    const Dataset& data,
                    const Link& link,
                    const Kernel& kernel,
                    double h,
                    VarianceProvider variance,
                    double exponent = 1.0,
                    double floor = 1e-6);

  Eigen::VectorXd operator()(double x) const;

  //! Empirical normalization functional of `w` at x.
  double normalization(double x, const Eigen::VectorXd& w) const;

  int clamped() const noexcept { return clamped_->load(); }

private:
  PilotFit pilot_;
  const Dataset* data_;
  Link link_;
  Kernel kernel_;
  double h_;
  VarianceProvider variance_;
  double exponent_;
  double floor_;
  std::shared_ptr<std::atomic<int>> clamped_;
};

} // namespace addlink
