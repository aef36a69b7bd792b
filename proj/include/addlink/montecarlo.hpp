#pragma once

#include "addlink/data.hpp"
#include "addlink/first_stage.hpp"
#include "addlink/kernel.hpp"
#include "addlink/link.hpp"
#include "addlink/second_stage.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace addlink {

enum class DgpKind
{
  //! Logit, f1 = sin(pi x), f2 = Phi(3x), plus x^3 + x^4 + x^5 when d = 5.
  benchmark,
  //! Logit, sin(pi x^1) + 3 (Phi(3 x^2) - 1/2); Var(U|x) varies with x^2.
  heteroskedastic,
  //! Identity link, Y = 0.5 + 0.8 x^1 - 0.5 x^2 + ... without noise.
  linear_identity
};

DgpKind dgp_by_name(std::string_view name);
std::string_view dgp_name(DgpKind kind);

//! Synthetic design with uniform covariates on [-1, 1]^d. Components are
//! reported centered (zero integral), the offset absorbed into mu.
class Dgp
{
public:
  Dgp(DgpKind kind, int d);

  DgpKind kind() const noexcept { return kind_; }
  int d() const noexcept { return d_; }
  const Link& link() const noexcept { return link_; }

  double mu() const;
  double component(int j, double x) const;
  //! First or second derivative of component j.
  double component_derivative(int j, double x, int order) const;
  double index(std::span<const double> x) const;
  double probability(std::span<const double> x) const;
  //! Var(U | X = x) = F(1 - F) for Bernoulli responses, 0 without noise.
  double conditional_variance(std::span<const double> x) const;

  //! mu + m_{-j}(X~_i) pilot built from the truth.
  PilotFit truth_pilot(const Dataset& data, int j) const;
  Eigen::VectorXd true_index(const Dataset& data) const;

private:
  DgpKind kind_;
  int d_;
  Link link_;
};

//! Uniform on [0, 1) from the top 53 bits of the engine output.
inline double
uniform01(std::mt19937_64& gen)
{
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

Dataset generate_sample(const Dgp& dgp, Eigen::Index n, std::uint64_t seed);

struct OracleResult
{
  double b0 = 0.0;
  double b1 = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

//! Gradient and Hessian of
//! sum_i K_h(X_i^j - x) {Y_i - F[mu + b0 + b1 (X_i^j - x) + m_{-j}(X~_i)]}^2.
struct OracleDerivatives
{
  double objective = 0.0;
  Eigen::Vector2d gradient;
  Eigen::Matrix2d hessian;
  Eigen::Matrix2d gauss_newton;
};

OracleDerivatives oracle_derivatives(double x,
                                     double b0,
                                     double b1,
                                     const PilotFit& truth,
                                     const Dataset& data,
                                     const Link& link,
                                     const Kernel& kernel,
                                     double h);

//! One undamped Newton step from (b0, b1).
Eigen::Vector2d oracle_newton_step(double x,
                                   double b0,
                                   double b1,
                                   const PilotFit& truth,
                                   const Dataset& data,
                                   const Link& link,
                                   const Kernel& kernel,
                                   double h);

//! Minimizes the local objective to gradient norm 1e-10 (at most 100
//! iterations), starting from the truth's value and zero slope.
OracleResult oracle_fit(double x,
                        const PilotFit& truth,
                        const Dataset& data,
                        const Link& link,
                        const Kernel& kernel,
                        double h);

enum class Estimator
{
  two_stage_ll,
  two_stage_lc,
  oracle
};

Estimator estimator_by_name(std::string_view name);
std::string_view estimator_name(Estimator e);

enum class TrimRule
{
  boundary, // |x| <= 1 - h
  none,
  fixed // |x| <= trim_a
};

TrimRule trim_by_name(std::string_view name);
std::string_view trim_name(TrimRule t);

//! density * int (estimate - target)^2 over the trimmed region after
//! centering both there; trapezoid rule. NaN inside the region throws.
double integrated_squared_error(std::span<const double> grid,
                                std::span<const double> estimate,
                                std::span<const double> target,
                                TrimRule trim,
                                double h,
                                double trim_a = 1.0,
                                double density = 1.0);

struct ExperimentConfig
{
  DgpKind dgp = DgpKind::benchmark;
  int d = 2;
  Eigen::Index n = 500;
  Estimator estimator = Estimator::two_stage_ll;
  //! Series lengths; shorter than d pads with `nuisance_kappa`.
  std::vector<int> kappa{ 4, 2 };
  int nuisance_kappa = 2;
  //! Bandwidth for each evaluated component.
  std::vector<double> h{ 0.5, 1.4 };
  std::vector<int> components{ 0, 1 };
  int replications = 200;
  std::uint64_t seed = 1;
  int grid_points = 201;
  TrimRule trim = TrimRule::none;
  double trim_a = 1.0;
  unsigned threads = 1;
  Hessian hessian = Hessian::expected;
  //! Density the squared error is integrated against; 1/2 is the uniform
  //! design density on [-1, 1], 1 gives plain Lebesgue measure.
  double ise_density = 0.5;
  FirstStageConfig first_stage;

  void validate() const;
};

struct ComponentReport
{
  int component = 0;
  double eimse = 0.0;
  double standard_error = 0.0;
  std::vector<double> ise;
};

struct EimseReport
{
  ExperimentConfig config;
  int replications = 0;
  int failures = 0;
  std::vector<int> failed_replications;
  std::vector<ComponentReport> components;
};

//! Estimates of the evaluated components on `grid` for one sample.
std::vector<std::vector<double>> estimate_replication(
  const ExperimentConfig& config,
  const Dgp& dgp,
  const Dataset& data,
  std::span<const double> grid);

EimseReport run_experiment(const ExperimentConfig& config);

} // namespace addlink
