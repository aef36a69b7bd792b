#pragma once

#include "addlink/data.hpp"
#include "addlink/error.hpp"
#include "addlink/first_stage.hpp"
#include "addlink/kernel.hpp"
#include "addlink/link.hpp"
#include "addlink/second_stage.hpp"

#include <Eigen/Dense>

#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace addlink {

//! Thrown when the plug-in bias integral vanishes.
class ZeroBias : public NumericalError
{
public:
  explicit ZeroBias(const std::string& what)
    : NumericalError(what)
  {}
};

//! C_h = [ (1/4) int w V~ / int w beta~^2 ]^{1/5}, both integrals by the
//! trapezoid rule over the grid points with |x| <= 1 - h.
double plugin_Ch1(std::span<const double> grid,
                  std::span<const double> weight,
                  std::span<const double> beta_tilde,
                  std::span<const double> v_tilde,
                  double h);

struct PluginOptions
{
  Smoother smoother = Smoother::local_linear;
  Kernel kernel;
  double pilot_c_h = 1.0;
  double variance_factor = 1.5;
  int estimate_grid = 1025;
  int integration_grid = 101;
  //! Derivative bandwidth; 0 selects 0.2 n^{-1/10}.
  double derivative_bandwidth = 0.0;
};

struct PluginResult
{
  std::vector<double> c_h; // per coordinate
  double pilot_h = 0.0;
};

//! Plug-in constants for every coordinate from a first-stage fit.
PluginResult plugin_bandwidths(const Dataset& data,
                               const FirstStageFit& fit,
                               const Link& link,
                               const PluginOptions& options = {});

struct PlsTerms
{
  double rss = 0.0;
  double penalty = 0.0;
  double total = 0.0;
};

//! Evaluates the penalized least squares criterion for bandwidth vectors
//! h_j = C_j n^{-1/5}, refitting every component at the sample points.
//! Component fits are cached per (coordinate, C_j).
class PlsEvaluator
{
public:
  PlsEvaluator(const Dataset& data,
               double mu,
               std::vector<PilotFit> pilots,
               const Link& link,
               Smoother smoother,
               Kernel kernel = {},
               double variance_factor = 1.5);

  PlsEvaluator(const Dataset& data,
               const FirstStageFit& fit,
               const Link& link,
               Smoother smoother,
               Kernel kernel = {},
               double variance_factor = 1.5);

  //! Non-finite total when any component fit is degenerate.
  PlsTerms evaluate(std::span<const double> c) const;

  //! mu + sum_j m^_j(X_i^j); throws DegenerateWindow.
  Eigen::VectorXd index_hat(std::span<const double> c) const;

  //! m^_j(X_i^j) for all i; throws DegenerateWindow.
  const Eigen::VectorXd& component_at_samples(Eigen::Index j, double c) const;

  double bandwidth(double c) const;
  Eigen::Index d() const noexcept { return data_.d(); }
  Eigen::Index n() const noexcept { return data_.n(); }
  const Dataset& data() const noexcept { return data_; }
  const Link& link() const noexcept { return link_; }
  double mu() const noexcept { return mu_; }

private:
  struct Cached
  {
    bool degenerate = false;
    Eigen::VectorXd values;
  };

  const Dataset& data_;
  double mu_;
  std::vector<PilotFit> pilots_;
  Link link_;
  Smoother smoother_;
  Kernel kernel_;
  double variance_factor_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<Eigen::Index, double>, Cached> cache_;
};

double pls_objective(std::span<const double> c, const PlsEvaluator& evaluator);

struct PlsConfig
{
  double c_lo = 0.2;
  double c_hi = 3.0;
  int grid_points = 10;
  bool polish = true;
  int polish_iterations = 100;
  unsigned threads = 1;

  std::vector<double> candidates() const;
  void validate() const;
};

struct PlsTraceRow
{
  std::string stage; // "grid" or "polish"
  std::vector<double> c;
  PlsTerms terms;
  double best_so_far = 0.0;
};

struct PlsResult
{
  std::vector<double> c;
  double objective = 0.0;
  std::vector<PlsTraceRow> trace;
};

PlsResult minimize_pls(const PlsEvaluator& evaluator, const PlsConfig& config);

//! n^{-1} sum_i {F(index_hat_i) - F(index_true_i)}^2.
double average_squared_error(const Eigen::VectorXd& index_hat,
                             const Eigen::VectorXd& index_true,
                             const Link& link);

} // namespace addlink
