#include "addlink/error.hpp"
#include "addlink/first_stage.hpp"
#include "addlink/montecarlo.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace addlink;

namespace {

//! Uniform design with Y = F(P(X)' theta) exactly.
Dataset
in_span(const AdditiveBasis& basis,
        const Eigen::VectorXd& theta,
        const Link& link,
        int n,
        std::uint64_t seed)
{
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto d = basis.coordinates();
  Eigen::MatrixXd x(n, d);
  for (auto& v : x.reshaped())
    v = u(gen);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<double> row(x.row(i).begin(), x.row(i).end());
    y[i] = link.F(basis.regressor(row).dot(theta));
  }
  return cube_dataset(std::move(y), std::move(x));
}

} // namespace

TEST_SUITE("first_stage")
{
  TEST_CASE("objective examples")
  {
    const AdditiveBasis basis(BasisFamily::orthonormal_bspline, { 3, 3 });
    Eigen::VectorXd theta(basis.dimension());
    theta << 0.3, 0.5, -0.2, 0.1, -0.4, 0.25, 0.05;
    const Dataset data = in_span(basis, theta, identity_link(), 60, 3);
    CHECK(objective(theta, data, basis, identity_link()) < 1e-28);

    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(basis.dimension());
    CHECK(objective(zero, data, basis, identity_link()) ==
          doctest::Approx(data.y.squaredNorm() / 60).epsilon(1e-14));

    // Direct loop with the logit link at random coefficients.
    const Dataset logit = test::random_dataset(9, 40, 2);
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& t : theta)
      t = u(gen);
    double direct = 0.0;
    for (Eigen::Index i = 0; i < logit.n(); ++i) {
      double eta = theta[0];
      for (int j = 0; j < 2; ++j)
        for (int k = 1; k <= 3; ++k)
          eta += theta[basis.block_offset(j) + k - 1] *
                 basis.coordinate(j)(k, logit.x(i, j));
      const double r = logit.y[i] - test::logistic(eta);
      direct += r * r;
    }
    CHECK(objective(theta, logit, basis, logit_link()) ==
          doctest::Approx(direct / 40).epsilon(1e-12));
  }

  TEST_CASE("identity link recovers coefficients in the span")
  {
    FirstStageConfig cfg;
    cfg.kappa = 3;
    const AdditiveBasis basis(cfg.family, cfg.kappa_for(2));
    Eigen::VectorXd theta(basis.dimension());
    theta << 0.4, 1.2, -0.7, 0.3, -0.5, 0.9, -0.2;
    const Dataset data = in_span(basis, theta, identity_link(), 200, 17);
    const auto fit = fit_first_stage(data, identity_link(), cfg);
    CHECK(fit.converged);
    CHECK((fit.theta - theta).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("logit link recovers coefficients from exact probabilities")
  {
    FirstStageConfig cfg;
    cfg.kappa = 2;
    const AdditiveBasis basis(cfg.family, cfg.kappa_for(2));
    Eigen::VectorXd theta(basis.dimension());
    theta << 0.5, 1.0, -0.6, -0.8, 0.4;
    const Dataset data = in_span(basis, theta, logit_link(), 500, 21);
    const auto fit = fit_first_stage(data, logit_link(), cfg);
    CHECK((fit.theta - theta).cwiseAbs().maxCoeff() < 1e-4);
  }

  TEST_CASE("objective decreases along accepted steps")
  {
    const Dgp dgp(DgpKind::benchmark, 2);
    for (std::uint64_t seed : { 1u, 2u, 3u, 4u }) {
      const Dataset data = generate_sample(dgp, 500, seed);
      FirstStageConfig cfg;
      cfg.kappa = 2;
      const auto fit = fit_first_stage(data, logit_link(), cfg);
      REQUIRE(fit.objective_trace.size() >= 2);
      for (std::size_t k = 1; k < fit.objective_trace.size(); ++k)
        CHECK(fit.objective_trace[k] <= fit.objective_trace[k - 1]);
      CHECK(fit.objective <= fit.objective_trace.front());
      CHECK(fit.objective == fit.objective_trace.back());
      CHECK(fit.converged);
    }
  }

  TEST_CASE("fitted components")
  {
    const Dgp dgp(DgpKind::benchmark, 2);
    const Dataset data = generate_sample(dgp, 500, 8);
    FirstStageConfig cfg;
    cfg.kappa_per_coordinate = { 4, 2 };
    const auto fit = fit_first_stage(data, logit_link(), cfg);

    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int r = 0; r < 100; ++r) {
      const std::vector<double> x{ u(gen), u(gen) };
      double sum = eval_mtilde_j(fit, 0, x[0]) + eval_mtilde_j(fit, 1, x[1]);
      CHECK(eval_mtilde(fit, x) == doctest::Approx(sum).epsilon(1e-12));
      sum += fit.mu();
      CHECK(fit.basis.regressor(x).dot(fit.theta) == doctest::Approx(sum).epsilon(1e-12));
    }
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double integral =
        test::integrate([&](double v) { return fit.component(j, v); }, -1, 1, 64);
      CHECK(std::abs(integral) < 1e-8);
    }

    FirstStageFit zero = fit;
    zero.theta.setZero();
    CHECK(zero.component(1, 0.3) == 0.0);
  }

  TEST_CASE("identifiability and configuration errors")
  {
    const Dataset data = test::random_dataset(1, 10, 2);
    FirstStageConfig cfg;
    cfg.kappa = 5; // d(kappa) = 11 >= n
    try {
      fit_first_stage(data, logit_link(), cfg);
      FAIL("expected an identifiability error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("n = 10") != std::string::npos);
      CHECK(msg.find("d(kappa) = 11") != std::string::npos);
    }
    cfg.kappa = 0;
    CHECK_THROWS_AS(fit_first_stage(data, logit_link(), cfg), UsageError);
    cfg.kappa = 2;
    cfg.kappa_per_coordinate = { 2, 2, 2 };
    CHECK_THROWS_AS(fit_first_stage(data, logit_link(), cfg), UsageError);
  }

  TEST_CASE("Q-hat diagnostic")
  {
    // Single observation: rank one, smallest eigenvalue zero.
    const AdditiveBasis basis(BasisFamily::legendre, { 2 });
    FirstStageFit fit{ basis, Eigen::VectorXd::Zero(3), true, 0.0, 0, {} };
    Eigen::MatrixXd x(1, 1);
    x << 0.4;
    const Dataset one = cube_dataset(Eigen::VectorXd::Ones(1), x);
    const auto q1 = q_hat_diagnostic(fit, one, identity_link());
    CHECK(std::abs(q1.min_eigenvalue) < 1e-12);
    CHECK(q1.min_eigenvalue < q_hat_warning_threshold);

    // Uniform design: the non-intercept block is E p_k p_l = delta / 2 since
    // the design density on [-1, 1] is 1/2.
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = 100000;
    Eigen::MatrixXd big(n, 1);
    for (auto& v : big.reshaped())
      v = u(gen);
    const Dataset many = cube_dataset(Eigen::VectorXd::Zero(n), big);
    const auto q = q_hat_diagnostic(fit, many, identity_link());
    const Eigen::MatrixXd block = q.matrix.bottomRightCorner(2, 2);
    CHECK((block - 0.5 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
          5.0 / std::sqrt(n));
    CHECK(q.min_eigenvalue > 0.1);
  }
}
