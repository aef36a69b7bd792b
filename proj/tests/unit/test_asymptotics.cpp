#include "addlink/asymptotics.hpp"
#include "addlink/error.hpp"
#include "addlink/montecarlo.hpp"
#include "addlink/normal.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace addlink;

namespace {

//! Exact ingredients for a uniform design on [-1, 1]^2 at a fixed x:
//! the x~ integral is a Gauss rule with the joint density 1/4 folded in.
LocalIngredients
uniform_ingredients(double index_at_zero,
                    double slope_in_other,
                    std::function<double(double)> variance)
{
  const auto [z, w] = test::golub_welsch(40);
  LocalIngredients ing;
  const auto m = static_cast<Eigen::Index>(z.size());
  ing.weight.resize(m);
  ing.d_weight = Eigen::VectorXd::Zero(m);
  ing.index.resize(m);
  ing.variance.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    ing.weight[k] = 0.25 * w[k];
    ing.index[k] = index_at_zero + slope_in_other * z[k];
    ing.variance[k] = variance(z[k]);
  }
  return ing;
}

Dataset
uniform_identity(int n, std::uint64_t seed, double noise = 0.0)
{
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> e(0.0, noise > 0 ? noise : 1.0);
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = u(gen);
    x(i, 1) = u(gen);
    y[i] = noise > 0 ? e(gen) : 0.0;
  }
  return cube_dataset(y, x);
}

PilotFit
zero_pilot(const Dataset& data, Eigen::Index j)
{
  PilotFit p;
  p.coordinate = j;
  p.target = [](double) { return 0.0; };
  p.others = Eigen::VectorXd::Zero(data.n());
  return p;
}

} // namespace

TEST_SUITE("asymptotics")
{
  TEST_CASE("identity link reduces bias and variance to the classical forms")
  {
    const double sigma2 = 0.3, c_h = 0.8, m2 = -2.5;
    const auto ing = uniform_ingredients(0.1, 0.4, [&](double) { return sigma2; });
    const Link id = identity_link();
    const auto d = estimate_D0_D1_D2(ing, id);
    CHECK(d.d0 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(d.d2 == doctest::Approx(0.5 / sigma2).epsilon(1e-13));

    const double f1 = 0.5; // marginal density of X^1
    CHECK(estimate_beta1(ing, id, 0.7, m2, c_h, Smoother::local_linear) ==
          doctest::Approx(0.5 * c_h * c_h * Kernel::A_K * m2).epsilon(1e-12));
    CHECK(estimate_beta1(ing, id, 0.7, 0.0, c_h, Smoother::local_linear) == 0.0);
    CHECK(estimate_V1(ing, id, c_h) ==
          doctest::Approx(Kernel::B_K * sigma2 / (c_h * f1)).epsilon(1e-12));
    CHECK(estimate_V1_optimal(ing, id, c_h) ==
          doctest::Approx(Kernel::B_K * sigma2 / (c_h * f1)).epsilon(1e-12));

    const auto quiet = uniform_ingredients(0.1, 0.4, [](double) { return 0.0; });
    CHECK(estimate_V1(quiet, id, c_h) == 0.0);
  }

  TEST_CASE("local-constant bias adds the design-slope term")
  {
    auto ing = uniform_ingredients(0.0, 0.0, [](double) { return 1.0; });
    for (Eigen::Index k = 0; k < ing.weight.size(); ++k)
      ing.d_weight[k] = 0.3 * ing.weight[k]; // f'/f = 0.3
    const Link id = identity_link();
    const auto d = estimate_D0_D1_D2(ing, id);
    CHECK(d.d1 == doctest::Approx(0.3).epsilon(1e-12));
    const double m1 = 1.5, m2 = -1.0, c = 1.0;
    const double ll = estimate_beta1(ing, id, m1, m2, c, Smoother::local_linear);
    const double lc = estimate_beta1(ing, id, m1, m2, c, Smoother::local_constant);
    CHECK(lc - ll == doctest::Approx(c * c * Kernel::A_K * m1 * d.d1 / d.d0).epsilon(1e-12));
  }

  TEST_CASE("logit bias and variance match quadrature of the defining integrals")
  {
    const double mu = 0.5, c_h = 1.0, m1 = M_PI, m2 = 0.0;
    auto var = [&](double v) {
      const double p = test::logistic(mu + 0.0 + std::sin(M_PI * v));
      return p * (1 - p);
    };
    const auto [z, w] = test::golub_welsch(40);
    LocalIngredients ing;
    ing.weight.resize(40);
    ing.d_weight = Eigen::VectorXd::Zero(40);
    ing.index.resize(40);
    ing.variance.resize(40);
    for (int k = 0; k < 40; ++k) {
      ing.weight[k] = 0.25 * w[k];
      ing.index[k] = mu + std::sin(M_PI * z[k]);
      ing.variance[k] = var(z[k]);
    }
    auto eta = [&](double v) { return mu + std::sin(M_PI * v); };
    const double d0 = 2 * test::integrate([&](double v) { return std::pow(test::logistic_d1(eta(v)), 2) * 0.25; }, -1, 1);
    const double gint = test::integrate(
      [&](double v) {
        const double fp = test::logistic_d1(eta(v));
        return (test::logistic_d2(eta(v)) * m1 * m1 + fp * m2) * fp * 0.25;
      },
      -1, 1);
    const double vint = test::integrate(
      [&](double v) { return var(v) * std::pow(test::logistic_d1(eta(v)), 2) * 0.25; }, -1, 1);
    const Link logit = logit_link();
    CHECK(estimate_beta1(ing, logit, m1, m2, c_h, Smoother::local_linear) ==
          doctest::Approx(c_h * c_h * Kernel::A_K * gint / d0).epsilon(1e-6));
    CHECK(estimate_V1(ing, logit, c_h) ==
          doctest::Approx(4 * Kernel::B_K * vint / (c_h * d0 * d0)).epsilon(1e-6));
  }

  TEST_CASE("optimal weighting never increases the variance")
  {
    const auto ing = uniform_ingredients(0.2, 1.5, [](double v) { return 0.05 + 0.2 * (1 + v) * (1 + v); });
    const Link logit = logit_link();
    const double v0 = estimate_V1(ing, logit, 1.0);
    const double vopt = estimate_V1_optimal(ing, logit, 1.0);
    CHECK(vopt < v0);
    Eigen::VectorXd w = ing.variance.cwiseInverse();
    CHECK(estimate_V1(ing, logit, 1.0, w) == doctest::Approx(vopt).epsilon(1e-12));
    CHECK(estimate_V1(ing, logit, 1.0, 3.0 * w) == doctest::Approx(vopt).epsilon(1e-12));
    const Eigen::VectorXd half = ing.variance.cwiseInverse().cwiseSqrt();
    CHECK(estimate_V1(ing, logit, 1.0, half) >= vopt);
  }

  TEST_CASE("kernel estimates of D0 and D1 under a uniform design")
  {
    const Dataset data = uniform_identity(2000, 31);
    const PilotFit p = zero_pilot(data, 0);
    const Kernel k;
    const Link id = identity_link();
    for (double x : { -0.3, 0.0, 0.4 }) {
      const auto d = estimate_D0_D1_D2(kernel_ingredients(x, p, data, k, 0.5), id);
      CHECK(d.d0 == doctest::Approx(1.0).epsilon(0.15));
      CHECK(std::abs(d.d1) < 0.5); // sampling sd is about 0.13
    }
    // D1 is the derivative in x of the D0 estimator.
    const double e = 1e-5, h = 0.3;
    for (double x : { -0.5, 0.1, 0.6 }) {
      const double up = estimate_D0_D1_D2(kernel_ingredients(x + e, p, data, k, h), id).d0;
      const double dn = estimate_D0_D1_D2(kernel_ingredients(x - e, p, data, k, h), id).d0;
      const double d1 = estimate_D0_D1_D2(kernel_ingredients(x, p, data, k, h), id).d1;
      CHECK(d1 == doctest::Approx((up - dn) / (2 * e)).epsilon(1e-6));
    }
  }

  TEST_CASE("D0 transcription on a small dataset")
  {
    const Dataset data = test::random_dataset(4, 5, 2);
    const PilotFit p = test::random_pilot(5, data, 0);
    const double x = 0.2, h = 1.1;
    double d0 = 0.0;
    for (Eigen::Index i = 0; i < 5; ++i) {
      const double eta = p.mu + p.target(x) + p.others[i];
      d0 += 2.0 * test::quartic((data.x(i, 0) - x) / h) * std::pow(test::logistic_d1(eta), 2) / (5 * h);
    }
    const auto d = estimate_D0_D1_D2(kernel_ingredients(x, p, data, Kernel{}, h), logit_link());
    CHECK(d.d0 == doctest::Approx(d0).epsilon(1e-12));
  }

  TEST_CASE("derivative estimator")
  {
    const auto grid = uniform_grid(1024);
    std::vector<double> constant(grid.size(), 2.0), linear, wave;
    for (double v : grid) {
      linear.push_back(v);
      wave.push_back(std::sin(M_PI * v));
    }
    const DerivativeEstimator c(grid, constant), l(grid, linear), s(grid, wave);
    for (double x : { -0.5, 0.0, 0.3 }) {
      CHECK(std::abs(c(x, 1, 0.2)) < 1e-10);
      CHECK(std::abs(c(x, 2, 0.2)) < 1e-8);
      CHECK(l(x, 1, 0.2) == doctest::Approx(1.0).epsilon(1e-3));
      CHECK(s(x, 2, 0.1) == doctest::Approx(-M_PI * M_PI * std::sin(M_PI * x)).scale(1.0).epsilon(0.15));
    }
    const auto v = estimate_derivative(grid, wave, 1, 0.1, std::vector<double>{ 0.0 });
    CHECK(v[0] == doctest::Approx(M_PI).epsilon(0.02));
    CHECK(DerivativeEstimator::default_bandwidth(500) == doctest::Approx(0.2 * std::pow(500.0, -0.1)));
    const DerivativeEstimator coarse(uniform_grid(5), std::vector<double>(5, 0.0));
    CHECK_THROWS_AS(coarse(0.0, 1, 0.1), NumericalError);
  }

  TEST_CASE("conditional variance")
  {
    const Dataset data = uniform_identity(2000, 41, 0.5);
    Eigen::VectorXd sq = data.y.cwiseAbs2();
    const ConditionalVariance cv(data, sq, { 0.4, 0.4 });
    const Eigen::VectorXd at = cv.at_samples();
    int inside = 0, good = 0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      if (std::abs(data.x(i, 0)) > 0.6 || std::abs(data.x(i, 1)) > 0.6)
        continue;
      ++inside;
      good += at[i] >= 0.15 && at[i] <= 0.35;
    }
    CHECK(good >= 0.95 * inside);

    const ConditionalVariance zero(data, Eigen::VectorXd::Zero(data.n()), { 0.4, 0.4 });
    int flagged = 0;
    const Eigen::VectorXd z = zero.at_samples(&flagged);
    CHECK(z.maxCoeff() == zero.floor());
    CHECK(flagged == data.n());

    Eigen::MatrixXd x(3, 2);
    x << -0.9, -0.9, 0.0, 0.0, 0.9, 0.9;
    const Dataset three = cube_dataset(Eigen::VectorXd::Zero(3), x);
    const ConditionalVariance one(three, Eigen::Vector3d(0.1, 0.2, 0.3), { 0.3, 0.3 });
    const std::vector<double> mid{ 0.05, -0.05 };
    CHECK(one.at(mid).value == doctest::Approx(0.2).epsilon(1e-15));
    const std::vector<double> empty{ 0.5, -0.5 };
    const auto fb = one.at(empty);
    CHECK(fb.fallback);
    CHECK(fb.value == doctest::Approx(0.2).epsilon(1e-15));
  }

  TEST_CASE("confidence intervals")
  {
    const std::vector<double> grid{ -0.5, 0.0, 0.5 };
    const std::vector<double> est{ 1.0, 2.0, 3.0 };
    const std::vector<double> beta{ 0.0, 0.0, 0.0 };
    const std::vector<double> v{ 1.0, 0.0, 4.0 };
    const auto ci = confidence_interval(grid, est, beta, v, 500, 0.05, CiMode::bias_corrected);
    const double half = 1.959963984540054 * std::pow(500.0, -0.4);
    CHECK(ci.upper[0] - ci.lower[0] == doctest::Approx(2 * half).epsilon(1e-12));
    CHECK(ci.lower[1] == 2.0);
    CHECK(ci.upper[1] == 2.0);
    CHECK(ci.upper[2] - 3.0 == doctest::Approx(2 * half).epsilon(1e-12));

    const std::vector<double> b{ 1.0, 1.0, 1.0 };
    const auto shifted = confidence_interval(grid, est, b, v, 500, 0.05, CiMode::bias_corrected);
    CHECK(shifted.lower[0] == doctest::Approx(ci.lower[0] - std::pow(500.0, -0.4)).epsilon(1e-12));

    const auto us = confidence_interval(grid, est, {}, v, 500, 0.05, CiMode::undersmoothed, 0.3);
    CHECK(us.upper[0] - 1.0 == doctest::Approx(1.959963984540054 * std::pow(500.0, -0.35)).epsilon(1e-12));

    const std::vector<double> gap{ 1.0, std::nan(""), 3.0 };
    const auto nanci = confidence_interval(grid, gap, beta, v, 500, 0.05, CiMode::bias_corrected);
    CHECK(std::isnan(nanci.lower[1]));

    CHECK_THROWS_AS(confidence_interval(grid, est, beta, v, 500, 1.5, CiMode::bias_corrected), UsageError);
    CHECK_THROWS_AS(confidence_interval(grid, est, {}, v, 500, 0.05, CiMode::undersmoothed, 0.2), UsageError);
    CHECK(ci_mode_by_name("undersmoothed") == CiMode::undersmoothed);
    CHECK_THROWS_AS(ci_mode_by_name("exact"), UsageError);
  }
}
