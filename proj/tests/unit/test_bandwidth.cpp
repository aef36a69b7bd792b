#include "addlink/bandwidth.hpp"
#include "addlink/error.hpp"
#include "addlink/montecarlo.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace addlink;

TEST_SUITE("bandwidth")
{
  TEST_CASE("plug-in constant for constant ingredients")
  {
    const auto grid = uniform_grid(101);
    const std::vector<double> w(grid.size(), 0.5);
    const std::vector<double> b(grid.size(), 0.7), v(grid.size(), 2.3);
    CHECK(plugin_Ch1(grid, w, b, v, 0.2) ==
          doctest::Approx(std::pow(2.3 / (4 * 0.49), 0.2)).epsilon(1e-13));
    const std::vector<double> one(grid.size(), 1.0), four(grid.size(), 4.0);
    CHECK(plugin_Ch1(grid, w, one, four, 0.2) == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("plug-in constant is invariant to rescaling the weight")
  {
    const auto grid = uniform_grid(201);
    std::vector<double> w, b, v, w3;
    for (double x : grid) {
      w.push_back(1.0 + x * x);
      w3.push_back(3.0 * (1.0 + x * x));
      b.push_back(std::sin(3 * x) + 0.2);
      v.push_back(1.0 + 0.5 * x);
    }
    CHECK(plugin_Ch1(grid, w, b, v, 0.3) == doctest::Approx(plugin_Ch1(grid, w3, b, v, 0.3)).epsilon(1e-14));
  }

  TEST_CASE("plug-in constant with exact identity-link ingredients")
  {
    const double h = 0.3, sigma2 = 0.25;
    const auto grid = uniform_grid(20001);
    std::vector<double> w, b, v;
    for (double x : grid) {
      w.push_back(1.0 / (2 * (1 - h)));
      b.push_back(-0.5 * Kernel::A_K * M_PI * M_PI * std::sin(M_PI * x));
      v.push_back(2 * Kernel::B_K * sigma2);
    }
    const double num = test::integrate([&](double) { return 2 * Kernel::B_K * sigma2 / (2 * (1 - h)); }, -(1 - h), 1 - h);
    const double den = test::integrate(
      [&](double x) { return std::pow(0.5 * Kernel::A_K * M_PI * M_PI * std::sin(M_PI * x), 2) / (2 * (1 - h)); },
      -(1 - h), 1 - h);
    CHECK(plugin_Ch1(grid, w, b, v, h) == doctest::Approx(std::pow(0.25 * num / den, 0.2)).epsilon(1e-6));
  }

  TEST_CASE("zero bias is an error")
  {
    const auto grid = uniform_grid(11);
    const std::vector<double> w(11, 0.5), b(11, 0.0), v(11, 1.0);
    CHECK_THROWS_AS(plugin_Ch1(grid, w, b, v, 0.2), ZeroBias);

    const Dgp dgp(DgpKind::linear_identity, 2);
    const Dataset data = generate_sample(dgp, 300, 1);
    FirstStageConfig cfg;
    const auto fit = fit_first_stage(data, dgp.link(), cfg);
    CHECK_THROWS_AS(plugin_bandwidths(data, fit, dgp.link()), ZeroBias);
  }

  TEST_CASE("plug-in on the logit design gives moderate constants")
  {
    const Dgp dgp(DgpKind::benchmark, 2);
    const Dataset data = generate_sample(dgp, 500, 3);
    FirstStageConfig cfg;
    cfg.kappa_per_coordinate = { 4, 2 };
    const auto fit = fit_first_stage(data, dgp.link(), cfg);
    const auto r = plugin_bandwidths(data, fit, dgp.link());
    REQUIRE(r.c_h.size() == 2);
    CHECK(r.c_h[0] > 0.3);
    CHECK(r.c_h[0] < 5.0);
    CHECK(r.c_h[1] > 0.3);
    CHECK(r.c_h[1] < 5.0);
  }

  TEST_CASE("PLS objective matches the literal transcription")
  {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const int n = 10 + static_cast<int>(seed % 11);
      const Dataset data = test::random_dataset(500 + seed, n, 2);
      std::vector<PilotFit> pilots{ test::random_pilot(600 + seed, data, 0),
                                    test::random_pilot(700 + seed, data, 1) };
      const PlsEvaluator ev(data, 0.2, pilots, logit_link(), Smoother::local_linear);
      const std::vector<double> c{ 2.5 + 0.05 * seed, 2.8 };
      const auto t = ev.evaluate(c);
      const auto o = test::naive_pls(data, 0.2, pilots, c);
      CHECK(t.rss == doctest::Approx(o.rss).epsilon(1e-10));
      CHECK(t.penalty == doctest::Approx(o.penalty).epsilon(1e-10));
      CHECK(pls_objective(c, ev) == doctest::Approx(o.total).epsilon(1e-10));
      CHECK(t.total == t.rss + t.penalty);
      CHECK(t.penalty >= 0.0);
    }
  }

  TEST_CASE("PLS on a noise-free exact fit")
  {
    const Dgp dgp(DgpKind::linear_identity, 2);
    const Dataset data = generate_sample(dgp, 200, 2);
    std::vector<PilotFit> pilots{ dgp.truth_pilot(data, 0), dgp.truth_pilot(data, 1) };
    const PlsEvaluator ev(data, dgp.mu(), pilots, dgp.link(), Smoother::local_linear);
    const std::vector<double> c{ 1.0, 1.0 };
    const auto t = ev.evaluate(c);
    CHECK(t.rss < 1e-24);
    CHECK(t.penalty < 1e-6); // only the variance floor remains
  }

  TEST_CASE("degenerate bandwidths are excluded")
  {
    const Dataset data = test::random_dataset(3, 12, 2);
    std::vector<PilotFit> pilots{ test::random_pilot(1, data, 0), test::random_pilot(2, data, 1) };
    const PlsEvaluator ev(data, 0.0, pilots, logit_link(), Smoother::local_linear);
    const std::vector<double> tiny{ 0.01, 1.0 };
    CHECK(std::isinf(ev.evaluate(tiny).total));
  }

  TEST_CASE("grid search returns the exhaustive argmin")
  {
    const Dataset data = test::random_dataset(4, 300, 1);
    FirstStageConfig cfg;
    cfg.kappa = 3;
    const auto fit = fit_first_stage(data, logit_link(), cfg);
    const PlsEvaluator ev(data, fit, logit_link(), Smoother::local_linear);
    PlsConfig pc;
    pc.grid_points = 5;
    pc.polish = false;
    const auto r = minimize_pls(ev, pc);
    CHECK(r.trace.size() == 5);
    double best = 1e300, arg = 0.0;
    for (double c : pc.candidates()) {
      const std::vector<double> cv{ c };
      const double v = ev.evaluate(cv).total;
      if (v < best) {
        best = v;
        arg = c;
      }
    }
    CHECK(r.c[0] == arg);
    CHECK(r.objective == best);
  }

  TEST_CASE("search trace bookkeeping")
  {
    const Dgp dgp(DgpKind::benchmark, 2);
    const Dataset data = generate_sample(dgp, 300, 6);
    FirstStageConfig cfg;
    const auto fit = fit_first_stage(data, dgp.link(), cfg);
    const PlsEvaluator ev(data, fit, dgp.link(), Smoother::local_linear);
    PlsConfig pc;
    pc.grid_points = 3;
    pc.polish = false;
    const auto grid_only = minimize_pls(ev, pc);
    CHECK(grid_only.trace.size() == 9);

    pc.polish = true;
    pc.polish_iterations = 30;
    const auto r = minimize_pls(ev, pc);
    double running = 1e300;
    const PlsTraceRow* best = nullptr;
    for (const auto& row : r.trace) {
      running = std::min(running, row.terms.total);
      CHECK(row.best_so_far == running);
      if (!best || row.terms.total < best->terms.total)
        best = &row;
    }
    REQUIRE(best);
    CHECK(r.objective == best->terms.total);
    CHECK(r.c == best->c);
    for (double c : r.c) {
      CHECK(c >= pc.c_lo);
      CHECK(c <= pc.c_hi);
    }

    PlsConfig bad;
    bad.c_lo = 0.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
  }

  TEST_CASE("average squared error")
  {
    const Eigen::Vector2d a(0.0, 1.0), b(0.0, -1.0);
    const double e = std::pow(test::logistic(1.0) - test::logistic(-1.0), 2) / 2;
    CHECK(average_squared_error(a, b, logit_link()) == doctest::Approx(e).epsilon(1e-15));
  }
}
