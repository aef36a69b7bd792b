#pragma once

// Independent reference implementations used as test oracles. They are
// written as literal loops over the defining sums and deliberately avoid
// the library's evaluation paths.

#include "addlink/bandwidth.hpp"
#include "addlink/data.hpp"
#include "addlink/second_stage.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace addlink::test {

inline double
logistic(double v)
{
  return 1.0 / (1.0 + std::exp(-v));
}

inline double
logistic_d1(double v)
{
  const double f = logistic(v);
  return f * (1.0 - f);
}

inline double
logistic_d2(double v)
{
  const double f = logistic(v);
  return f * (1.0 - f) * (1.0 - 2.0 * f);
}

inline double
quartic(double v)
{
  return std::abs(v) < 1.0 ? 0.9375 * (1.0 - v * v) * (1.0 - v * v) : 0.0;
}

//! Small logit dataset on [-1, 1]^d with Bernoulli responses.
inline Dataset
random_dataset(std::uint64_t seed, int n, int d)
{
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    double eta = 0.3;
    for (int j = 0; j < d; ++j) {
      x(i, j) = u(gen);
      eta += std::sin(2.0 * x(i, j) + j);
    }
    y[i] = p(gen) < logistic(eta) ? 1.0 : 0.0;
  }
  return cube_dataset(std::move(y), std::move(x));
}

//! Pilot with m_j(v) = a v + b v^2 and arbitrary others.
inline PilotFit
random_pilot(std::uint64_t seed, const Dataset& data, Eigen::Index j)
{
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  const double a = u(gen);
  const double b = u(gen);
  PilotFit p;
  p.coordinate = j;
  p.mu = u(gen);
  p.target = [a, b](double v) { return a * v + b * v * v; };
  p.others.resize(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i)
    p.others[i] = u(gen);
  return p;
}

//! -2 sum r F' u^p K((X - x)/h) and 2 sum [F'^2 - r F''] u^p K, logit link.
inline double
naive_s_prime(int p, double x, const PilotFit& pilot, const Dataset& data, double h)
{
  double s = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double xi = data.x(i, pilot.coordinate);
    const double eta = pilot.mu + pilot.target(x) + pilot.others[i];
    const double r = data.y[i] - logistic(eta);
    s += -2.0 * r * logistic_d1(eta) * std::pow(xi - x, p) * quartic((xi - x) / h);
  }
  return s;
}

inline double
naive_s_double_prime(int p,
                     double x,
                     const PilotFit& pilot,
                     const Dataset& data,
                     double h,
                     bool expected = false)
{
  double s = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double xi = data.x(i, pilot.coordinate);
    const double eta = pilot.mu + pilot.target(x) + pilot.others[i];
    const double r = data.y[i] - logistic(eta);
    const double fp = logistic_d1(eta);
    const double curv = expected ? fp * fp : fp * fp - r * logistic_d2(eta);
    s += 2.0 * curv * std::pow(xi - x, p) * quartic((xi - x) / h);
  }
  return s;
}

//! m~(x) - (S''_2 S'_0 - S''_1 S'_1) / (S''_0 S''_2 - S''_1^2).
inline double
naive_local_linear(double x,
                   const PilotFit& pilot,
                   const Dataset& data,
                   double h,
                   bool expected)
{
  const double a0 = naive_s_prime(0, x, pilot, data, h);
  const double a1 = naive_s_prime(1, x, pilot, data, h);
  const double b0 = naive_s_double_prime(0, x, pilot, data, h, expected);
  const double b1 = naive_s_double_prime(1, x, pilot, data, h, expected);
  const double b2 = naive_s_double_prime(2, x, pilot, data, h, expected);
  return pilot.target(x) - (b2 * a0 - b1 * a1) / (b0 * b2 - b1 * b1);
}

//! Literal transcription of the PLS criterion for a given set of pilots,
//! with the second stage recomputed by the naive local-linear oracle.
inline PlsTerms
naive_pls(const Dataset& data,
          double mu,
          const std::vector<PilotFit>& pilots,
          std::span<const double> c)
{
  const Eigen::Index n = data.n(), d = data.d();
  const double nd = static_cast<double>(n);
  std::vector<double> h(d);
  for (Eigen::Index j = 0; j < d; ++j)
    h[j] = c[j] * std::pow(nd, -0.2);

  std::vector<double> index(n, mu), sq(n), fp2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j)
      index[i] += naive_local_linear(data.x(i, j), pilots[j], data, h[j], true);
    sq[i] = std::pow(data.y[i] - logistic(index[i]), 2);
    fp2[i] = std::pow(logistic_d1(index[i]), 2);
  }
  PlsTerms t;
  for (double s : sq)
    t.rss += s / nd;
  for (Eigen::Index i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      double kk = 1.0;
      for (Eigen::Index j = 0; j < d; ++j)
        kk *= quartic((data.x(k, j) - data.x(i, j)) / (1.5 * h[j]));
      num += kk * sq[k];
      den += kk;
    }
    const double v = std::max(num / den, 1e-6);
    double inv = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double dj = 0.0;
      for (Eigen::Index k = 0; k < n; ++k)
        dj += quartic((data.x(k, j) - data.x(i, j)) / h[j]) * fp2[k];
      dj /= nd * h[j];
      inv += 1.0 / (nd * h[j] * dj);
    }
    t.penalty += 2.0 * (15.0 / 16.0) / nd * fp2[i] * v * inv;
  }
  t.total = t.rss + t.penalty;
  return t;
}

//! Gauss-Legendre nodes and weights on [a, b] by Golub-Welsch.
inline std::pair<std::vector<double>, std::vector<double>>
golub_welsch(int order, double a = -1.0, double b = 1.0)
{
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double beta = k / std::sqrt(4.0 * k * k - 1.0);
    jac(k, k - 1) = beta;
    jac(k - 1, k) = beta;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  std::vector<double> nodes(order), weights(order);
  for (int k = 0; k < order; ++k) {
    const double v = es.eigenvectors()(0, k);
    nodes[k] = 0.5 * (a + b) + 0.5 * (b - a) * es.eigenvalues()[k];
    weights[k] = (b - a) * v * v;
  }
  return { nodes, weights };
}

//! int_a^b f on `panels` equal panels, 10 Gauss points each.
template<typename F>
double
integrate(F&& f, double a, double b, int panels = 200)
{
  const auto [z, w] = golub_welsch(10);
  double sum = 0.0;
  const double step = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * step;
    for (std::size_t k = 0; k < z.size(); ++k)
      sum += 0.5 * step * w[k] * f(lo + 0.5 * step * (z[k] + 1.0));
  }
  return sum;
}

//! Writes `data` (cube coordinates) as CSV with header y,x1,...,xd.
inline void
write_csv(const std::filesystem::path& path, const Dataset& data)
{
  std::ofstream f(path);
  f.precision(17);
  f << "y";
  for (Eigen::Index j = 0; j < data.d(); ++j)
    f << ",x" << j + 1;
  f << "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    f << data.y[i];
    for (Eigen::Index j = 0; j < data.d(); ++j)
      f << "," << data.x(i, j);
    f << "\n";
  }
}

inline std::string
read_file(const std::filesystem::path& path)
{
  std::ifstream f(path, std::ios::binary);
  return { std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>() };
}

//! Fresh scratch directory under the system temp path.
inline std::filesystem::path
scratch_dir(const std::string& name)
{
  auto dir = std::filesystem::temp_directory_path() / ("addlink_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace addlink::test
