#include "addlink/basis.hpp"

#include "addlink/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace addlink {

namespace {

constexpr int kDegree = 3;

double
safe_ratio(double num, double den)
{
  return den == 0.0 ? 0.0 : num / den;
}

} // namespace

BasisFamily
basis_family_by_name(std::string_view name)
{
  if (name == "bspline" || name == "orthonormal-bspline")
    return BasisFamily::orthonormal_bspline;
  if (name == "legendre")
    return BasisFamily::legendre;
  throw UsageError(fmt::format(
    "unknown basis family '{}' (valid: bspline, legendre)", name));
}

std::string_view
basis_family_name(BasisFamily family)
{
  return family == BasisFamily::legendre ? "legendre" : "bspline";
}

CubicBSplines::CubicBSplines(std::vector<double> bp)
  : breakpoints(std::move(bp))
{
  if (breakpoints.size() < 2)
    throw UsageError("B-spline basis needs at least two breakpoints");
  knots.assign(kDegree, breakpoints.front());
  knots.insert(knots.end(), breakpoints.begin(), breakpoints.end());
  knots.insert(knots.end(), kDegree, breakpoints.back());
}

void
CubicBSplines::table(double v, int degree, std::span<double> out) const
{
  // Cox-de Boor from the degree-0 indicators upward. The right endpoint is
  // assigned to the last non-empty interval.
  const int m = static_cast<int>(knots.size());
  std::vector<double> n(m - 1, 0.0);
  int span = -1;
  for (int i = 0; i + 1 < m; ++i) {
    if (knots[i] < knots[i + 1] && v >= knots[i] && v < knots[i + 1]) {
      span = i;
      break;
    }
  }
  if (span < 0 && v == knots.back()) {
    for (int i = m - 2; i >= 0; --i) {
      if (knots[i] < knots[i + 1]) {
        span = i;
        break;
      }
    }
  }
  if (span >= 0)
    n[span] = 1.0;

  for (int p = 1; p <= degree; ++p) {
    for (int i = 0; i + p + 1 < m; ++i) {
      n[i] = safe_ratio(v - knots[i], knots[i + p] - knots[i]) * n[i] +
             safe_ratio(knots[i + p + 1] - v, knots[i + p + 1] - knots[i + 1]) *
               n[i + 1];
    }
  }
  const int count = m - degree - 1;
  std::copy_n(n.begin(), count, out.begin());
}

void
CubicBSplines::values(double v, std::span<double> out) const
{
  table(v, kDegree, out);
}

void
CubicBSplines::second_derivatives(double v, std::span<double> out) const
{
  const int m = static_cast<int>(knots.size());
  std::vector<double> n1(m - 2);
  table(v, kDegree - 2, n1);

  // Derivatives of the quadratic B-splines from the linear ones, then of
  // the cubic ones from those.
  std::vector<double> d2(m - 3);
  for (int i = 0; i < m - 3; ++i) {
    d2[i] = 2.0 * (safe_ratio(n1[i], knots[i + 2] - knots[i]) -
                   safe_ratio(n1[i + 1], knots[i + 3] - knots[i + 1]));
  }
  for (int i = 0; i < m - 4; ++i) {
    out[i] = 3.0 * (safe_ratio(d2[i], knots[i + 3] - knots[i]) -
                    safe_ratio(d2[i + 1], knots[i + 4] - knots[i + 1]));
  }
}

Basis::Basis(const BasisSpec& spec)
  : spec_(spec)
{
  if (spec.kappa < 1)
    throw UsageError("basis: kappa must be at least 1");
  if (spec.quadrature_order < 2)
    throw UsageError("basis: quadrature order must be at least 2");

  if (spec.family == BasisFamily::legendre) {
    quadrature_ = gauss_legendre(spec.quadrature_order);
    return;
  }
  build_bspline();
}

void
Basis::build_bspline()
{
  const int n_knots = std::max(spec_.kappa + 4, 8);
  std::vector<double> bp(n_knots);
  for (int i = 0; i < n_knots; ++i)
    bp[i] = -1.0 + 2.0 * i / (n_knots - 1);
  splines_.emplace(bp);
  quadrature_ = composite_gauss_legendre(bp, spec_.quadrature_order);

  const int nb = splines_->size();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(nb, nb);
  Eigen::MatrixXd rough = Eigen::MatrixXd::Zero(nb, nb);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd b(nb), b2(nb);
  for (std::size_t q = 0; q < quadrature_.nodes.size(); ++q) {
    const double v = quadrature_.nodes[q];
    const double w = quadrature_.weights[q];
    splines_->values(v, {b.data(), static_cast<std::size_t>(nb)});
    splines_->second_derivatives(v, {b2.data(), static_cast<std::size_t>(nb)});
    gram.noalias() += w * b * b.transpose();
    rough.noalias() += w * b2 * b2.transpose();
    mean += w * b;
  }

  // Orthonormal basis (Euclidean) of the coefficient vectors whose spline
  // integrates to zero: the trailing columns of a Householder Q for `mean`.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(mean);
  const Eigen::MatrixXd q_full = qr.householderQ();
  const Eigen::MatrixXd z = q_full.rightCols(nb - 1);

  const Eigen::MatrixXd gram_z = z.transpose() * gram * z;
  const Eigen::MatrixXd rough_z = z.transpose() * rough * z;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_eig(gram_z);
  if (gram_eig.eigenvalues().minCoeff() <
      1e-12 * gram_eig.eigenvalues().maxCoeff()) {
    throw NumericalError(fmt::format(
      "basis: rank-deficient Gram matrix for kappa={} with {} knots",
      spec_.kappa,
      n_knots));
  }
  if (spec_.kappa > nb - 1) {
    throw NumericalError(fmt::format(
      "basis: kappa={} exceeds the {} zero-mean spline directions",
      spec_.kappa,
      nb - 1));
  }

  // Generalized eigenvectors of the roughness penalty are L2-orthonormal;
  // ascending eigenvalues order them from smoothest to roughest.
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(rough_z,
                                                                 gram_z);
  if (ges.info() != Eigen::Success)
    throw NumericalError("basis: generalized eigen decomposition failed");

  coefficients_.resize(spec_.kappa, nb);
  for (int k = 0; k < spec_.kappa; ++k) {
    Eigen::VectorXd c = z * ges.eigenvectors().col(k);
    // Sign convention: p_k(1) > 0. Clamped splines give p_k(1) = c[nb-1].
    if (c[nb - 1] < 0.0)
      c = -c;
    coefficients_.row(k) = c.transpose();
  }
}

std::span<const double>
Basis::breakpoints() const noexcept
{
  if (!splines_)
    return {};
  return splines_->breakpoints;
}

void
Basis::eval_unchecked(double v, std::span<double> out) const
{
  if (spec_.family == BasisFamily::legendre) {
    double p_prev = 1.0;
    double p = v;
    for (int k = 1; k <= spec_.kappa; ++k) {
      out[k - 1] = std::sqrt((2.0 * k + 1.0) / 2.0) * p;
      const double next = ((2.0 * k + 1.0) * v * p - k * p_prev) / (k + 1.0);
      p_prev = p;
      p = next;
    }
    return;
  }
  const int nb = splines_->size();
  Eigen::VectorXd b(nb);
  splines_->values(v, {b.data(), static_cast<std::size_t>(nb)});
  Eigen::Map<Eigen::VectorXd>(out.data(), spec_.kappa) = coefficients_ * b;
}

void
Basis::eval_all(double v, std::span<double> out) const
{
  if (!(std::abs(v) <= 1.0))
    throw UsageError(fmt::format("basis: argument {} outside [-1, 1]", v));
  if (out.size() != static_cast<std::size_t>(spec_.kappa))
    throw UsageError("basis: output span has the wrong size");
  eval_unchecked(v, out);
}

double
Basis::operator()(int k, double v) const
{
  if (k < 1 || k > spec_.kappa)
    throw UsageError(
      fmt::format("basis: index {} outside 1..{}", k, spec_.kappa));
  std::vector<double> all(spec_.kappa);
  eval_all(v, all);
  return all[k - 1];
}

Basis
build_basis(const BasisSpec& spec)
{
  return Basis(spec);
}

double
eval_pk(const Basis& basis, int k, double v)
{
  return basis(k, v);
}

Eigen::VectorXd
eval_P_kappa(const Basis& basis, std::span<const double> x)
{
  const auto kappa = static_cast<std::size_t>(basis.kappa());
  Eigen::VectorXd out(1 + kappa * x.size());
  out[0] = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    basis.eval_all(x[j], {out.data() + 1 + j * kappa, kappa});
  return out;
}

AdditiveBasis::AdditiveBasis(BasisFamily family,
                             std::vector<int> kappa,
                             int quadrature_order)
  : kappa_(std::move(kappa))
{
  if (kappa_.empty())
    throw UsageError("additive basis: at least one coordinate required");
  bases_.reserve(kappa_.size());
  for (int k : kappa_) {
    // Coordinates sharing a series length share an identical basis.
    auto same = std::find_if(bases_.begin(), bases_.end(), [&](const Basis& b) {
      return b.kappa() == k;
    });
    if (same != bases_.end())
      bases_.push_back(*same);
    else
      bases_.emplace_back(BasisSpec{ family, k, quadrature_order });
    offsets_.push_back(dimension_);
    dimension_ += k;
  }
}

Eigen::VectorXd
AdditiveBasis::regressor(std::span<const double> x) const
{
  if (x.size() != bases_.size())
    throw UsageError("additive basis: point has the wrong dimension");
  Eigen::VectorXd out(dimension_);
  out[0] = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    bases_[j].eval_all(
      x[j], { out.data() + offsets_[j], static_cast<std::size_t>(kappa_[j]) });
  }
  return out;
}

Eigen::MatrixXd
AdditiveBasis::design(const Eigen::MatrixXd& x) const
{
  if (x.cols() != coordinates())
    throw UsageError("additive basis: design has the wrong number of columns");
  Eigen::MatrixXd p(x.rows(), dimension_);
  std::vector<double> row(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      row[j] = x(i, j);
    p.row(i) = regressor(row).transpose();
  }
  return p;
}

} // namespace addlink
