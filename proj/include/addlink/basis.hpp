#pragma once

#include "addlink/quadrature.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace addlink {

enum class BasisFamily
{
  //! Cubic B-splines on uniform knots, constant removed, orthonormalized
  //! and ordered from smoothest to roughest.
  orthonormal_bspline,
  //! Normalized Legendre polynomials of degree 1..kappa.
  legendre
};

BasisFamily basis_family_by_name(std::string_view name);
std::string_view basis_family_name(BasisFamily family);

//! Evaluates the clamped cubic B-splines (and optionally their second
//! derivatives) on the knot vector built from `breakpoints`.
struct CubicBSplines
{
  explicit CubicBSplines(std::vector<double> breakpoints);

  int size() const noexcept { return static_cast<int>(breakpoints.size()) + 2; }
  void values(double v, std::span<double> out) const;
  void second_derivatives(double v, std::span<double> out) const;

  std::vector<double> breakpoints;
  std::vector<double> knots;

private:
  void table(double v, int degree, std::span<double> out) const;
};

struct BasisSpec
{
  BasisFamily family = BasisFamily::orthonormal_bspline;
  int kappa = 1;
  int quadrature_order = 64;
};

//! Zero-mean, L2-orthonormal functions p_1..p_kappa on [-1, 1].
//! Immutable after construction.
class Basis
{
public:
  explicit Basis(const BasisSpec& spec);

  const BasisSpec& spec() const noexcept { return spec_; }
  int kappa() const noexcept { return spec_.kappa; }

  //! p_k(v) for 1 <= k <= kappa and |v| <= 1.
  double operator()(int k, double v) const;

  //! Writes p_1(v)..p_kappa(v) into `out` (size kappa).
  void eval_all(double v, std::span<double> out) const;

  //! Quadrature rule exact for products of two basis functions.
  const QuadratureRule& quadrature() const noexcept { return quadrature_; }

  //! Breakpoints of the spline family (empty for Legendre).
  std::span<const double> breakpoints() const noexcept;

private:
  void build_bspline();
  void eval_unchecked(double v, std::span<double> out) const;

  BasisSpec spec_;
  QuadratureRule quadrature_;
  std::optional<CubicBSplines> splines_;
  Eigen::MatrixXd coefficients_; // kappa x number of B-splines
};

Basis build_basis(const BasisSpec& spec);

double eval_pk(const Basis& basis, int k, double v);

//! Stacked regressor [1, p_1(x^1), ..., p_kappa(x^1), ..., p_kappa(x^d)].
Eigen::VectorXd eval_P_kappa(const Basis& basis, std::span<const double> x);

//! One basis per coordinate, allowing a different series length for each
//! additive component. Layout of the stacked regressor follows coordinate
//! order with the intercept first.
class AdditiveBasis
{
public:
  AdditiveBasis(BasisFamily family,
                std::vector<int> kappa,
                int quadrature_order = 64);

  Eigen::Index dimension() const noexcept { return dimension_; }
  Eigen::Index coordinates() const noexcept
  {
    return static_cast<Eigen::Index>(bases_.size());
  }
  const Basis& coordinate(Eigen::Index j) const { return bases_.at(j); }
  const std::vector<int>& kappa() const noexcept { return kappa_; }

  //! Index of the first coefficient of coordinate j in the stacked vector.
  Eigen::Index block_offset(Eigen::Index j) const { return offsets_.at(j); }

  Eigen::VectorXd regressor(std::span<const double> x) const;

  //! n x dimension matrix whose rows are the regressors of the rows of x.
  Eigen::MatrixXd design(const Eigen::MatrixXd& x) const;

private:
  std::vector<Basis> bases_;
  std::vector<int> kappa_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index dimension_ = 1;
};


} // namespace addlink
