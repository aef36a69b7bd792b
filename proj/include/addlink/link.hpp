#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace addlink {

//! F, F' and F'' evaluated at one point.
struct LinkValues
{
  double f;
  double fp;
  double fpp;
};

//! The known link F of E(Y|X) = F[mu + m_1(X^1) + ... + m_d(X^d)].
class Link
{
public:
  using Fn = std::function<double(double)>;

  //! A user-supplied link; `fp` must be positive on the working range.
  Link(std::string name, Fn f, Fn fp, Fn fpp, double domain_halfwidth = 0.0);

  const std::string& name() const noexcept { return name_; }
  double domain_halfwidth() const noexcept { return domain_halfwidth_; }

  double F(double v) const;
  double Fp(double v) const;
  double Fpp(double v) const;
  LinkValues eval(double v) const;

private:
  enum class Kind
  {
    logit,
    identity,
    custom
  };
  Link(Kind kind, std::string name);

  Kind kind_ = Kind::custom;
  std::string name_;
  Fn f_, fp_, fpp_;
  double domain_halfwidth_ = 0.0;

  friend Link logit_link();
  friend Link identity_link();
};

//! Logistic CDF. Arguments are clamped to [-700, 700].
Link logit_link();
Link identity_link();

//! "logit" or "identity".
Link link_by_name(std::string_view name);

} // namespace addlink
