#include "addlink/link.hpp"

#include "addlink/error.hpp"

#include <algorithm>
#include <cmath>

namespace addlink {

namespace {

constexpr double kLogitClamp = 700.0;

LinkValues
logit_values(double v)
{
  v = std::clamp(v, -kLogitClamp, kLogitClamp);
  double f;
  if (v >= 0.0) {
    f = 1.0 / (1.0 + std::exp(-v));
  } else {
    const double e = std::exp(v);
    f = e / (1.0 + e);
  }
  const double fp = f * (1.0 - f);
  return { f, fp, fp * (1.0 - 2.0 * f) };
}

} // namespace

Link::Link(std::string name, Fn f, Fn fp, Fn fpp, double domain_halfwidth)
  : kind_(Kind::custom)
  , name_(std::move(name))
  , f_(std::move(f))
  , fp_(std::move(fp))
  , fpp_(std::move(fpp))
  , domain_halfwidth_(domain_halfwidth)
{
  if (!f_ || !fp_ || !fpp_)
    throw UsageError("link: F, F' and F'' must all be supplied");
}

Link::Link(Kind kind, std::string name)
  : kind_(kind)
  , name_(std::move(name))
{}

LinkValues
Link::eval(double v) const
{
  switch (kind_) {
    case Kind::logit:
      return logit_values(v);
    case Kind::identity:
      return { v, 1.0, 0.0 };
    case Kind::custom:
      break;
  }
  return { f_(v), fp_(v), fpp_(v) };
}

double
Link::F(double v) const
{
  switch (kind_) {
    case Kind::logit:
      return logit_values(v).f;
    case Kind::identity:
      return v;
    case Kind::custom:
      break;
  }
  return f_(v);
}

double
Link::Fp(double v) const
{
  switch (kind_) {
    case Kind::logit:
      return logit_values(v).fp;
    case Kind::identity:
      return 1.0;
    case Kind::custom:
      break;
  }
  return fp_(v);
}

double
Link::Fpp(double v) const
{
  switch (kind_) {
    case Kind::logit:
      return logit_values(v).fpp;
    case Kind::identity:
      return 0.0;
    case Kind::custom:
      break;
  }
  return fpp_(v);
}

Link
logit_link()
{
  return Link(Link::Kind::logit, "logit");
}

Link
identity_link()
{
  return Link(Link::Kind::identity, "identity");
}

Link
link_by_name(std::string_view name)
{
  if (name == "logit")
    return logit_link();
  if (name == "identity")
    return identity_link();
  throw UsageError("unknown link '" + std::string(name) +
                   "' (valid: logit, identity)");
}

} // namespace addlink
