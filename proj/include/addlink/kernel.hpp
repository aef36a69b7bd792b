#pragma once

namespace addlink {

//! Second-order kernel supported on [-1, 1]. The default is the quartic
//! (biweight) kernel 15/16 (1 - v^2)^2; `scale` multiplies K (and hence K')
//! without changing its shape.
class Kernel
{
public:
  Kernel() = default;

  double operator()(double v) const
  {
    if (v <= -1.0 || v >= 1.0)
      return 0.0;
    const double t = 1.0 - v * v;
    return scale_ * (15.0 / 16.0) * t * t;
  }

  //! K'(v) = -15/4 v (1 - v^2) on (-1, 1).
  double derivative(double v) const
  {
    if (v <= -1.0 || v >= 1.0)
      return 0.0;
    return -scale_ * 3.75 * v * (1.0 - v * v);
  }

  //! K''(v) = -15/4 (1 - 3 v^2) on (-1, 1); discontinuous at the edges.
  double second_derivative(double v) const
  {
    if (v <= -1.0 || v >= 1.0)
      return 0.0;
    return -scale_ * 3.75 * (1.0 - 3.0 * v * v);
  }

  double k0() const noexcept { return scale_ * 15.0 / 16.0; }
  //! int v^2 K(v) dv and int K(v)^2 dv of the unscaled kernel.
  static constexpr double A_K = 1.0 / 7.0;
  static constexpr double B_K = 5.0 / 7.0;

  double scale() const noexcept { return scale_; }
  Kernel scaled(double c) const
  {
    Kernel k = *this;
    k.scale_ *= c;
    return k;
  }

private:
  double scale_ = 1.0;
};

} // namespace addlink
