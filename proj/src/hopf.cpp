#include "osmp/hopf.hpp"

#include <cmath>

namespace osmp {

RffnScalarNet RffnScalarNet::init(Eigen::Index in_dim, Eigen::Index hidden, double length_scale,
                                  double eps, std::mt19937_64& rng) {
  RffnScalarNet net;
  std::normal_distribution<double> freq(0.0, 1.0 / length_scale);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * kPi);
  net.w = Mat(hidden, in_dim);
  for (Eigen::Index i = 0; i < hidden; ++i)
    for (Eigen::Index j = 0; j < in_dim; ++j) net.w(i, j) = freq(rng);
  net.phase = Vec(hidden);
  for (Eigen::Index i = 0; i < hidden; ++i) net.phase(i) = ph(rng);
  net.v_out = Vec::Zero(hidden);
  net.eps = eps;
  return net;
}

void HopfParams::validate() const {
  require(alpha > 0.0, "HopfParams: alpha must be positive");
  require(beta > 0.0, "HopfParams: beta must be positive");
  require(radius > 0.0, "HopfParams: radius must be positive");
  if (omega_mode == OmegaMode::kConstant)
    require(omega > 0.0, "HopfParams: constant omega must be positive");
  else
    require(omega_net.has_value(), "HopfParams: learned-net mode needs omega_net");
}

double HopfParams::omega_at(double cos_phi, double sin_phi) const {
  if (omega_mode == OmegaMode::kConstant) return omega;
  Vec u(2);
  u << cos_phi, sin_phi;
  return omega_net->positive(u);
}

Vec hopf_cartesian(const LatentState& y, const HopfParams& p) {
  const Vec& v = y.y;
  require(v.size() >= 2, "hopf_cartesian: latent dimension must be >= 2");
  require(v.allFinite(), "hopf_cartesian: non-finite latent state");

  const double r2 = v(0) * v(0) + v(1) * v(1);
  double om;
  if (p.omega_mode == OmegaMode::kLearnedNet) {
    const double r = std::sqrt(r2);
    if (r < kDegenerateRadius)
      throw std::domain_error("hopf_cartesian: learned omega undefined at the origin");
    om = p.omega_at(v(0) / r, v(1) / r);
  } else {
    om = p.omega;
  }

  const double shrink = p.alpha * (1.0 - r2 / (p.radius * p.radius));
  Vec out(v.size());
  out(0) = -om * v(1) + shrink * v(0);
  out(1) = om * v(0) + shrink * v(1);
  if (v.size() > 2) out.tail(v.size() - 2) = -p.beta * v.tail(v.size() - 2);
  return out;
}

Vec hopf_polar(const PolarState& yp, const HopfParams& p) {
  require(yp.r >= 0.0, "hopf_polar: radius must be nonnegative");
  require(std::isfinite(yp.r) && std::isfinite(yp.phi) && yp.tail.allFinite(),
          "hopf_polar: non-finite polar state");
  Vec out(2 + yp.tail.size());
  out(0) = p.alpha * (1.0 - yp.r * yp.r / (p.radius * p.radius)) * yp.r;
  out(1) = p.omega_at(std::cos(yp.phi), std::sin(yp.phi));
  if (yp.tail.size() > 0) out.tail(yp.tail.size()) = -p.beta * yp.tail;
  return out;
}

PolarState cart_to_polar(const LatentState& y) {
  require(y.y.size() >= 2, "cart_to_polar: latent dimension must be >= 2");
  PolarState yp;
  yp.r = std::hypot(y.y(0), y.y(1));
  yp.phi = wrap_angle(std::atan2(y.y(1), y.y(0)));
  yp.tail = y.y.tail(y.y.size() - 2);
  return yp;
}

LatentState polar_to_cart(const PolarState& yp) {
  Vec y(2 + yp.tail.size());
  y(0) = yp.r * std::cos(yp.phi);
  y(1) = yp.r * std::sin(yp.phi);
  if (yp.tail.size() > 0) y.tail(yp.tail.size()) = yp.tail;
  return LatentState{y};
}

Mat polar_to_cart_jacobian(const PolarState& yp) {
  const Eigen::Index n = 2 + yp.tail.size();
  Mat j = Mat::Identity(n, n);
  j(0, 0) = std::cos(yp.phi);
  j(0, 1) = -yp.r * std::sin(yp.phi);
  j(1, 0) = std::sin(yp.phi);
  j(1, 1) = yp.r * std::cos(yp.phi);
  return j;
}

Mat cart_to_polar_jacobian(const LatentState& y) {
  const Eigen::Index n = y.y.size();
  const double r = std::hypot(y.y(0), y.y(1));
  if (r < kDegenerateRadius)
    throw std::domain_error("cart_to_polar_jacobian: singular at r = 0");
  Mat j = Mat::Identity(n, n);
  const double r2 = r * r;
  j(0, 0) = y.y(0) / r;
  j(0, 1) = y.y(1) / r;
  j(1, 0) = -y.y(1) / r2;
  j(1, 1) = y.y(0) / r2;
  return j;
}

double transverse_lyapunov(const LatentState& y, const HopfParams& p) {
  const double r2 = y.y(0) * y.y(0) + y.y(1) * y.y(1);
  const double dev = r2 - p.radius * p.radius;
  double v = 0.25 * p.alpha * p.radius * p.radius * dev * dev;
  if (y.y.size() > 2) v += 0.5 * p.beta * y.y.tail(y.y.size() - 2).squaredNorm();
  return v;
}

double contraction_rate_bound(const HopfParams& p, double r_eps) {
  require(r_eps > 0.0, "contraction_rate_bound: r_eps must be positive");
  const double re2 = r_eps * r_eps;
  return (2.0 * p.alpha / (p.radius * p.radius) + p.beta) * re2 / (re2 + 1.0);
}

Mat contraction_metric_polar(const PolarState& yp, const HopfParams& p) {
  if (yp.r < kDegenerateRadius)
    throw std::domain_error("contraction_metric_polar: singular at r = 0");
  const Eigen::Index n = 2 + yp.tail.size();
  const double r = yp.r, r2 = r * r;
  const double rr = p.radius * p.radius;
  const double f_om = p.omega_at(std::cos(yp.phi), std::sin(yp.phi));
  const double off = -p.alpha * (1.0 - r2 / rr) / (f_om * r);
  // phi-phi entry: off-diagonal squared scaled so that the determinant of the
  // leading 2x2 block is 1/r^4 > 0 for every r > 0, and the block reduces to
  // diag(1/R^2, 1/R^2) on the cycle.
  const double dev = rr - r2;
  const double m_phiphi = 1.0 / r2 + p.alpha * p.alpha * dev * dev / (rr * rr * f_om * f_om);

  Mat m = Mat::Identity(n, n);
  m(0, 0) = 1.0 / r2;
  m(0, 1) = off;
  m(1, 0) = off;
  m(1, 1) = m_phiphi;
  return m;
}

RadialDecayFit fit_radial_decay(const HopfParams& p, double r0, double dt) {
  require(r0 > 0.0 && dt > 0.0, "fit_radial_decay: r0 and dt must be positive");
  const double zeta_ref = contraction_rate_bound(p, std::min(r0, p.radius));
  const int steps = static_cast<int>(5.0 / zeta_ref / dt);
  constexpr double kFloor = 1e-12;

  RadialDecayFit fit;
  fit.monotone = true;
  double r = r0;
  std::vector<double> ts, ys;
  double prev = std::abs(r - p.radius);
  for (int k = 0; k <= steps; ++k) {
    const double dev = std::abs(r - p.radius);
    if (dev < kFloor) break;
    if (k > 0) {
      if (dev >= prev) fit.monotone = false;
      prev = dev;
    }
    ts.push_back(k * dt);
    ys.push_back(std::log(dev));
    r += dt * p.alpha * (1.0 - r * r / (p.radius * p.radius)) * r;
  }

  double tm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tm += ts[i];
    ym += ys[i];
  }
  tm /= static_cast<double>(ts.size());
  ym /= static_cast<double>(ts.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    num += (ts[i] - tm) * (ys[i] - ym);
    den += (ts[i] - tm) * (ts[i] - tm);
  }
  fit.rate = -num / den;
  return fit;
}

}  // namespace osmp
