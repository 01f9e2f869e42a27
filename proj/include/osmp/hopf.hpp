#pragma once

// Supercritical-Hopf latent dynamics in Cartesian and polar coordinates,
// the coordinate maps with their Jacobians, the transverse Lyapunov function,
// and the transverse-contraction certificates.

#include <Eigen/Dense>
#include <optional>

#include "osmp/util.hpp"

namespace osmp {

/// Frozen-features scalar net: v^T cos(W u + phi), with W, phi frozen and v
/// trained. Used for the angular-velocity and speed-scale heads, whose output
/// is exponentiated and offset to stay strictly positive.
struct RffnScalarNet {
  Mat w;        // hidden x in_dim, frozen
  Vec phase;    // hidden, frozen
  Vec v_out;    // hidden, trained
  double eps = 1e-6;

  double raw(const Vec& u) const {
    return rffn_feature_scale(w.rows()) * v_out.dot(((w * u + phase).array().cos()).matrix());
  }
  double positive(const Vec& u) const { return std::exp(raw(u)) + eps; }

  static RffnScalarNet init(Eigen::Index in_dim, Eigen::Index hidden, double length_scale,
                            double eps, std::mt19937_64& rng);
};

enum class OmegaMode { kConstant, kLearnedNet };

struct HopfParams {
  double alpha = 1.0;   // radial convergence gain
  double beta = 1.0;    // transverse-subspace gain
  double radius = 1.0;  // latent limit-cycle radius
  OmegaMode omega_mode = OmegaMode::kConstant;
  double omega = 1.0;                         // used in constant mode
  std::optional<RffnScalarNet> omega_net;     // used in learned-net mode

  void validate() const;

  /// Angular velocity at a latent phase given by the unit direction
  /// (cos phi, sin phi). Strictly positive in both modes.
  double omega_at(double cos_phi, double sin_phi) const;
};

struct LatentState {
  Vec y;  // length n >= 2
};

struct PolarState {
  double r = 0.0;
  double phi = 0.0;  // in [-pi, pi)
  Vec tail;          // length n - 2
};

// Minimum radius below which polar-coordinate operations reject the input
// instead of silently perturbing it.
inline constexpr double kDegenerateRadius = 1e-9;

/// Cartesian Hopf field, Eq. of motion of the latent state.
Vec hopf_cartesian(const LatentState& y, const HopfParams& p);

/// Polar Hopf field: (r_dot, phi_dot, tail_dot).
Vec hopf_polar(const PolarState& yp, const HopfParams& p);

PolarState cart_to_polar(const LatentState& y);
LatentState polar_to_cart(const PolarState& yp);

/// d(cartesian)/d(polar); full rank for r > 0.
Mat polar_to_cart_jacobian(const PolarState& yp);

/// d(polar)/d(cartesian); rejects r < kDegenerateRadius.
Mat cart_to_polar_jacobian(const LatentState& y);

/// Transverse Lyapunov function: zero exactly on the limit cycle.
double transverse_lyapunov(const LatentState& y, const HopfParams& p);

/// Lower bound on the transverse contraction rate valid on { r >= r_eps }.
double contraction_rate_bound(const HopfParams& p, double r_eps);

/// Positive-definite transverse-contraction metric in polar coordinates.
/// The phi-phi entry is pinned to the closed form that keeps the metric
/// positive definite for every r > 0 and reduces it to the identity on the
/// limit cycle (for f_omega = 1, R = 1).
Mat contraction_metric_polar(const PolarState& yp, const HopfParams& p);

/// Result of fitting exp(-zeta t) to |r(t) - R| along a forward-Euler rollout
/// of the radial dynamics. The fit window is [0, 5 / contraction_rate_bound
/// (p, min(r0, R))], truncated once the deviation reaches the double-precision
/// floor; `monotone` reports whether |r(t) - R| decreased strictly until then.
struct RadialDecayFit {
  double rate = 0.0;
  bool monotone = false;
};
RadialDecayFit fit_radial_decay(const HopfParams& p, double r0, double dt = 1e-3);

}  // namespace osmp
