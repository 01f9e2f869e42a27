#pragma once

// The composed motion policy: encode, evaluate the latent Hopf field, pull the
// velocity back through the regularized encoder Jacobian, and apply online
// shaping (spatial scale/translation, speed factor, convergence gain, and the
// sliding-mode angular gate).

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "osmp/encoder.hpp"
#include "osmp/hopf.hpp"

namespace osmp {

enum class SpeedScaleMode { kUnity, kLearnedNet };

struct ShapingState {
  double s_f = 1.0;        // spatial scale of the velocity field
  Vec x_o;                 // field origin; defaults to zero
  double s_omega = 1.0;    // speed factor on the angular velocity
  double k_conv = 1.0;     // convergence gain; alpha = beta = k_conv * s_omega
  double gate_radius = 0.0;   // tube radius R_sm around the limit cycle
  double gate_sigma = 0.1;    // gate width sigma_sm
  bool gate_enabled = false;

  void validate(Eigen::Index n) const;
};

/// Distance of a latent state from the limit cycle, normalized by the DOF:
/// sqrt(((r - R)^2 + ||y_tail||^2) / (n - 1)).
double latent_cycle_distance(const Vec& y, double radius);

/// Gaussian angular gate: 1 inside the tube, exp(-(d - R_sm)^2 / (2 sigma^2))
/// outside, -> 0 far away.
double angular_gate(double d_lc, double gate_radius, double gate_sigma);

class Policy {
 public:
  Policy() = default;
  Policy(Encoder encoder, HopfParams hopf) : encoder_(std::move(encoder)), hopf_(hopf) {
    hopf_.validate();
  }

  /// The policy velocity at x. `omega_factor` multiplies the angular velocity
  /// only (phase-synchronization hook); shaping is caller-owned per rollout.
  Vec velocity(const Vec& x, double z = 0.0, const ShapingState& shape = ShapingState{},
               double omega_factor = 1.0) const;

  double speed_scale(const Vec& x) const;

  /// Latent encoding of a (shaped) oracle-space state.
  Vec encode_shaped(const Vec& x, double z, const ShapingState& shape) const;

  const Encoder& encoder() const { return encoder_; }
  Encoder& mutable_encoder() { return encoder_; }
  const HopfParams& hopf() const { return hopf_; }
  HopfParams& mutable_hopf() { return hopf_; }

  SpeedScaleMode speed_scale_mode = SpeedScaleMode::kUnity;
  std::optional<RffnScalarNet> speed_net;  // used in learned-net mode
  double eps_inv = 1e-6;                   // Jacobian regularization
  JacobianMethod jacobian_method = JacobianMethod::kExact;
  double fd_step = 5e-4;

 private:
  Encoder encoder_;
  HopfParams hopf_;
};

/// Policy file: encoder + latent dynamics + speed-scale + defaults in one
/// versioned JSON container.
void save_policy(const Policy& pol, const std::string& path);
Policy load_policy(const std::string& path);

}  // namespace osmp
