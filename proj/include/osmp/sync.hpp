#pragma once

// Phase extraction and sinusoidal-coupling feedback synchronization of
// several policies, plus the coupled-rollout simulator.

#include <Eigen/Dense>
#include <vector>

#include "osmp/eval.hpp"
#include "osmp/policy.hpp"

namespace osmp {

struct SyncGroup {
  std::vector<const Policy*> policies;
  Mat desired_offsets;  // n_s x n_s, radians, symmetric, zero diagonal
  double k_ps = 0.5;    // coupling gain

  Eigen::Index size() const { return static_cast<Eigen::Index>(policies.size()); }
  void validate() const;
};

/// Latent polar phase of a state: atan2 of the first two encoded coordinates,
/// wrapped into [-pi, pi).
double phase(const Policy& pol, const Vec& x, double z = 0.0);

/// Coupled angular velocity of system i:
/// omega_i * (1 - k_ps * sum_j sin(offset_ij + phi_i - phi_j)), clamped below
/// so a large gain cannot reverse the rotation direction.
double synchronized_omega(Eigen::Index i, const Vec& phases, const SyncGroup& group,
                          double base_omega);

struct GroupTrace {
  Vec timestamps;
  std::vector<Mat> states;      // per system, K x n
  std::vector<Mat> velocities;  // per system
  Mat phases;                   // K x n_s, radians
  Mat pair_errors_deg;          // K x (n_s * (n_s - 1) / 2), wrapped to [-180, 180)
  std::vector<bool> diverged;

  /// Column index of the (i, j) pair, i < j.
  static Eigen::Index pair_index(Eigen::Index i, Eigen::Index j, Eigen::Index n_s);
};

/// Coupled forward-Euler rollout: each step evaluates every system's phase,
/// then advances each with its synchronized angular velocity.
GroupTrace simulate_group(const SyncGroup& group, const std::vector<Vec>& x0s,
                          const std::vector<double>& zs, double dt, Eigen::Index steps,
                          double divergence_radius = std::numeric_limits<double>::infinity());

/// One trajectory file per system plus one phase-error file.
void save_group_trace(const GroupTrace& trace, const std::string& prefix);

}  // namespace osmp
