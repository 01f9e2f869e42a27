#pragma once

// Rollout integration and the metric/protocol suite: imitation metrics
// (trajectory RMSE, normalized DTW, velocity RMSE), shape metrics (directed
// Hausdorff, ICP mean Euclidean distance), and the local/global convergence
// protocol with divergence flagging.

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "osmp/dataset.hpp"
#include "osmp/policy.hpp"

namespace osmp {

using VelocityField = std::function<Vec(const Vec&)>;

struct Trajectory {
  Vec timestamps;
  Mat states;      // K x n
  Mat velocities;  // K x n, policy outputs at the visited states
  bool diverged = false;
  Eigen::Index steps_taken = 0;
};

/// Explicit forward-Euler rollout; stops early and flags divergence when the
/// state norm exceeds `divergence_radius`.
Trajectory rollout(const VelocityField& field, const Vec& x0, double dt, Eigen::Index steps,
                   double divergence_radius = std::numeric_limits<double>::infinity());

Trajectory rollout(const Policy& pol, const Vec& x0, double z, double dt, Eigen::Index steps,
                   const ShapingState& shape = ShapingState{},
                   double divergence_radius = std::numeric_limits<double>::infinity());

double traj_rmse(const Mat& actual, const Mat& desired);
double vel_rmse(const Mat& actual, const Mat& desired);

/// Minimal-cost monotone alignment with pinned endpoints and steps
/// {(1,0),(0,1),(1,1)}, divided by the length of `a`.
double dtw_normalized(const Mat& a, const Mat& b);

/// max over rows of a of the distance to the closest row of b (asymmetric).
double directed_hausdorff(const Mat& a, const Mat& b);

struct IcpResult {
  double med = 0.0;
  bool converged = false;
  Mat rotation;
  Vec translation;
};

struct IcpOptions {
  int max_iterations = 200;
  double rel_tolerance = 1e-8;
  /// Extra evenly-spaced initial rotations tried in 2-D (the first start is
  /// always the identity); the best final MED wins. Nearest-neighbor ICP has
  /// a narrow rotational basin on smooth shapes, so this needs to stay dense.
  int restarts_2d = 16;
};

/// Mean Euclidean distance between `actual` and `desired` after rigid
/// alignment by iterative closest point (rotation + translation, closed-form
/// SVD step with reflection correction).
IcpResult icp_align(const Mat& actual, const Mat& desired, const IcpOptions& opts = IcpOptions{});
double icp_med(const Mat& actual, const Mat& desired, const IcpOptions& opts = IcpOptions{});

enum class ConvergenceMode { kLocal, kGlobal };

struct ConvergenceResult {
  double hausdorff = 0.0;
  double icp_med = 0.0;
  int excluded = 0;  // diverged rollouts, reported but excluded from the means
  int total = 0;
};

struct ConvergenceOptions {
  int n_inits = 25;
  double sigma_local = 0.05;
  double sigma_global = 0.15;
  double divergence_factor = 10.0;  // times the workspace diameter
};

/// Samples demo positions, perturbs them with Gaussian offsets, rolls out for
/// N (local) or 2N keeping the last N (global) steps, and averages the shape
/// metrics against the demo.
ConvergenceResult convergence_protocol(const VelocityField& field, const OracleDataset& demo,
                                       ConvergenceMode mode, std::uint64_t seed,
                                       const ConvergenceOptions& opts = ConvergenceOptions{});

struct EvalReport {
  // imitation metrics (deterministic; identical across protocol seeds)
  double traj_rmse = 0.0;
  double norm_dtw = 0.0;
  double vel_rmse = 0.0;
  // convergence metrics, mean +- std across seeds
  double local_hausdorff_mean = 0.0, local_hausdorff_std = 0.0;
  double local_icp_med_mean = 0.0, local_icp_med_std = 0.0;
  double global_hausdorff_mean = 0.0, global_hausdorff_std = 0.0;
  double global_icp_med_mean = 0.0, global_icp_med_std = 0.0;
  int local_excluded = 0, global_excluded = 0;
  std::vector<std::uint64_t> seeds;
  double wall_time_s = 0.0;

  bool flagged_divergent() const;
};

/// Full Table-style evaluation: imitation metrics from a demo-start rollout
/// plus both convergence modes, aggregated over protocol seeds.
EvalReport evaluate(const Policy& pol, const OracleDataset& demo,
                    const std::vector<std::uint64_t>& seeds, double z = 0.0);

/// Delimited table (one header row, mean row, std row).
std::string eval_report_table(const EvalReport& r);

}  // namespace osmp
