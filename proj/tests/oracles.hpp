#pragma once

// Independent brute-force oracles used only by tests: exhaustive-path DTW,
// double-loop Hausdorff, and dense-rotation-grid rigid alignment. These stay
// deliberately naive and share no code with the library implementations.

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace osmp::test_oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// DTW by exhaustive enumeration of all monotone alignment paths with pinned
/// endpoints and steps {(1,0),(0,1),(1,1)}.
inline double dtw_bruteforce(const Mat& a, const Mat& b) {
  const Eigen::Index na = a.rows(), nb = b.rows();
  double best = std::numeric_limits<double>::infinity();
  struct Frame {
    Eigen::Index i, j;
    double cost;
  };
  std::vector<Frame> stack;
  stack.push_back({0, 0, (a.row(0) - b.row(0)).norm()});
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    if (f.cost >= best) continue;
    if (f.i == na - 1 && f.j == nb - 1) {
      best = f.cost;
      continue;
    }
    if (f.i + 1 < na)
      stack.push_back({f.i + 1, f.j, f.cost + (a.row(f.i + 1) - b.row(f.j)).norm()});
    if (f.j + 1 < nb)
      stack.push_back({f.i, f.j + 1, f.cost + (a.row(f.i) - b.row(f.j + 1)).norm()});
    if (f.i + 1 < na && f.j + 1 < nb)
      stack.push_back({f.i + 1, f.j + 1, f.cost + (a.row(f.i + 1) - b.row(f.j + 1)).norm()});
  }
  return best;
}

inline double hausdorff_bruteforce(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double bestd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      bestd = std::min(bestd, (a.row(i) - b.row(j)).norm());
    worst = std::max(worst, bestd);
  }
  return worst;
}

/// Best mean Euclidean distance over a dense grid of 2-D rotations; for each
/// angle the translation is refined by alternating nearest-neighbor
/// correspondence with the mean-offset update.
inline double icp_med_rotation_grid(const Mat& actual, const Mat& desired, int n_angles = 720) {
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_angles; ++k) {
    const double th = 2.0 * M_PI * k / n_angles;
    Mat rot(2, 2);
    rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Mat moved = desired * rot.transpose();
    Vec trans = Vec::Zero(2);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double med = 0.0;
      Vec shift = Vec::Zero(2);
      for (Eigen::Index i = 0; i < actual.rows(); ++i) {
        double bd = std::numeric_limits<double>::infinity();
        Eigen::Index bj = 0;
        for (Eigen::Index j = 0; j < moved.rows(); ++j) {
          const double d =
              (actual.row(i) - moved.row(j) - trans.transpose()).squaredNorm();
          if (d < bd) {
            bd = d;
            bj = j;
          }
        }
        med += std::sqrt(bd);
        shift += (actual.row(i) - moved.row(bj)).transpose();
      }
      med /= static_cast<double>(actual.rows());
      if (med < best) best = med;
      if (std::abs(prev - med) < 1e-12) break;
      prev = med;
      trans = shift / static_cast<double>(actual.rows());
    }
  }
  return best;
}

}  // namespace osmp::test_oracle
