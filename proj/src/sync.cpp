#include "osmp/sync.hpp"

#include <cmath>
#include <fstream>

namespace osmp {

void SyncGroup::validate() const {
  const Eigen::Index n_s = size();
  require(n_s >= 2, "SyncGroup: need at least two policies");
  require(k_ps > 0.0, "SyncGroup: k_ps must be positive");
  require(desired_offsets.rows() == n_s && desired_offsets.cols() == n_s,
          "SyncGroup: offset matrix must be n_s x n_s");
  for (Eigen::Index i = 0; i < n_s; ++i) {
    require(desired_offsets(i, i) == 0.0, "SyncGroup: offset diagonal must be zero");
    for (Eigen::Index j = 0; j < n_s; ++j) {
      require(desired_offsets(i, j) == desired_offsets(j, i),
              "SyncGroup: offsets must be symmetric");
      require(desired_offsets(i, j) >= -kPi && desired_offsets(i, j) < kPi,
              "SyncGroup: offsets must lie in [-pi, pi)");
    }
  }
  for (const Policy* p : policies) require(p != nullptr, "SyncGroup: null policy");
}

double phase(const Policy& pol, const Vec& x, double z) {
  const Vec y = pol.encoder().encode(x, z);
  const double r = std::hypot(y(0), y(1));
  if (r < kDegenerateRadius) throw std::domain_error("phase: undefined at the latent origin");
  return wrap_angle(std::atan2(y(1), y(0)));
}

double synchronized_omega(Eigen::Index i, const Vec& phases, const SyncGroup& group,
                          double base_omega) {
  require(phases.size() == group.size(), "synchronized_omega: phase count mismatch");
  double coupling = 0.0;
  for (Eigen::Index j = 0; j < group.size(); ++j)
    coupling += std::sin(group.desired_offsets(i, j) + phases(i) - phases(j));
  const double eps_omega = 1e-6;
  return std::max(base_omega * (1.0 - group.k_ps * coupling), eps_omega);
}

Eigen::Index GroupTrace::pair_index(Eigen::Index i, Eigen::Index j, Eigen::Index n_s) {
  require(i < j && j < n_s, "pair_index: need i < j < n_s");
  // row-major upper triangle
  return i * n_s - i * (i + 1) / 2 + (j - i - 1);
}

GroupTrace simulate_group(const SyncGroup& group, const std::vector<Vec>& x0s,
                          const std::vector<double>& zs, double dt, Eigen::Index steps,
                          double divergence_radius) {
  group.validate();
  const Eigen::Index n_s = group.size();
  require(static_cast<Eigen::Index>(x0s.size()) == n_s, "simulate_group: one x0 per system");
  require(static_cast<Eigen::Index>(zs.size()) == n_s, "simulate_group: one z per system");
  require(dt > 0.0 && steps >= 1, "simulate_group: bad dt or steps");

  GroupTrace trace;
  trace.timestamps = Vec::LinSpaced(steps, 0.0, dt * static_cast<double>(steps - 1));
  trace.phases = Mat::Zero(steps, n_s);
  trace.pair_errors_deg = Mat::Zero(steps, n_s * (n_s - 1) / 2);
  trace.diverged.assign(static_cast<std::size_t>(n_s), false);
  std::vector<Vec> x = x0s;
  for (Eigen::Index i = 0; i < n_s; ++i) {
    trace.states.emplace_back(steps, x0s[static_cast<std::size_t>(i)].size());
    trace.velocities.emplace_back(steps, x0s[static_cast<std::size_t>(i)].size());
  }

  const ShapingState default_shape;
  for (Eigen::Index k = 0; k < steps; ++k) {
    Vec phi(n_s);
    for (Eigen::Index i = 0; i < n_s; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      trace.states[si].row(k) = x[si].transpose();
      phi(i) = trace.diverged[si] ? trace.phases(std::max<Eigen::Index>(k - 1, 0), i)
                                  : phase(*group.policies[si], x[si], zs[si]);
    }
    trace.phases.row(k) = phi.transpose();
    for (Eigen::Index i = 0; i < n_s; ++i)
      for (Eigen::Index j = i + 1; j < n_s; ++j)
        trace.pair_errors_deg(k, GroupTrace::pair_index(i, j, n_s)) =
            wrap_angle(phi(i) - phi(j)) * 180.0 / kPi;

    for (Eigen::Index i = 0; i < n_s; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      if (trace.diverged[si]) {
        trace.velocities[si].row(k).setZero();
        continue;
      }
      const Policy& pol = *group.policies[si];
      double base = pol.hopf().omega;
      if (pol.hopf().omega_mode == OmegaMode::kLearnedNet) {
        const Vec y = pol.encoder().encode(x[si], zs[si]);
        const double r = std::hypot(y(0), y(1));
        base = pol.hopf().omega_at(y(0) / r, y(1) / r);
      }
      const double om = synchronized_omega(i, phi, group, base);
      const double factor = om / base;
      try {
        Vec v = pol.velocity(x[si], zs[si], default_shape, factor);
        trace.velocities[si].row(k) = v.transpose();
        x[si] += dt * v;
        if (!x[si].allFinite() || x[si].norm() > divergence_radius) trace.diverged[si] = true;
      } catch (const std::exception&) {
        trace.diverged[si] = true;
        trace.velocities[si].row(k).setZero();
      }
    }
  }
  return trace;
}

void save_group_trace(const GroupTrace& trace, const std::string& prefix) {
  const Eigen::Index n_s = static_cast<Eigen::Index>(trace.states.size());
  for (Eigen::Index i = 0; i < n_s; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    std::ofstream f(prefix + "_traj_" + std::to_string(i) + ".csv");
    require(f.good(), "save_group_trace: cannot open trajectory file");
    const Eigen::Index n = trace.states[si].cols();
    f << "t";
    for (Eigen::Index c = 0; c < n; ++c) f << ", x_" << (c + 1);
    for (Eigen::Index c = 0; c < n; ++c) f << ", v_" << (c + 1);
    f << ", phi\n";
    for (Eigen::Index k = 0; k < trace.timestamps.size(); ++k) {
      f << trace.timestamps(k);
      for (Eigen::Index c = 0; c < n; ++c) f << ", " << trace.states[si](k, c);
      for (Eigen::Index c = 0; c < n; ++c) f << ", " << trace.velocities[si](k, c);
      f << ", " << trace.phases(k, i) << "\n";
    }
  }
  std::ofstream pf(prefix + "_phase_errors.csv");
  require(pf.good(), "save_group_trace: cannot open phase-error file");
  pf << "t";
  for (Eigen::Index i = 0; i < n_s; ++i)
    for (Eigen::Index j = i + 1; j < n_s; ++j) pf << ", err_deg_" << i << "_" << j;
  pf << "\n";
  for (Eigen::Index k = 0; k < trace.timestamps.size(); ++k) {
    pf << trace.timestamps(k);
    for (Eigen::Index c = 0; c < trace.pair_errors_deg.cols(); ++c)
      pf << ", " << trace.pair_errors_deg(k, c);
    pf << "\n";
  }
}

}  // namespace osmp
