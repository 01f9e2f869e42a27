#include "osmp/eval.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace osmp {

Trajectory rollout(const VelocityField& field, const Vec& x0, double dt, Eigen::Index steps,
                   double divergence_radius) {
  require(dt > 0.0, "rollout: dt must be positive");
  require(steps >= 1, "rollout: need at least one step");
  Trajectory tr;
  tr.timestamps = Vec(steps);
  tr.states = Mat(steps, x0.size());
  tr.velocities = Mat(steps, x0.size());
  Vec x = x0;
  Eigen::Index k = 0;
  for (; k < steps; ++k) {
    tr.timestamps(k) = static_cast<double>(k) * dt;
    tr.states.row(k) = x.transpose();
    Vec v;
    try {
      v = field(x);
    } catch (const std::exception&) {
      tr.diverged = true;
      break;
    }
    if (!v.allFinite() || x.norm() > divergence_radius) {
      tr.diverged = true;
      break;
    }
    tr.velocities.row(k) = v.transpose();
    x += dt * v;
  }
  tr.steps_taken = k;
  if (tr.diverged) {
    tr.timestamps.conservativeResize(k);
    tr.states.conservativeResize(k, Eigen::NoChange);
    tr.velocities.conservativeResize(k, Eigen::NoChange);
  }
  return tr;
}

Trajectory rollout(const Policy& pol, const Vec& x0, double z, double dt, Eigen::Index steps,
                   const ShapingState& shape, double divergence_radius) {
  return rollout([&](const Vec& x) { return pol.velocity(x, z, shape); }, x0, dt, steps,
                 divergence_radius);
}

namespace {

double rmse(const Mat& actual, const Mat& desired) {
  require(actual.rows() == desired.rows() && actual.cols() == desired.cols(),
          "rmse: length mismatch");
  require(actual.rows() > 0, "rmse: empty input");
  return std::sqrt((actual - desired).squaredNorm() /
                   static_cast<double>(actual.rows() * actual.cols()));
}

}  // namespace

double traj_rmse(const Mat& actual, const Mat& desired) { return rmse(actual, desired); }
double vel_rmse(const Mat& actual, const Mat& desired) { return rmse(actual, desired); }

double dtw_normalized(const Mat& a, const Mat& b) {
  require(a.rows() > 0 && b.rows() > 0, "dtw: empty sequence");
  const Eigen::Index na = a.rows(), nb = b.rows();
  const double inf = std::numeric_limits<double>::infinity();
  Vec prev = Vec::Constant(nb, inf), cur = Vec::Constant(nb, inf);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < nb; ++j) {
      const double d = (a.row(i) - b.row(j)).norm();
      double best;
      if (i == 0 && j == 0)
        best = 0.0;
      else if (i == 0)
        best = cur(j - 1);
      else if (j == 0)
        best = prev(j);
      else
        best = std::min({prev(j), cur(j - 1), prev(j - 1)});
      cur(j) = d + best;
    }
    std::swap(prev, cur);
    cur.setConstant(inf);
  }
  return prev(nb - 1) / static_cast<double>(na);
}

double directed_hausdorff(const Mat& a, const Mat& b) {
  require(a.rows() > 0 && b.rows() > 0, "directed_hausdorff: empty set");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

namespace {

// Least-squares rigid alignment of `src` onto `dst` (row-paired), rotation in
// SO(n) with the reflection case corrected by flipping the smallest singular
// direction.
void kabsch(const Mat& src, const Mat& dst, Mat& rot, Vec& trans) {
  const Vec mu_s = src.colwise().mean();
  const Vec mu_d = dst.colwise().mean();
  const Mat cs = src.rowwise() - mu_s.transpose();
  const Mat cd = dst.rowwise() - mu_d.transpose();
  const Mat h = cs.transpose() * cd;
  Eigen::JacobiSVD<Mat> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat d = Mat::Identity(h.rows(), h.cols());
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0)
    d(d.rows() - 1, d.cols() - 1) = -1.0;
  rot = svd.matrixV() * d * svd.matrixU().transpose();
  trans = mu_d - rot * mu_s;
}

IcpResult icp_single(const Mat& actual, const Mat& desired, const Mat& rot0, const Vec& trans0,
                     const IcpOptions& opts, int max_iters) {
  Mat rot = rot0;
  Vec trans = trans0;
  double prev_med = std::numeric_limits<double>::infinity();
  IcpResult best;
  best.med = prev_med;
  const Vec actual_sq = actual.rowwise().squaredNorm();
  std::vector<Eigen::Index> prev_corr;
  for (int it = 0; it < max_iters; ++it) {
    // correspondence: for each actual point, the nearest transformed desired
    Mat moved = (desired * rot.transpose()).rowwise() + trans.transpose();
    // squared-distance matrix via the Gram expansion (selection only)
    Mat d2 = (-2.0 * actual * moved.transpose()).colwise() + actual_sq;
    d2.rowwise() += moved.rowwise().squaredNorm().transpose();
    std::vector<Eigen::Index> corr(static_cast<std::size_t>(actual.rows()));
    double med = 0.0;
    for (Eigen::Index i = 0; i < actual.rows(); ++i) {
      Eigen::Index bj = 0;
      d2.row(i).minCoeff(&bj);
      corr[static_cast<std::size_t>(i)] = bj;
      // exact distance: the Gram expansion cancels catastrophically near zero
      med += (actual.row(i) - moved.row(bj)).norm();
    }
    med /= static_cast<double>(actual.rows());
    if (med < best.med) {
      best.med = med;
      best.rotation = rot;
      best.translation = trans;
    }
    const bool fixpoint = (corr == prev_corr);
    if (fixpoint || std::abs(prev_med - med) < opts.rel_tolerance * std::max(prev_med, 1e-12)) {
      best.converged = true;
      break;
    }
    prev_med = med;
    prev_corr = std::move(corr);

    Mat matched(actual.rows(), actual.cols());
    for (Eigen::Index i = 0; i < actual.rows(); ++i)
      matched.row(i) = desired.row(prev_corr[static_cast<std::size_t>(i)]);
    kabsch(matched, actual, rot, trans);
  }
  return best;
}

}  // namespace

IcpResult icp_align(const Mat& actual, const Mat& desired, const IcpOptions& opts) {
  require(actual.cols() == desired.cols(), "icp: dimension mismatch");
  require(actual.rows() >= actual.cols() && desired.rows() >= desired.cols(),
          "icp: need at least n points");
  const Eigen::Index n = actual.cols();

  // identity start plus a centroid-aligned start; large pure translations are
  // unrecoverable from (I, 0) alone
  struct Start {
    Mat rot;
    Vec trans;
  };
  std::vector<Start> starts;
  starts.push_back({Mat::Identity(n, n), Vec::Zero(n)});
  starts.push_back(
      {Mat::Identity(n, n), (actual.colwise().mean() - desired.colwise().mean()).transpose()});
  if (n == 2) {
    for (int k = 1; k <= opts.restarts_2d; ++k) {
      const double th = 2.0 * kPi * k / (opts.restarts_2d + 1);
      Mat r0(2, 2);
      r0 << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
      const Vec shift =
          (actual.colwise().mean().transpose() - r0 * desired.colwise().mean().transpose());
      starts.push_back({r0, shift});
    }
  }

  // short exploratory runs first, then finish the most promising transforms
  const int probe_iters = std::min(opts.max_iterations, 15);
  std::vector<IcpResult> probes;
  probes.reserve(starts.size());
  for (const Start& s : starts)
    probes.push_back(icp_single(actual, desired, s.rot, s.trans, opts, probe_iters));

  std::vector<std::size_t> order(probes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probes[a].med < probes[b].med; });

  IcpResult best;
  best.med = std::numeric_limits<double>::infinity();
  const std::size_t finishers = std::min<std::size_t>(3, order.size());
  for (std::size_t k = 0; k < finishers; ++k) {
    const IcpResult& p = probes[order[k]];
    IcpResult cand = p.converged ? p
                                 : icp_single(actual, desired, p.rotation, p.translation, opts,
                                              opts.max_iterations);
    if (cand.med < best.med) best = cand;
  }
  return best;
}

double icp_med(const Mat& actual, const Mat& desired, const IcpOptions& opts) {
  return icp_align(actual, desired, opts).med;
}

ConvergenceResult convergence_protocol(const VelocityField& field, const OracleDataset& demo,
                                       ConvergenceMode mode, std::uint64_t seed,
                                       const ConvergenceOptions& opts) {
  require(demo.has_periodic(), "convergence_protocol: demo has no periodic subset");
  const Eigen::Index n_demo = demo.size();
  const Eigen::Index n = demo.dim();
  const double dt = (demo.timestamps(n_demo - 1) - demo.timestamps(0)) /
                    static_cast<double>(n_demo - 1);
  const double sigma = (mode == ConvergenceMode::kLocal) ? opts.sigma_local : opts.sigma_global;
  const double div_radius = opts.divergence_factor * demo.workspace_diameter() +
                            demo.positions.rowwise().norm().maxCoeff();

  auto rng = make_rng(seed, mode == ConvergenceMode::kLocal ? 1 : 2);
  std::uniform_int_distribution<Eigen::Index> pick(0, n_demo - 1);
  std::normal_distribution<double> offset(0.0, sigma);

  ConvergenceResult res;
  res.total = opts.n_inits;
  double acc_h = 0.0, acc_m = 0.0;
  int used = 0;
  for (int i = 0; i < opts.n_inits; ++i) {
    Vec x0 = demo.positions.row(pick(rng)).transpose();
    for (Eigen::Index c = 0; c < n; ++c) x0(c) += offset(rng);

    const Eigen::Index steps = (mode == ConvergenceMode::kLocal) ? n_demo : 2 * n_demo;
    Trajectory tr = rollout(field, x0, dt, steps, div_radius);
    if (tr.diverged) {
      ++res.excluded;
      continue;
    }
    Mat shape = (mode == ConvergenceMode::kLocal) ? tr.states : tr.states.bottomRows(n_demo);
    acc_h += directed_hausdorff(shape, demo.positions);
    acc_m += icp_med(shape, demo.positions);
    ++used;
  }
  if (used > 0) {
    res.hausdorff = acc_h / used;
    res.icp_med = acc_m / used;
  } else {
    res.hausdorff = std::numeric_limits<double>::infinity();
    res.icp_med = std::numeric_limits<double>::infinity();
  }
  return res;
}

bool EvalReport::flagged_divergent() const {
  return local_excluded > 0 || global_excluded > 0 || !std::isfinite(traj_rmse) ||
         !std::isfinite(global_hausdorff_mean);
}

EvalReport evaluate(const Policy& pol, const OracleDataset& demo,
                    const std::vector<std::uint64_t>& seeds, double z) {
  require(!seeds.empty(), "evaluate: need at least one seed");
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport rep;
  rep.seeds = seeds;

  const Eigen::Index n_demo = demo.size();
  const double dt =
      (demo.timestamps(n_demo - 1) - demo.timestamps(0)) / static_cast<double>(n_demo - 1);
  const double div_radius =
      10.0 * demo.workspace_diameter() + demo.positions.rowwise().norm().maxCoeff();

  VelocityField field = [&](const Vec& x) { return pol.velocity(x, z); };

  Trajectory tr = rollout(field, demo.positions.row(0).transpose(), dt, n_demo, div_radius);
  if (tr.diverged) {
    rep.traj_rmse = rep.norm_dtw = rep.vel_rmse = std::numeric_limits<double>::infinity();
  } else {
    rep.traj_rmse = traj_rmse(tr.states, demo.positions);
    rep.norm_dtw = dtw_normalized(tr.states, demo.positions);
    rep.vel_rmse = vel_rmse(tr.velocities, demo.velocities);
  }

  auto aggregate = [&](ConvergenceMode mode, double& mean_h, double& std_h, double& mean_m,
                       double& std_m, int& excluded) {
    std::vector<double> hs, ms;
    for (std::uint64_t s : seeds) {
      ConvergenceResult r = convergence_protocol(field, demo, mode, s);
      hs.push_back(r.hausdorff);
      ms.push_back(r.icp_med);
      excluded += r.excluded;
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      sd = 0.0;
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(v.size()));
    };
    stats(hs, mean_h, std_h);
    stats(ms, mean_m, std_m);
  };

  aggregate(ConvergenceMode::kLocal, rep.local_hausdorff_mean, rep.local_hausdorff_std,
            rep.local_icp_med_mean, rep.local_icp_med_std, rep.local_excluded);
  aggregate(ConvergenceMode::kGlobal, rep.global_hausdorff_mean, rep.global_hausdorff_std,
            rep.global_icp_med_mean, rep.global_icp_med_std, rep.global_excluded);

  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::string eval_report_table(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "traj_rmse, norm_dtw, vel_rmse, local_hausdorff, local_icp_med, "
        "global_hausdorff, global_icp_med, local_excluded, global_excluded\n";
  os << r.traj_rmse << ", " << r.norm_dtw << ", " << r.vel_rmse << ", "
     << r.local_hausdorff_mean << ", " << r.local_icp_med_mean << ", "
     << r.global_hausdorff_mean << ", " << r.global_icp_med_mean << ", " << r.local_excluded
     << ", " << r.global_excluded << "\n";
  os << 0.0 << ", " << 0.0 << ", " << 0.0 << ", " << r.local_hausdorff_std << ", "
     << r.local_icp_med_std << ", " << r.global_hausdorff_std << ", " << r.global_icp_med_std
     << ", 0, 0\n";
  return os.str();
}

}  // namespace osmp
