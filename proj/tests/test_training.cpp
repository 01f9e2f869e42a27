#include <doctest.h>

#include <random>

#include "osmp/eval.hpp"
#include "osmp/training.hpp"

using namespace osmp;

namespace {

OracleDataset ellipse_demo(Eigen::Index samples = 200, double period = 10.0) {
  OracleParams prm;
  prm.a = 2.0;
  prm.b = 1.0;
  prm.samples = samples;
  prm.period = period;
  return normalize(synth_oracle(OracleKind::kEllipse, prm));
}

Policy identity_policy(Eigen::Index n, Eigen::Index blocks, double omega, double radius = 0.5,
                       std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.n = n;
  cfg.n_blocks = blocks;
  HopfParams h;
  h.radius = radius;
  h.omega = omega;
  return Policy(Encoder::init_identity(cfg, seed), h);
}

void randomize(Policy& pol, std::uint64_t seed, double std_dev = 0.05) {
  auto rng = make_rng(seed, 5);
  std::normal_distribution<double> g(0.0, std_dev);
  for (CouplingBlock& b : pol.mutable_encoder().mutable_params().blocks) {
    for (Eigen::Index i = 0; i < b.v_s.size(); ++i) b.v_s(i) = g(rng);
    for (Eigen::Index i = 0; i < b.v_t.size(); ++i) b.v_t(i) = g(rng);
  }
}

}  // namespace

TEST_CASE("velocity imitation loss: perfect field gives zero; smooth-l1 values") {
  OracleDataset ds = ellipse_demo();
  // synthetic policy whose outputs equal the demo velocities is not available
  // directly; instead verify both smooth-l1 branches on crafted mini datasets
  OracleDataset tiny;
  tiny.timestamps = Vec::LinSpaced(2, 0.0, 1.0);
  tiny.positions = Mat::Zero(2, 2);
  tiny.positions << 0.6, 0.0, 0.0, 0.6;
  Policy pol = identity_policy(2, 1, 1.0, 0.6);

  // at (0.6, 0): field = (0, 0.6); craft targets offset by 0.5 and 2 in one coord
  tiny.velocities = Mat::Zero(2, 2);
  tiny.velocities(0, 0) = 0.0;
  tiny.velocities(0, 1) = 0.6 - 0.5;
  tiny.velocities(1, 0) = -0.6 - 2.0;
  tiny.velocities(1, 1) = 0.0;
  tiny.periodic_end = 2;
  tiny.period = 1.0;

  const double expected = ((0.5 * 0.5 / 2.0) + (2.0 - 0.5)) / 2.0;
  CHECK(loss_velocity_imitation(pol, tiny) == doctest::Approx(expected).epsilon(1e-5));

  // exact zero when targets equal the policy field
  tiny.velocities.row(0) = pol.velocity(tiny.positions.row(0).transpose()).transpose();
  tiny.velocities.row(1) = pol.velocity(tiny.positions.row(1).transpose()).transpose();
  CHECK(loss_velocity_imitation(pol, tiny) == doctest::Approx(0.0));
}

TEST_CASE("limit cycle matching loss closed forms") {
  Policy pol = identity_policy(2, 1, 1.0, 1.0);
  OracleDataset ds;
  ds.timestamps = Vec::LinSpaced(2, 0.0, 1.0);
  ds.positions = Mat(2, 2);
  ds.positions << 1.0, 0.0, 0.0, 1.0;  // both on the unit cycle
  ds.velocities = Mat::Zero(2, 2);
  ds.periodic_end = 2;
  ds.period = 1.0;
  CHECK(loss_limit_cycle_matching(pol, ds) == doctest::Approx(0.0));

  ds.positions << 0.5, 0.0, 0.5, 0.0;  // radius 0.5
  CHECK(loss_limit_cycle_matching(pol, ds) == doctest::Approx(0.25));

  Policy pol3 = identity_policy(3, 2, 1.0, 1.0);
  OracleDataset ds3;
  ds3.timestamps = Vec::LinSpaced(2, 0.0, 1.0);
  ds3.positions = Mat(2, 3);
  ds3.positions << 1.0, 0.0, 0.3, 1.0, 0.0, 0.3;
  ds3.velocities = Mat::Zero(2, 3);
  ds3.periodic_end = 2;
  ds3.period = 1.0;
  CHECK(loss_limit_cycle_matching(pol3, ds3) == doctest::Approx(0.09));
}

TEST_CASE("time guidance loss: zero in margin, hinge value") {
  Policy pol = identity_policy(2, 1, 1.0, 1.0);
  OracleDataset ds;
  ds.timestamps = Vec::Zero(1);
  ds.positions = Mat(1, 2);
  ds.positions << 1.0, 0.0;  // encoded angle 0
  ds.velocities = Mat::Zero(1, 2);
  ds.periodic_end = 1;
  ds.period = 4.0;

  // phi_d = phi0 at t = 0; wrapped error pi/2 when phi0 = pi/2
  const double want = std::pow(kPi / 2.0 - 0.1, 2.0);
  CHECK(loss_time_guidance(pol, ds, kPi / 2.0, 0.1) == doctest::Approx(want).epsilon(1e-9));
  CHECK(loss_time_guidance(pol, ds, 0.05, 0.1) == doctest::Approx(0.0));
  CHECK(loss_time_guidance(pol, ds, 0.0, 0.1) == doctest::Approx(0.0));
}

TEST_CASE("encoder regularization: identity zero, translation norm, per-epoch seeds") {
  Vec lo = Vec::Constant(2, -0.5), hi = Vec::Constant(2, 0.5);
  Policy pol = identity_policy(2, 1, 1.0);
  CHECK(loss_encoder_reg(pol, lo, hi, 64, 3) == doctest::Approx(0.0));

  // constant-translation encoder: s = 0, t = c
  Policy shift = identity_policy(2, 1, 1.0);
  CouplingBlock& b = shift.mutable_encoder().mutable_params().blocks[0];
  b.w_t.setZero();
  b.phase_t.setZero();
  const double denom =
      double(shift.encoder().config().rffn_hidden) *
      rffn_feature_scale(shift.encoder().config().rffn_hidden);
  b.v_t.setConstant(0.7 / denom);
  CHECK(loss_encoder_reg(shift, lo, hi, 64, 3) == doctest::Approx(0.7).epsilon(1e-9));

  // different seeds change the sample set for a non-identity encoder
  Policy rough = identity_policy(2, 4, 1.0);
  randomize(rough, 9);
  const double l1 = loss_encoder_reg(rough, lo, hi, 64, 1);
  const double l2 = loss_encoder_reg(rough, lo, hi, 64, 2);
  CHECK(l1 != l2);
}

TEST_CASE("velocity regularization: below margin zero, hinge value, default margin") {
  Vec lo = Vec::Constant(2, -0.4), hi = Vec::Constant(2, 0.4);
  Policy pol = identity_policy(2, 1, 1.0, 0.5);
  // speeds in the box are bounded well below 10
  CHECK(loss_velocity_reg(pol, lo, hi, 10.0, 128, 5) == doctest::Approx(0.0));
  // tiny margin: hinge is positive
  CHECK(loss_velocity_reg(pol, lo, hi, 1e-6, 128, 5) > 0.0);
}

TEST_CASE("hausdorff latent loss: on-cycle encodings give zero; off-cycle value") {
  Policy pol = identity_policy(2, 1, 1.0, 1.0);
  const Eigen::Index m = 64;
  OracleDataset ds;
  ds.timestamps = Vec::LinSpaced(m, 0.0, 1.0);
  ds.positions = Mat(m, 2);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double phi = -kPi + 2.0 * kPi * k / m;
    ds.positions(k, 0) = std::cos(phi);
    ds.positions(k, 1) = std::sin(phi);
  }
  ds.velocities = Mat::Zero(m, 2);
  ds.periodic_end = m;
  ds.period = 1.0;
  CHECK(loss_hausdorff_latent(pol, ds) == doctest::Approx(0.0).epsilon(1e-12));

  // all encodings collapse to radius 2: demo->cycle gives 1, cycle->demo 3;
  // the symmetric value is the larger one
  OracleDataset far = ds;
  far.positions.setZero();
  far.positions.col(0).setConstant(2.0);
  CHECK(loss_hausdorff_latent(pol, far) == doctest::Approx(3.0));
  // permutation invariance
  OracleDataset shuffled = ds;
  shuffled.positions = ds.positions.colwise().reverse();
  CHECK(loss_hausdorff_latent(pol, shuffled) ==
        doctest::Approx(loss_hausdorff_latent(pol, ds)).epsilon(1e-12));
}

TEST_CASE("smooth conditioning interpolation: anchor hit and z-independence give zero") {
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 2;
  cfg.conditioned = true;
  HopfParams h;
  h.radius = 0.5;
  Policy pol(Encoder::init_identity(cfg, 4), h);

  OracleDataset ds;
  const Eigen::Index m = 10;
  ds.timestamps = Vec::LinSpaced(m, 0.0, 1.0);
  ds.positions = Mat::Random(m, 2) * 0.3;
  ds.velocities = Mat::Zero(m, 2);
  ds.conditioning = Vec(m);
  for (Eigen::Index k = 0; k < m; ++k) (*ds.conditioning)(k) = (k < m / 2) ? 0.0 : 1.0;
  ds.periodic_end = m;
  ds.period = 1.0;

  // identity encoder ignores z entirely -> all three decodes coincide
  CHECK(loss_smooth_conditioning_interpolation(pol, ds, 64, 11) == doctest::Approx(0.0));

  // random conditioned encoder: loss is positive and seed-dependent
  randomize(pol, 31, 0.1);
  const double a = loss_smooth_conditioning_interpolation(pol, ds, 64, 1);
  const double b = loss_smooth_conditioning_interpolation(pol, ds, 64, 2);
  CHECK(a > 0.0);
  CHECK(a != b);

  OracleDataset mono = ds;
  mono.conditioning = Vec::Zero(m);
  CHECK_THROWS(loss_smooth_conditioning_interpolation(pol, mono, 16, 1));
}

TEST_CASE("sci loss is exactly zero for a decoder linear in z") {
  // the formula itself: with decode(y, z) = y + z c the interpolation target
  // coincides with the decode for every z in [floor, ceil]
  Vec c(2);
  c << 0.3, -0.1;
  auto linear_decode = [&](const Mat& y, const Vec& z) {
    Mat out = y;
    for (Eigen::Index i = 0; i < y.rows(); ++i) out.row(i) += z(i) * c.transpose();
    return out;
  };
  auto rng = make_rng(17);
  std::uniform_real_distribution<double> uz(0.0, 1.0), uphi(-kPi, kPi);
  double acc = 0.0;
  for (int j = 0; j < 100; ++j) {
    const double zt = uz(rng), phi = uphi(rng);
    Mat y(1, 2);
    y << 0.5 * std::cos(phi), 0.5 * std::sin(phi);
    Vec zf = Vec::Zero(1), zc = Vec::Ones(1), ztv = Vec::Constant(1, zt);
    Mat xt = linear_decode(y, ztv), xf = linear_decode(y, zf), xc = linear_decode(y, zc);
    Mat target = xf + zt * (xc - xf);
    acc += (xt - target).squaredNorm();
  }
  CHECK(acc == doctest::Approx(0.0));
}

TEST_CASE("total loss: zero weights, single-term recovery, breakdown bookkeeping") {
  OracleDataset ds = ellipse_demo(100);
  Policy pol = identity_policy(2, 2, 2.0 * kPi / 10.0);
  randomize(pol, 3);
  TrainConfig cfg;

  LossWeights none;
  none.vi = 0.0;
  CHECK(total_loss(pol, ds, none, cfg, 0).total == 0.0);

  LossWeights vi_only;
  CHECK(total_loss(pol, ds, vi_only, cfg, 0).total ==
        doctest::Approx(loss_velocity_imitation(pol, ds)).epsilon(1e-12));

  LossWeights multi;
  multi.vi = 0.7;
  multi.lcm = 2.0;
  multi.er = 0.3;
  LossBreakdown bd = total_loss(pol, ds, multi, cfg, 5);
  const double recomposed = 0.7 * bd.terms.at("vi") + 2.0 * bd.terms.at("lcm") +
                            0.3 * bd.terms.at("er");
  CHECK(bd.total == doctest::Approx(recomposed).epsilon(1e-12));
}

TEST_CASE("gradient check: analytic gradients match finite differences") {
  OracleDataset ds = ellipse_demo(60);
  TrainConfig cfg;
  cfg.reg_samples = 32;

  // every loss-term combination on a 2-block encoder
  Policy pol = identity_policy(2, 2, 2.0 * kPi / 10.0);
  randomize(pol, 13);
  LossWeights all;
  all.vi = 1.0;
  all.lcm = 0.5;
  all.tgd = 0.5;
  all.er = 0.2;
  all.vr = 0.2;
  all.m_vr = 0.05;  // forces an active hinge
  CHECK(gradient_check(pol, ds, all, cfg, 1) < 1e-3);

  LossWeights haus_only;
  haus_only.vi = 0.0;
  haus_only.haus = 1.0;
  CHECK(gradient_check(pol, ds, haus_only, cfg, 2) < 1e-3);

  // conditioned encoder with the interpolation loss
  EncoderConfig ccfg;
  ccfg.n = 2;
  ccfg.n_blocks = 2;
  ccfg.conditioned = true;
  HopfParams h;
  h.radius = 0.5;
  h.omega = 1.0;
  Policy cpol(Encoder::init_identity(ccfg, 8), h);
  randomize(cpol, 21);
  OracleDataset cds = ds;
  cds.conditioning = Vec(ds.size());
  for (Eigen::Index k = 0; k < ds.size(); ++k)
    (*cds.conditioning)(k) = (k % 2 == 0) ? 0.0 : 1.0;
  LossWeights sci;
  sci.vi = 1.0;
  sci.sci = 1.0;
  sci.n_sci = 16;
  CHECK(gradient_check(cpol, cds, sci, cfg, 3) < 1e-3);

  // learned omega and speed-scale heads
  Policy lpol = identity_policy(2, 2, 1.0, 0.5, 31);
  auto rng = make_rng(77);
  lpol.mutable_hopf().omega_mode = OmegaMode::kLearnedNet;
  lpol.mutable_hopf().omega_net = RffnScalarNet::init(2, 32, 0.45, 1e-6, rng);
  lpol.speed_scale_mode = SpeedScaleMode::kLearnedNet;
  lpol.speed_net = RffnScalarNet::init(2, 32, 0.45, 0.01, rng);
  randomize(lpol, 41);
  std::normal_distribution<double> g(0.0, 0.1);
  for (Eigen::Index i = 0; i < lpol.mutable_hopf().omega_net->v_out.size(); ++i)
    lpol.mutable_hopf().omega_net->v_out(i) = g(rng);
  for (Eigen::Index i = 0; i < lpol.speed_net->v_out.size(); ++i)
    lpol.speed_net->v_out(i) = g(rng);
  LossWeights vi_only;
  CHECK(gradient_check(lpol, ds, vi_only, cfg, 4) < 1e-3);

  // identity init: gradient check is still finite and seed-deterministic
  Policy idp = identity_policy(2, 2, 1.0);
  LossWeights er_only;
  er_only.vi = 0.0;
  er_only.er = 1.0;
  const double r1 = gradient_check(idp, ds, er_only, cfg, 5);
  const double r2 = gradient_check(idp, ds, er_only, cfg, 5);
  CHECK(r1 == r2);
}

TEST_CASE("taped velocity agrees with the inference-path policy velocity") {
  OracleDataset ds = ellipse_demo(50);
  Policy pol = identity_policy(2, 4, 2.0 * kPi / 10.0);
  randomize(pol, 19);
  // the vi loss at beta -> large is 0.5 * mean squared error / beta; instead
  // compare via a probe: loss with targets equal to policy velocities is 0
  OracleDataset probe = ds;
  for (Eigen::Index k = 0; k < ds.size(); ++k)
    probe.velocities.row(k) = pol.velocity(ds.positions.row(k).transpose()).transpose();
  CHECK(loss_velocity_imitation(pol, probe) < 1e-14);
}

TEST_CASE("scheduler: continuous junctions, warmup ramp, cosine to zero") {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr = 0.02;
  cfg.warmup_epochs = 10;
  cfg.plateau_epochs = 15;
  CHECK(lr_schedule(cfg, 0) == doctest::Approx(0.002));
  CHECK(lr_schedule(cfg, 9) == doctest::Approx(0.02));    // ramp reaches peak
  CHECK(lr_schedule(cfg, 10) == doctest::Approx(0.02));   // plateau
  CHECK(lr_schedule(cfg, 24) == doctest::Approx(0.02));   // plateau end
  CHECK(lr_schedule(cfg, 25) == doctest::Approx(0.02));   // cosine start = peak
  CHECK(lr_schedule(cfg, 99) == doctest::Approx(0.0));    // cosine reaches zero
  for (int e = 1; e < 100; ++e)
    CHECK(lr_schedule(cfg, e) <= lr_schedule(cfg, e - 1) + 1e-12 + (e < 10 ? 1.0 : 0.0));
}

TEST_CASE("training: zero epochs returns identity; same seed gives identical checksums") {
  OracleDataset ds = ellipse_demo(100);
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 2;
  HopfParams h;
  h.radius = 0.5;
  h.omega = 2.0 * kPi / 10.0;
  LossWeights w;
  TrainConfig tc;
  tc.epochs = 0;
  tc.warmup_epochs = 0;
  Policy pol = train(ds, cfg, h, w, tc);
  Vec x(2);
  x << 0.2, -0.1;
  CHECK((pol.encoder().encode(x) - x).norm() == 0.0);

  tc.epochs = 30;
  tc.warmup_epochs = 5;
  tc.seed = 123;
  TrainReport ra, rb;
  train(ds, cfg, h, w, tc, &ra);
  train(ds, cfg, h, w, tc, &rb);
  CHECK(ra.param_checksum == rb.param_checksum);
  CHECK(ra.history.rows() == 30);

  // resume continues the epoch counter
  tc.epochs = 10;
  TrainReport r1;
  Policy p1 = train(ds, cfg, h, w, tc, &r1);
  TrainConfig tc2 = tc;
  tc2.start_epoch = 10;
  tc2.epochs = 20;
  TrainReport r2;
  train(ds, cfg, h, w, tc2, &r2, &p1);
  CHECK(r2.history(0, 0) == 10.0);
}

TEST_CASE("ellipse desk training reaches the reproduction target") {
  OracleDataset ds = ellipse_demo(300, 10.0);
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 6;
  HopfParams h;
  h.radius = 0.5;
  h.omega = 2.0 * kPi / 10.0;
  LossWeights w;  // vi only
  TrainConfig tc;
  tc.epochs = 900;
  tc.lr = 2e-2;
  tc.seed = 0;
  Policy pol = train(ds, cfg, h, w, tc);

  const double dt = (ds.timestamps(ds.size() - 1) - ds.timestamps(0)) / (ds.size() - 1);
  Trajectory tr = rollout(pol, ds.positions.row(0).transpose(), 0.0, dt, ds.size());
  CHECK(!tr.diverged);
  CHECK(traj_rmse(tr.states, ds.positions) <= 0.005);
}

TEST_CASE("monotone trend: 100-epoch moving average non-increasing after warmup") {
  OracleDataset ds = ellipse_demo(150, 10.0);
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 4;
  HopfParams h;
  h.radius = 0.5;
  h.omega = 2.0 * kPi / 10.0;
  LossWeights w;  // the full loss on an unconditioned demo
  w.vi = 1.0;
  w.lcm = 1.0;
  w.tgd = 1.0;
  w.er = 0.1;
  w.vr = 0.1;
  TrainConfig tc;
  tc.epochs = 500;
  tc.lr = 1e-2;
  tc.seed = 1;
  tc.reg_samples = 64;
  TrainReport rep;
  train(ds, cfg, h, w, tc, &rep);

  const Eigen::Index total_col = 2;
  auto ma = [&](int e) {
    double acc = 0.0;
    for (int k = e - 99; k <= e; ++k) acc += rep.history(k, total_col);
    return acc / 100.0;
  };
  // slack for the per-epoch regularization resampling: the moving average of
  // 100 draws wobbles by sigma/10 even with frozen parameters
  double tail_mean = 0.0, tail_var = 0.0;
  for (int k = tc.epochs - 100; k < tc.epochs; ++k) tail_mean += rep.history(k, total_col);
  tail_mean /= 100.0;
  for (int k = tc.epochs - 100; k < tc.epochs; ++k)
    tail_var += std::pow(rep.history(k, total_col) - tail_mean, 2.0);
  const double slack = 3.0 * std::sqrt(tail_var / 100.0) / 10.0 + 1e-12;
  for (int e = tc.warmup_epochs + 100 + 1; e < tc.epochs; ++e)
    CHECK(ma(e) <= ma(e - 1) + slack);
}
