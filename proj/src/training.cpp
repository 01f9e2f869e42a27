#include "osmp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "osmp/ad.hpp"

namespace osmp {

void LossWeights::validate() const {
  require(vi >= 0 && lcm >= 0 && tgd >= 0 && er >= 0 && vr >= 0 && sci >= 0 && haus >= 0,
          "LossWeights: weights must be nonnegative");
  require(beta_l1 > 0.0, "LossWeights: beta_l1 must be positive");
  require(m_tgd >= 0.0, "LossWeights: m_tgd must be nonnegative");
  require(n_sci >= 1, "LossWeights: n_sci must be >= 1");
}

void TrainConfig::validate() const {
  require(epochs >= 0, "TrainConfig: epochs must be nonnegative");
  require(lr > 0.0, "TrainConfig: lr must be positive");
  require(warmup_epochs >= 0, "TrainConfig: warmup must be nonnegative");
  require(epochs == 0 || warmup_epochs < epochs, "TrainConfig: warmup must be shorter than epochs");
  require(reg_samples >= 1, "TrainConfig: reg_samples must be >= 1");
  require(scalar_net_hidden >= 1, "TrainConfig: scalar_net_hidden must be >= 1");
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  const int warmup = cfg.warmup_epochs;
  const int plateau = cfg.plateau_epochs >= 0 ? cfg.plateau_epochs : cfg.epochs / 10;
  if (epoch < warmup) return cfg.lr * static_cast<double>(epoch + 1) / warmup;
  if (epoch < warmup + plateau) return cfg.lr;
  const int cosine_span = cfg.epochs - warmup - plateau;
  if (cosine_span <= 1) return cfg.lr;
  const double frac = static_cast<double>(epoch - warmup - plateau) / (cosine_span - 1);
  return cfg.lr * 0.5 * (1.0 + std::cos(kPi * frac));
}

// ---- trained-parameter registry ----

namespace {

struct ParamRef {
  double* data;
  Eigen::Index rows, cols;
  Eigen::Map<Mat> map() const { return Eigen::Map<Mat>(data, rows, cols); }
};

std::vector<ParamRef> trained_params(Policy& pol) {
  std::vector<ParamRef> out;
  EncoderParams& ep = pol.mutable_encoder().mutable_params();
  for (CouplingBlock& b : ep.blocks) {
    out.push_back({b.v_s.data(), b.v_s.rows(), b.v_s.cols()});
    out.push_back({b.v_t.data(), b.v_t.rows(), b.v_t.cols()});
  }
  if (ep.cfg.conditioned) {
    ConditioningEmbedding& e = ep.embedding;
    out.push_back({e.w1.data(), e.w1.rows(), e.w1.cols()});
    out.push_back({e.b1.data(), e.b1.size(), 1});
    out.push_back({e.w2.data(), e.w2.rows(), e.w2.cols()});
    out.push_back({e.b2.data(), e.b2.size(), 1});
  }
  if (pol.hopf().omega_mode == OmegaMode::kLearnedNet)
    out.push_back({pol.mutable_hopf().omega_net->v_out.data(),
                   pol.mutable_hopf().omega_net->v_out.size(), 1});
  if (pol.speed_scale_mode == SpeedScaleMode::kLearnedNet)
    out.push_back({pol.speed_net->v_out.data(), pol.speed_net->v_out.size(), 1});
  return out;
}

// ---- taped forward passes ----

struct TapedPolicy {
  const Policy* pol = nullptr;
  ad::Tape* tape = nullptr;
  std::vector<ad::Var> v_s, v_t;           // per block
  ad::Var e_w1, e_b1, e_w2, e_b2;          // conditioning embedding
  ad::Var om_v, sp_v;                      // positive scalar nets
  std::vector<ad::Var> all_vars;           // same order as trained_params()
};

TapedPolicy bind_params(ad::Tape& tape, const Policy& pol) {
  TapedPolicy tp;
  tp.pol = &pol;
  tp.tape = &tape;
  const EncoderParams& ep = pol.encoder().params();
  for (const CouplingBlock& b : ep.blocks) {
    tp.v_s.push_back(tape.param(b.v_s));
    tp.v_t.push_back(tape.param(b.v_t));
    tp.all_vars.push_back(tp.v_s.back());
    tp.all_vars.push_back(tp.v_t.back());
  }
  if (ep.cfg.conditioned) {
    const ConditioningEmbedding& e = ep.embedding;
    tp.e_w1 = tape.param(e.w1);
    tp.e_b1 = tape.param(e.b1);
    tp.e_w2 = tape.param(e.w2);
    tp.e_b2 = tape.param(e.b2);
    tp.all_vars.insert(tp.all_vars.end(), {tp.e_w1, tp.e_b1, tp.e_w2, tp.e_b2});
  }
  if (pol.hopf().omega_mode == OmegaMode::kLearnedNet) {
    tp.om_v = tape.param(pol.hopf().omega_net->v_out);
    tp.all_vars.push_back(tp.om_v);
  }
  if (pol.speed_scale_mode == SpeedScaleMode::kLearnedNet) {
    tp.sp_v = tape.param(pol.speed_net->v_out);
    tp.all_vars.push_back(tp.sp_v);
  }
  return tp;
}

/// z embedding over a batch: N x n_e.
ad::Var taped_embed(TapedPolicy& tp, const Vec& zvals) {
  ad::Tape& t = *tp.tape;
  const ConditioningEmbedding& e = tp.pol->encoder().params().embedding;
  ad::Var zc = t.constant(zvals);
  ad::Var bc = t.constant(e.freq);  // (2 n_e) x 1
  ad::Var proj = ad::matmul_t(zc, bc);  // N x 2 n_e
  ad::Var g = ad::hcat(ad::sin_(proj), ad::cos_(proj));
  ad::Var h1 = ad::softplus_(
      ad::add_rowvec(ad::matmul_t(g, tp.e_w1), ad::matmul_t(t.constant(Mat::Ones(1, 1)),
                                                            tp.e_b1)));
  return ad::add_rowvec(ad::matmul_t(h1, tp.e_w2),
                        ad::matmul_t(t.constant(Mat::Ones(1, 1)), tp.e_b2));
}

struct EncodeResult {
  ad::Var y;
  std::vector<ad::Var> tangents;  // one N x n batch per input direction
};

/// Batched coupling-flow forward on the tape, optionally propagating the n
/// input-direction tangents needed for the Jacobian pullback.
EncodeResult taped_encode(TapedPolicy& tp, const Mat& x_batch, const Vec* zvals,
                          bool with_tangents) {
  ad::Tape& t = *tp.tape;
  const Encoder& enc = tp.pol->encoder();
  const EncoderConfig& cfg = enc.config();
  const Eigen::Index n = cfg.n, nn = x_batch.rows();
  const double fs = rffn_feature_scale(cfg.rffn_hidden);
  const double cb = cfg.clamp_bound;

  ad::Var cur = t.constant(x_batch);
  ad::Var zbar;
  if (cfg.conditioned) {
    Vec z = zvals ? *zvals : Vec::Zero(nn);
    zbar = taped_embed(tp, z);
  }

  EncodeResult res;
  if (with_tangents) {
    for (Eigen::Index k = 0; k < n; ++k) {
      Mat e = Mat::Zero(nn, n);
      e.col(k).setOnes();
      res.tangents.push_back(t.constant(e));
    }
  }

  for (Eigen::Index j = 1; j <= cfg.n_blocks; ++j) {
    const Encoder::Split sp = enc.split(j);
    const CouplingBlock& b = enc.params().blocks[static_cast<std::size_t>(j - 1)];
    const bool odd = (j % 2 == 1);

    ad::Var x_pass = ad::cols(cur, sp.pass_start, sp.pass_len);
    ad::Var x_act = ad::cols(cur, sp.act_start, sp.act_len);
    ad::Var u = cfg.conditioned ? ad::hcat(x_pass, zbar) : x_pass;

    ad::Var ws = t.constant(b.w_s), wt = t.constant(b.w_t);
    ad::Var pre_s = ad::add_rowvec(ad::matmul_t(u, ws), t.constant(b.phase_s.transpose()));
    ad::Var pre_t = ad::add_rowvec(ad::matmul_t(u, wt), t.constant(b.phase_t.transpose()));
    ad::Var s_raw = ad::scal(fs, ad::matmul_t(ad::cos_(pre_s), tp.v_s[(std::size_t)j - 1]));
    ad::Var s = ad::clamp_(s_raw, -cb, cb);
    ad::Var es = ad::exp_(s);
    ad::Var tt = ad::scal(fs, ad::matmul_t(ad::cos_(pre_t), tp.v_t[(std::size_t)j - 1]));
    ad::Var act_new = ad::add(ad::mul(x_act, es), tt);

    if (with_tangents) {
      Mat mask = ((s_raw.val().array().abs() < cb).cast<double>()).matrix();
      ad::Var mask_c = t.constant(mask);
      ad::Var msin_s = ad::neg(ad::sin_(pre_s));
      ad::Var msin_t = ad::neg(ad::sin_(pre_t));
      ad::Var ws_x = t.constant(Mat(b.w_s.leftCols(sp.pass_len)));
      ad::Var wt_x = t.constant(Mat(b.w_t.leftCols(sp.pass_len)));
      ad::Var xe = ad::mul(x_act, es);
      for (Eigen::Index k = 0; k < n; ++k) {
        ad::Var tg_pass = ad::cols(res.tangents[(std::size_t)k], sp.pass_start, sp.pass_len);
        ad::Var tg_act = ad::cols(res.tangents[(std::size_t)k], sp.act_start, sp.act_len);
        ad::Var dpre_s = ad::matmul_t(tg_pass, ws_x);
        ad::Var ds = ad::mul(mask_c, ad::scal(fs, ad::matmul_t(ad::mul(msin_s, dpre_s),
                                                               tp.v_s[(std::size_t)j - 1])));
        ad::Var dpre_t = ad::matmul_t(tg_pass, wt_x);
        ad::Var dt = ad::scal(fs, ad::matmul_t(ad::mul(msin_t, dpre_t),
                                               tp.v_t[(std::size_t)j - 1]));
        ad::Var dact = ad::add(ad::add(ad::mul(tg_act, es), ad::mul(xe, ds)), dt);
        res.tangents[(std::size_t)k] = odd ? ad::hcat(tg_pass, dact) : ad::hcat(dact, tg_pass);
      }
    }
    cur = odd ? ad::hcat(x_pass, act_new) : ad::hcat(act_new, x_pass);
  }
  res.y = cur;
  return res;
}

/// Batched closed-form inverse on the tape.
ad::Var taped_decode(TapedPolicy& tp, const Mat& y_batch, const Vec* zvals) {
  ad::Tape& t = *tp.tape;
  const Encoder& enc = tp.pol->encoder();
  const EncoderConfig& cfg = enc.config();
  const double fs = rffn_feature_scale(cfg.rffn_hidden);
  const double cb = cfg.clamp_bound;

  ad::Var cur = t.constant(y_batch);
  ad::Var zbar;
  if (cfg.conditioned) {
    Vec z = zvals ? *zvals : Vec::Zero(y_batch.rows());
    zbar = taped_embed(tp, z);
  }
  for (Eigen::Index j = cfg.n_blocks; j >= 1; --j) {
    const Encoder::Split sp = enc.split(j);
    const CouplingBlock& b = enc.params().blocks[static_cast<std::size_t>(j - 1)];
    const bool odd = (j % 2 == 1);
    ad::Var y_pass = ad::cols(cur, sp.pass_start, sp.pass_len);
    ad::Var y_act = ad::cols(cur, sp.act_start, sp.act_len);
    ad::Var u = cfg.conditioned ? ad::hcat(y_pass, zbar) : y_pass;
    ad::Var pre_s =
        ad::add_rowvec(ad::matmul_t(u, t.constant(b.w_s)), t.constant(b.phase_s.transpose()));
    ad::Var s = ad::clamp_(
        ad::scal(fs, ad::matmul_t(ad::cos_(pre_s), tp.v_s[(std::size_t)j - 1])), -cb, cb);
    ad::Var pre_t =
        ad::add_rowvec(ad::matmul_t(u, t.constant(b.w_t)), t.constant(b.phase_t.transpose()));
    ad::Var tt = ad::scal(fs, ad::matmul_t(ad::cos_(pre_t), tp.v_t[(std::size_t)j - 1]));
    ad::Var act_new = ad::mul(ad::sub(y_act, tt), ad::exp_(ad::neg(s)));
    cur = odd ? ad::hcat(y_pass, act_new) : ad::hcat(act_new, y_pass);
  }
  return cur;
}

/// Composed policy velocity on the tape (shaping defaults; exact Jacobian).
ad::Var taped_velocity(TapedPolicy& tp, const Mat& x_batch, const Vec* zvals,
                       ad::Var* y_out = nullptr) {
  ad::Tape& t = *tp.tape;
  const Policy& pol = *tp.pol;
  const HopfParams& h = pol.hopf();
  const Eigen::Index n = x_batch.cols(), nn = x_batch.rows();

  EncodeResult er = taped_encode(tp, x_batch, zvals, true);
  if (y_out) *y_out = er.y;
  ad::Var y1 = ad::cols(er.y, 0, 1), y2 = ad::cols(er.y, 1, 1);
  ad::Var r2 = ad::add(ad::mul(y1, y1), ad::mul(y2, y2));
  ad::Var shrink =
      ad::scal(h.alpha, ad::add_const(ad::scal(-1.0 / (h.radius * h.radius), r2), 1.0));

  ad::Var om;
  if (h.omega_mode == OmegaMode::kConstant) {
    om = t.constant(Mat::Constant(nn, 1, h.omega));
  } else {
    const RffnScalarNet& net = *h.omega_net;
    ad::Var r = ad::sqrt_(r2);
    ad::Var ybar = ad::div_bycol(ad::hcat(y1, y2), r);
    ad::Var pre = ad::add_rowvec(ad::matmul_t(ybar, t.constant(net.w)),
                                 t.constant(net.phase.transpose()));
    ad::Var raw = ad::scal(rffn_feature_scale(net.w.rows()),
                           ad::matmul(ad::cos_(pre), tp.om_v));
    om = ad::add_const(ad::exp_(raw), net.eps);
  }

  ad::Var f1 = ad::sub(ad::mul(shrink, y1), ad::mul(om, y2));
  ad::Var f2 = ad::add(ad::mul(om, y1), ad::mul(shrink, y2));
  ad::Var f = ad::hcat(f1, f2);
  if (n > 2) f = ad::hcat(f, ad::scal(-h.beta, ad::cols(er.y, 2, n - 2)));

  ad::Var xdot = ad::pullback_solve(er.tangents, f, pol.eps_inv);

  if (pol.speed_scale_mode == SpeedScaleMode::kLearnedNet) {
    const RffnScalarNet& net = *pol.speed_net;
    ad::Var xc = t.constant(x_batch);
    ad::Var pre = ad::add_rowvec(ad::matmul_t(xc, t.constant(net.w)),
                                 t.constant(net.phase.transpose()));
    ad::Var raw = ad::scal(rffn_feature_scale(net.w.rows()),
                           ad::matmul(ad::cos_(pre), tp.sp_v));
    xdot = ad::mul_bycol(xdot, ad::add_const(ad::exp_(raw), net.eps));
  }
  return xdot;
}

Vec dataset_z(const OracleDataset& ds) {
  return ds.conditioning ? *ds.conditioning : Vec::Zero(ds.size());
}

Mat sample_box(const Vec& lo, const Vec& hi, int n_samples, std::mt19937_64& rng) {
  Mat x(n_samples, lo.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(i, c) = lo(c) + (hi(c) - lo(c)) * u(rng);
  return x;
}

Mat cycle_points(double radius, Eigen::Index count, Eigen::Index n) {
  Mat c = Mat::Zero(count, n);
  for (Eigen::Index k = 0; k < count; ++k) {
    const double phi = -kPi + 2.0 * kPi * static_cast<double>(k) / static_cast<double>(count);
    c(k, 0) = radius * std::cos(phi);
    c(k, 1) = radius * std::sin(phi);
  }
  return c;
}

struct LossContext {
  const Policy* pol;
  const OracleDataset* ds;
  const LossWeights* weights;
  const TrainConfig* cfg;
  std::uint64_t seed;
};

/// Builds the enabled loss terms on one tape; returns the weighted total.
ad::Var build_total_loss(ad::Tape& tape, TapedPolicy& tp, const LossContext& ctx,
                         std::map<std::string, double>* breakdown) {
  const Policy& pol = *ctx.pol;
  const OracleDataset& ds = *ctx.ds;
  const LossWeights& w = *ctx.weights;
  const HopfParams& h = pol.hopf();
  const Eigen::Index n = ds.dim();
  const Vec z = dataset_z(ds);
  const bool conditioned = pol.encoder().config().conditioned;

  const bool need_y = w.lcm > 0 || w.tgd > 0 || w.haus > 0 || w.er > 0;
  const bool need_vel = w.vi > 0;

  ad::Var y_demo;
  std::vector<std::pair<std::string, ad::Var>> terms;

  if (need_vel) {
    ad::Var xdot = taped_velocity(tp, ds.positions, conditioned ? &z : nullptr, &y_demo);
    terms.emplace_back("vi", ad::smooth_l1_mean(xdot, ds.velocities, w.beta_l1));
  } else if (need_y && (w.lcm > 0 || w.tgd > 0 || w.haus > 0)) {
    y_demo = taped_encode(tp, ds.positions, conditioned ? &z : nullptr, false).y;
  }

  const Eigen::Index p_start = ds.periodic_start, p_len = ds.periodic_end - ds.periodic_start;
  auto periodic_rows = [&](ad::Var v) {
    return (p_start == 0 && p_len == v.val().rows()) ? v : ad::rows(v, p_start, p_len);
  };

  if (w.lcm > 0) {
    require(p_len > 0, "loss_limit_cycle_matching: empty periodic subset");
    ad::Var yp = periodic_rows(y_demo);
    ad::Var y1 = ad::cols(yp, 0, 1), y2 = ad::cols(yp, 1, 1);
    ad::Var r = ad::sqrt_(ad::add(ad::mul(y1, y1), ad::mul(y2, y2)));
    ad::Var dr = ad::add_const(ad::neg(r), h.radius);
    ad::Var term = ad::mul(dr, dr);
    if (n > 2) term = ad::add(term, ad::row_sq_norm(ad::cols(yp, 2, n - 2)));
    terms.emplace_back("lcm", ad::mean_(term));
  }

  if (w.tgd > 0) {
    require(p_len > 0, "loss_time_guidance: empty periodic subset");
    require(ds.period > 0, "loss_time_guidance: period unknown");
    double phi0;
    if (w.tgd_phi0) {
      phi0 = *w.tgd_phi0;
    } else {
      // encoded angle of the first periodic sample, frozen for this epoch
      Vec y0 = pol.encoder().encode(ds.positions.row(p_start).transpose(),
                                    conditioned ? z(p_start) : 0.0);
      phi0 = std::atan2(y0(1), y0(0));
    }
    Vec phi_d(p_len);
    for (Eigen::Index k = 0; k < p_len; ++k)
      phi_d(k) = phi0 + 2.0 * kPi *
                            (ds.timestamps(p_start + k) - ds.timestamps(p_start)) / ds.period;
    ad::Var yp = periodic_rows(y_demo);
    ad::Var phi = ad::atan2_(ad::cols(yp, 1, 1), ad::cols(yp, 0, 1));
    ad::Var err = ad::wrap_pi_(ad::sub(tape.constant(phi_d), phi));
    ad::Var hinge = ad::hinge_(ad::abs_(err), w.m_tgd);
    terms.emplace_back("tgd", ad::mean_(ad::mul(hinge, hinge)));
  }

  if (w.haus > 0) {
    require(p_len > 0, "loss_hausdorff_latent: empty periodic subset");
    ad::Var yp = periodic_rows(y_demo);
    terms.emplace_back("haus", ad::hausdorff_to_set(yp, cycle_points(h.radius, p_len, n)));
  }

  Vec lo = ctx.cfg->box_min.size() == n ? ctx.cfg->box_min : Vec::Constant(n, -0.5);
  Vec hi = ctx.cfg->box_max.size() == n ? ctx.cfg->box_max : Vec::Constant(n, 0.5);

  if (w.er > 0) {
    auto rng = make_rng(ctx.seed, 101);
    Mat xr = sample_box(lo, hi, ctx.cfg->reg_samples, rng);
    Vec zr;
    if (conditioned) {
      std::uniform_real_distribution<double> u(z.minCoeff(), z.maxCoeff());
      zr = Vec::NullaryExpr(xr.rows(), [&](Eigen::Index) { return u(rng); });
    }
    ad::Var yr = taped_encode(tp, xr, conditioned ? &zr : nullptr, false).y;
    terms.emplace_back("er", ad::mean_(ad::row_norm(ad::sub(yr, tape.constant(xr)))));
  }

  if (w.vr > 0) {
    auto rng = make_rng(ctx.seed, 202);
    Mat xr = sample_box(lo, hi, ctx.cfg->reg_samples, rng);
    Vec zr;
    if (conditioned) {
      std::uniform_real_distribution<double> u(z.minCoeff(), z.maxCoeff());
      zr = Vec::NullaryExpr(xr.rows(), [&](Eigen::Index) { return u(rng); });
    }
    double margin = w.m_vr;
    if (margin < 0.0) margin = 1.5 * ds.velocities.rowwise().norm().maxCoeff();
    ad::Var xdot = taped_velocity(tp, xr, conditioned ? &zr : nullptr);
    terms.emplace_back("vr", ad::mean_(ad::hinge_(ad::row_norm(xdot), margin)));
  }

  if (w.sci > 0) {
    require(conditioned && ds.conditioning, "loss_sci: conditioned dataset required");
    std::set<double> zset(ds.conditioning->data(), ds.conditioning->data() + ds.size());
    require(zset.size() >= 2, "loss_sci: need at least two distinct conditionings");
    std::vector<double> anchors(zset.begin(), zset.end());

    auto rng = make_rng(ctx.seed, 303);
    std::uniform_real_distribution<double> uz(anchors.front(), anchors.back());
    std::uniform_real_distribution<double> uphi(-kPi, kPi);
    const int m = w.n_sci;
    Mat y_cycle = Mat::Zero(m, n);
    Vec z_tilde(m), z_floor(m), z_ceil(m), fac(m);
    for (int ii = 0; ii < m; ++ii) {
      const double phi = uphi(rng);
      y_cycle(ii, 0) = h.radius * std::cos(phi);
      y_cycle(ii, 1) = h.radius * std::sin(phi);
      const double zt = uz(rng);
      z_tilde(ii) = zt;
      // floor/ceil over the dataset's conditioning set; both collapse to the
      // anchor itself when z_tilde hits one exactly
      auto up = std::lower_bound(anchors.begin(), anchors.end(), zt);
      double zc, zf;
      if (up == anchors.end()) {
        zc = zf = anchors.back();
      } else if (*up == zt || up == anchors.begin()) {
        zc = zf = *up;
      } else {
        zc = *up;
        zf = *(up - 1);
      }
      z_floor(ii) = zf;
      z_ceil(ii) = zc;
      fac(ii) = (zc > zf) ? (zt - zf) / (zc - zf) : 0.0;
    }
    ad::Var x_tilde = taped_decode(tp, y_cycle, &z_tilde);
    ad::Var x_floor = taped_decode(tp, y_cycle, &z_floor);
    ad::Var x_ceil = taped_decode(tp, y_cycle, &z_ceil);
    ad::Var target =
        ad::add(x_floor, ad::mul_bycol(ad::sub(x_ceil, x_floor), tape.constant(fac)));
    ad::Var dev = ad::sub(x_tilde, target);
    terms.emplace_back("sci", ad::mean_(ad::row_sq_norm(dev)));
  }

  ad::Var total = tape.constant(Mat::Zero(1, 1));
  for (auto& [name, var] : terms) {
    const double zeta = name == "vi"    ? w.vi
                        : name == "lcm" ? w.lcm
                        : name == "tgd" ? w.tgd
                        : name == "haus" ? w.haus
                        : name == "er"  ? w.er
                        : name == "vr"  ? w.vr
                                        : w.sci;
    if (breakdown) (*breakdown)[name] = var.val()(0, 0);
    total = ad::add(total, ad::scal(zeta, var));
  }
  return total;
}

}  // namespace

// ---- public loss values ----

namespace {

double single_loss(const Policy& pol, const OracleDataset& ds, LossWeights w,
                   const TrainConfig& cfg, std::uint64_t seed, const std::string& name) {
  ad::Tape tape;
  TapedPolicy tp = bind_params(tape, pol);
  LossContext ctx{&pol, &ds, &w, &cfg, seed};
  std::map<std::string, double> breakdown;
  build_total_loss(tape, tp, ctx, &breakdown);
  return breakdown.at(name);
}

LossWeights only(const std::string& name, double margin_or_beta = -1.0) {
  LossWeights w;
  w.vi = w.lcm = w.tgd = w.er = w.vr = w.sci = w.haus = 0.0;
  if (name == "vi") w.vi = 1.0;
  if (name == "lcm") w.lcm = 1.0;
  if (name == "tgd") w.tgd = 1.0;
  if (name == "er") w.er = 1.0;
  if (name == "vr") w.vr = 1.0;
  if (name == "sci") w.sci = 1.0;
  if (name == "haus") w.haus = 1.0;
  (void)margin_or_beta;
  return w;
}

}  // namespace

double loss_velocity_imitation(const Policy& pol, const OracleDataset& ds, double beta_l1) {
  LossWeights w = only("vi");
  w.beta_l1 = beta_l1;
  TrainConfig cfg;
  return single_loss(pol, ds, w, cfg, 0, "vi");
}

double loss_limit_cycle_matching(const Policy& pol, const OracleDataset& ds) {
  TrainConfig cfg;
  return single_loss(pol, ds, only("lcm"), cfg, 0, "lcm");
}

double loss_time_guidance(const Policy& pol, const OracleDataset& ds, double phi0, double m_tgd) {
  LossWeights w = only("tgd");
  w.tgd_phi0 = phi0;
  w.m_tgd = m_tgd;
  TrainConfig cfg;
  return single_loss(pol, ds, w, cfg, 0, "tgd");
}

double loss_encoder_reg(const Policy& pol, const Vec& box_min, const Vec& box_max, int n_samples,
                        std::uint64_t seed) {
  // a minimal stand-in dataset; only the box sampling matters for this term
  OracleDataset dummy;
  dummy.timestamps = Vec::LinSpaced(2, 0.0, 1.0);
  dummy.positions = Mat::Zero(2, box_min.size());
  dummy.positions.row(1).setConstant(0.1);
  dummy.velocities = Mat::Zero(2, box_min.size());
  TrainConfig cfg;
  cfg.box_min = box_min;
  cfg.box_max = box_max;
  cfg.reg_samples = n_samples;
  return single_loss(pol, dummy, only("er"), cfg, seed, "er");
}

double loss_velocity_reg(const Policy& pol, const Vec& box_min, const Vec& box_max, double m_vr,
                         int n_samples, std::uint64_t seed) {
  require(m_vr > 0.0, "loss_velocity_reg: margin must be positive");
  OracleDataset dummy;
  dummy.timestamps = Vec::LinSpaced(2, 0.0, 1.0);
  dummy.positions = Mat::Zero(2, box_min.size());
  dummy.positions.row(1).setConstant(0.1);
  dummy.velocities = Mat::Zero(2, box_min.size());
  LossWeights w = only("vr");
  w.m_vr = m_vr;
  TrainConfig cfg;
  cfg.box_min = box_min;
  cfg.box_max = box_max;
  cfg.reg_samples = n_samples;
  return single_loss(pol, dummy, w, cfg, seed, "vr");
}

double loss_smooth_conditioning_interpolation(const Policy& pol, const OracleDataset& ds,
                                              int n_sci, std::uint64_t seed) {
  LossWeights w = only("sci");
  w.n_sci = n_sci;
  TrainConfig cfg;
  return single_loss(pol, ds, w, cfg, seed, "sci");
}

double loss_hausdorff_latent(const Policy& pol, const OracleDataset& ds) {
  TrainConfig cfg;
  return single_loss(pol, ds, only("haus"), cfg, 0, "haus");
}

LossBreakdown total_loss(const Policy& pol, const OracleDataset& ds, const LossWeights& weights,
                         const TrainConfig& cfg, std::uint64_t seed) {
  weights.validate();
  ad::Tape tape;
  TapedPolicy tp = bind_params(tape, pol);
  LossContext ctx{&pol, &ds, &weights, &cfg, seed};
  LossBreakdown out;
  ad::Var total = build_total_loss(tape, tp, ctx, &out.terms);
  out.total = total.val()(0, 0);
  return out;
}

// ---- training loop ----

std::uint64_t policy_param_checksum(const Policy& pol) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<ParamRef> refs = trained_params(const_cast<Policy&>(pol));
  for (const ParamRef& r : refs)
    h = fnv1a_bytes(r.data, sizeof(double) * static_cast<std::size_t>(r.rows * r.cols), h);
  return h;
}

Policy train(const OracleDataset& ds, const EncoderConfig& enc_cfg, const HopfParams& hopf,
             const LossWeights& weights, const TrainConfig& cfg, TrainReport* report,
             const Policy* resume_from) {
  const auto t0 = std::chrono::steady_clock::now();
  enc_cfg.validate();
  weights.validate();
  cfg.validate();
  ds.validate();
  require(ds.normalized, "train: dataset must be normalized first");
  require(ds.dim() == enc_cfg.n, "train: dataset/encoder dimension mismatch");

  Policy pol;
  if (resume_from) {
    pol = *resume_from;
  } else {
    HopfParams h = hopf;
    auto rng = make_rng(cfg.seed, 7);
    if (h.omega_mode == OmegaMode::kLearnedNet && !h.omega_net)
      h.omega_net = RffnScalarNet::init(2, cfg.scalar_net_hidden, enc_cfg.length_scale, 1e-6, rng);
    h.validate();
    pol = Policy(Encoder::init_identity(enc_cfg, cfg.seed), h);
    if (cfg.learn_speed_scale) {
      pol.speed_scale_mode = SpeedScaleMode::kLearnedNet;
      pol.speed_net =
          RffnScalarNet::init(enc_cfg.n, cfg.scalar_net_hidden, enc_cfg.length_scale, 0.01, rng);
    }
  }

  std::vector<ParamRef> refs = trained_params(pol);
  std::vector<Mat> adam_m, adam_v;
  for (const ParamRef& r : refs) {
    adam_m.push_back(Mat::Zero(r.rows, r.cols));
    adam_v.push_back(Mat::Zero(r.rows, r.cols));
  }

  std::vector<std::string> term_names;
  {
    LossWeights w = weights;
    if (w.vi > 0) term_names.push_back("vi");
    if (w.lcm > 0) term_names.push_back("lcm");
    if (w.tgd > 0) term_names.push_back("tgd");
    if (w.haus > 0) term_names.push_back("haus");
    if (w.er > 0) term_names.push_back("er");
    if (w.vr > 0) term_names.push_back("vr");
    if (w.sci > 0) term_names.push_back("sci");
  }

  const int rows = std::max(0, cfg.epochs - cfg.start_epoch);
  Mat history(rows, 3 + static_cast<Eigen::Index>(term_names.size()));

  for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    ad::Tape tape;
    TapedPolicy tp = bind_params(tape, pol);
    LossContext ctx{&pol, &ds, &weights, &cfg,
                    splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(epoch)))};
    std::map<std::string, double> breakdown;
    ad::Var total = build_total_loss(tape, tp, ctx, &breakdown);
    const double loss_value = total.val()(0, 0);
    if (!std::isfinite(loss_value))
      throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
    tape.backward(total);

    const double t_step = static_cast<double>(epoch + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t_step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t_step);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Mat g = tape.grad(tp.all_vars[i]);
      adam_m[i] = cfg.beta1 * adam_m[i] + (1.0 - cfg.beta1) * g;
      adam_v[i] = cfg.beta2 * adam_v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      auto w_map = refs[i].map();
      Mat update = (adam_m[i] / bc1).array() / ((adam_v[i] / bc2).array().sqrt() + cfg.adam_eps);
      w_map -= lr * (update + cfg.weight_decay * w_map);
    }

    const Eigen::Index r = epoch - cfg.start_epoch;
    history(r, 0) = epoch;
    history(r, 1) = lr;
    history(r, 2) = loss_value;
    for (std::size_t k = 0; k < term_names.size(); ++k)
      history(r, 3 + static_cast<Eigen::Index>(k)) = breakdown.at(term_names[k]);
  }

  if (report) {
    report->columns = {"epoch", "lr", "total"};
    for (const std::string& s : term_names) report->columns.push_back(s);
    report->history = history;
    report->param_checksum = policy_param_checksum(pol);
    report->wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return pol;
}

double gradient_check(Policy& pol, const OracleDataset& ds, const LossWeights& weights_in,
                      const TrainConfig& cfg, std::uint64_t seed) {
  weights_in.validate();
  LossWeights weights = weights_in;
  if (weights.tgd > 0 && !weights.tgd_phi0) {
    // freeze the phase anchor: the per-epoch loss treats it as a constant, so
    // the finite-difference probe must too
    const bool conditioned = pol.encoder().config().conditioned;
    Vec y0 = pol.encoder().encode(
        ds.positions.row(ds.periodic_start).transpose(),
        conditioned && ds.conditioning ? (*ds.conditioning)(ds.periodic_start) : 0.0);
    weights.tgd_phi0 = std::atan2(y0(1), y0(0));
  }
  const std::uint64_t sample_seed = splitmix64(seed ^ 0x5eedULL);

  std::vector<Mat> grads;
  {
    ad::Tape tape;
    TapedPolicy tp = bind_params(tape, pol);
    LossContext ctx{&pol, &ds, &weights, &cfg, sample_seed};
    ad::Var total = build_total_loss(tape, tp, ctx, nullptr);
    tape.backward(total);
    for (const ad::Var& v : tp.all_vars) grads.push_back(tape.grad(v));
  }

  auto value = [&]() {
    ad::Tape tape;
    TapedPolicy tp = bind_params(tape, pol);
    LossContext ctx{&pol, &ds, &weights, &cfg, sample_seed};
    return build_total_loss(tape, tp, ctx, nullptr).val()(0, 0);
  };

  std::vector<ParamRef> refs = trained_params(pol);
  Eigen::Index total_entries = 0;
  for (const ParamRef& r : refs) total_entries += r.rows * r.cols;
  const Eigen::Index n_check =
      std::max<Eigen::Index>(5, total_entries / 100);  // ~1% of the parameters

  auto rng = make_rng(seed, 42);
  std::uniform_int_distribution<Eigen::Index> pick(0, total_entries - 1);
  const double delta = 1e-5;
  double max_rel = 0.0;
  for (Eigen::Index c = 0; c < n_check; ++c) {
    Eigen::Index flat = pick(rng);
    std::size_t ri = 0;
    while (flat >= refs[ri].rows * refs[ri].cols) {
      flat -= refs[ri].rows * refs[ri].cols;
      ++ri;
    }
    double* slot = refs[ri].data + flat;
    const double orig = *slot;
    *slot = orig + delta;
    const double up = value();
    *slot = orig - delta;
    const double dn = value();
    *slot = orig;
    const double fd = (up - dn) / (2.0 * delta);
    const double ga = grads[ri](flat % refs[ri].rows, flat / refs[ri].rows);
    const double rel = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

void save_train_report(const TrainReport& rep, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "save_train_report: cannot open " + path);
  for (std::size_t i = 0; i < rep.columns.size(); ++i)
    f << (i ? ", " : "") << rep.columns[i];
  f << "\n";
  f.precision(12);
  for (Eigen::Index r = 0; r < rep.history.rows(); ++r) {
    for (Eigen::Index c = 0; c < rep.history.cols(); ++c)
      f << (c ? ", " : "") << rep.history(r, c);
    f << "\n";
  }
  f << "# checksum " << std::hex << rep.param_checksum << std::dec << "\n";
  f << "# wall_time_s " << rep.wall_time_s << "\n";
}

}  // namespace osmp
