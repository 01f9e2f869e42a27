#pragma once

// Loss suite, full-batch AdamW training with warmup/plateau/cosine scheduling,
// and analytic-vs-finite-difference gradient verification. Parameter gradients
// are exact: every loss term is evaluated on a reverse-mode tape, including
// the pullback through the regularized encoder Jacobian.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osmp/dataset.hpp"
#include "osmp/policy.hpp"

namespace osmp {

struct LossWeights {
  double vi = 1.0;
  double lcm = 0.0;
  double tgd = 0.0;
  double er = 0.0;
  double vr = 0.0;
  double sci = 0.0;
  double haus = 0.0;  // ablation-only alternative to lcm

  double beta_l1 = 1.0;           // smooth-l1 transition point
  double m_tgd = 0.1;             // allowed phase margin, radians
  double m_vr = -1.0;             // velocity margin; < 0 means 1.5 x max demo speed
  int n_sci = 64;                 // interpolation samples per epoch
  std::optional<double> tgd_phi0;  // phase anchor override; default: encoded first sample

  void validate() const;
  bool any_sampled() const { return er > 0.0 || vr > 0.0 || sci > 0.0; }
};

struct TrainConfig {
  int epochs = 2000;
  double lr = 1e-2;
  int warmup_epochs = 10;
  int plateau_epochs = -1;  // < 0: 10% of epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-10;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Vec box_min, box_max;  // encoder/velocity regularization box; default [-0.5, 0.5]^n
  int reg_samples = 256;
  int start_epoch = 0;   // resume support: continues the epoch counter
  bool learn_speed_scale = false;
  Eigen::Index scalar_net_hidden = 128;  // omega / speed-scale nets

  void validate() const;
};

struct TrainReport {
  std::vector<std::string> columns;  // epoch, lr, total, then one per active term
  Mat history;                       // one row per epoch
  std::uint64_t param_checksum = 0;
  double wall_time_s = 0.0;
};

/// Piecewise learning rate: linear warmup from 0, constant plateau, cosine to
/// zero at the final epoch; continuous at both junctions.
double lr_schedule(const TrainConfig& cfg, int epoch);

// ---- individual loss terms (values only) ----

double loss_velocity_imitation(const Policy& pol, const OracleDataset& ds, double beta_l1 = 1.0);
double loss_limit_cycle_matching(const Policy& pol, const OracleDataset& ds);
double loss_time_guidance(const Policy& pol, const OracleDataset& ds, double phi0, double m_tgd);
double loss_encoder_reg(const Policy& pol, const Vec& box_min, const Vec& box_max, int n_samples,
                        std::uint64_t seed);
double loss_velocity_reg(const Policy& pol, const Vec& box_min, const Vec& box_max, double m_vr,
                         int n_samples, std::uint64_t seed);
double loss_smooth_conditioning_interpolation(const Policy& pol, const OracleDataset& ds,
                                              int n_sci, std::uint64_t seed);
double loss_hausdorff_latent(const Policy& pol, const OracleDataset& ds);

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;
};

/// Weighted sum of the enabled terms with a per-term breakdown. `seed`
/// controls the epoch's regularization/interpolation sample draws.
LossBreakdown total_loss(const Policy& pol, const OracleDataset& ds, const LossWeights& weights,
                         const TrainConfig& cfg, std::uint64_t seed);

/// Full-batch AdamW training; deterministic given cfg.seed. Aborts with the
/// epoch index on a non-finite loss.
Policy train(const OracleDataset& ds, const EncoderConfig& enc_cfg, const HopfParams& hopf,
             const LossWeights& weights, const TrainConfig& cfg, TrainReport* report = nullptr,
             const Policy* resume_from = nullptr);

/// Compares analytic gradients of total_loss against central finite
/// differences (delta = 1e-5) on a random 1% parameter subset; returns the
/// max relative error.
double gradient_check(Policy& pol, const OracleDataset& ds, const LossWeights& weights,
                      const TrainConfig& cfg, std::uint64_t seed);

/// FNV checksum over all trained arrays, for run-identity assertions.
std::uint64_t policy_param_checksum(const Policy& pol);

void save_train_report(const TrainReport& rep, const std::string& path);

}  // namespace osmp
