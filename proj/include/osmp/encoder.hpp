#pragma once

// Conditioned bijective encoder built from alternating-split affine coupling
// blocks. Scale and translation nets are random-Fourier-feature networks with
// frozen frequencies and trained linear readouts, so the map is the identity
// at initialization and analytically invertible at all times.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <json.hpp>

#include "osmp/util.hpp"

namespace osmp {

struct EncoderConfig {
  Eigen::Index n = 2;            // state dimension
  Eigen::Index n_blocks = 10;    // coupling blocks
  Eigen::Index rffn_hidden = 100;
  double clamp_bound = 3.0;      // scale-output clamp magnitude
  double length_scale = 0.45;    // kernel length scale of the frozen frequencies
  bool conditioned = false;
  Eigen::Index embed_dim = 0;    // n_e; defaults to n when conditioned

  void validate() const;
  Eigen::Index effective_embed_dim() const {
    return conditioned ? (embed_dim > 0 ? embed_dim : n) : 0;
  }
  // first half has ceil(n/2) entries, second half floor(n/2)
  Eigen::Index first_half() const { return (n + 1) / 2; }
  Eigen::Index second_half() const { return n / 2; }
  /// 1-indexed odd blocks transform the second half, even blocks the first.
  Eigen::Index passive_size(Eigen::Index block) const {
    return (block % 2 == 0) ? second_half() : first_half();
  }
  Eigen::Index active_size(Eigen::Index block) const {
    return (block % 2 == 0) ? first_half() : second_half();
  }
};

/// One coupling block: frozen frequencies/phases and trained readouts for the
/// scale net s and the translation net t.
struct CouplingBlock {
  Mat w_s;      // hidden x (passive + n_e), frozen
  Vec phase_s;  // hidden, frozen
  Mat v_s;      // active x hidden, trained
  Mat w_t;
  Vec phase_t;
  Mat v_t;      // active x hidden, trained
};

/// Scalar conditioning z -> embedding z_bar: frozen Gaussian-Fourier
/// projection to 4*n_e features, then a trained two-layer softplus map.
struct ConditioningEmbedding {
  Vec freq;   // 2*n_e Gaussian frequencies, frozen
  Mat w1;     // 8*n_e x 4*n_e, trained
  Vec b1;     // 8*n_e, trained
  Mat w2;     // n_e x 8*n_e, trained
  Vec b2;     // n_e, trained

  Vec features(double z) const;  // [sin(z f); cos(z f)], length 4*n_e
  Vec embed(double z) const;
};

struct EncoderParams {
  EncoderConfig cfg;
  std::vector<CouplingBlock> blocks;
  ConditioningEmbedding embedding;  // unused when not conditioned
  std::uint64_t seed = 0;
};

enum class JacobianMethod { kExact, kFiniteDifference };

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(EncoderParams params) : params_(std::move(params)) {}

  /// Draws frozen arrays from a seeded Gaussian and zeroes all trained
  /// readouts, so encode(x, z) == x exactly for every x and z.
  static Encoder init_identity(const EncoderConfig& cfg, std::uint64_t seed);

  Vec encode(const Vec& x, double z = 0.0) const;
  Vec decode(const Vec& y, double z = 0.0) const;

  Mat jacobian(const Vec& x, double z = 0.0,
               JacobianMethod method = JacobianMethod::kExact,
               double fd_step = 5e-4) const;

  /// Single pass producing both the encoding and its Jacobian.
  void encode_with_jacobian(const Vec& x, double z, Vec& y_out, Mat& jac_out,
                            JacobianMethod method = JacobianMethod::kExact,
                            double fd_step = 5e-4) const;

  Vec embed_conditioning(double z) const;

  const EncoderParams& params() const { return params_; }
  EncoderParams& mutable_params() { return params_; }
  const EncoderConfig& config() const { return params_.cfg; }

  /// Index of the first coordinate transformed by block `b` and the split
  /// boundary; shared by the forward, inverse, and Jacobian paths.
  struct Split {
    Eigen::Index pass_start, pass_len, act_start, act_len;
  };
  Split split(Eigen::Index block) const;

 private:
  // Evaluates s (clamped) and t for one block given the net input u.
  void nets(const CouplingBlock& b, const Vec& u, Vec& s, Vec& t) const;

  EncoderParams params_;
};

/// Versioned JSON model file; round-trips bit-exactly.
void save_encoder(const Encoder& enc, const std::string& path);
Encoder load_encoder(const std::string& path);

nlohmann::json encoder_to_json(const Encoder& enc);
Encoder encoder_from_json(const nlohmann::json& j);

}  // namespace osmp
