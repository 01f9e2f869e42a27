#include "osmp/encoder.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace osmp {

void EncoderConfig::validate() const {
  require(n >= 2, "EncoderConfig: n must be >= 2");
  require(n_blocks >= 1, "EncoderConfig: n_blocks must be >= 1");
  require(rffn_hidden >= 1, "EncoderConfig: rffn_hidden must be >= 1");
  require(clamp_bound > 0.0, "EncoderConfig: clamp_bound must be positive");
  require(length_scale > 0.0, "EncoderConfig: length_scale must be positive");
  if (conditioned) require(effective_embed_dim() >= 1, "EncoderConfig: embed_dim must be >= 1");
}

Vec ConditioningEmbedding::features(double z) const {
  const Eigen::Index m = freq.size();
  Vec g(2 * m);
  g.head(m) = (z * freq.array()).sin();
  g.tail(m) = (z * freq.array()).cos();
  return g;
}

Vec ConditioningEmbedding::embed(double z) const {
  Vec g = features(z);
  Vec h = w1 * g + b1;
  // softplus
  h = (h.array().max(0.0) + (-h.array().abs()).exp().log1p()).matrix();
  return w2 * h + b2;
}

Encoder::Split Encoder::split(Eigen::Index block) const {
  const EncoderConfig& c = params_.cfg;
  Split s;
  if (block % 2 == 0) {  // even (1-indexed) transforms the first half
    s.act_start = 0;
    s.act_len = c.first_half();
    s.pass_start = c.first_half();
    s.pass_len = c.second_half();
  } else {  // odd transforms the second half
    s.pass_start = 0;
    s.pass_len = c.first_half();
    s.act_start = c.first_half();
    s.act_len = c.second_half();
  }
  return s;
}

Encoder Encoder::init_identity(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  p.cfg = cfg;
  p.seed = seed;
  auto rng = make_rng(seed);
  std::normal_distribution<double> freq(0.0, 1.0 / cfg.length_scale);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * kPi);

  const Eigen::Index ne = cfg.effective_embed_dim();
  for (Eigen::Index j = 1; j <= cfg.n_blocks; ++j) {
    const Eigen::Index pass = cfg.passive_size(j);
    const Eigen::Index act = cfg.active_size(j);
    const Eigen::Index in_dim = pass + ne;
    CouplingBlock b;
    b.w_s = Mat(cfg.rffn_hidden, in_dim);
    b.w_t = Mat(cfg.rffn_hidden, in_dim);
    for (Eigen::Index r = 0; r < cfg.rffn_hidden; ++r)
      for (Eigen::Index c = 0; c < in_dim; ++c) b.w_s(r, c) = freq(rng);
    for (Eigen::Index r = 0; r < cfg.rffn_hidden; ++r)
      for (Eigen::Index c = 0; c < in_dim; ++c) b.w_t(r, c) = freq(rng);
    b.phase_s = Vec(cfg.rffn_hidden);
    b.phase_t = Vec(cfg.rffn_hidden);
    for (Eigen::Index r = 0; r < cfg.rffn_hidden; ++r) b.phase_s(r) = ph(rng);
    for (Eigen::Index r = 0; r < cfg.rffn_hidden; ++r) b.phase_t(r) = ph(rng);
    b.v_s = Mat::Zero(act, cfg.rffn_hidden);
    b.v_t = Mat::Zero(act, cfg.rffn_hidden);
    p.blocks.push_back(std::move(b));
  }

  if (cfg.conditioned) {
    ConditioningEmbedding& e = p.embedding;
    std::normal_distribution<double> gauss(0.0, 1.0);
    e.freq = Vec(2 * ne);
    for (Eigen::Index i = 0; i < e.freq.size(); ++i) e.freq(i) = gauss(rng);
    const Eigen::Index hid = 8 * ne, in = 4 * ne;
    e.w1 = Mat(hid, in);
    for (Eigen::Index r = 0; r < hid; ++r)
      for (Eigen::Index c = 0; c < in; ++c) e.w1(r, c) = gauss(rng) / std::sqrt(double(in));
    e.b1 = Vec::Zero(hid);
    e.w2 = Mat(ne, hid);
    for (Eigen::Index r = 0; r < ne; ++r)
      for (Eigen::Index c = 0; c < hid; ++c) e.w2(r, c) = gauss(rng) / std::sqrt(double(hid));
    e.b2 = Vec::Zero(ne);
  }
  return Encoder(std::move(p));
}

void Encoder::nets(const CouplingBlock& b, const Vec& u, Vec& s, Vec& t) const {
  const double c = params_.cfg.clamp_bound;
  const double fs = rffn_feature_scale(params_.cfg.rffn_hidden);
  s = fs * (b.v_s * ((b.w_s * u + b.phase_s).array().cos()).matrix());
  s = s.array().min(c).max(-c).matrix();
  t = fs * (b.v_t * ((b.w_t * u + b.phase_t).array().cos()).matrix());
}

Vec Encoder::encode(const Vec& x, double z) const {
  require(x.size() == params_.cfg.n, "encode: dimension mismatch");
  require(x.allFinite(), "encode: non-finite input");
  Vec zbar;
  if (params_.cfg.conditioned) zbar = params_.embedding.embed(z);

  Vec chi = x;
  for (Eigen::Index j = 1; j <= params_.cfg.n_blocks; ++j) {
    const Split sp = split(j);
    const CouplingBlock& b = params_.blocks[static_cast<std::size_t>(j - 1)];
    Vec u(sp.pass_len + zbar.size());
    u.head(sp.pass_len) = chi.segment(sp.pass_start, sp.pass_len);
    if (zbar.size() > 0) u.tail(zbar.size()) = zbar;
    Vec s, t;
    nets(b, u, s, t);
    chi.segment(sp.act_start, sp.act_len) =
        chi.segment(sp.act_start, sp.act_len).cwiseProduct(s.array().exp().matrix()) + t;
  }
  if (!chi.allFinite()) throw std::runtime_error("encode: non-finite output");
  return chi;
}

Vec Encoder::decode(const Vec& y, double z) const {
  require(y.size() == params_.cfg.n, "decode: dimension mismatch");
  require(y.allFinite(), "decode: non-finite input");
  Vec zbar;
  if (params_.cfg.conditioned) zbar = params_.embedding.embed(z);

  Vec chi = y;
  for (Eigen::Index j = params_.cfg.n_blocks; j >= 1; --j) {
    const Split sp = split(j);
    const CouplingBlock& b = params_.blocks[static_cast<std::size_t>(j - 1)];
    Vec u(sp.pass_len + zbar.size());
    u.head(sp.pass_len) = chi.segment(sp.pass_start, sp.pass_len);
    if (zbar.size() > 0) u.tail(zbar.size()) = zbar;
    Vec s, t;
    nets(b, u, s, t);
    chi.segment(sp.act_start, sp.act_len) =
        (chi.segment(sp.act_start, sp.act_len) - t).cwiseProduct((-s.array()).exp().matrix());
  }
  if (!chi.allFinite()) throw std::runtime_error("decode: non-finite output");
  return chi;
}

Mat Encoder::jacobian(const Vec& x, double z, JacobianMethod method, double fd_step) const {
  Vec y;
  Mat j;
  encode_with_jacobian(x, z, y, j, method, fd_step);
  return j;
}

void Encoder::encode_with_jacobian(const Vec& x, double z, Vec& y_out, Mat& jac_out,
                                   JacobianMethod method, double fd_step) const {
  const Eigen::Index n = params_.cfg.n;
  require(x.size() == n, "jacobian: dimension mismatch");
  if (method == JacobianMethod::kFiniteDifference) {
    require(fd_step > 0.0, "jacobian: fd_step must be positive");
    y_out = encode(x, z);
    jac_out.resize(n, n);
    Vec xp = x;
    for (Eigen::Index k = 0; k < n; ++k) {
      xp(k) += fd_step;
      jac_out.col(k) = (encode(xp, z) - y_out) / fd_step;
      xp(k) = x(k);
    }
    return;
  }

  Vec zbar;
  if (params_.cfg.conditioned) zbar = params_.embedding.embed(z);
  Vec chi = x;
  Mat j = Mat::Identity(n, n);
  const double cb = params_.cfg.clamp_bound;
  const double fs = rffn_feature_scale(params_.cfg.rffn_hidden);
  for (Eigen::Index bi = 1; bi <= params_.cfg.n_blocks; ++bi) {
    const Split sp = split(bi);
    const CouplingBlock& b = params_.blocks[static_cast<std::size_t>(bi - 1)];
    Vec u(sp.pass_len + zbar.size());
    u.head(sp.pass_len) = chi.segment(sp.pass_start, sp.pass_len);
    if (zbar.size() > 0) u.tail(zbar.size()) = zbar;

    const Vec pre_s = b.w_s * u + b.phase_s;
    const Vec pre_t = b.w_t * u + b.phase_t;
    Vec s_raw = fs * (b.v_s * pre_s.array().cos().matrix());
    Vec s = s_raw.array().min(cb).max(-cb).matrix();
    Vec t = fs * (b.v_t * pre_t.array().cos().matrix());
    Vec mask = ((s_raw.array().abs() < cb).cast<double>()).matrix();

    // d s / d chi_pass and d t / d chi_pass (the conditioning slice of u is
    // constant in x)
    const auto ws_x = b.w_s.leftCols(sp.pass_len);
    const auto wt_x = b.w_t.leftCols(sp.pass_len);
    Mat ds =
        fs * (mask.asDiagonal() * (b.v_s * ((-pre_s.array().sin()).matrix().asDiagonal() * ws_x)));
    Mat dt = fs * (b.v_t * ((-pre_t.array().sin()).matrix().asDiagonal() * wt_x));

    Vec es = s.array().exp().matrix();
    Vec act = chi.segment(sp.act_start, sp.act_len);
    Mat j_pass = j.middleRows(sp.pass_start, sp.pass_len);
    j.middleRows(sp.act_start, sp.act_len) =
        es.asDiagonal() * j.middleRows(sp.act_start, sp.act_len) +
        (act.cwiseProduct(es)).asDiagonal() * (ds * j_pass) + dt * j_pass;

    chi.segment(sp.act_start, sp.act_len) = act.cwiseProduct(es) + t;
  }
  if (!chi.allFinite()) throw std::runtime_error("encode: non-finite output");
  y_out = std::move(chi);
  jac_out = std::move(j);
}

Vec Encoder::embed_conditioning(double z) const {
  require(params_.cfg.conditioned, "embed_conditioning: encoder is not conditioned");
  require(std::isfinite(z), "embed_conditioning: non-finite z");
  return params_.embedding.embed(z);
}

// ---- serialization ----

namespace {

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());
  j["data"] = data;
  return j;
}

Mat mat_from_json(const nlohmann::json& j) {
  Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == m.size(), "model file: bad array size");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json vec_to_json(const Vec& v) { return mat_to_json(v); }
Vec vec_from_json(const nlohmann::json& j) { return Vec(mat_from_json(j)); }

}  // namespace

nlohmann::json encoder_to_json(const Encoder& enc) {
  const EncoderParams& p = enc.params();
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = p.seed;
  j["config"] = {{"n", p.cfg.n},
                 {"n_blocks", p.cfg.n_blocks},
                 {"rffn_hidden", p.cfg.rffn_hidden},
                 {"clamp_bound", p.cfg.clamp_bound},
                 {"length_scale", p.cfg.length_scale},
                 {"conditioned", p.cfg.conditioned},
                 {"embed_dim", p.cfg.embed_dim}};
  nlohmann::json blocks = nlohmann::json::array();
  for (const CouplingBlock& b : p.blocks) {
    blocks.push_back({{"w_s", mat_to_json(b.w_s)},
                      {"phase_s", vec_to_json(b.phase_s)},
                      {"v_s", mat_to_json(b.v_s)},
                      {"w_t", mat_to_json(b.w_t)},
                      {"phase_t", vec_to_json(b.phase_t)},
                      {"v_t", mat_to_json(b.v_t)}});
  }
  j["blocks"] = blocks;
  if (p.cfg.conditioned) {
    j["embedding"] = {{"freq", vec_to_json(p.embedding.freq)},
                      {"w1", mat_to_json(p.embedding.w1)},
                      {"b1", vec_to_json(p.embedding.b1)},
                      {"w2", mat_to_json(p.embedding.w2)},
                      {"b2", vec_to_json(p.embedding.b2)}};
  }
  return j;
}

Encoder encoder_from_json(const nlohmann::json& j) {
  require(j.at("version").get<int>() == 1, "model file: unsupported version");
  EncoderParams p;
  const auto& c = j.at("config");
  p.cfg.n = c.at("n").get<Eigen::Index>();
  p.cfg.n_blocks = c.at("n_blocks").get<Eigen::Index>();
  p.cfg.rffn_hidden = c.at("rffn_hidden").get<Eigen::Index>();
  p.cfg.clamp_bound = c.at("clamp_bound").get<double>();
  p.cfg.length_scale = c.at("length_scale").get<double>();
  p.cfg.conditioned = c.at("conditioned").get<bool>();
  p.cfg.embed_dim = c.at("embed_dim").get<Eigen::Index>();
  p.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& bj : j.at("blocks")) {
    CouplingBlock b;
    b.w_s = mat_from_json(bj.at("w_s"));
    b.phase_s = vec_from_json(bj.at("phase_s"));
    b.v_s = mat_from_json(bj.at("v_s"));
    b.w_t = mat_from_json(bj.at("w_t"));
    b.phase_t = vec_from_json(bj.at("phase_t"));
    b.v_t = mat_from_json(bj.at("v_t"));
    p.blocks.push_back(std::move(b));
  }
  if (p.cfg.conditioned) {
    const auto& e = j.at("embedding");
    p.embedding.freq = vec_from_json(e.at("freq"));
    p.embedding.w1 = mat_from_json(e.at("w1"));
    p.embedding.b1 = vec_from_json(e.at("b1"));
    p.embedding.w2 = mat_from_json(e.at("w2"));
    p.embedding.b2 = vec_from_json(e.at("b2"));
  }
  p.cfg.validate();
  return Encoder(std::move(p));
}

void save_encoder(const Encoder& enc, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "save_encoder: cannot open " + path);
  f << encoder_to_json(enc).dump();
}

Encoder load_encoder(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "load_encoder: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return encoder_from_json(j);
}

}  // namespace osmp
