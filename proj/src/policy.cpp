#include "osmp/policy.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace osmp {

void ShapingState::validate(Eigen::Index n) const {
  require(s_f > 0.0, "ShapingState: s_f must be positive");
  require(s_omega > 0.0, "ShapingState: s_omega must be positive");
  require(k_conv > 0.0, "ShapingState: k_conv must be positive");
  require(gate_radius >= 0.0, "ShapingState: gate_radius must be nonnegative");
  require(gate_sigma > 0.0, "ShapingState: gate_sigma must be positive");
  require(x_o.size() == 0 || x_o.size() == n, "ShapingState: x_o dimension mismatch");
}

double latent_cycle_distance(const Vec& y, double radius) {
  const double r = std::hypot(y(0), y(1));
  double acc = (r - radius) * (r - radius);
  if (y.size() > 2) acc += y.tail(y.size() - 2).squaredNorm();
  return std::sqrt(acc / static_cast<double>(y.size() - 1));
}

double angular_gate(double d_lc, double gate_radius, double gate_sigma) {
  require(gate_sigma > 0.0, "angular_gate: gate_sigma must be positive");
  const double excess = std::max(d_lc - gate_radius, 0.0);
  return std::exp(-excess * excess / (2.0 * gate_sigma * gate_sigma));
}

double Policy::speed_scale(const Vec& x) const {
  if (speed_scale_mode == SpeedScaleMode::kUnity) return 1.0;
  require(speed_net.has_value(), "Policy: learned speed scale without a net");
  return speed_net->positive(x);
}

Vec Policy::encode_shaped(const Vec& x, double z, const ShapingState& shape) const {
  Vec xs = x;
  if (shape.x_o.size() > 0) xs -= shape.x_o;
  xs /= shape.s_f;
  return encoder_.encode(xs, z);
}

Vec Policy::velocity(const Vec& x, double z, const ShapingState& shape,
                     double omega_factor) const {
  const Eigen::Index n = encoder_.config().n;
  require(x.size() == n, "velocity: dimension mismatch");
  shape.validate(n);

  Vec xs = x;
  if (shape.x_o.size() > 0) xs -= shape.x_o;
  xs /= shape.s_f;

  Vec y;
  Mat j;
  encoder_.encode_with_jacobian(xs, z, y, j, jacobian_method, fd_step);
  const double r = std::hypot(y(0), y(1));

  double om;
  if (hopf_.omega_mode == OmegaMode::kLearnedNet) {
    if (r < kDegenerateRadius)
      throw std::domain_error("velocity: learned omega undefined at the latent origin");
    om = hopf_.omega_at(y(0) / r, y(1) / r);
  } else {
    om = hopf_.omega;
  }
  om *= shape.s_omega * omega_factor;
  if (shape.gate_enabled) {
    if (r < kDegenerateRadius)
      throw std::domain_error("velocity: gate undefined at the latent origin");
    om *= angular_gate(latent_cycle_distance(y, hopf_.radius), shape.gate_radius,
                       shape.gate_sigma);
  }

  const double alpha = hopf_.alpha * shape.k_conv * shape.s_omega;
  const double beta = hopf_.beta * shape.k_conv * shape.s_omega;
  const double shrink = alpha * (1.0 - r * r / (hopf_.radius * hopf_.radius));
  Vec f_y(n);
  f_y(0) = -om * y(1) + shrink * y(0);
  f_y(1) = om * y(0) + shrink * y(1);
  if (n > 2) f_y.tail(n - 2) = -beta * y.tail(n - 2);

  j.diagonal().array() += eps_inv;
  Eigen::PartialPivLU<Mat> lu(j);
  Vec xdot = lu.solve(f_y);
  if (!xdot.allFinite()) throw std::runtime_error("velocity: regularized solve failed");

  return speed_scale(xs) * shape.s_f * xdot;
}

// ---- serialization ----

namespace {

nlohmann::json net_to_json(const RffnScalarNet& net) {
  auto mat = [](const Mat& m) {
    nlohmann::json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = std::vector<double>(m.data(), m.data() + m.size());
    return j;
  };
  nlohmann::json j;
  j["w"] = mat(net.w);
  j["phase"] = mat(net.phase);
  j["v_out"] = mat(net.v_out);
  j["eps"] = net.eps;
  return j;
}

RffnScalarNet net_from_json(const nlohmann::json& j) {
  auto mat = [](const nlohmann::json& mj) {
    Mat m(mj.at("rows").get<Eigen::Index>(), mj.at("cols").get<Eigen::Index>());
    std::vector<double> d = mj.at("data").get<std::vector<double>>();
    std::copy(d.begin(), d.end(), m.data());
    return m;
  };
  RffnScalarNet net;
  net.w = mat(j.at("w"));
  net.phase = Vec(mat(j.at("phase")));
  net.v_out = Vec(mat(j.at("v_out")));
  net.eps = j.at("eps").get<double>();
  return net;
}

}  // namespace

void save_policy(const Policy& pol, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["encoder"] = encoder_to_json(pol.encoder());
  const HopfParams& h = pol.hopf();
  j["hopf"] = {{"alpha", h.alpha},
               {"beta", h.beta},
               {"radius", h.radius},
               {"omega_mode", h.omega_mode == OmegaMode::kConstant ? "constant" : "learned"},
               {"omega", h.omega}};
  if (h.omega_mode == OmegaMode::kLearnedNet) j["hopf"]["omega_net"] = net_to_json(*h.omega_net);
  j["speed_scale_mode"] = pol.speed_scale_mode == SpeedScaleMode::kUnity ? "unity" : "learned";
  if (pol.speed_scale_mode == SpeedScaleMode::kLearnedNet)
    j["speed_net"] = net_to_json(*pol.speed_net);
  j["eps_inv"] = pol.eps_inv;
  j["jacobian_method"] =
      pol.jacobian_method == JacobianMethod::kExact ? "exact" : "finite_difference";
  j["fd_step"] = pol.fd_step;

  std::ofstream f(path);
  require(f.good(), "save_policy: cannot open " + path);
  f << j.dump();
}

Policy load_policy(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "load_policy: cannot open " + path);
  nlohmann::json j;
  f >> j;
  require(j.at("version").get<int>() == 1, "policy file: unsupported version");

  HopfParams h;
  const auto& hj = j.at("hopf");
  h.alpha = hj.at("alpha").get<double>();
  h.beta = hj.at("beta").get<double>();
  h.radius = hj.at("radius").get<double>();
  h.omega = hj.at("omega").get<double>();
  h.omega_mode = hj.at("omega_mode").get<std::string>() == "constant" ? OmegaMode::kConstant
                                                                      : OmegaMode::kLearnedNet;
  if (h.omega_mode == OmegaMode::kLearnedNet) h.omega_net = net_from_json(hj.at("omega_net"));

  Policy pol(encoder_from_json(j.at("encoder")), h);
  pol.speed_scale_mode = j.at("speed_scale_mode").get<std::string>() == "unity"
                             ? SpeedScaleMode::kUnity
                             : SpeedScaleMode::kLearnedNet;
  if (pol.speed_scale_mode == SpeedScaleMode::kLearnedNet)
    pol.speed_net = net_from_json(j.at("speed_net"));
  pol.eps_inv = j.at("eps_inv").get<double>();
  pol.jacobian_method = j.at("jacobian_method").get<std::string>() == "exact"
                            ? JacobianMethod::kExact
                            : JacobianMethod::kFiniteDifference;
  pol.fd_step = j.at("fd_step").get<double>();
  return pol;
}

}  // namespace osmp
