#include <doctest.h>

#include <cstdio>
#include <random>

#include "osmp/encoder.hpp"

using namespace osmp;

namespace {

Encoder random_encoder(EncoderConfig cfg, std::uint64_t seed, double weight_std = 0.1) {
  Encoder enc = Encoder::init_identity(cfg, seed);
  auto rng = make_rng(seed, 999);
  std::normal_distribution<double> g(0.0, weight_std);
  for (CouplingBlock& b : enc.mutable_params().blocks) {
    for (Eigen::Index i = 0; i < b.v_s.size(); ++i) b.v_s(i) = g(rng);
    for (Eigen::Index i = 0; i < b.v_t.size(); ++i) b.v_t(i) = g(rng);
  }
  return enc;
}

Vec random_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec::NullaryExpr(n, [&](Eigen::Index) { return u(rng); });
}

}  // namespace

TEST_CASE("identity initialization maps any input to itself") {
  for (bool cond : {false, true}) {
    EncoderConfig cfg;
    cfg.n = 3;
    cfg.n_blocks = 4;
    cfg.conditioned = cond;
    Encoder enc = Encoder::init_identity(cfg, 17);
    auto rng = make_rng(0);
    for (int k = 0; k < 20; ++k) {
      Vec x = random_vec(3, rng, 2.0);
      double z = cond ? (k - 10) * 0.3 : 0.0;
      CHECK((enc.encode(x, z) - x).norm() == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("seeded init is deterministic; different seeds differ") {
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 2;
  Encoder a = Encoder::init_identity(cfg, 5);
  Encoder b = Encoder::init_identity(cfg, 5);
  Encoder c = Encoder::init_identity(cfg, 6);
  CHECK((a.params().blocks[0].w_s - b.params().blocks[0].w_s).norm() == 0.0);
  CHECK((a.params().blocks[1].phase_t - b.params().blocks[1].phase_t).norm() == 0.0);
  CHECK((a.params().blocks[0].w_s - c.params().blocks[0].w_s).norm() > 0.0);
}

TEST_CASE("hand-set constant block: (x1, x2) -> (x1, 2 x2 + 1) and its inverse") {
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 1;
  cfg.rffn_hidden = 8;
  Encoder enc = Encoder::init_identity(cfg, 0);
  CouplingBlock& b = enc.mutable_params().blocks[0];
  // zero frequencies and phases make cos(.) == 1, so the readout is constant
  b.w_s.setZero();
  b.phase_s.setZero();
  b.w_t.setZero();
  b.phase_t.setZero();
  const double denom = double(cfg.rffn_hidden) * rffn_feature_scale(cfg.rffn_hidden);
  b.v_s.setConstant(std::log(2.0) / denom);
  b.v_t.setConstant(1.0 / denom);

  Vec x(2);
  x << 0.3, -0.4;
  Vec y = enc.encode(x);
  CHECK(y(0) == doctest::Approx(0.3));
  CHECK(y(1) == doctest::Approx(2.0 * -0.4 + 1.0));
  Vec back = enc.decode(y);
  CHECK((back - x).norm() < 1e-14);
  // (y1, y2) -> (y1, (y2 - 1) / 2)
  Vec y2(2);
  y2 << 0.5, 3.0;
  CHECK(enc.decode(y2)(1) == doctest::Approx(1.0));

  Mat j_exact = enc.jacobian(x, 0.0, JacobianMethod::kExact);
  Mat j_fd = enc.jacobian(x, 0.0, JacobianMethod::kFiniteDifference);
  Mat expect(2, 2);
  expect << 1, 0, 0, 2;
  CHECK((j_exact - expect).norm() < 1e-12);
  CHECK((j_fd - expect).norm() < 1e-9);
}

TEST_CASE("bijectivity across block counts and dimensions") {
  auto rng = make_rng(21);
  for (Eigen::Index blocks : {1, 2, 10, 25}) {
    EncoderConfig cfg;
    cfg.n = 3;
    cfg.n_blocks = blocks;
    cfg.conditioned = true;
    Encoder enc = random_encoder(cfg, 100 + static_cast<std::uint64_t>(blocks));
    for (int k = 0; k < 50; ++k) {
      Vec x = random_vec(3, rng);
      double z = random_vec(1, rng)(0);
      Vec y = enc.encode(x, z);
      CHECK((enc.decode(y, z) - x).norm() < 1e-9);
      CHECK((enc.encode(enc.decode(x, z), z) - x).norm() < 1e-9);
    }
  }
}

TEST_CASE("exact Jacobian matches central finite differences; positive determinant") {
  auto rng = make_rng(33);
  EncoderConfig cfg;
  cfg.n = 4;
  cfg.n_blocks = 6;
  cfg.conditioned = true;
  Encoder enc = random_encoder(cfg, 7);
  const double delta = 1e-5;
  for (int k = 0; k < 25; ++k) {
    Vec x = random_vec(4, rng);
    double z = random_vec(1, rng)(0);
    Mat j = enc.jacobian(x, z, JacobianMethod::kExact);
    Mat j_fd(4, 4);
    for (Eigen::Index c = 0; c < 4; ++c) {
      Vec xp = x, xm = x;
      xp(c) += delta;
      xm(c) -= delta;
      j_fd.col(c) = (enc.encode(xp, z) - enc.encode(xm, z)) / (2 * delta);
    }
    CHECK((j - j_fd).cwiseAbs().maxCoeff() / j.cwiseAbs().maxCoeff() < 1e-4);
    CHECK(j.determinant() > 0.0);
  }
}

TEST_CASE("two-point forward-difference Jacobian within 1e-2 of exact") {
  auto rng = make_rng(44);
  EncoderConfig cfg;
  cfg.n = 2;
  cfg.n_blocks = 10;
  Encoder enc = random_encoder(cfg, 9);
  for (int k = 0; k < 50; ++k) {
    Vec x = random_vec(2, rng);
    Mat je = enc.jacobian(x, 0.0, JacobianMethod::kExact);
    Mat jf = enc.jacobian(x, 0.0, JacobianMethod::kFiniteDifference, 5e-4);
    CHECK((jf - je).cwiseAbs().maxCoeff() / je.cwiseAbs().maxCoeff() <= 1e-2);
  }
}

TEST_CASE("conditioning embedding: deterministic, right size, nonzero derivative") {
  EncoderConfig cfg;
  cfg.n = 3;
  cfg.n_blocks = 2;
  cfg.conditioned = true;
  Encoder enc = Encoder::init_identity(cfg, 11);
  CHECK(enc.embed_conditioning(0.7).size() == 3);  // n_e defaults to n
  CHECK((enc.embed_conditioning(0.7) - enc.embed_conditioning(0.7)).norm() == 0.0);
  auto rng = make_rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    double z = u(rng);
    Vec d = (enc.embed_conditioning(z + 1e-6) - enc.embed_conditioning(z - 1e-6)) / 2e-6;
    CHECK(d.allFinite());
    CHECK(d.norm() > 0.0);
  }
}

TEST_CASE("encoder serialization round-trips bit-exactly") {
  EncoderConfig cfg;
  cfg.n = 3;
  cfg.n_blocks = 3;
  cfg.conditioned = true;
  Encoder enc = random_encoder(cfg, 55);
  const std::string path = "encoder_roundtrip_test.json";
  save_encoder(enc, path);
  Encoder back = load_encoder(path);
  std::remove(path.c_str());

  const EncoderParams& a = enc.params();
  const EncoderParams& b = back.params();
  CHECK(a.seed == b.seed);
  REQUIRE(a.blocks.size() == b.blocks.size());
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    CHECK(std::memcmp(a.blocks[i].w_s.data(), b.blocks[i].w_s.data(),
                      sizeof(double) * a.blocks[i].w_s.size()) == 0);
    CHECK(std::memcmp(a.blocks[i].v_s.data(), b.blocks[i].v_s.data(),
                      sizeof(double) * a.blocks[i].v_s.size()) == 0);
    CHECK(std::memcmp(a.blocks[i].v_t.data(), b.blocks[i].v_t.data(),
                      sizeof(double) * a.blocks[i].v_t.size()) == 0);
  }
  CHECK(std::memcmp(a.embedding.w2.data(), b.embedding.w2.data(),
                    sizeof(double) * a.embedding.w2.size()) == 0);
  // behavioural identity
  auto rng = make_rng(1);
  for (int k = 0; k < 10; ++k) {
    Vec x = random_vec(3, rng);
    CHECK((enc.encode(x, 0.4) - back.encode(x, 0.4)).norm() == 0.0);
  }
}
