#include "mopsan/dpp/dpp.hpp"
#include "mopsan/mop/mop.hpp"

#include "../support/cofactor.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

using namespace mopsan;
using ad::Rng;
using mop::Matrix;
using ad::NodeId;

namespace {

constexpr int kObs = 71;

Matrix random_obs(int rows, Rng& rng) {
  std::bernoulli_distribution bit(0.2);
  Matrix m(rows, kObs);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = bit(rng) ? 1.0 : 0.0;
  return m;
}

Matrix random_simplex(int rows, int cols, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = g(rng) + 1e-3;
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

mop::MopConfig mop_config(int k) {
  mop::MopConfig cfg;
  cfg.k = k;
  cfg.obs_dim = kObs;
  cfg.context.size = 5;
  return cfg;
}

ctx::ContextWindow window(int len, Rng& rng) {
  ctx::History h(5, kObs);
  std::uniform_int_distribution<int> a(0, 5);
  for (int i = 0; i < len; ++i) {
    const Matrix o = random_obs(1, rng);
    h.push(std::vector<double>(o.data(), o.data() + o.size()), a(rng));
  }
  return h.window();
}

void check_simplex(const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    CHECK(m.row(r).minCoeff() >= 0.0);
    CHECK(std::abs(m.row(r).sum() - 1.0) <= 1e-9);
  }
}

}  // namespace

// ---------------------------------------------------------------- estimator

TEST_CASE("estimator degenerate and deterministic cases") {
  Rng rng(1);
  mop::Estimator est(64, 64, 12, rng);
  Matrix c(1, 64);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);

  SUBCASE("zero weights and a silenced noise head give the uniform profile") {
    for (auto& p : est.params().all()) p.value.setZero();
    est.params()[est.noise_out().bias].value.setConstant(-INFINITY);
    ad::Tape tape;
    Matrix xi(1, 12);
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi.data()[i] = n(rng);
    const Matrix& p = tape.value(est.profile(tape, tape.constant(c), tape.constant(xi), false));
    for (int i = 0; i < 12; ++i) CHECK(p(0, i) == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
  }
  SUBCASE("same noise draws give the same profile") {
    auto draw = [&](std::uint64_t seed) {
      Rng r(seed);
      Matrix xi(1, 12);
      std::normal_distribution<double> nn(0.0, 1.0);
      for (Eigen::Index i = 0; i < xi.size(); ++i) xi.data()[i] = nn(r);
      ad::Tape tape;
      return Matrix(tape.value(est.profile(tape, tape.constant(c), tape.constant(xi), false)));
    };
    CHECK(draw(5) == draw(5));
    CHECK(draw(5) != draw(6));
    check_simplex(draw(7));
  }
  SUBCASE("noise-free softmax of a single raised logit") {
    const auto& last = est.weight_mlp().layers.back();
    est.params()[last.weight].value.setZero();
    est.params()[last.bias].value.setZero();
    est.params()[last.bias].value(0, 0) = 1.0;
    ad::Tape tape;
    const Matrix& p = tape.value(est.profile(tape, tape.constant(c), -1, false));
    CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 11.0)).epsilon(1e-12));
    CHECK(p(0, 0) == doctest::Approx(0.1983).epsilon(1e-3));
  }
}

TEST_CASE("estimator gradient check with noise") {
  Rng rng(2);
  mop::Estimator est(64, 64, 6, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix c(3, 64), xi(3, 6), w(3, 6);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  ad::Tape tape;
  const NodeId p = est.profile(tape, tape.constant(c), tape.constant(xi));
  const NodeId loss = tape.sum_all(tape.mul(tape.log(p), tape.constant(w)));
  CHECK(ad::finite_diff_check(tape, loss, ad::param_ptrs(est.params()), 1e-6, 100, rng) <= 1e-4);
}

// ---------------------------------------------------------------- bank

TEST_CASE("personality bank") {
  Rng rng(3);
  mop::Bank bank(kObs, 64, 12, 6, rng);
  SUBCASE("outputs are simplices") {
    for (int i = 0; i < 1000; ++i) check_simplex(bank.distributions(random_obs(1, rng)));
  }
  SUBCASE("personalities differ at init") {
    const Matrix d = bank.distributions(random_obs(1, rng));
    for (int i = 1; i < 12; ++i) CHECK((d.row(i) - d.row(0)).norm() > 1e-6);
  }
  SUBCASE("zero weights give uniform outputs") {
    for (auto& p : bank.params().all()) p.value.setZero();
    const Matrix d = bank.distributions(random_obs(1, rng));
    CHECK((d - Matrix::Constant(12, 6, 1.0 / 6.0)).norm() < 1e-15);
  }
  SUBCASE("batched rows are group-major") {
    const Matrix obs = random_obs(3, rng);
    ad::Tape tape;
    const Matrix& all = tape.value(bank.forward(tape, tape.constant(obs), false));
    CHECK(all.rows() == 36);
    CHECK((all.middleRows(12, 12) - bank.distributions(obs.row(1))).norm() == 0.0);
  }
}

TEST_CASE("bank gradient check") {
  Rng rng(4);
  mop::Bank bank(kObs, 64, 4, 6, rng);
  ad::Tape tape;
  const NodeId d = bank.forward(tape, tape.constant(random_obs(2, rng)));
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix w(8, 6);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  const NodeId loss = tape.sum_all(tape.mul(d, tape.constant(w)));
  CHECK(ad::finite_diff_check(tape, loss, ad::param_ptrs(bank.params()), 1e-6, 100, rng) <= 1e-4);
}

// ---------------------------------------------------------------- mixture

TEST_CASE("mixture policy examples") {
  Rng rng(5);
  const Matrix pers = random_simplex(4, 6, rng);
  for (int i = 0; i < 4; ++i) {
    Matrix p = Matrix::Zero(1, 4);
    p(0, i) = 1.0;
    CHECK(mop::mixture_policy(p, pers) == pers.row(i));
  }
  const Matrix uniform = Matrix::Constant(4, 6, 1.0 / 6.0);
  const Matrix out = mop::mixture_policy(random_simplex(1, 4, rng), uniform);
  for (int a = 0; a < 6; ++a) CHECK(out(0, a) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  Matrix two = Matrix::Zero(2, 6);
  two(0, 0) = 1.0;
  two(1, 1) = 1.0;
  Matrix p(1, 2);
  p << 0.25, 0.75;
  Matrix expect = Matrix::Zero(1, 6);
  expect(0, 0) = 0.25;
  expect(0, 1) = 0.75;
  CHECK(mop::mixture_policy(p, two) == expect);

  ad::Tape tape;
  const Matrix& batched = tape.value(mop::mixture(tape, tape.constant(p), tape.constant(two)));
  CHECK(batched == expect);
}

TEST_CASE("property: mixture is a linear map onto the simplex") {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix pers = random_simplex(12, 6, rng);
    const Matrix p = random_simplex(1, 12, rng);
    const Matrix q = random_simplex(1, 12, rng);
    const double alpha = u(rng);
    const Matrix lhs = mop::mixture_policy(alpha * p + (1 - alpha) * q, pers);
    const Matrix rhs = alpha * mop::mixture_policy(p, pers) + (1 - alpha) * mop::mixture_policy(q, pers);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
    check_simplex(lhs);
  }
}

// ---------------------------------------------------------------- partner acting and guidance

TEST_CASE("sampling") {
  Rng rng(7);
  Matrix onehot = Matrix::Zero(1, 6);
  onehot(0, 3) = 1.0;
  for (int i = 0; i < 100; ++i) {
    const auto [a, lp] = mop::Mop::sample(onehot, rng);
    CHECK(a == 3);
    CHECK(lp == 0.0);
  }
  const auto [a, lp] = mop::Mop::sample(Matrix::Constant(1, 6, 1.0 / 6.0), rng);
  CHECK(a >= 0);
  CHECK(lp == doctest::Approx(-1.7918).epsilon(1e-4));

  Matrix dist(1, 6);
  dist << 0.05, 0.3, 0.1, 0.25, 0.2, 0.1;
  const int n = 100000;
  std::vector<int> counts(6, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(mop::Mop::sample(dist, rng).first)];
  for (int i = 0; i < 6; ++i) {
    const double p = dist(0, i);
    const double sigma = std::sqrt(n * p * (1 - p));
    CHECK(std::abs(counts[static_cast<std::size_t>(i)] - n * p) <= 3 * sigma);
  }
}

TEST_CASE("guidance") {
  Rng rng(8);
  for (int k : {6, 8, 10, 12}) {
    CAPTURE(k);
    mop::Mop m(mop_config(k), rng);
    const Matrix obs = random_obs(1, rng);
    const ctx::ContextWindow empty = window(0, rng);
    const Matrix g0 = m.guide(obs, empty);
    check_simplex(g0);
    CHECK(g0 == m.guide(obs, empty));
    const ctx::ContextWindow five = window(5, rng);
    check_simplex(m.guide(obs, five));
    const auto step = m.step(obs, random_obs(1, rng), five, m.draw_noise(rng));
    CHECK(step.profile.cols() == k);
    CHECK(step.pers.rows() == k);
    check_simplex(step.profile);
    check_simplex(step.guidance);
    check_simplex(step.policy);
    check_simplex(step.pers);
  }
}

TEST_CASE("mop checkpoint round trip") {
  Rng rng(9);
  mop::Mop a(mop_config(4), rng);
  Rng other(10);
  mop::Mop b(mop_config(4), other);
  const auto path = std::filesystem::temp_directory_path() / "mopsan_mop_test.ckpt";
  a.save(path);
  b.load(path);
  for (auto [x, y] : {std::pair{&a.encoder().params(), &b.encoder().params()},
                      std::pair{&a.bank().params(), &b.bank().params()},
                      std::pair{&a.estimator().params(), &b.estimator().params()},
                      std::pair{&a.critic().params(), &b.critic().params()}}) {
    CHECK(x->hash() == y->hash());
  }
  mop::Mop wrong_k(mop_config(6), rng);
  CHECK_THROWS_AS(wrong_k.load(path), ad::CheckpointError);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------- dpp

TEST_CASE("cofactor oracle examples") {
  CHECK(cofactor::logdet(Matrix::Identity(3, 3)) == doctest::Approx(0.0));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 3.0;
  CHECK(cofactor::logdet(d) == doctest::Approx(std::log(6.0)));
  CHECK(cofactor::logdet(d) == doctest::Approx(1.7918).epsilon(1e-4));
  CHECK(std::isnan(cofactor::logdet(Matrix::Zero(2, 2))));
}

TEST_CASE("dpp reward examples") {
  Matrix ortho = Matrix::Identity(2, 2);
  CHECK(dpp::dpp_reward(ortho, 1e-12) == doctest::Approx(0.0).epsilon(1e-9));
  Matrix same(2, 2);
  same << 1, 0, 1, 0;
  CHECK(dpp::dpp_reward(same, 1e-6) == doctest::Approx(std::log(2e-6 + 1e-12)).epsilon(1e-9));
  CHECK(std::round(dpp::dpp_reward(same, 1e-6) * 1e2) / 1e2 == doctest::Approx(-13.12));
  const double deg = std::numbers::pi / 6.0;
  Matrix tilt(2, 2);
  tilt << 1, 0, std::cos(deg), std::sin(deg);
  CHECK(dpp::dpp_reward(tilt, 0.0) == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(std::abs(dpp::dpp_reward(tilt, 0.0) - (-1.3863)) < 5e-5);
}

TEST_CASE("property: Cholesky log det agrees with cofactor expansion") {
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + trial % 5;
    Matrix b(k, k + 2);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n(rng);
    const double chol = dpp::dpp_reward(b, 1e-6);
    Matrix gram = b * b.transpose();
    gram.diagonal().array() += 1e-6;
    CHECK(std::abs(chol - cofactor::logdet(gram)) <= 1e-8);
  }
}

TEST_CASE("feature map") {
  Rng rng(12);
  dpp::FeatureMap fm(6, 32, 16, rng);
  Matrix pers = random_simplex(5, 6, rng);
  pers.row(3) = pers.row(1);
  const Matrix f = fm.build_features(pers);
  CHECK(f.rows() == 5);
  CHECK(f.cols() == 16);
  CHECK(f.row(3) == f.row(1));
  for (int r = 0; r < 5; ++r) CHECK(std::abs(f.row(r).norm() - 1.0) <= 1e-9);

  SUBCASE("row gradients match finite differences") {
    ad::Tape tape;
    const NodeId feats = fm.features(tape, tape.constant(random_simplex(4, 6, rng)));
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix w(4, 16);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    const NodeId loss = tape.sum_all(tape.mul(feats, tape.constant(w)));
    CHECK(ad::finite_diff_check(tape, loss, ad::param_ptrs(fm.params()), 1e-6, 100, rng) <= 1e-4);
  }
  SUBCASE("reward gradient matches finite differences") {
    ad::Tape tape;
    const NodeId feats = fm.features(tape, tape.constant(random_simplex(2 * 6, 6, rng)));
    const NodeId loss = tape.mean_all(dpp::dpp_reward(tape, feats, 6, 1e-6));
    CHECK(ad::finite_diff_check(tape, loss, ad::param_ptrs(fm.params()), 1e-6, 100, rng) <= 1e-4);
  }
  SUBCASE("zero pre-normalization output is an error") {
    for (auto& p : fm.params().all()) p.value.setZero();
    CHECK_THROWS_AS(fm.build_features(pers), std::domain_error);
  }
}

TEST_CASE("property: permutation invariance and upper bound") {
  Rng rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + trial % 5;
    Matrix b(k, 16);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n(rng);
    b.rowwise().normalize();
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(k, 16);
    for (int i = 0; i < k; ++i) shuffled.row(i) = b.row(perm[static_cast<std::size_t>(i)]);
    CHECK(std::abs(dpp::dpp_reward(b, 1e-6) - dpp::dpp_reward(shuffled, 1e-6)) <= 1e-9);
    CHECK(dpp::dpp_reward(b, 0.0) <= 1e-12);
  }
  Matrix ortho = Matrix::Identity(4, 16);
  CHECK(std::abs(dpp::dpp_reward(ortho, 0.0)) <= 1e-12);
}

TEST_CASE("property: pairwise reward falls as the angle closes") {
  double prev = INFINITY;
  for (int step = 90; step >= 1; --step) {
    const double theta = step * std::numbers::pi / 180.0;
    Matrix b(2, 2);
    b << 1, 0, std::cos(theta), std::sin(theta);
    const double r = dpp::dpp_reward(b, 1e-6);
    CHECK(r < prev);
    prev = r;
  }
}
