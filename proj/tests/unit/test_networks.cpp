#include <doctest.h>

#include <numeric>
#include <random>

#include "helpers.hpp"
#include "latdyn/error.hpp"
#include "latdyn/networks.hpp"

using namespace latdyn;
using ad::ParamStore;

namespace {

void zero_all(ParamStore& s) {
  for (std::size_t b = 0; b < s.size(); ++b) s.block(b).value.setZero();
}

void zero_prefix(ParamStore& s, const std::string& prefix) {
  for (std::size_t b = 0; b < s.size(); ++b)
    if (s.block(b).name.rfind(prefix, 0) == 0) s.block(b).value.setZero();
}

// Sets the final layer of a network to produce a constant output c.
void force_constant_output(ParamStore& s, const NetworkSpec& net, const Vector& c) {
  zero_prefix(s, net.name + ".");
  const std::string last = net.name + "." + std::to_string(net.layers.size() - 1);
  for (std::size_t b = 0; b < s.size(); ++b) {
    const auto& name = s.block(b).name;
    if (name.rfind(last, 0) == 0 && name.size() >= 2 && name.substr(name.size() - 2) == ".b")
      s.block(b).value.col(0) = c;
  }
}

}  // namespace

TEST_CASE("architecture widths") {
  const auto a = ArchitectureSpec::burgers(5, 2);
  CHECK(a.dyn.input_width() == 7);
  CHECK(a.dyn.output_width() == 10);
  CHECK(a.z0.input_width() == 2);
  CHECK(a.z0.output_width() == 5);
  CHECK(a.rec.input_width() == 5 + 2 + 2);
  CHECK(a.rec.output_width() == 2);

  const auto b = ArchitectureSpec::standard(3, 2, 2, 1, 1);
  CHECK(b.dyn.output_width() == 3);
  CHECK_NOTHROW(b.validate());

  auto bad = a;
  bad.dyn.layers.back().out = 9;
  CHECK_THROWS_AS(bad.validate(), SpecError);

  const auto rt = architecture_from_json(to_json(a));
  CHECK(rt.dyn.layers.size() == a.dyn.layers.size());
  CHECK(rt.latent_dim == 5);
}

TEST_CASE("initialization is seeded and bounded") {
  const auto a = ArchitectureSpec::burgers(5, 2);
  ParamStore s1, s2, s3;
  build_networks(a, 42, s1);
  build_networks(a, 42, s2);
  build_networks(a, 43, s3);
  bool differs = false;
  for (std::size_t b = 0; b < s1.size(); ++b) {
    CHECK(s1.block(b).value == s2.block(b).value);
    differs = differs || s1.block(b).value != s3.block(b).value;
    const auto& v = s1.block(b).value;
    const auto& name = s1.block(b).name;
    if (name.back() == 'b' && name[name.size() - 2] == '.') {
      CHECK(v.isZero(0.0));
    } else {
      CHECK(v.cwiseAbs().maxCoeff() <= std::sqrt(1.0 / static_cast<double>(v.cols())));
    }
  }
  CHECK(differs);
}

TEST_CASE("resnet block identity and zero cases") {
  ParamStore s;
  std::mt19937_64 rng(2);
  s.add("n.0.W1", Matrix::Zero(4, 4));
  s.add("n.0.b1", Matrix::Zero(4, 1));
  s.add("n.0.W2", Matrix::Zero(4, 4));
  s.add("n.0.b2", Matrix::Zero(4, 1));
  const Matrix x = testing::random_matrix(3, 4, rng);
  CHECK(resnet_block_forward(s, "n.0", x).isApprox(x));
  CHECK(resnet_block_forward(s, "n.0", Matrix::Zero(2, 4)).isZero(0.0));
}

TEST_CASE("resnet block gradient against finite differences") {
  const auto a = ArchitectureSpec::burgers(3, 2);
  ParamStore s;
  build_networks(a, 9, s);
  std::mt19937_64 rng(4);
  for (std::size_t b = 0; b < s.size(); ++b) s.block(b).value += testing::random_matrix(s.block(b).value.rows(), s.block(b).value.cols(), rng, 0.1);
  const Network dyn(a.dyn, s);
  const Matrix x = testing::random_matrix(4, a.dyn.input_width(), rng);
  auto build = [&](ad::Tape& t) { return t.sum_squares(dyn.record(t, t.input(x))); };
  CHECK(ad::finite_difference_check(build, s, 1e-5) < 1e-4);
}

TEST_CASE("record and evaluate agree") {
  const auto a = ArchitectureSpec::burgers(5, 2);
  ParamStore s;
  build_networks(a, 1, s);
  std::mt19937_64 rng(8);
  const Network rec(a.rec, s);
  const Matrix x = testing::random_matrix(17, a.rec.input_width(), rng);
  ad::Tape t(s);
  auto y = rec.record(t, t.input(x));
  CHECK((t.value(y) - rec.evaluate(s, x)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("initial state network") {
  const auto a = ArchitectureSpec::burgers(5, 2);
  ParamStore s;
  build_networks(a, 1, s);
  const LatentModel m(a, s);
  Matrix mu(2, 2);
  mu << 0.2, -0.5, -0.7, 0.9;
  const Matrix z = m.initial_state(s, mu);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 5);
  CHECK(z.row(0) != z.row(1));

  ParamStore zs;
  build_networks(a, 1, zs);
  zero_all(zs);
  const LatentModel mz(a, zs);
  CHECK(mz.initial_state(zs, mu).isZero(0.0));

  auto build = [&](ad::Tape& t) { return t.sum_squares(m.z0().record(t, t.input(mu))); };
  CHECK(ad::finite_difference_check(build, s, 1e-5) < 1e-4);
}

TEST_CASE("taylor rollout forced cases") {
  Vector z0(3);
  z0 << 0.3, -0.2, 0.1;
  Vector mu(2);
  mu << 0.1, 0.2;
  const double dt = 0.01;
  const int n = 20;

  SUBCASE("zero dynamics keeps the state") {
    const auto a = ArchitectureSpec::standard(3, 2, 2, 2, 2);
    ParamStore s;
    build_networks(a, 3, s);
    zero_prefix(s, "dyn.");
    const auto tr = LatentModel(a, s).rollout(s, z0, mu, dt, n);
    CHECK(tr.z.rows() == n + 1);
    for (int m = 0; m <= n; ++m) CHECK(tr.z.row(m) == z0.transpose());
  }
  SUBCASE("order one constant derivative") {
    const auto a = ArchitectureSpec::standard(3, 2, 2, 2, 1);
    ParamStore s;
    build_networks(a, 3, s);
    Vector c(3);
    c << 1.0, -2.0, 0.5;
    force_constant_output(s, a.dyn, c);
    const auto tr = LatentModel(a, s).rollout(s, z0, mu, dt, n);
    for (int m = 0; m <= n; ++m)
      CHECK((tr.z.row(m).transpose() - (z0 + m * dt * c)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("order two with only a second derivative") {
    const auto a = ArchitectureSpec::standard(3, 2, 2, 2, 2);
    ParamStore s;
    build_networks(a, 3, s);
    Vector c(6);
    c << 0, 0, 0, 1.0, -2.0, 0.5;
    force_constant_output(s, a.dyn, c);
    const auto tr = LatentModel(a, s).rollout(s, z0, mu, dt, n);
    for (int m = 0; m <= n; ++m)
      CHECK((tr.z.row(m).transpose() - (z0 + m * dt * dt * c.tail(3))).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("rollout determinism and tape agreement") {
  const auto a = ArchitectureSpec::burgers(4, 2);
  ParamStore s;
  build_networks(a, 5, s);
  const LatentModel m(a, s);
  Vector z0 = Vector::Constant(4, 0.1);
  Vector mu(2);
  mu << 0.3, -0.4;
  const auto t1 = m.rollout(s, z0, mu, 0.005, 30);
  const auto t2 = m.rollout(s, z0, mu, 0.005, 30);
  CHECK(t1.z == t2.z);
  CHECK(t1.zdot.rows() == 31);

  ad::Tape t(s);
  auto nodes = record_rollout(t, m.dyn(), 2, t.input(z0.transpose()), t.input(mu.transpose()), 0.005, 30);
  REQUIRE(nodes.z.size() == 31);
  for (int k = 0; k <= 30; ++k) {
    CHECK((t.value(nodes.z[k]).row(0) - t1.z.row(k)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((t.value(nodes.zdot[k]).row(0) - t1.zdot.row(k)).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("reconstruction network") {
  const auto a = ArchitectureSpec::burgers(5, 2);
  ParamStore s;
  build_networks(a, 6, s);
  const LatentModel m(a, s);
  std::mt19937_64 rng(12);
  const Vector z = testing::random_matrix(5, 1, rng);
  const Vector mu = testing::random_matrix(2, 1, rng);
  const Matrix x = testing::random_matrix(2500, 2, rng);
  const Matrix batched = m.reconstruct(s, z, mu, x);
  CHECK(batched.rows() == 2500);
  CHECK(batched.cols() == 2);
  for (int i = 0; i < 2500; i += 97) CHECK((m.reconstruct(s, z, mu, x.row(i)) - batched.row(i)).cwiseAbs().maxCoeff() < 1e-14);

  std::vector<int> perm(2500);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix xp(2500, 2);
  for (int i = 0; i < 2500; ++i) xp.row(i) = x.row(perm[i]);
  const Matrix yp = m.reconstruct(s, z, mu, xp);
  for (int i = 0; i < 2500; ++i) CHECK((yp.row(i) - batched.row(perm[i])).cwiseAbs().maxCoeff() <= 1e-15);

  Matrix off(1, 2);
  off << 0.123456, -0.987654;
  CHECK(m.reconstruct(s, z, mu, off).allFinite());

  ParamStore zs;
  build_networks(a, 6, zs);
  zero_all(zs);
  CHECK(LatentModel(a, zs).reconstruct(zs, z, mu, x).isZero(0.0));
}
