#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "latdyn/autodiff.hpp"
#include "latdyn/error.hpp"

using namespace latdyn::ad;

namespace {

// Central differences taken directly on a plain forward function, independent of the tape.
double fd_rel_error(ParamStore& store, const GradBuffer& analytic, const std::function<double()>& f, double h) {
  double worst = 0.0;
  for (std::size_t b = 0; b < store.size(); ++b) {
    Matrix& v = store.block(b).value;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double keep = v.data()[k];
      v.data()[k] = keep + h;
      const double fp = f();
      v.data()[k] = keep - h;
      const double fm = f();
      v.data()[k] = keep;
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[b].data()[k];
      const double rel = std::abs(ana - num) / std::max(std::abs(num), 1e-6);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("affine examples") {
  ParamStore s;
  s.add("W", Matrix::Identity(3, 3));
  s.add("b", Matrix::Zero(3, 1));
  Tape t(s);
  Matrix x(1, 3);
  x << 1, 2, 3;
  auto y = t.affine(t.input(x), t.param("W"), t.param("b"));
  CHECK(t.value(y).isApprox(x));

  ParamStore z;
  z.add("W", Matrix::Zero(1, 4));
  z.add("b", Matrix::Constant(1, 1, 0.5));
  Tape tz(z);
  auto yz = tz.affine(tz.input(Matrix::Random(3, 4)), tz.param("W"), tz.param("b"));
  CHECK(tz.value(yz).isApprox(Matrix::Constant(3, 1, 0.5)));

  ParamStore a;
  a.add("W", Matrix::Constant(1, 1, 2.0));
  a.add("b", Matrix::Constant(1, 1, 1.0));
  Tape ta(a);
  auto ya = ta.affine(ta.input(Matrix::Constant(1, 1, 3.0)), ta.param("W"), ta.param("b"));
  CHECK(ta.value(ya)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("affine rejects mismatched widths") {
  ParamStore s;
  s.add("W", Matrix::Zero(2, 3));
  s.add("b", Matrix::Zero(2, 1));
  Tape t(s);
  CHECK_THROWS_AS(t.affine(t.input(Matrix::Zero(1, 4)), t.param("W"), t.param("b")), latdyn::DimensionError);
}

TEST_CASE("tanh values and derivative") {
  ParamStore s;
  s.add("w", Matrix::Zero(1, 1));
  Tape t(s);
  auto y = t.tanh(t.param("w"));
  CHECK(t.value(y)(0, 0) == 0.0);
  GradBuffer g(s);
  t.backward(y, 1.0, g);
  CHECK(g[0](0, 0) == doctest::Approx(1.0));

  Tape big(s);
  Matrix x(1, 4);
  x << 5, 10, 20, 400;
  auto yb = big.tanh(big.input(x));
  const Matrix& v = big.value(yb);
  for (int k = 0; k < 4; ++k) {
    CHECK(v(0, k) > 0.0);
    CHECK(v(0, k) <= 1.0);
    if (k) CHECK(v(0, k) >= v(0, k - 1));
  }
  CHECK(v(0, 3) == 1.0);
  CHECK(v(0, 0) < 1.0);
}

TEST_CASE("tanh kernel matches libm") {
  std::mt19937_64 rng(1);
  Matrix x = testing::random_matrix(1, 4001, rng, 25.0);
  x(0, 0) = 0.0;
  x(0, 1) = -1e-300;
  x(0, 2) = 1e-9;
  ParamStore s;
  Tape t(s);
  auto y = t.tanh(t.input(x));
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double ref = std::tanh(x(0, k));
    CHECK(std::abs(t.value(y)(0, k) - ref) <= 4e-16 * std::max(1.0, std::abs(ref)) + 1e-300);
  }
}

TEST_CASE("scalar calculus examples") {
  ParamStore s;
  s.add("w", Matrix::Constant(1, 1, 3.0));
  Tape t(s);
  auto f = t.sum_squares(t.param("w"));
  CHECK(t.value(f)(0, 0) == doctest::Approx(9.0));
  GradBuffer g(s);
  t.backward(f, 1.0, g);
  CHECK(g[0](0, 0) == doctest::Approx(6.0));
}

TEST_CASE("composite chain against central differences") {
  std::mt19937_64 rng(7);
  ParamStore s;
  s.add("W1", testing::random_matrix(6, 4, rng));
  s.add("b1", testing::random_matrix(6, 1, rng));
  s.add("W2", testing::random_matrix(3, 6, rng));
  s.add("b2", testing::random_matrix(3, 1, rng));
  const Matrix x = testing::random_matrix(5, 4, rng);

  // Plain Eigen forward, no tape.
  auto forward = [&] {
    Matrix h = (x * s.value("W1").transpose()).rowwise() + s.value("b1").col(0).transpose();
    h = h.array().tanh();
    Matrix y = (h * s.value("W2").transpose()).rowwise() + s.value("b2").col(0).transpose();
    return y.squaredNorm();
  };
  Tape t(s);
  auto h = t.tanh(t.affine(t.input(x), t.param("W1"), t.param("b1")));
  auto y = t.sum_squares(t.affine(h, t.param("W2"), t.param("b2")));
  CHECK(t.value(y)(0, 0) == doctest::Approx(forward()).epsilon(1e-13));
  GradBuffer g(s);
  t.backward(y, 1.0, g);
  CHECK(fd_rel_error(s, g, forward, 1e-5) < 1e-5);
}

TEST_CASE("every primitive passes central differences over random draws") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    ParamStore s;
    s.add("A", testing::random_matrix(3, 4, rng));
    s.add("B", testing::random_matrix(3, 4, rng));
    s.add("W", testing::random_matrix(2, 5, rng));
    s.add("b", testing::random_matrix(2, 1, rng));
    auto build = [&](Tape& t) {
      auto a = t.param("A");
      auto bm = t.param("B");
      auto sum = t.add(a, t.tanh(bm));
      auto diff = t.scale(t.sub(sum, bm), 0.7);
      std::vector<NodeId> parts{diff, t.slice_cols(a, 1, 1)};
      auto cat = t.concat_cols(parts);
      auto lin = t.tanh(t.affine(cat, t.param("W"), t.param("b")));
      std::vector<NodeId> sc{t.sum_squares(lin), t.sum_squares(t.slice_cols(cat, 0, 2))};
      std::vector<double> w{1.3, -0.4};
      return t.weighted_sum(sc, w);
    };
    worst = std::max(worst, finite_difference_check(build, s, 1e-5));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient check utility examples") {
  ParamStore s;
  s.add("w", Matrix::Constant(2, 2, 0.3));
  auto quad = [](Tape& t) { return t.sum_squares(t.scale(t.param("w"), 2.0)); };
  CHECK(finite_difference_check(quad, s, 1e-5) < 1e-6);

  ParamStore c;
  c.add("w", Matrix::Constant(1, 1, 2.0));
  auto constant = [](Tape& t) { return t.sum_squares(t.input(Matrix::Constant(1, 1, 4.0))); };
  Tape t(c);
  GradBuffer g(c);
  t.backward(constant(t), 1.0, g);
  CHECK(g[0](0, 0) == 0.0);
  CHECK(finite_difference_check(constant, c, 1e-5) == 0.0);
}

TEST_CASE("backward is linear in the seed") {
  std::mt19937_64 rng(3);
  ParamStore s;
  s.add("W", testing::random_matrix(4, 3, rng));
  s.add("b", testing::random_matrix(4, 1, rng));
  Tape t(s);
  auto y = t.tanh(t.affine(t.input(testing::random_matrix(6, 3, rng)), t.param("W"), t.param("b")));
  const Matrix seed = testing::random_matrix(6, 4, rng);
  GradBuffer g1(s), g2(s);
  t.backward(y, seed, g1);
  t.backward(y, Matrix(2.0 * seed), g2);
  for (std::size_t b = 0; b < s.size(); ++b) CHECK((g2[b] - 2.0 * g1[b]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("replay reproduces forward values and tracks parameter changes") {
  std::mt19937_64 rng(5);
  ParamStore s;
  s.add("W", testing::random_matrix(2, 3, rng));
  s.add("b", testing::random_matrix(2, 1, rng));
  Tape t(s);
  auto y = t.tanh(t.affine(t.input(testing::random_matrix(4, 3, rng)), t.param("W"), t.param("b")));
  const Matrix before = t.value(y);
  t.replay();
  CHECK(t.value(y) == before);
  s.value("b").setConstant(10.0);
  t.replay();
  CHECK(t.value(y) != before);
}

TEST_CASE("parameter store bookkeeping") {
  ParamStore s;
  s.add("a", Matrix::Zero(2, 3));
  s.add("b", Matrix::Zero(4, 1));
  CHECK(s.num_scalars() == 10);
  CHECK(s.contains("a"));
  CHECK_FALSE(s.contains("c"));
  CHECK_THROWS_AS(s.add("a", Matrix::Zero(1, 1)), latdyn::SpecError);
}
