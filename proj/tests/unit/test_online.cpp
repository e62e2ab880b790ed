#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <random>

#include "../support/toy.hpp"
#include "helpers.hpp"
#include "latdyn/bundle.hpp"
#include "latdyn/dataio.hpp"
#include "latdyn/error.hpp"
#include "latdyn/online.hpp"

using namespace latdyn;

namespace {

const ModelBundle& trained() {
  static const ModelBundle b = [] {
    TrainingConfig c;
    c.iterations = 30;
    c.check_every = 10;
    c.workers = 2;
    return train(toy::dataset(6, 30, 10), ArchitectureSpec::standard(3, 2, 2, 2, 2), LibrarySpec::constant_linear(), c);
  }();
  return b;
}

}  // namespace

TEST_CASE("relative L2 rate") {
  RowMatrix u(2, 3);
  u << 1, -2, 3, 0.5, 0, 4;
  CHECK(online::l2_rate(u, u) == 0.0);
  CHECK(online::l2_rate(RowMatrix(2.0 * u), u) == doctest::Approx(100.0));
  CHECK(online::l2_rate(RowMatrix::Zero(2, 3), u) == doctest::Approx(100.0));
  RowMatrix v = u;
  v(0, 0) += 0.3;
  CHECK(online::l2_rate(RowMatrix(-3.0 * v), RowMatrix(-3.0 * u)) == doctest::Approx(online::l2_rate(v, u)));
  CHECK_THROWS_AS(online::l2_rate(u, RowMatrix::Zero(2, 3)), InvalidArgument);
  CHECK_THROWS_AS(online::l2_rate(u, RowMatrix::Zero(3, 2)), DimensionError);
}

TEST_CASE("prediction at a training point uses its coefficients") {
  const auto& b = trained();
  online::PredictionRequest req{b.train_mu[2], toy::dataset(1, 12, 1).trajectories[0].coords, {}};
  online::PredictionDetails det;
  const auto p = online::predict(b, req, &det);
  CHECK(det.interpolation.exact_match);
  CHECK(det.interpolation.xi == b.xi[2]);
  CHECK(p.fields.rows() == static_cast<Eigen::Index>(b.times.size()));
  CHECK(p.fields.cols() == 12 * 2);
  CHECK(p.fields.allFinite());
  CHECK(online::predict(b, req).fields == p.fields);
}

TEST_CASE("mesh-free queries and permutation equivariance") {
  const auto& b = trained();
  std::mt19937_64 rng(1);
  RowMatrix x = testing::random_matrix(40, 2, rng, 0.99);
  online::PredictionRequest req{Vector(2), x, {}};
  req.mu << 0.81, 1.03;
  const auto p = online::predict(b, req);
  CHECK(p.fields.allFinite());
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  RowMatrix xp(40, 2);
  for (int i = 0; i < 40; ++i) xp.row(i) = x.row(perm[i]);
  req.coords = xp;
  const auto q = online::predict(b, req);
  for (Eigen::Index m = 0; m < p.n_times(); ++m)
    for (int i = 0; i < 40; ++i) CHECK(q.snapshot(m).row(i) == p.snapshot(m).row(perm[i]));
}

TEST_CASE("prediction input validation") {
  const auto& b = trained();
  online::PredictionRequest req{Vector::Ones(3), RowMatrix::Zero(2, 2), {}};
  CHECK_THROWS_AS(online::predict(b, req), DimensionError);
  req.mu = Vector::Ones(2);
  req.coords = RowMatrix::Zero(2, 3);
  CHECK_THROWS_AS(online::predict(b, req), DimensionError);
  req.coords = RowMatrix::Zero(2, 2);
  req.times = {0.0, 0.3};
  CHECK_THROWS_AS(online::predict(b, req), InvalidArgument);
}

TEST_CASE("prediction needs no training data") {
  testing::TempDir tmp("offline");
  dataio::save_dataset(tmp.str("data"), toy::dataset(6, 30, 10));
  const auto data = dataio::load_dataset(tmp.str("data"));
  TrainingConfig c;
  c.iterations = 5;
  c.check_every = 5;
  const auto b = train(data, ArchitectureSpec::standard(2, 2, 2, 2, 2), LibrarySpec::constant_linear(), c);
  dataio::save_bundle(tmp.str("bundle"), b);
  std::filesystem::remove_all(tmp.path() / "data");
  const auto loaded = dataio::load_bundle(tmp.str("bundle"));
  online::PredictionRequest req{Vector(2), RowMatrix::Zero(3, 2), {}};
  req.mu << 0.8, 1.0;
  CHECK(online::predict(loaded, req).fields.allFinite());
}

TEST_CASE("evaluation report") {
  const auto& b = trained();
  // Truth built from the bundle's own predictions scores exactly zero.
  Dataset truth;
  truth.times = b.times;
  truth.fields = {"u", "v"};
  for (int i = 0; i < 3; ++i) {
    online::PredictionRequest req{Vector(2), toy::dataset(1, 10, 1).trajectories[0].coords, {}};
    req.mu << 0.72 + 0.05 * i, 0.95;
    auto tr = online::predict(b, req);
    tr.id = "t" + std::to_string(i);
    tr.wall_clock_seconds = 2.0;
    truth.trajectories.push_back(tr);
  }
  const auto rep = online::evaluate_testset(b, truth);
  REQUIRE(rep.entries.size() == 3);
  for (const auto& e : rep.entries) CHECK(e.rl2 == 0.0);
  CHECK(rep.aggregate_rl2 == 0.0);
  CHECK(rep.hf_seconds == doctest::Approx(6.0));
  CHECK(rep.speedup > 0.0);

  truth.trajectories[1].fields *= 2.0;
  const auto rep2 = online::evaluate_testset(b, truth);
  CHECK(rep2.entries[1].rl2 == doctest::Approx(50.0));

  std::vector<Vector> want{truth.trajectories[0].mu, Vector::Constant(2, 5.0)};
  const auto part = online::evaluate_testset(b, truth, want);
  CHECK(part.partial);
  CHECK(part.entries.size() == 1);
  CHECK(part.missing.size() == 1);

  testing::TempDir tmp("report");
  online::write_report_csv(tmp.str("r.csv"), rep2);
  const auto rows = dataio::read_csv(tmp.str("r.csv"));
  CHECK(rows.rows() == 3);
  CHECK(rows.cols() == 5);
  CHECK(rows(1, 2) == doctest::Approx(50.0));
}
