#include <doctest.h>

#include <random>

#include "../support/toy.hpp"
#include "helpers.hpp"
#include "latdyn/bundle.hpp"
#include "latdyn/error.hpp"
#include "latdyn/log.hpp"
#include "latdyn/training.hpp"

using namespace latdyn;

namespace {

struct Toy {
  Dataset data;
  Normalizers norm;
  TrainingSet set;
  TrainableModel model;
  Toy(int n_traj, int n_points, int n_steps, int ns, std::uint64_t seed = 1)
      : data(toy::dataset(n_traj, n_points, n_steps)),
        norm(build_normalizers(data, 1.0)),
        set(make_training_set(data, norm)),
        model(ArchitectureSpec::standard(ns, 2, 2, 2, 2), LibrarySpec::constant_linear(), n_traj, seed) {}
};

void perturb(ad::ParamStore& s, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < s.size(); ++b) {
    auto& v = s.block(b).value;
    v += testing::random_matrix(v.rows(), v.cols(), rng, scale);
  }
}

}  // namespace

TEST_CASE("normalizer examples") {
  Vector lo(1), hi(1);
  lo << 0.7;
  hi << 0.9;
  auto n = Normalizer::from_bounds(lo, hi);
  CHECK(n.ref()[0] == doctest::Approx(0.8));
  CHECK(n.half()[0] == doctest::Approx(0.1));
  CHECK(n.normalize(hi)[0] == doctest::Approx(1.0));

  lo << -3.0;
  hi << 3.0;
  n = Normalizer::from_bounds(lo, hi, 1.0);
  CHECK(n.ref()[0] == 0.0);
  CHECK(n.half()[0] == doctest::Approx(3.0));
  CHECK(n.normalize(hi)[0] == doctest::Approx(1.0));

  std::mt19937_64 rng(3);
  Vector l3(3), h3(3);
  l3 << -2, 0.5, 1e-3;
  h3 << 2, 0.9, 5e-3;
  const auto n3 = Normalizer::from_bounds(l3, h3, 1.5);
  for (int i = 0; i < 1000; ++i) {
    const Vector v = testing::random_matrix(3, 1, rng, 10.0);
    CHECK((n3.denormalize(n3.normalize(v)) - v).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + v.cwiseAbs().maxCoeff()));
  }

  std::vector<std::string> warnings;
  log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
  Vector same(1);
  same << 2.0;
  const auto d = Normalizer::from_bounds(same, same);
  CHECK(warnings.size() == 1);
  CHECK(std::isfinite(d.normalize(same)[0]));
  CHECK(normalizer_from_json(to_json(n3)).half() == n3.half());
}

TEST_CASE("normalized network inputs stay inside the range") {
  for (double range : {1.0, 2.0}) {
    const auto data = toy::dataset(5, 30, 4);
    const auto norm = build_normalizers(data, range);
    const auto set = make_training_set(data, norm);
    CHECK(set.mu.cwiseAbs().maxCoeff() <= range + 1e-12);
    for (const auto& c : set.coords) CHECK(c.cwiseAbs().maxCoeff() <= range + 1e-12);
    for (const auto& f : set.fields) CHECK(f.cwiseAbs().maxCoeff() <= range + 1e-12);
  }
}

TEST_CASE("training set validation") {
  auto data = toy::dataset(2, 10, 4);
  data.times[2] += 0.01;
  for (auto& t : data.trajectories) t.times = data.times;
  const auto norm = build_normalizers(data, 1.0);
  CHECK_THROWS_AS(make_training_set(data, norm), InvalidArgument);
  auto short_data = toy::dataset(2, 10, 4);
  short_data.trajectories[1].fields.conservativeResize(3, Eigen::NoChange);
  CHECK_THROWS_AS(make_training_set(short_data, build_normalizers(short_data, 1.0)), DimensionError);
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0, 0.05, 0.6, 500) == doctest::Approx(0.05));
  CHECK(lr_schedule(499, 0.05, 0.6, 500) == doctest::Approx(0.05));
  CHECK(lr_schedule(500, 0.05, 0.6, 500) == doctest::Approx(0.03));
  CHECK(lr_schedule(1000, 0.05, 0.6, 500) == doctest::Approx(0.018));
}

TEST_CASE("Burgers training hyperparameters are the defaults") {
  const TrainingConfig c;
  CHECK(c.iterations == 6000);
  CHECK(c.check_every == 500);
  CHECK(c.learning_rate == 0.05);
  CHECK(c.lr_decay == 0.6);
  CHECK(c.lr_period == 500);
  CHECK(c.w_id == 0.05);
  CHECK(c.w_z0 == 0.5);
  CHECK(c.w_coef == 0.0);
  const auto rt = training_config_from_json(to_json(c));
  CHECK(rt.iterations == c.iterations);
}

TEST_CASE("adam examples") {
  ad::ParamStore s;
  s.add("w", Matrix::Constant(2, 2, 0.5));
  AdamState st;
  s.zero_grad();
  adam_step(s, st, 0.1);
  CHECK(s.value("w") == Matrix::Constant(2, 2, 0.5));

  // Independent recurrence: with constant g the bias-corrected step is lr * g / (|g| + eps').
  ad::ParamStore c;
  c.add("w", Matrix::Zero(1, 1));
  AdamState sc;
  double m = 0, v = 0, w = 0, last = 0;
  const double g = 0.37, lr = 0.01;
  for (int k = 1; k <= 200; ++k) {
    c.block(0).grad(0, 0) = g;
    const double before = c.value("w")(0, 0);
    adam_step(c, sc, lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= lr * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
    CHECK(c.value("w")(0, 0) == doctest::Approx(w).epsilon(1e-12));
    last = before - c.value("w")(0, 0);
  }
  CHECK(last == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("batch construction") {
  Toy t(3, 40, 5, 2);
  const auto all = make_batch(t.set, 0, 1);
  CHECK(all.offsets.size() == 3 * 6 + 1);
  CHECK(all.points.size() == 3u * 6 * 40);
  const auto some = make_batch(t.set, 7, 1);
  CHECK(some.points.size() == 3u * 6 * 7);
  const auto again = make_batch(t.set, 7, 1);
  CHECK(some.points == again.points);
  for (auto p : some.points) {
    CHECK(p >= 0);
    CHECK(p < 40);
  }
}

TEST_CASE("loss special cases") {
  SUBCASE("zero data and zero parameters give zero loss") {
    auto data = toy::dataset(2, 10, 3);
    for (auto& tr : data.trajectories) tr.fields.setZero();
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
    const auto norm = build_normalizers(data, 1.0);
    const auto set = make_training_set(data, norm);
    TrainableModel model(ArchitectureSpec::standard(3, 2, 2, 2, 2), LibrarySpec::constant_linear(), 2, 1);
    for (std::size_t b = 0; b < model.store.size(); ++b) model.store.block(b).value.setZero();
    const auto l = total_loss(model, set, make_batch(set, 0, 0), {}, nullptr, 1);
    CHECK(l.total == 0.0);
  }
  SUBCASE("coefficient penalty alone") {
    auto data = toy::dataset(1, 10, 3);
    for (auto& tr : data.trajectories) tr.fields.setZero();
    log::ScopedSink sink([](const std::string&) {});
    const auto set = make_training_set(data, build_normalizers(data, 1.0));
    TrainableModel model(ArchitectureSpec::standard(2, 2, 2, 2, 2), LibrarySpec::constant_linear(), 1, 1);
    for (std::size_t b = 0; b < model.store.size(); ++b) model.store.block(b).value.setZero();
    // Ξ acting only through the constant column would leave an ID residual, so use the
    // linear block: with z = 0 the identified derivative is 0 as well.
    auto& xi = model.store.block(model.xi[0]).value;
    xi.setZero();
    xi(1, 0) = 0.6;
    xi(2, 1) = 0.8;
    LossWeights w{0.05, 0.5, 1.0};
    const auto l = total_loss(model, set, make_batch(set, 0, 0), w, nullptr, 1);
    CHECK(l.total == doctest::Approx(1.0));
  }
}

TEST_CASE("loss matches the reference evaluation and its decomposition") {
  Toy t(3, 20, 6, 3);
  perturb(t.model.store, 0.2, 9);
  const LossWeights w{0.05, 0.5, 0.01};
  const auto batch = make_batch(t.set, 5, 4);
  const auto l = total_loss(t.model, t.set, batch, w, nullptr, 2);
  const auto ref = toy::reference_loss(t.model, t.set, batch, w);
  CHECK(l.rec == doctest::Approx(ref.rec).epsilon(1e-12));
  CHECK(l.z0 == doctest::Approx(ref.z0).epsilon(1e-12));
  CHECK(l.id == doctest::Approx(ref.id).epsilon(1e-12));
  CHECK(l.coef == doctest::Approx(ref.coef).epsilon(1e-12));
  CHECK(std::abs(l.total - (l.rec + w.w_z0 * l.z0 + w.w_id * l.id + w.w_coef * l.coef)) <= 1e-12);
}

TEST_CASE("loss is independent of chunking and worker count") {
  Toy t(4, 30, 8, 3);
  perturb(t.model.store, 0.1, 2);
  const auto batch = make_batch(t.set, 0, 0);
  ad::GradBuffer g1(t.model.store), g2(t.model.store), g3(t.model.store);
  const auto a = total_loss(t.model, t.set, batch, {}, &g1, 1, 2048);
  const auto b = total_loss(t.model, t.set, batch, {}, &g2, 4, 2048);
  const auto c = total_loss(t.model, t.set, batch, {}, &g3, 3, 45);
  CHECK(a.total == b.total);
  CHECK(a.total == doctest::Approx(c.total).epsilon(1e-13));
  for (std::size_t k = 0; k < g1.size(); ++k) {
    CHECK(g1[k] == g2[k]);
    CHECK((g1[k] - g3[k]).cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + g1[k].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("loss gradient against central differences of the reference") {
  Toy t(2, 25, 10, 2);
  perturb(t.model.store, 0.1, 5);
  const LossWeights w{0.05, 0.5, 0.0};
  const auto batch = make_batch(t.set, 0, 0);
  ad::GradBuffer g(t.model.store);
  total_loss(t.model, t.set, batch, w, &g, 1);
  CHECK(toy::gradient_error(t.model, t.set, batch, w, g) < 1e-4);
}

TEST_CASE("a few Adam steps reduce the loss") {
  Toy t(3, 30, 6, 3);
  const auto batch = make_batch(t.set, 0, 0);
  const LossWeights w;
  AdamState st;
  const double first = total_loss(t.model, t.set, batch, w, nullptr, 1).total;
  for (int k = 0; k < 50; ++k) {
    ad::GradBuffer g(t.model.store);
    total_loss(t.model, t.set, batch, w, &g, 1);
    t.model.store.zero_grad();
    g.accumulate_into(t.model.store);
    adam_step(t.model.store, st, 0.01);
  }
  const double last = total_loss(t.model, t.set, batch, w, nullptr, 1).total;
  CHECK(last <= 0.5 * first);
}

TEST_CASE("training loop stopping rules") {
  const auto data = toy::dataset(3, 20, 5);
  const auto arch = ArchitectureSpec::standard(2, 2, 2, 2, 2);
  TrainingConfig c;
  c.iterations = 40;
  c.check_every = 10;
  c.workers = 2;

  SUBCASE("infinite tolerances stop at the first check") {
    c.tol_latent = std::numeric_limits<double>::infinity();
    c.tol_loss = std::numeric_limits<double>::infinity();
    const auto b = train(data, arch, LibrarySpec::constant_linear(), c);
    CHECK(b.status == "converged");
    CHECK(b.iterations_run == 10);
    CHECK(b.log.size() == 10);
  }
  SUBCASE("zero tolerances run to the end") {
    c.tol_latent = 0.0;
    c.tol_loss = 0.0;
    const auto b = train(data, arch, LibrarySpec::constant_linear(), c);
    CHECK(b.status == "max-iterations");
    CHECK(b.iterations_run == 40);
    int checks = 0;
    for (const auto& r : b.log) checks += !std::isnan(r.latent_rl2);
    CHECK(checks == 4);
  }
  SUBCASE("stops at the first check where both tolerances hold") {
    c.tol_latent = 0.0;
    c.tol_loss = 0.0;
    const auto full = train(data, arch, LibrarySpec::constant_linear(), c);
    // Pick tolerances that the recorded log first satisfies at some check.
    long expect = -1;
    double tl = 0.0, tv = 0.0;
    for (const auto& r : full.log) {
      if (std::isnan(r.latent_rl2) || r.iteration < 20) continue;
      tl = r.latent_rl2;
      tv = r.loss.total;
      expect = r.iteration;
      break;
    }
    REQUIRE(expect > 0);
    for (const auto& r : full.log)
      if (!std::isnan(r.latent_rl2) && r.iteration < expect && r.latent_rl2 <= tl && r.loss.total <= tv) expect = r.iteration;
    c.tol_latent = tl;
    c.tol_loss = tv;
    const auto b = train(data, arch, LibrarySpec::constant_linear(), c);
    CHECK(b.status == "converged");
    CHECK(b.iterations_run == expect);
  }
}

TEST_CASE("training is deterministic for a seed") {
  const auto data = toy::dataset(3, 20, 5);
  const auto arch = ArchitectureSpec::standard(2, 2, 2, 2, 2);
  TrainingConfig c;
  c.iterations = 15;
  c.check_every = 5;
  c.spatial_samples = 8;
  c.seed = 4;
  c.workers = 3;
  const auto a = train(data, arch, LibrarySpec::constant_linear(), c);
  c.workers = 1;
  const auto b = train(data, arch, LibrarySpec::constant_linear(), c);
  for (std::size_t k = 0; k < a.params.size(); ++k) CHECK(a.params.block(k).value == b.params.block(k).value);
  for (std::size_t i = 0; i < a.xi.size(); ++i) CHECK(a.xi[i] == b.xi[i]);
  CHECK(a.train_mu.size() == 3);
}

TEST_CASE("training rejects mismatched data") {
  const auto data = toy::dataset(2, 10, 3);
  TrainingConfig c;
  c.iterations = 2;
  CHECK_THROWS_AS(train(data, ArchitectureSpec::standard(2, 3, 2, 2, 2), LibrarySpec::constant_linear(), c),
                  DimensionError);
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(train(data, ArchitectureSpec::standard(2, 2, 2, 2, 2), LibrarySpec::constant_linear(), c),
                  InvalidArgument);
}

TEST_CASE("divergence carries a checkpoint") {
  const auto data = toy::dataset(2, 10, 3);
  TrainingConfig c;
  c.iterations = 50;
  c.check_every = 2;
  c.learning_rate = 1e200;
  c.lr_period = 1;
  c.lr_decay = 1e10;
  try {
    train(data, ArchitectureSpec::standard(2, 2, 2, 2, 2), LibrarySpec::constant_linear(), c);
    FAIL("expected divergence");
  } catch (const TrainingDivergence& e) {
    CHECK(e.code() == ErrorCode::kDivergence);
    REQUIRE(e.checkpoint() != nullptr);
    CHECK(e.checkpoint()->xi.size() == 2);
  }
}

TEST_CASE("latent consistency is zero for a self-consistent model") {
  Toy t(2, 10, 20, 2);
  for (std::size_t b = 0; b < t.model.store.size(); ++b)
    if (t.model.store.block(b).name.rfind("dyn.", 0) == 0) t.model.store.block(b).value.setZero();
  const auto r = latent_consistency(t.model, t.set);
  for (double v : r) CHECK(v == doctest::Approx(0.0));
}
