#include <doctest.h>

#include <fstream>
#include <set>

#include "../support/toy.hpp"
#include "helpers.hpp"
#include "latdyn/bundle.hpp"
#include "latdyn/burgers.hpp"
#include "latdyn/dataio.hpp"
#include "latdyn/error.hpp"
#include "latdyn/log.hpp"
#include "latdyn/online.hpp"

using namespace latdyn;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  os << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), {}};
}

ModelBundle small_bundle() {
  TrainingConfig c;
  c.iterations = 3;
  c.check_every = 3;
  c.workers = 1;
  return train(toy::dataset(3, 15, 4), ArchitectureSpec::standard(2, 2, 2, 2, 2), LibrarySpec::constant_linear(), c);
}

}  // namespace

TEST_CASE("parameter sampling") {
  const dataio::Box d1{{0.7, 0.9}, {0.9, 1.1}};
  const auto grid = dataio::sample_parameters(d1, 225, dataio::SamplingMode::kUniformGrid, 0);
  CHECK(grid.size() == 225);
  int corners = 0;
  for (const auto& p : grid) {
    const bool a = p[0] == 0.7 || p[0] == 0.9, w = p[1] == 0.9 || p[1] == 1.1;
    corners += a && w;
  }
  CHECK(corners == 4);
  std::set<double> xs;
  for (const auto& p : grid) xs.insert(p[0]);
  CHECK(xs.size() == 15);

  const auto r1 = dataio::sample_parameters(d1, 25, dataio::SamplingMode::kRandom, 11);
  const auto r2 = dataio::sample_parameters(d1, 25, dataio::SamplingMode::kRandom, 11);
  const auto r3 = dataio::sample_parameters(d1, 25, dataio::SamplingMode::kRandom, 12);
  CHECK(r1.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(r1[i] == r2[i]);
  CHECK(r1[0] != r3[0]);

  const dataio::Box unit{{0.0, 1.0}, {0.0, 1.0}};
  for (const auto& p : dataio::sample_parameters(unit, 500, dataio::SamplingMode::kRandom, 1)) {
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
  }
  std::vector<std::string> warnings;
  log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
  CHECK(dataio::sample_parameters(unit, 10, dataio::SamplingMode::kUniformGrid, 0).size() == 16);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(dataio::sampling_mode_from_name("sobol"), InvalidArgument);
}

TEST_CASE("dataset roundtrip is bitwise") {
  testing::TempDir tmp("ds");
  auto data = toy::dataset(3, 17, 5);
  data.metadata["note"] = "roundtrip";
  data.trajectories[1].wall_clock_seconds = 1.25;
  dataio::save_dataset(tmp.str("a"), data);
  const auto back = dataio::load_dataset(tmp.str("a"));
  CHECK(back.times == data.times);
  CHECK(back.fields == data.fields);
  CHECK(back.domain_box == data.domain_box);
  CHECK(back.metadata["note"] == "roundtrip");
  REQUIRE(back.trajectories.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.trajectories[i].id == data.trajectories[i].id);
    CHECK(back.trajectories[i].mu == data.trajectories[i].mu);
    CHECK(back.trajectories[i].coords == data.trajectories[i].coords);
    CHECK(back.trajectories[i].fields == data.trajectories[i].fields);
    CHECK(back.trajectories[i].grid_tag == data.trajectories[i].grid_tag);
  }
  CHECK(back.trajectories[1].wall_clock_seconds == 1.25);
}

TEST_CASE("dataset load errors") {
  testing::TempDir tmp("dserr");
  CHECK_THROWS_AS(dataio::load_dataset(tmp.str("missing")), NotFoundError);
  dataio::save_dataset(tmp.str("a"), toy::dataset(2, 5, 2));
  const fs::path manifest = tmp.path() / "a" / "manifest.json";
  auto j = nlohmann::json::parse(read_text(manifest));

  auto no_times = j;
  no_times.erase("times");
  write_text(manifest, no_times.dump());
  try {
    dataio::load_dataset(tmp.str("a"));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("times") != std::string::npos);
  }

  auto future = j;
  future["version"] = 99;
  write_text(manifest, future.dump());
  CHECK_THROWS_AS(dataio::load_dataset(tmp.str("a")), VersionError);

  write_text(manifest, j.dump());
  const fs::path f = tmp.path() / "a" / j["trajectories"][0]["fields_file"].get<std::string>();
  fs::resize_file(f, fs::file_size(f) - 8);
  CHECK_THROWS_AS(dataio::load_dataset(tmp.str("a")), FormatError);
}

TEST_CASE("mixed-resolution archive") {
  testing::TempDir tmp("mixed");
  burgers::BurgersConfig cfg;
  cfg.n_steps = 2;
  Dataset data;
  data.domain_box = {{-3, 3}, {-3, 3}};
  data.fields = {"u", "v"};
  for (int s : {50, 60, 70}) {
    auto tr = burgers::simulate(0.8, 1.0, cfg, burgers::make_grid(s));
    tr.id = "s" + std::to_string(s);
    data.times = tr.times;
    data.trajectories.push_back(std::move(tr));
  }
  dataio::save_dataset(tmp.str(), data);
  const auto back = dataio::load_dataset(tmp.str());
  CHECK(back.trajectories[0].n_points() == 2500);
  CHECK(back.trajectories[1].n_points() == 3600);
  CHECK(back.trajectories[2].n_points() == 4900);
  CHECK(back.trajectories[2].coords == data.trajectories[2].coords);
}

TEST_CASE("ingesting external data") {
  testing::TempDir tmp("ingest");
  write_text(tmp.path() / "c.csv", "x,y\n0,0\n1,0\n0,1\n");
  write_text(tmp.path() / "f.csv", "1,2,3\n4,5,6\n");
  Dataset data;
  data.domain_box = {{0, 1}, {0, 1}};
  data.times = {0.0, 0.5};
  data.fields = {"s"};
  dataio::IngestRequest req;
  req.id = "ext";
  req.coords_path = tmp.str("c.csv");
  req.fields_path = tmp.str("f.csv");
  req.times = {0.0, 0.5};
  req.mu = Vector::Constant(1, 2.0);
  req.field_count = 1;
  const auto& tr = dataio::ingest_external(data, req);
  CHECK(tr.n_times() == 2);
  CHECK(tr.n_points() == 3);
  CHECK(tr.field_count == 1);
  CHECK(tr.snapshot(1)(2, 0) == 6.0);

  std::vector<std::string> warnings;
  log::ScopedSink sink([&](const std::string& m) { warnings.push_back(m); });
  write_text(tmp.path() / "c2.csv", "0,0\n2,0\n0,-1\n");
  req.id = "wide";
  req.coords_path = tmp.str("c2.csv");
  dataio::ingest_external(data, req);
  CHECK_FALSE(warnings.empty());
  CHECK(data.domain_box[0].second == 2.0);
  CHECK(data.domain_box[1].first == -1.0);

  write_text(tmp.path() / "bad.csv", "1,nan,3\n4,5,6\n");
  req.id = "bad";
  req.fields_path = tmp.str("bad.csv");
  try {
    dataio::ingest_external(data, req);
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("(0,1,0)") != std::string::npos);
  }
}

TEST_CASE("unstructured mesh with 1491 nodes") {
  testing::TempDir tmp("mesh");
  RowMatrix c(1491, 2);
  RowMatrix f(3, 1491);
  for (int p = 0; p < 1491; ++p) {
    c(p, 0) = std::cos(0.37 * p) * (p % 97) / 97.0;
    c(p, 1) = std::sin(0.37 * p) * (p % 89) / 89.0;
    for (int m = 0; m < 3; ++m) f(m, p) = std::exp(-m * 0.1) * c(p, 0);
  }
  dataio::write_binary(tmp.str("c.bin"), c.data(), static_cast<std::size_t>(c.size()));
  dataio::write_binary(tmp.str("f.bin"), f.data(), static_cast<std::size_t>(f.size()));
  Dataset data;
  data.domain_box = {{-1, 1}, {-1, 1}};
  data.times = {0.0, 0.1, 0.2};
  data.fields = {"rho"};
  dataio::IngestRequest req{"mesh", tmp.str("c.bin"), tmp.str("f.bin"), data.times, Vector::Ones(1), 2, 1};
  CHECK(dataio::ingest_external(data, req).n_points() == 1491);
  CHECK(data.trajectories[0].grid_tag == "unstructured");
}

TEST_CASE("bundle roundtrip and corruption") {
  testing::TempDir tmp("bundle");
  const auto b = small_bundle();
  dataio::save_bundle(tmp.str("b"), b);
  CHECK(fs::exists(tmp.path() / "b" / "training_log.csv"));
  const auto back = dataio::load_bundle(tmp.str("b"));
  CHECK(back.status == b.status);
  CHECK(back.iterations_run == b.iterations_run);
  CHECK(back.xi.size() == b.xi.size());
  for (std::size_t i = 0; i < b.xi.size(); ++i) {
    CHECK(back.xi[i] == b.xi[i]);
    CHECK(back.train_mu[i] == b.train_mu[i]);
  }
  online::PredictionRequest req;
  req.mu = Vector(2);
  req.mu << 0.77, 0.95;
  req.coords = toy::dataset(1, 9, 1).trajectories[0].coords;
  CHECK(online::predict(b, req).fields == online::predict(back, req).fields);

  const fs::path w = tmp.path() / "b" / "weights.bin";
  {
    std::fstream io(w, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(16);
    const char junk[3] = {1, 2, 3};
    io.write(junk, 3);
  }
  CHECK_THROWS_AS(dataio::load_bundle(tmp.str("b")), ChecksumError);

  dataio::save_bundle(tmp.str("c"), b);
  const fs::path meta = tmp.path() / "c" / "bundle.json";
  auto j = nlohmann::json::parse(read_text(meta));
  j.erase("coefficients");
  write_text(meta, j.dump());
  CHECK_THROWS_AS(dataio::load_bundle(tmp.str("c")), FormatError);
  CHECK_THROWS_AS(dataio::load_bundle(tmp.str("nothing")), NotFoundError);
}

TEST_CASE("csv helpers") {
  testing::TempDir tmp("csv");
  RowMatrix m(2, 3);
  m << 0.1, 1e-300, -3, 4.5, 5, 6;
  dataio::write_csv(tmp.str("m.csv"), {"a", "b", "c"}, m);
  const std::string text = read_text(tmp.path() / "m.csv");
  CHECK(text.rfind("a,b,c\n", 0) == 0);
  CHECK(dataio::read_csv(tmp.str("m.csv")) == m);
  CHECK(dataio::crc32_of("123456789", 9) == 0xCBF43926u);
}
