#include "latdyn/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "latdyn/burgers.hpp"
#include "latdyn/dataio.hpp"
#include "latdyn/error.hpp"
#include "latdyn/parallel.hpp"

namespace latdyn {

namespace {

struct Job {
  std::string id;
  Vector mu;
  int segments = 0;
  bool train = true;
};

Dataset empty_dataset(const config::GenerateConfig& cfg) {
  Dataset d;
  d.domain_box = {{cfg.solver.box_lo, cfg.solver.box_hi}, {cfg.solver.box_lo, cfg.solver.box_hi}};
  d.fields = {"u", "v"};
  for (int m = 0; m <= cfg.solver.n_steps; ++m) d.times.push_back(m * cfg.solver.dt());
  d.metadata["solver"] = burgers::to_json(cfg.solver);
  d.metadata["grid_convention"] = "point-count";
  d.metadata["failures"] = nlohmann::json::array();
  return d;
}

}  // namespace

GeneratedData generate_burgers(const config::GenerateConfig& cfg) {
  cfg.solver.validate();
  std::vector<Job> jobs;
  if (cfg.n_train > 0) {
    const auto mus = dataio::sample_parameters(cfg.mu_box, cfg.n_train,
                                               dataio::sampling_mode_from_name(cfg.train_sampling), cfg.seed);
    std::vector<int> seg(mus.size(), cfg.solver.segments);
    if (!cfg.multiscale_segments.empty()) {
      std::vector<std::size_t> order(mus.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(cfg.seed + 2);
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t parts = cfg.multiscale_segments.size();
      for (std::size_t k = 0; k < order.size(); ++k)
        seg[order[k]] = cfg.multiscale_segments[k * parts / order.size()];
    }
    for (std::size_t i = 0; i < mus.size(); ++i)
      jobs.push_back({"train_" + std::to_string(i), mus[i], seg[i], true});
  }
  if (cfg.n_test > 0) {
    const auto mus = dataio::sample_parameters(cfg.mu_box, cfg.n_test,
                                               dataio::sampling_mode_from_name(cfg.test_sampling), cfg.seed + 1);
    const int seg = cfg.test_segments > 0 ? cfg.test_segments : cfg.solver.segments;
    for (std::size_t i = 0; i < mus.size(); ++i) jobs.push_back({"test_" + std::to_string(i), mus[i], seg, false});
  }

  std::vector<FieldTrajectory> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t k) {
    const Job& j = jobs[k];
    burgers::BurgersConfig sc = cfg.solver;
    sc.segments = j.segments;
    try {
      const auto grid = burgers::make_grid(j.segments, burgers::GridConvention::kPointCount, sc.box_lo, sc.box_hi);
      results[k] = burgers::simulate(j.mu[0], j.mu[1], sc, grid);
      results[k].id = j.id;
    } catch (const Error& e) {
      errors[k] = std::string(error_code_name(e.code())) + ": " + e.what();
    }
  });

  GeneratedData out{empty_dataset(cfg), empty_dataset(cfg), {}};
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    Dataset& ds = jobs[k].train ? out.train : out.test;
    if (!errors[k].empty()) {
      out.failures.push_back({jobs[k].id, jobs[k].mu, errors[k]});
      ds.metadata["failures"].push_back(
          {{"id", jobs[k].id},
           {"mu", std::vector<double>(jobs[k].mu.data(), jobs[k].mu.data() + jobs[k].mu.size())},
           {"error", errors[k]}});
      continue;
    }
    ds.trajectories.push_back(std::move(results[k]));
  }
  return out;
}

}  // namespace latdyn
