#include "latdyn/config.hpp"

#include "latdyn/error.hpp"

namespace latdyn::config {

using json = nlohmann::json;

json defaults() {
  return {
      {"seed", 0},
      {"workers", 0},
      {"reynolds", 1e4},
      {"segments", 50},
      {"t_final", 1.0},
      {"n_steps", 200},
      {"picard_tol", 1e-10},
      {"picard_max_sweeps", 50},
      {"mu_box", json::array({json::array({0.7, 0.9}), json::array({0.9, 1.1})})},
      {"n_train", 25},
      {"train_sampling", "random"},
      {"n_test", 225},
      {"test_sampling", "uniform-grid"},
      {"multiscale_segments", json::array()},
      {"test_segments", 0},
      {"latent_dim", 5},
      {"taylor_order", 2},
      {"library", json::array({"constant", "linear"})},
      {"iterations", 6000},
      {"check_every", 500},
      {"tol_latent", 1.0},
      {"tol_loss", 1e-4},
      {"w_id", 0.05},
      {"w_z0", 0.5},
      {"w_coef", 0.0},
      {"learning_rate", 0.05},
      {"lr_decay", 0.6},
      {"lr_period", 500},
      {"spatial_samples", 0},
      {"range", 1.0},
      {"chunk_rows", 2048},
      {"knn_k", 5},
      {"knn_power", 2.0},
      {"knn_match_eps", 1e-12},
      {"knn_space", "normalized"},
  };
}

json resolve(const json& user) {
  json out = defaults();
  if (user.is_null()) return out;
  if (!user.is_object()) throw SpecError("config must be a JSON object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!out.contains(it.key())) throw SpecError("unknown config key '" + it.key() + "'");
    const json& def = out[it.key()];
    const json& v = it.value();
    const bool ok = (def.is_number() && v.is_number()) || (def.is_string() && v.is_string()) ||
                    (def.is_array() && v.is_array());
    if (!ok) throw SpecError("config key '" + it.key() + "' has the wrong type");
    if (def.is_number_integer() && !v.is_number_integer())
      throw SpecError("config key '" + it.key() + "' must be an integer");
    out[it.key()] = v;
  }
  return out;
}

namespace {

template <class T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SpecError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

GenerateConfig generate_config(const json& r) {
  GenerateConfig g;
  g.solver.reynolds = get<double>(r, "reynolds");
  g.solver.segments = get<int>(r, "segments");
  g.solver.t_final = get<double>(r, "t_final");
  g.solver.n_steps = get<int>(r, "n_steps");
  g.solver.picard_tol = get<double>(r, "picard_tol");
  g.solver.picard_max_sweeps = get<int>(r, "picard_max_sweeps");
  g.solver.validate();
  for (const auto& e : r.at("mu_box")) {
    if (!e.is_array() || e.size() != 2) throw SpecError("mu_box entries must be [lo, hi]");
    g.mu_box.emplace_back(e[0].get<double>(), e[1].get<double>());
  }
  if (g.mu_box.size() != 2) throw SpecError("mu_box must list the amplitude and width ranges");
  for (const auto& [lo, hi] : g.mu_box)
    if (!(hi >= lo)) throw SpecError("mu_box has an inverted range");
  if (g.mu_box[1].first <= 0.0) throw SpecError("Gaussian widths must be positive");
  g.n_train = get<int>(r, "n_train");
  g.train_sampling = get<std::string>(r, "train_sampling");
  g.n_test = get<int>(r, "n_test");
  g.test_sampling = get<std::string>(r, "test_sampling");
  g.multiscale_segments = get<std::vector<int>>(r, "multiscale_segments");
  g.test_segments = get<int>(r, "test_segments");
  g.seed = get<std::uint64_t>(r, "seed");
  g.workers = get<int>(r, "workers");
  if (g.n_train < 0 || g.n_test < 0) throw SpecError("sample counts must be non-negative");
  for (int s : g.multiscale_segments)
    if (s < 2) throw SpecError("multiscale segment counts must be at least 2");
  if (g.test_segments < 0 || g.test_segments == 1) throw SpecError("test_segments must be 0 or at least 2");
  return g;
}

TrainingConfig training_config(const json& r) {
  TrainingConfig c;
  c.iterations = get<int>(r, "iterations");
  c.check_every = get<int>(r, "check_every");
  c.tol_latent = get<double>(r, "tol_latent");
  c.tol_loss = get<double>(r, "tol_loss");
  c.w_id = get<double>(r, "w_id");
  c.w_z0 = get<double>(r, "w_z0");
  c.w_coef = get<double>(r, "w_coef");
  c.learning_rate = get<double>(r, "learning_rate");
  c.lr_decay = get<double>(r, "lr_decay");
  c.lr_period = get<int>(r, "lr_period");
  c.spatial_samples = get<int>(r, "spatial_samples");
  c.range = get<double>(r, "range");
  c.seed = get<std::uint64_t>(r, "seed");
  c.workers = get<int>(r, "workers");
  c.chunk_rows = get<int>(r, "chunk_rows");
  c.validate();
  return c;
}

LibrarySpec library(const json& r) {
  try {
    return library_from_json(r.at("library"));
  } catch (const json::exception& e) {
    throw SpecError(std::string("config key 'library': ") + e.what());
  }
}

KnnConfig knn_config(const json& r) {
  KnnConfig k;
  k.k = get<int>(r, "knn_k");
  k.power = get<double>(r, "knn_power");
  k.match_eps = get<double>(r, "knn_match_eps");
  const auto space = get<std::string>(r, "knn_space");
  if (space == "normalized") k.space = DistanceSpace::kNormalized;
  else if (space == "raw") k.space = DistanceSpace::kRaw;
  else throw SpecError("knn_space must be 'normalized' or 'raw'");
  k.validate();
  return k;
}

int latent_dim(const json& r) {
  const int ns = get<int>(r, "latent_dim");
  if (ns < 1) throw SpecError("latent_dim must be positive");
  return ns;
}

int taylor_order(const json& r) {
  const int o = get<int>(r, "taylor_order");
  if (o != 1 && o != 2) throw SpecError("taylor_order must be 1 or 2");
  return o;
}

}  // namespace latdyn::config
