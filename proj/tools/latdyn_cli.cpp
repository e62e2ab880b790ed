// latdyn command-line front end. Talks to the library through the C API only.
#include <latdyn/latdyn.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string category, const std::string& msg) : std::runtime_error(msg), category(std::move(category)) {}
  std::string category;
};

void check(latdyn_status s) {
  if (s != LATDYN_OK) throw CliError(latdyn_status_string(s), latdyn_last_error_message());
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  long long seed = -1;
  int workers = -1;
  std::string out = "runs";
};

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

json user_config(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw CliError("not_found", "cannot open config file '" + c.config_path + "'");
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw CliError("spec", "config file '" + c.config_path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw CliError("spec", "config file must hold a JSON object");
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CliError("invalid_argument", "--set expects key=value, got '" + s + "'");
    j[s.substr(0, eq)] = parse_value(s.substr(eq + 1));
  }
  if (c.seed >= 0) j["seed"] = c.seed;
  if (c.workers >= 0) j["workers"] = c.workers;
  return j;
}

std::string resolve(const json& user) {
  const std::string text = user.dump();
  size_t needed = 0;
  check(latdyn_config_resolve(text.c_str(), nullptr, 0, &needed));
  std::string out(needed + 1, '\0');
  check(latdyn_config_resolve(text.c_str(), out.data(), out.size(), &needed));
  out.resize(needed);
  return out;
}

fs::path make_run_dir(const std::string& root, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const fs::path base = fs::path(root) / (command + "-" + stamp);
  fs::path dir = base;
  for (int n = 1; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError("io", "cannot create run directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void echo_config(const fs::path& dir, const std::string& effective) {
  std::ofstream out(dir / "config.json");
  out << effective << '\n';
  if (!out) throw CliError("io", "cannot write " + (dir / "config.json").string());
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size() && item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw CliError("invalid_argument", "cannot parse number '" + item + "' in '" + text + "'");
    }
  }
  if (v.empty()) throw CliError("invalid_argument", "empty number list");
  return v;
}

std::vector<int> parse_ns(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) return {std::stoi(text)};
    const int lo = std::stoi(text.substr(0, dots)), hi = std::stoi(text.substr(dots + 2));
    if (hi < lo) throw std::invalid_argument("");
    std::vector<int> v;
    for (int n = lo; n <= hi; ++n) v.push_back(n);
    return v;
  } catch (const std::exception&) {
    throw CliError("invalid_argument", "--ns expects N or LO..HI, got '" + text + "'");
  }
}

struct Dataset {
  latdyn_dataset* h = nullptr;
  explicit Dataset(const std::string& dir) { check(latdyn_dataset_open(dir.c_str(), &h)); }
  ~Dataset() { latdyn_dataset_free(h); }
};

struct Bundle {
  latdyn_bundle* h = nullptr;
  Bundle() = default;
  explicit Bundle(const std::string& dir) { check(latdyn_bundle_load(dir.c_str(), &h)); }
  ~Bundle() { latdyn_bundle_free(h); }
};

struct Report {
  latdyn_report* h = nullptr;
  ~Report() { latdyn_report_free(h); }
};

void on_progress(long it, double lr, double loss, double latent, void*) {
  if (!std::isnan(latent))
    std::printf("  iter %6ld  lr %.3e  loss %.6e  latent r_L2 %.4f%%\n", it, lr, loss, latent);
  else if (it % 100 == 0)
    std::printf("  iter %6ld  lr %.3e  loss %.6e\n", it, lr, loss);
  std::fflush(stdout);
}

int cmd_generate(const Common& c) {
  const std::string eff = resolve(user_config(c));
  const fs::path dir = make_run_dir(c.out, "generate");
  echo_config(dir, eff);
  size_t failures = 0;
  check(latdyn_generate(eff.c_str(), dir.string().c_str(), &failures));
  std::printf("datasets written to %s\n", dir.string().c_str());
  if (failures) std::printf("%zu solves failed; see the manifests\n", failures);
  return 0;
}

int cmd_train(const Common& c, const std::string& dataset, const std::string& ns_text) {
  json user = user_config(c);
  const std::vector<int> sweep = ns_text.empty() ? std::vector<int>{} : parse_ns(ns_text);
  Dataset ds(dataset);
  const fs::path dir = make_run_dir(c.out, "train");
  echo_config(dir, resolve(user));
  const std::vector<int> runs = sweep.empty() ? std::vector<int>{-1} : sweep;
  for (int ns : runs) {
    json u = user;
    if (ns > 0) u["latent_dim"] = ns;
    const std::string eff = resolve(u);
    const fs::path out = ns > 0 && runs.size() > 1 ? dir / ("bundle-ns" + std::to_string(ns)) : dir / "bundle";
    std::printf("training %s\n", out.filename().string().c_str());
    Bundle b;
    check(latdyn_train(ds.h, eff.c_str(), on_progress, nullptr, &b.h));
    check(latdyn_bundle_save(b.h, out.string().c_str()));
    std::printf("bundle written to %s (%s)\n", out.string().c_str(), latdyn_bundle_status(b.h));
  }
  return 0;
}

int cmd_predict(const Common& c, const std::string& bundle, const std::string& mu_text, const std::string& coords) {
  const std::vector<double> mu = parse_list(mu_text);
  Bundle b(bundle);
  const bool overrides = !c.config_path.empty() || !c.sets.empty();
  const std::string eff = resolve(user_config(c));
  if (overrides) check(latdyn_bundle_set_knn(b.h, eff.c_str()));
  const fs::path dir = make_run_dir(c.out, "predict");
  echo_config(dir, eff);
  check(latdyn_predict_to_archive(b.h, mu.data(), mu.size(), coords.c_str(), (dir / "prediction").string().c_str()));
  std::printf("prediction written to %s\n", (dir / "prediction").string().c_str());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& bundle, const std::string& dataset) {
  Bundle b(bundle);
  Dataset truth(dataset);
  const bool overrides = !c.config_path.empty() || !c.sets.empty();
  const std::string eff = resolve(user_config(c));
  if (overrides) check(latdyn_bundle_set_knn(b.h, eff.c_str()));
  const fs::path dir = make_run_dir(c.out, "evaluate");
  echo_config(dir, eff);
  Report r;
  check(latdyn_evaluate(b.h, truth.h, &r.h));
  check(latdyn_report_write_csv(r.h, (dir / "report.csv").string().c_str()));
  std::printf("trajectories     %zu\n", latdyn_report_count(r.h));
  std::printf("aggregate r_L2   %.4f%%\n", latdyn_report_aggregate(r.h));
  std::printf("online seconds   %.3f\n", latdyn_report_predict_seconds(r.h));
  std::printf("hi-fi seconds    %.3f\n", latdyn_report_hf_seconds(r.h));
  std::printf("speed-up         %.1fx\n", latdyn_report_speedup(r.h));
  std::printf("report written to %s\n", (dir / "report.csv").string().c_str());
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--workers", c.workers, "Worker threads (0 = all cores)");
  sub->add_option("--out", c.out, "Parent directory for run directories")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latdyn: latent-dynamics reduced-order models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", latdyn_version());

  Common common;
  std::string dataset, bundle, ns, mu, coords;

  auto* gen = app.add_subcommand("generate", "Simulate training and test datasets");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "Train a model bundle on a dataset");
  add_common(train, common);
  train->add_option("--dataset", dataset, "Training dataset directory")->required();
  train->add_option("--ns", ns, "Latent dimension, N or LO..HI for a sweep");

  auto* pred = app.add_subcommand("predict", "Predict fields at one parameter point");
  add_common(pred, common);
  pred->add_option("--bundle", bundle, "Model bundle directory")->required();
  pred->add_option("--mu", mu, "Parameter point, comma separated")->required();
  pred->add_option("--coords", coords, "Query coordinates (CSV or raw float64)")->required();

  auto* eval = app.add_subcommand("evaluate", "Evaluate a bundle against a truth dataset");
  add_common(eval, common);
  eval->add_option("--bundle", bundle, "Model bundle directory")->required();
  eval->add_option("--dataset", dataset, "Truth dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_generate(common);
    if (*train) return cmd_train(common, dataset, ns);
    if (*pred) return cmd_predict(common, bundle, mu, coords);
    if (*eval) return cmd_evaluate(common, bundle, dataset);
  } catch (const CliError& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << e.category << ": " << msg << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
