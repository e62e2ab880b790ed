#include "latdyn/networks.hpp"

#include <cmath>
#include <random>

#include "latdyn/error.hpp"
#include "latdyn/kernels.hpp"

namespace latdyn {

namespace {

constexpr Eigen::Index kEvalChunk = 1024;

void apply_tanh(Matrix& m) {
  kernels::tanh_inplace(m.data(), static_cast<std::size_t>(m.size()));
}

void affine_into(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& y) {
  y.resize(x.rows(), w.rows());
  y.noalias() = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
}

Matrix uniform_init(int rows, int cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Column-major fill keeps the draw order independent of Eigen internals.
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

std::string layer_prefix(const NetworkSpec& net, std::size_t i) {
  return net.name + "." + std::to_string(i);
}

NetworkSpec make_net(std::string name, std::vector<LayerSpec> layers) {
  return NetworkSpec{std::move(name), std::move(layers)};
}

const char* kind_name(LayerKind k) { return k == LayerKind::kAffine ? "affine" : "resnet"; }
const char* act_name(Activation a) { return a == Activation::kTanh ? "tanh" : "none"; }

}  // namespace

int NetworkSpec::input_width() const { return layers.empty() ? 0 : layers.front().in; }
int NetworkSpec::output_width() const { return layers.empty() ? 0 : layers.back().out; }

void ArchitectureSpec::validate() const {
  if (latent_dim < 1) throw SpecError("latent dimension must be positive");
  if (param_dim < 1 || spatial_dim < 1 || field_count < 1)
    throw SpecError("parameter, spatial and field dimensions must be positive");
  if (taylor_order != 1 && taylor_order != 2) throw SpecError("taylor order must be 1 or 2");
  auto check_chain = [](const NetworkSpec& net) {
    if (net.layers.empty()) throw SpecError("network '" + net.name + "' has no layers");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const auto& l = net.layers[i];
      if (l.in < 1 || l.out < 1)
        throw SpecError("network '" + net.name + "' layer " + std::to_string(i) + " has zero width");
      if (i > 0 && net.layers[i - 1].out != l.in)
        throw SpecError("network '" + net.name + "' layer " + std::to_string(i) +
                        " input width " + std::to_string(l.in) + " != previous output " +
                        std::to_string(net.layers[i - 1].out));
    }
  };
  check_chain(dyn);
  check_chain(rec);
  check_chain(z0);
  auto expect = [](const NetworkSpec& net, const char* what, int got, int want) {
    if (got != want)
      throw SpecError("network '" + net.name + "' " + what + " width " + std::to_string(got) +
                      ", expected " + std::to_string(want));
  };
  expect(dyn, "input", dyn.input_width(), latent_dim + param_dim);
  expect(dyn, "output", dyn.output_width(), taylor_order * latent_dim);
  expect(rec, "input", rec.input_width(), latent_dim + param_dim + spatial_dim);
  expect(rec, "output", rec.output_width(), field_count);
  expect(z0, "input", z0.input_width(), param_dim);
  expect(z0, "output", z0.output_width(), latent_dim);
}

ArchitectureSpec ArchitectureSpec::standard(int latent_dim, int param_dim, int spatial_dim,
                                            int field_count, int taylor_order) {
  using L = LayerSpec;
  constexpr auto A = LayerKind::kAffine;
  constexpr auto R = LayerKind::kResNet;
  constexpr auto T = Activation::kTanh;
  constexpr auto N = Activation::kNone;
  ArchitectureSpec s;
  s.latent_dim = latent_dim;
  s.param_dim = param_dim;
  s.spatial_dim = spatial_dim;
  s.field_count = field_count;
  s.taylor_order = taylor_order;
  s.dyn = make_net("dyn", {L{A, latent_dim + param_dim, 6, T}, L{R, 6, 6, T}, L{A, 6, 6, T},
                           L{R, 6, 6, T}, L{A, 6, taylor_order * latent_dim, N}});
  s.rec = make_net("rec", {L{A, latent_dim + param_dim + spatial_dim, 11, T}, L{R, 11, 15, T},
                           L{A, 15, 15, T}, L{R, 15, 15, T}, L{A, 15, 15, T}, L{R, 15, 11, T},
                           L{A, 11, field_count, N}});
  s.z0 = make_net("z0", {L{A, param_dim, 6, T}, L{A, 6, 6, T}, L{A, 6, 6, T},
                         L{A, 6, latent_dim, N}});
  s.validate();
  return s;
}

ArchitectureSpec ArchitectureSpec::burgers(int latent_dim, int taylor_order) {
  return standard(latent_dim, 2, 2, 2, taylor_order);
}

nlohmann::json to_json(const ArchitectureSpec& spec) {
  auto net_json = [](const NetworkSpec& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers)
      layers.push_back({{"kind", kind_name(l.kind)},
                        {"in", l.in},
                        {"out", l.out},
                        {"activation", act_name(l.activation)}});
    return nlohmann::json{{"name", net.name}, {"layers", layers}};
  };
  return {{"latent_dim", spec.latent_dim},     {"param_dim", spec.param_dim},
          {"spatial_dim", spec.spatial_dim},   {"field_count", spec.field_count},
          {"taylor_order", spec.taylor_order}, {"dyn", net_json(spec.dyn)},
          {"rec", net_json(spec.rec)},         {"z0", net_json(spec.z0)}};
}

ArchitectureSpec architecture_from_json(const nlohmann::json& j) {
  auto net = [](const nlohmann::json& n) {
    NetworkSpec out;
    out.name = n.at("name").get<std::string>();
    for (const auto& l : n.at("layers")) {
      LayerSpec s;
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "affine") s.kind = LayerKind::kAffine;
      else if (kind == "resnet") s.kind = LayerKind::kResNet;
      else throw FormatError("unknown layer kind '" + kind + "'");
      s.in = l.at("in").get<int>();
      s.out = l.at("out").get<int>();
      const auto act = l.at("activation").get<std::string>();
      if (act == "tanh") s.activation = Activation::kTanh;
      else if (act == "none") s.activation = Activation::kNone;
      else throw FormatError("unknown activation '" + act + "'");
      out.layers.push_back(s);
    }
    return out;
  };
  ArchitectureSpec s;
  try {
    s.latent_dim = j.at("latent_dim").get<int>();
    s.param_dim = j.at("param_dim").get<int>();
    s.spatial_dim = j.at("spatial_dim").get<int>();
    s.field_count = j.at("field_count").get<int>();
    s.taylor_order = j.at("taylor_order").get<int>();
    s.dyn = net(j.at("dyn"));
    s.rec = net(j.at("rec"));
    s.z0 = net(j.at("z0"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture: ") + e.what());
  }
  s.validate();
  return s;
}

void build_networks(const ArchitectureSpec& spec, std::uint64_t seed, ad::ParamStore& store) {
  spec.validate();
  std::mt19937_64 rng(seed);
  for (const NetworkSpec* net : {&spec.dyn, &spec.rec, &spec.z0}) {
    for (std::size_t i = 0; i < net->layers.size(); ++i) {
      const auto& l = net->layers[i];
      const std::string p = layer_prefix(*net, i);
      if (l.kind == LayerKind::kAffine) {
        store.add(p + ".W", uniform_init(l.out, l.in, rng));
        store.add(p + ".b", Matrix::Zero(l.out, 1));
      } else {
        store.add(p + ".W1", uniform_init(l.out, l.in, rng));
        store.add(p + ".b1", Matrix::Zero(l.out, 1));
        store.add(p + ".W2", uniform_init(l.out, l.out, rng));
        store.add(p + ".b2", Matrix::Zero(l.out, 1));
        if (l.in != l.out) {
          store.add(p + ".Wp", uniform_init(l.out, l.in, rng));
          store.add(p + ".bp", Matrix::Zero(l.out, 1));
        }
      }
    }
  }
}

Network::Network(const NetworkSpec& spec, const ad::ParamStore& store) : spec_(spec) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string p = layer_prefix(spec, i);
    Blocks b;
    if (l.kind == LayerKind::kAffine) {
      b.w = store.index(p + ".W");
      b.b = store.index(p + ".b");
    } else {
      b.w = store.index(p + ".W1");
      b.b = store.index(p + ".b1");
      b.w2 = store.index(p + ".W2");
      b.b2 = store.index(p + ".b2");
      if (l.in != l.out) {
        b.projected = true;
        b.wp = store.index(p + ".Wp");
        b.bp = store.index(p + ".bp");
      }
    }
    const auto& w = store.block(b.w).value;
    if (w.rows() != l.out || w.cols() != l.in)
      throw DimensionError("block '" + store.block(b.w).name + "' does not match layer widths");
    blocks_.push_back(b);
  }
}

ad::NodeId Network::record(ad::Tape& tape, ad::NodeId input) const {
  ad::NodeId h = input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    const auto& b = blocks_[i];
    if (l.kind == LayerKind::kAffine) {
      h = tape.affine(h, tape.param(b.w), tape.param(b.b));
    } else {
      ad::NodeId inner = tape.tanh(tape.affine(h, tape.param(b.w), tape.param(b.b)));
      ad::NodeId f = tape.affine(inner, tape.param(b.w2), tape.param(b.b2));
      ad::NodeId skip = b.projected ? tape.affine(h, tape.param(b.wp), tape.param(b.bp)) : h;
      h = tape.add(f, skip);
    }
    if (l.activation == Activation::kTanh) h = tape.tanh(h);
  }
  return h;
}

Matrix Network::evaluate(const ad::ParamStore& store, const Matrix& input) const {
  if (input.cols() != spec_.input_width())
    throw DimensionError("network '" + spec_.name + "' expects " +
                         std::to_string(spec_.input_width()) + " inputs, got " +
                         std::to_string(input.cols()));
  Matrix out(input.rows(), spec_.output_width());
  Matrix h, y, inner, f, skip;
  for (Eigen::Index r0 = 0; r0 < input.rows(); r0 += kEvalChunk) {
    const Eigen::Index n = std::min(kEvalChunk, input.rows() - r0);
    h = input.middleRows(r0, n);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      const auto& b = blocks_[i];
      const auto& val = [&](std::size_t k) -> const Matrix& { return store.block(k).value; };
      if (l.kind == LayerKind::kAffine) {
        affine_into(h, val(b.w), val(b.b), y);
      } else {
        affine_into(h, val(b.w), val(b.b), inner);
        apply_tanh(inner);
        affine_into(inner, val(b.w2), val(b.b2), f);
        if (b.projected) {
          affine_into(h, val(b.wp), val(b.bp), skip);
          y = f + skip;
        } else {
          y = f + h;
        }
      }
      if (l.activation == Activation::kTanh) apply_tanh(y);
      h.swap(y);
    }
    out.middleRows(r0, n) = h;
  }
  return out;
}

Matrix resnet_block_forward(const ad::ParamStore& store, const std::string& prefix,
                            const Matrix& x) {
  const Matrix& w1 = store.value(prefix + ".W1");
  Matrix inner, f, skip;
  affine_into(x, w1, store.value(prefix + ".b1"), inner);
  apply_tanh(inner);
  affine_into(inner, store.value(prefix + ".W2"), store.value(prefix + ".b2"), f);
  if (w1.rows() != w1.cols()) {
    affine_into(x, store.value(prefix + ".Wp"), store.value(prefix + ".bp"), skip);
    return f + skip;
  }
  return f + x;
}

LatentModel::LatentModel(const ArchitectureSpec& spec, const ad::ParamStore& store)
    : spec_(spec), dyn_(spec.dyn, store), rec_(spec.rec, store), z0_(spec.z0, store) {
  spec_.validate();
}

Matrix LatentModel::initial_state(const ad::ParamStore& store, const Matrix& mu_normalized) const {
  return z0_.evaluate(store, mu_normalized);
}

LatentTrajectory LatentModel::rollout(const ad::ParamStore& store, const Vector& z0,
                                      const Vector& mu_normalized, double dt, int n_steps) const {
  if (!(dt > 0.0)) throw InvalidArgument("rollout time step must be positive");
  if (n_steps < 0) throw InvalidArgument("rollout step count must be non-negative");
  const int ns = spec_.latent_dim;
  const int nd = spec_.param_dim;
  if (z0.size() != ns || mu_normalized.size() != nd)
    throw DimensionError("rollout: state or parameter width mismatch");
  LatentTrajectory traj;
  traj.times.resize(static_cast<std::size_t>(n_steps) + 1);
  traj.z.resize(n_steps + 1, ns);
  traj.zdot.resize(n_steps + 1, ns);
  if (spec_.taylor_order == 2) traj.zddot.resize(n_steps + 1, ns);
  Matrix in(1, ns + nd);
  in.rightCols(nd) = mu_normalized.transpose();
  traj.z.row(0) = z0.transpose();
  for (int m = 0; m <= n_steps; ++m) {
    traj.times[static_cast<std::size_t>(m)] = m * dt;
    in.leftCols(ns) = traj.z.row(m);
    const Matrix d = dyn_.evaluate(store, in);
    if (!d.allFinite()) throw DivergenceError("rollout produced non-finite derivatives", m);
    traj.zdot.row(m) = d.leftCols(ns);
    if (spec_.taylor_order == 2) traj.zddot.row(m) = d.rightCols(ns);
    if (m == n_steps) break;
    traj.z.row(m + 1) = traj.z.row(m) + dt * traj.zdot.row(m);
    if (spec_.taylor_order == 2) traj.z.row(m + 1) += (dt * dt) * traj.zddot.row(m);
    if (!traj.z.row(m + 1).allFinite())
      throw DivergenceError("rollout produced a non-finite state", m + 1);
  }
  return traj;
}

Matrix LatentModel::reconstruct(const ad::ParamStore& store, const Vector& z,
                                const Vector& mu_normalized, const Matrix& coords_normalized) const {
  const int ns = spec_.latent_dim;
  const int nd = spec_.param_dim;
  if (z.size() != ns || mu_normalized.size() != nd || coords_normalized.cols() != spec_.spatial_dim)
    throw DimensionError("reconstruct: input width mismatch");
  Matrix in(coords_normalized.rows(), ns + nd + spec_.spatial_dim);
  in.leftCols(ns).rowwise() = z.transpose();
  in.middleCols(ns, nd).rowwise() = mu_normalized.transpose();
  in.rightCols(spec_.spatial_dim) = coords_normalized;
  return rec_.evaluate(store, in);
}

RolloutNodes record_rollout(ad::Tape& tape, const Network& dyn, int order, ad::NodeId z0,
                            ad::NodeId mu_normalized, double dt, int n_steps) {
  if (order != 1 && order != 2) throw SpecError("taylor order must be 1 or 2");
  const Eigen::Index ns = tape.value(z0).cols();
  if (dyn.spec().output_width() != order * ns)
    throw DimensionError("dynamics network output does not match taylor order");
  RolloutNodes out;
  out.z.push_back(z0);
  for (int m = 0; m <= n_steps; ++m) {
    const ad::NodeId parts[] = {out.z.back(), mu_normalized};
    ad::NodeId d = dyn.record(tape, tape.concat_cols(parts));
    ad::NodeId zdot = tape.slice_cols(d, 0, ns);
    out.zdot.push_back(zdot);
    if (m == n_steps) break;
    ad::NodeId next = tape.add(out.z.back(), tape.scale(zdot, dt));
    if (order == 2) next = tape.add(next, tape.scale(tape.slice_cols(d, ns, ns), dt * dt));
    if (!tape.value(next).allFinite())
      throw DivergenceError("rollout produced a non-finite state", m + 1);
    out.z.push_back(next);
  }
  return out;
}

}  // namespace latdyn
