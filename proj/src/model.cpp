#include "binn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace binn::model {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Canonical parameter enumeration; registry order defines checkpoint and
/// optimizer-state layout.
template <class ModelT, class TensorT, class Fn>
void visit_parameters(ModelT& m, Fn&& fn) {
  auto mlp = [&](const std::string& base, auto& s) {
    fn(base + ".w1", s.w1);
    fn(base + ".b1", s.b1);
    fn(base + ".w2", s.w2);
    fn(base + ".b2", s.b2);
    fn(base + ".w3", s.w3);
    fn(base + ".b3", s.b3);
  };
  mlp("ez_emb", m.ez_emb);
  mlp("ez_v2e", m.ez_v2e);
  mlp("ez_e2v", m.ez_e2v);
  mlp("eb_emb", m.eb_emb);
  mlp("eb_v2e", m.eb_v2e);
  mlp("eb_e2v", m.eb_e2v);
  mlp("dx_dec", m.dx_dec);
  mlp("dx_v2e", m.dx_v2e);
  mlp("dx_e2v", m.dx_e2v);
  fn("rho_d", m.rho_d);
  fn("rho_u", m.rho_u);
  fn("rho_alpha", m.rho_alpha);
  fn("belief_offdiag", m.belief_offdiag);
  if (m.comm == CommVariant::kLearnedMultiplier) fn("a_pre", m.comm_multiplier);
}

Tensor uniform_tensor(std::vector<Index> shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

double softplus_value(double x) {
  const double y = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  // strictly positive even where exp(-|x|) underflows
  return std::max(y, std::numeric_limits<double>::min());
}

double inverse_softplus(double y) {
  require(y > 0.0, "inverse_softplus: y must be positive");
  return std::log(std::expm1(y));
}

Mlp3 Mlp3::init(Index in, Index hidden, Index out, Rng& rng) {
  Mlp3 m;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  m.w1 = uniform_tensor({in, hidden}, -s1, s1, rng);
  m.b1 = Tensor::zeros({hidden});
  m.w2 = uniform_tensor({hidden, hidden}, -s2, s2, rng);
  m.b2 = Tensor::zeros({hidden});
  m.w3 = uniform_tensor({hidden, out}, -s2, s2, rng);
  m.b3 = Tensor::zeros({out});
  return m;
}

CommVariant comm_from_string(const std::string& name) {
  if (name == "sqdist") return CommVariant::kSquaredDistance;
  if (name == "invdist") return CommVariant::kInverseDistance;
  if (name == "learned") return CommVariant::kLearnedMultiplier;
  throw std::invalid_argument("unknown comm variant: " + name);
}

const char* comm_name(CommVariant v) {
  switch (v) {
    case CommVariant::kSquaredDistance: return "sqdist";
    case CommVariant::kInverseDistance: return "invdist";
    case CommVariant::kLearnedMultiplier: return "learned";
  }
  return "?";
}

BinnModel BinnModel::init(int n_agents, int state_dim, int latent_dim, int hidden_dim,
                          Activation activation, CommVariant comm, double dt,
                          std::uint64_t seed, double epsilon) {
  require(n_agents >= 1 && state_dim >= 2 && state_dim % 2 == 0 && latent_dim >= 1 &&
              hidden_dim >= 1,
          "BinnModel::init: bad dimensions");
  require(dt > 0.0, "BinnModel::init: dt must be positive");
  require(epsilon > 0.0, "BinnModel::init: epsilon must be positive");

  BinnModel m;
  m.n_agents = n_agents;
  m.state_dim = state_dim;
  m.latent_dim = latent_dim;
  m.hidden_dim = hidden_dim;
  m.activation = activation;
  m.comm = comm;
  m.epsilon = epsilon;
  m.dt = dt;

  Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
  const Index h = hidden_dim, d = state_dim, no = latent_dim;
  m.ez_emb = Mlp3::init(d, h, h, rng);
  m.ez_v2e = Mlp3::init(2 * h, h, h, rng);
  m.ez_e2v = Mlp3::init(2 * h, h, no, rng);
  m.eb_emb = Mlp3::init(d, h, h, rng);
  m.eb_v2e = Mlp3::init(2 * h, h, h, rng);
  m.eb_e2v = Mlp3::init(2 * h, h, no, rng);
  m.dx_dec = Mlp3::init(no, h, h, rng);
  m.dx_v2e = Mlp3::init(2 * h, h, h, rng);
  m.dx_e2v = Mlp3::init(2 * h, h, d, rng);

  // Near the interesting bifurcation regime: d ~ 0.5, u ~ 1.0, alpha ~ 0.5.
  m.rho_d = Tensor::full({1, no}, inverse_softplus(0.5));
  m.rho_u = Tensor::full({1, 1}, inverse_softplus(1.0));
  m.rho_alpha = Tensor::full({1, no}, inverse_softplus(0.5));
  m.belief_offdiag = Tensor::zeros({1, no * (no - 1)});
  for (Index i = 0; i < m.belief_offdiag.size(); ++i) m.belief_offdiag[i] = rng.normal(0.0, 0.1);
  m.comm_multiplier = Tensor::full({n_agents, n_agents}, 1.0);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> BinnModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_parameters<BinnModel, Tensor>(*this,
                                      [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> BinnModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  visit_parameters<const BinnModel, const Tensor>(
      *this, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); });
  return out;
}

Index BinnModel::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : parameters()) n += t->size();
  return n;
}

Eigen::VectorXd BinnModel::damping() const {
  Eigen::VectorXd v(latent_dim);
  for (int j = 0; j < latent_dim; ++j) v[j] = softplus_value(rho_d[j]);
  return v;
}

double BinnModel::attention() const { return softplus_value(rho_u[0]); }

Eigen::VectorXd BinnModel::self_reinforcement() const {
  Eigen::VectorXd v(latent_dim);
  for (int j = 0; j < latent_dim; ++j) v[j] = softplus_value(rho_alpha[j]);
  return v;
}

Eigen::MatrixXd BinnModel::belief() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(latent_dim, latent_dim);
  Index k = 0;
  for (int j = 0; j < latent_dim; ++j)
    for (int l = 0; l < latent_dim; ++l)
      if (l != j) a(j, l) = belief_offdiag[k++];
  return a;
}

// ---- checkpoint ---------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte swapping is not implemented");

void save_checkpoint(const BinnModel& m, const std::string& path) {
  nlohmann::ordered_json meta;
  meta["format_version"] = 1;
  meta["hyperparameters"] = {
      {"n_agents", m.n_agents},       {"state_dim", m.state_dim},
      {"latent_dim", m.latent_dim},   {"hidden_dim", m.hidden_dim},
      {"activation", ad::activation_name(m.activation)},
      {"comm", comm_name(m.comm)},    {"epsilon", m.epsilon},
      {"dt", m.dt}};
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& [name, t] : m.parameters())
    manifest.push_back({{"name", name}, {"shape", t->shape()}});
  meta["manifest"] = manifest;

  const std::string json_text = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out.write("BINNCKPT", 8);
  const std::uint64_t len = json_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
  for (const auto& [name, t] : m.parameters()) {
    std::vector<float> buf(static_cast<std::size_t>(t->size()));
    for (Index i = 0; i < t->size(); ++i) buf[static_cast<std::size_t>(i)] =
        static_cast<float>((*t)[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

BinnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "BINNCKPT", 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string json_text(len, '\0');
  in.read(json_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated meta segment");
  const nlohmann::json meta = nlohmann::json::parse(json_text);
  if (meta.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported format_version");

  const auto& hp = meta.at("hyperparameters");
  BinnModel m = BinnModel::init(
      hp.at("n_agents").get<int>(), hp.at("state_dim").get<int>(),
      hp.at("latent_dim").get<int>(), hp.at("hidden_dim").get<int>(),
      ad::activation_from_string(hp.at("activation").get<std::string>()),
      comm_from_string(hp.at("comm").get<std::string>()), hp.at("dt").get<double>(), 0,
      hp.at("epsilon").get<double>());

  auto params = m.parameters();
  const auto& manifest = meta.at("manifest");
  if (manifest.size() != params.size())
    throw std::runtime_error("load_checkpoint: manifest entry count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != params[i].first)
      throw std::runtime_error("load_checkpoint: manifest order mismatch at " +
                               params[i].first);
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape != params[i].second->shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + params[i].first);
    Tensor& t = *params[i].second;
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated blob for " + params[i].first);
    for (Index j = 0; j < t.size(); ++j) t[j] = static_cast<double>(buf[static_cast<std::size_t>(j)]);
  }
  return m;
}

// ---- graph building -----------------------------------------------------------

PairPlan PairPlan::make(int groups, int n_agents) {
  require(groups >= 1 && n_agents >= 1, "PairPlan: bad sizes");
  PairPlan p;
  p.groups = groups;
  p.n_agents = n_agents;
  const int pairs = groups * n_agents * (n_agents - 1);
  p.recv.reserve(static_cast<std::size_t>(pairs));
  p.src.reserve(static_cast<std::size_t>(pairs));
  p.pair_flat.reserve(static_cast<std::size_t>(pairs));
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < n_agents; ++i)
      for (int k = 0; k < n_agents; ++k) {
        if (k == i) continue;
        p.recv.push_back(static_cast<std::int32_t>(g * n_agents + i));
        p.src.push_back(static_cast<std::int32_t>(g * n_agents + k));
        p.pair_flat.push_back(static_cast<std::int32_t>(i * n_agents + k));
      }
  return p;
}

namespace {

/// diag(v) from a [1 x n] row via a constant scatter matrix.
Var make_diag(Tape& t, Var row, Index n) {
  Tensor basis({n, n * n});
  for (Index j = 0; j < n; ++j) basis(j, j * n + j) = 1.0;
  Var flat = matmul(t, row, t.constant(std::move(basis)));
  return reshape(t, flat, {n, n});
}

void finish_derived(Tape& t, ModelVars& v, const BinnModel& m) {
  const Index no = m.latent_dim;
  v.damping_diag = make_diag(t, softplus(t, v.rho_d), no);
  v.alpha_diag = make_diag(t, softplus(t, v.rho_alpha), no);
  v.attention = softplus(t, v.rho_u);
  if (no > 1) {
    // scatter off-diagonals straight into the transposed belief matrix
    const Index k = no * (no - 1);
    Tensor basis({k, no * no});
    Index idx = 0;
    for (Index j = 0; j < no; ++j)
      for (Index l = 0; l < no; ++l) {
        if (l == j) continue;
        basis(idx, l * no + j) = 1.0;  // A_oT[l, j] = A_o[j, l]
        ++idx;
      }
    v.belief_t = reshape(t, matmul(t, v.belief_offdiag, t.constant(std::move(basis))), {no, no});
  }
}

ModelVars assemble_vars(Tape& t, const BinnModel& m, const std::map<std::string, Var>& by_name,
                        std::vector<Var> ordered) {
  ModelVars v;
  v.params = std::move(ordered);
  auto get = [&](const std::string& n) {
    auto it = by_name.find(n);
    return it == by_name.end() ? Var{} : it->second;
  };
  auto mlp = [&](const std::string& base) {
    ModelVars::MlpVars s;
    s.w1 = get(base + ".w1");
    s.b1 = get(base + ".b1");
    s.w2 = get(base + ".w2");
    s.b2 = get(base + ".b2");
    s.w3 = get(base + ".w3");
    s.b3 = get(base + ".b3");
    return s;
  };
  v.ez_emb = mlp("ez_emb");
  v.ez_v2e = mlp("ez_v2e");
  v.ez_e2v = mlp("ez_e2v");
  v.eb_emb = mlp("eb_emb");
  v.eb_v2e = mlp("eb_v2e");
  v.eb_e2v = mlp("eb_e2v");
  v.dx_dec = mlp("dx_dec");
  v.dx_v2e = mlp("dx_v2e");
  v.dx_e2v = mlp("dx_e2v");
  v.rho_d = get("rho_d");
  v.rho_u = get("rho_u");
  v.rho_alpha = get("rho_alpha");
  v.belief_offdiag = get("belief_offdiag");
  v.comm_multiplier = get("a_pre");
  finish_derived(t, v, m);
  return v;
}

}  // namespace

ModelVars make_vars(Tape& t, const BinnModel& m, bool requires_grad) {
  std::map<std::string, Var> by_name;
  std::vector<Var> ordered;
  for (const auto& [name, tensor] : m.parameters()) {
    Var v = t.leaf(*tensor, requires_grad);
    by_name[name] = v;
    ordered.push_back(v);
  }
  return assemble_vars(t, m, by_name, std::move(ordered));
}

ModelVars vars_from_flat(Tape& t, const BinnModel& m, Var theta) {
  std::map<std::string, Var> by_name;
  std::vector<Var> ordered;
  Index offset = 0;
  for (const auto& [name, tensor] : m.parameters()) {
    Var piece = slice_cols(t, theta, offset, tensor->size());
    Var shaped = reshape(t, piece, tensor->shape());
    by_name[name] = shaped;
    ordered.push_back(shaped);
    offset += tensor->size();
  }
  if (t.value(theta).size() != offset)
    throw std::invalid_argument("vars_from_flat: theta size mismatch");
  return assemble_vars(t, m, by_name, std::move(ordered));
}

Tensor flatten_parameters(const BinnModel& m) {
  Tensor out({1, m.parameter_count()});
  Index offset = 0;
  for (const auto& [name, t] : m.parameters()) {
    for (Index i = 0; i < t->size(); ++i) out[offset + i] = (*t)[i];
    offset += t->size();
  }
  return out;
}

void unflatten_parameters(BinnModel& m, const Tensor& theta) {
  require(theta.size() == m.parameter_count(), "unflatten_parameters: size mismatch");
  Index offset = 0;
  for (auto& [name, t] : m.parameters()) {
    for (Index i = 0; i < t->size(); ++i) (*t)[i] = theta[offset + i];
    offset += t->size();
  }
}

namespace {

Var mlp3_forward(Tape& t, const ModelVars::MlpVars& m, Activation act, Var x) {
  Var h1 = linear_activated(t, x, m.w1, m.b1, act);
  Var h2 = linear_activated(t, h1, m.w2, m.b2, act);
  return linear_forward(t, h2, m.w3, m.b3);
}

/// Shared message-passing stack: embed, exchange messages over ordered pairs,
/// aggregate per receiver, read out.
Var encode_core(Tape& t, const ModelVars::MlpVars& emb, const ModelVars::MlpVars& v2e,
                const ModelVars::MlpVars& e2v, Activation act, Index hidden, Var x,
                const PairPlan& plan) {
  Var h = mlp3_forward(t, emb, act, x);
  Var agg;
  if (plan.n_pairs() > 0) {
    Var hr = gather_rows(t, h, plan.recv);
    Var hs = gather_rows(t, h, plan.src);
    Var msg = mlp3_forward(t, v2e, act, concat_cols(t, hr, hs));
    agg = scatter_sum_rows(t, msg, plan.recv, plan.n_rows());
  } else {
    agg = t.constant(Tensor::zeros({plan.n_rows(), hidden}));
  }
  return mlp3_forward(t, e2v, act, concat_cols(t, agg, h));
}

/// Broadcast a [1x1] scalar to [rows x cols].
Var expand_scalar(Tape& t, Var s, Index rows, Index cols) {
  Var ones = t.constant(Tensor::full({rows * cols, 1}, 1.0));
  return reshape(t, matmul(t, ones, s), {rows, cols});
}

/// Broadcast a [n x 1] column across cols columns.
Var expand_col(Tape& t, Var c, Index cols) {
  return matmul(t, c, t.constant(Tensor::full({1, cols}, 1.0)));
}

/// sum_{k != i} w_(i,k) x_k per receiver row.
Var pair_weighted_sum(Tape& t, Var x, Var weights, const PairPlan& plan) {
  Var xs = gather_rows(t, x, plan.src);
  Var weighted = mul(t, xs, expand_col(t, weights, t.value(x).cols()));
  return scatter_sum_rows(t, weighted, plan.recv, plan.n_rows());
}

Var apply_learned_multiplier(Tape& t, const ModelVars& v, const BinnModel& m, Var base,
                             const PairPlan& plan) {
  Var flat = reshape(t, v.comm_multiplier,
                     {static_cast<Index>(m.n_agents) * m.n_agents, 1});
  Var per_pair = gather_rows(t, flat, plan.pair_flat);
  return mul(t, base, per_pair);
}

}  // namespace

Var encode_preferences(Tape& t, const ModelVars& v, const BinnModel& m, Var x,
                       const PairPlan& plan) {
  return encode_core(t, v.ez_emb, v.ez_v2e, v.ez_e2v, m.activation, m.hidden_dim, x, plan);
}

Var encode_env_input(Tape& t, const ModelVars& v, const BinnModel& m, Var x,
                     const PairPlan& plan) {
  return encode_core(t, v.eb_emb, v.eb_v2e, v.eb_e2v, m.activation, m.hidden_dim, x, plan);
}

Var decode_states(Tape& t, const ModelVars& v, const BinnModel& m, Var z, const PairPlan& plan) {
  return encode_core(t, v.dx_dec, v.dx_v2e, v.dx_e2v, m.activation, m.hidden_dim, z, plan);
}

Var comm_pair_weights(Tape& t, const ModelVars& v, const BinnModel& m, Var positions,
                      const PairPlan& plan) {
  if (plan.n_pairs() == 0) return Var{};
  const Index pd = t.value(positions).cols();
  Var pr = gather_rows(t, positions, plan.recv);
  Var ps = gather_rows(t, positions, plan.src);
  Var diff = sub(t, pr, ps);
  Var sqd = matmul(t, mul(t, diff, diff), t.constant(Tensor::full({pd, 1}, 1.0)));
  switch (m.comm) {
    case CommVariant::kSquaredDistance:
      return sqd;
    case CommVariant::kInverseDistance:
      return reciprocal(
          t, add(t, sqd, t.constant(Tensor::full({plan.n_pairs(), 1}, m.epsilon))));
    case CommVariant::kLearnedMultiplier: {
      Var inv = reciprocal(
          t, add(t, sqd, t.constant(Tensor::full({plan.n_pairs(), 1}, m.epsilon))));
      return apply_learned_multiplier(t, v, m, inv, plan);
    }
  }
  throw std::invalid_argument("comm_pair_weights: bad variant");
}

Var comm_pair_weights_const(Tape& t, const ModelVars& v, const BinnModel& m,
                            const std::vector<Eigen::MatrixXd>& positions,
                            const PairPlan& plan) {
  if (plan.n_pairs() == 0) return Var{};
  require(static_cast<int>(positions.size()) == plan.groups,
          "comm_pair_weights_const: group count mismatch");
  Tensor base({plan.n_pairs(), 1});
  const int per_group = plan.n_agents * (plan.n_agents - 1);
  for (int g = 0; g < plan.groups; ++g) {
    const Eigen::MatrixXd& p = positions[static_cast<std::size_t>(g)];
    for (int q = 0; q < per_group; ++q) {
      const int idx = g * per_group + q;
      const int i = plan.recv[static_cast<std::size_t>(idx)] - g * plan.n_agents;
      const int k = plan.src[static_cast<std::size_t>(idx)] - g * plan.n_agents;
      const double d2 = (p.row(i) - p.row(k)).squaredNorm();
      base[idx] = m.comm == CommVariant::kSquaredDistance ? d2 : 1.0 / (d2 + m.epsilon);
    }
  }
  Var base_var = t.constant(std::move(base));
  if (m.comm == CommVariant::kLearnedMultiplier)
    return apply_learned_multiplier(t, v, m, base_var, plan);
  return base_var;
}

Eigen::MatrixXd comm_matrix(const Eigen::MatrixXd& positions, CommVariant variant,
                            const Eigen::MatrixXd& a_pre, double epsilon) {
  const Eigen::Index n = positions.rows();
  if (variant != CommVariant::kSquaredDistance) require(epsilon > 0.0, "comm_matrix: epsilon");
  if (variant == CommVariant::kLearnedMultiplier)
    require(a_pre.rows() == n && a_pre.cols() == n, "comm_matrix: a_pre shape");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;  // diagonal stays zero in every variant
      const double d2 = (positions.row(i) - positions.row(j)).squaredNorm();
      switch (variant) {
        case CommVariant::kSquaredDistance: a(i, j) = d2; break;
        case CommVariant::kInverseDistance: a(i, j) = 1.0 / (d2 + epsilon); break;
        case CommVariant::kLearnedMultiplier: a(i, j) = a_pre(i, j) / (d2 + epsilon); break;
      }
    }
  return a;
}

Var f_nod_latent(Tape& t, const ModelVars& v, const BinnModel& m, Var z, Var b, Var comm_pairs,
                 const PairPlan& plan) {
  const Index rows = t.value(z).rows();
  const Index no = m.latent_dim;
  require(t.value(z).cols() == no && t.value(b).rows() == rows && t.value(b).cols() == no,
          "f_nod_latent: shape mismatch");

  Var inner = matmul(t, z, v.alpha_diag);
  if (plan.n_pairs() > 0) inner = add(t, inner, pair_weighted_sum(t, z, comm_pairs, plan));
  if (no > 1) {
    Var zb = matmul(t, z, v.belief_t);
    inner = add(t, inner, zb);
    if (plan.n_pairs() > 0) inner = add(t, inner, pair_weighted_sum(t, zb, comm_pairs, plan));
  }
  Var arg = mul(t, expand_scalar(t, v.attention, rows, no), inner);
  Var sat = ad::tanh(t, arg);
  return add(t, sub(t, sat, matmul(t, z, v.damping_diag)), b);
}

Var f_nod_latent(Tape& t, const ModelVars& v, const BinnModel& m, Var z, Var b,
                 const Eigen::MatrixXd& comm) {
  const int na = static_cast<int>(comm.rows());
  require(comm.cols() == na && t.value(z).rows() == na, "f_nod_latent: comm shape mismatch");
  const PairPlan plan = PairPlan::make(1, na);
  Var weights;
  if (plan.n_pairs() > 0) {
    Tensor w({plan.n_pairs(), 1});
    for (int q = 0; q < plan.n_pairs(); ++q)
      w[q] = comm(plan.recv[static_cast<std::size_t>(q)], plan.src[static_cast<std::size_t>(q)]);
    weights = t.constant(std::move(w));
  }
  return f_nod_latent(t, v, m, z, b, weights, plan);
}

std::vector<Var> rollout_on_tape(Tape& t, const ModelVars& v, const BinnModel& m, Var x0,
                                 int horizon, const PairPlan& plan, std::vector<Var>* z_trace,
                                 std::vector<Var>* b_trace, std::vector<Var>* comm_trace) {
  require(horizon >= 1, "rollout: horizon must be >= 1");
  require(t.value(x0).rows() == plan.n_rows() && t.value(x0).cols() == m.state_dim,
          "rollout: x0 shape mismatch");
  const bool want_trace = z_trace || b_trace || comm_trace;
  const Index pd = m.position_dim();

  Var z = encode_preferences(t, v, m, x0, plan);
  Var b = encode_env_input(t, v, m, x0, plan);
  Var w = comm_pair_weights(t, v, m, slice_cols(t, x0, 0, pd), plan);
  if (z_trace) z_trace->push_back(z);
  if (b_trace) b_trace->push_back(b);
  if (comm_trace) comm_trace->push_back(w);

  std::vector<Var> predicted;
  predicted.reserve(static_cast<std::size_t>(horizon));
  for (int step = 0; step < horizon; ++step) {
    try {
      Var rhs = f_nod_latent(t, v, m, z, b, w, plan);
      z = add(t, z, scale(t, rhs, m.dt));
      Var xhat = decode_states(t, v, m, z, plan);
      predicted.push_back(xhat);
      if (z_trace) z_trace->push_back(z);
      if (step + 1 < horizon || want_trace) {
        b = encode_env_input(t, v, m, xhat, plan);
        w = comm_pair_weights(t, v, m, slice_cols(t, xhat, 0, pd), plan);
        if (b_trace) b_trace->push_back(b);
        if (comm_trace) comm_trace->push_back(w);
      }
    } catch (const ad::NonFiniteError& e) {
      throw ad::NonFiniteError("rollout: non-finite state at step " + std::to_string(step + 1) +
                                   " (" + e.what() + ")",
                               e.node_id());
    }
  }
  return predicted;
}

namespace {

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd out(t.rows(), t.cols());
  for (Index r = 0; r < t.rows(); ++r)
    for (Index c = 0; c < t.cols(); ++c) out(r, c) = t(r, c);
  return out;
}

Tensor from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(r, c) = m(r, c);
  return t;
}

Eigen::MatrixXd pairs_to_matrix(const Tensor& w, const PairPlan& plan) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(plan.n_agents, plan.n_agents);
  for (int q = 0; q < plan.n_pairs(); ++q)
    a(plan.recv[static_cast<std::size_t>(q)], plan.src[static_cast<std::size_t>(q)]) = w[q];
  return a;
}

}  // namespace

std::pair<std::vector<Eigen::MatrixXd>, LatentTrace> rollout(const BinnModel& m,
                                                             const Eigen::MatrixXd& x0,
                                                             int horizon) {
  require(x0.rows() == m.n_agents && x0.cols() == m.state_dim, "rollout: x0 shape mismatch");
  Tape t;
  ModelVars v = make_vars(t, m, false);
  const PairPlan plan = PairPlan::make(1, m.n_agents);
  Var x0v = t.constant(from_matrix(x0));
  std::vector<Var> zs, bs, ws;
  const std::vector<Var> pred = rollout_on_tape(t, v, m, x0v, horizon, plan, &zs, &bs, &ws);

  std::vector<Eigen::MatrixXd> xs;
  xs.reserve(pred.size());
  for (Var p : pred) xs.push_back(to_matrix(t.value(p)));

  LatentTrace trace;
  for (Var z : zs) trace.z.push_back(to_matrix(t.value(z)));
  for (Var b : bs) trace.input.push_back(to_matrix(t.value(b)));
  for (Var w : ws)
    trace.comm.push_back(w.valid() ? pairs_to_matrix(t.value(w), plan)
                                   : Eigen::MatrixXd::Zero(m.n_agents, m.n_agents));
  return {std::move(xs), std::move(trace)};
}

namespace {

Eigen::MatrixXd run_single(const BinnModel& m, const Eigen::MatrixXd& in,
                           Var (*fn)(Tape&, const ModelVars&, const BinnModel&, Var,
                                     const PairPlan&)) {
  Tape t;
  ModelVars v = make_vars(t, m, false);
  const PairPlan plan = PairPlan::make(1, m.n_agents);
  Var out = fn(t, v, m, t.constant(from_matrix(in)), plan);
  return to_matrix(t.value(out));
}

}  // namespace

Eigen::MatrixXd encode_preferences_value(const BinnModel& m, const Eigen::MatrixXd& x) {
  return run_single(m, x, &encode_preferences);
}

Eigen::MatrixXd encode_env_input_value(const BinnModel& m, const Eigen::MatrixXd& x) {
  return run_single(m, x, &encode_env_input);
}

Eigen::MatrixXd decode_states_value(const BinnModel& m, const Eigen::MatrixXd& z) {
  return run_single(m, z, &decode_states);
}

}  // namespace binn::model
