// Command-line entry point: dataset generation and import, training,
// evaluation, rollout export, bifurcation sweeps, and interpretability
// analysis of trained checkpoints.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binn/export.hpp"
#include "binn/model.hpp"
#include "binn/nod.hpp"
#include "binn/sims.hpp"
#include "binn/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "binn 1.0.0";

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const ordered_json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double duration_s) {
  ordered_json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["tool_version"] = kToolVersion;
  m["duration_seconds"] = duration_s;  // wall clock; excluded from idempotence checks
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  f << m.dump(2) << "\n";
}

binn::sims::TrajectoryDataset load_split(const std::string& data_dir, const std::string& split) {
  return binn::sims::load_dataset((fs::path(data_dir) / split).string());
}

/// Training configuration resolution: per-system defaults, overridden by a
/// --config JSON file, overridden by explicit CLI flags.
struct TrainFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> comm;
  std::optional<int> latent_dim;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<int> hidden_dim;
  std::optional<double> lr;

  binn::train::TrainConfig resolve(const std::string& dataset_name) const {
    binn::train::TrainConfig cfg = binn::train::TrainConfig::system_defaults(dataset_name);
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = binn::train::TrainConfig::from_json(ss.str());
    }
    if (seed) cfg.seed = *seed;
    if (comm) cfg.comm = *comm;
    if (latent_dim) cfg.latent_dim = *latent_dim;
    if (epochs) cfg.epochs = *epochs;
    if (batch_size) cfg.batch_size = *batch_size;
    if (hidden_dim) cfg.hidden_dim = *hidden_dim;
    if (lr) cfg.lr = *lr;
    cfg.validate();
    return cfg;
  }

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "training config JSON");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--comm", comm, "communication variant: sqdist|invdist|learned");
    cmd->add_option("--latent-dim", latent_dim, "latent category count");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch_size, "minibatch size");
    cmd->add_option("--hidden-dim", hidden_dim, "MLP hidden width");
    cmd->add_option("--lr", lr, "initial learning rate");
  }
};

ordered_json config_json(const binn::train::TrainConfig& cfg) {
  return ordered_json::parse(cfg.to_json());
}

void export_metrics_and_checkpoint(const binn::train::FitResult& fit, const fs::path& out) {
  fs::create_directories(out);
  binn::model::save_checkpoint(fit.best, (out / "best.ckpt").string());
  binn::train::write_metrics_csv(fit.log, (out / "metrics.csv").string());
}

int run_generate(const std::string& system, const std::string& out, int n_train, int n_val,
                 int n_test, std::uint64_t seed) {
  Timer timer;
  binn::sims::SimConfig cfg =
      binn::sims::SimConfig::table_defaults(binn::sims::system_from_string(system), seed);
  int rejected = 0;
  struct Split {
    const char* name;
    int count;
    std::uint64_t salt;
  } splits[] = {{"train", n_train, 0x7472}, {"val", n_val, 0x76616c}, {"test", n_test, 0x74657374}};
  std::vector<std::string> outputs;
  for (const Split& s : splits) {
    binn::sims::SimConfig split_cfg = cfg;
    split_cfg.seed = binn::Rng::mix(seed, s.salt);
    int r = 0;
    const binn::sims::TrajectoryDataset ds = binn::sims::generate_dataset(split_cfg, s.count, &r);
    rejected += r;
    const fs::path dir = fs::path(out) / s.name;
    binn::sims::save_dataset(ds, dir.string());
    outputs.push_back(dir.string());
    std::cout << s.name << ": " << ds.n_traj << " trajectories, " << ds.n_frames << " frames, dt "
              << ds.dt << "\n";
  }
  if (rejected > 0) std::cout << "rejected and resampled " << rejected << " trajectories\n";
  ordered_json cfg_json{
      {"system", system}, {"n_train", n_train}, {"n_val", n_val}, {"n_test", n_test}};
  write_manifest(out, "generate", cfg_json, seed, {}, outputs, timer.seconds());
  return 0;
}

int run_import_csv(const std::string& csv, const std::string& out, double dt, bool has_velocity,
                   double train_frac, double val_frac, std::uint64_t seed) {
  Timer timer;
  const binn::sims::TrajectoryDataset all = binn::sims::import_csv(csv, has_velocity, dt);
  std::cout << "imported " << all.n_traj << " trajectories, " << all.n_frames << " frames, "
            << all.n_agents << " agents\n";

  // deterministic shuffled split
  std::vector<int> order(static_cast<std::size_t>(all.n_traj));
  for (int i = 0; i < all.n_traj; ++i) order[static_cast<std::size_t>(i)] = i;
  binn::Rng rng(binn::Rng::mix(seed, 0x637376));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next_below(i))]);

  const int n_train = static_cast<int>(train_frac * all.n_traj);
  const int n_val = static_cast<int>(val_frac * all.n_traj);
  struct Split {
    const char* name;
    int begin, end;
  } splits[] = {{"train", 0, n_train},
                {"val", n_train, n_train + n_val},
                {"test", n_train + n_val, all.n_traj}};
  std::vector<std::string> outputs;
  for (const Split& s : splits) {
    binn::sims::TrajectoryDataset ds;
    ds.name = all.name;
    ds.n_traj = s.end - s.begin;
    ds.n_frames = all.n_frames;
    ds.n_agents = all.n_agents;
    ds.state_dim = all.state_dim;
    ds.dt = all.dt;
    ds.data.resize(static_cast<std::size_t>(ds.n_traj) * ds.n_frames * ds.n_agents * ds.state_dim);
    for (int t = s.begin; t < s.end; ++t) {
      const int src = order[static_cast<std::size_t>(t)];
      for (int f = 0; f < ds.n_frames; ++f)
        for (int a = 0; a < ds.n_agents; ++a)
          for (int k = 0; k < ds.state_dim; ++k) ds.at(t - s.begin, f, a, k) = all.at(src, f, a, k);
    }
    const fs::path dir = fs::path(out) / s.name;
    binn::sims::save_dataset(ds, dir.string());
    outputs.push_back(dir.string());
    std::cout << s.name << ": " << ds.n_traj << " trajectories\n";
  }
  ordered_json cfg{{"csv", csv},
                   {"dt", dt},
                   {"has_velocity", has_velocity},
                   {"train_frac", train_frac},
                   {"val_frac", val_frac}};
  write_manifest(out, "import-csv", cfg, seed, {csv}, outputs, timer.seconds());
  return 0;
}

int run_train(const std::string& data, const std::string& out, const TrainFlags& flags) {
  Timer timer;
  const binn::sims::TrajectoryDataset train_ds = load_split(data, "train");
  const binn::sims::TrajectoryDataset val_ds = load_split(data, "val");
  const binn::train::TrainConfig cfg = flags.resolve(train_ds.name);

  const binn::train::FitResult fit = binn::train::fit(train_ds, val_ds, cfg, &std::cout);
  export_metrics_and_checkpoint(fit, out);
  std::cout << "best val mse " << fit.best_val << " at epoch " << fit.best_epoch << "\n";
  write_manifest(out, "train", config_json(cfg), cfg.seed, {data},
                 {(fs::path(out) / "best.ckpt").string(), (fs::path(out) / "metrics.csv").string()},
                 timer.seconds());
  return 0;
}

int run_eval(const std::string& data, const std::string& ckpt) {
  const binn::sims::TrajectoryDataset test = load_split(data, "test");
  const binn::model::BinnModel m = binn::model::load_checkpoint(ckpt);
  const double mse = binn::train::evaluate_mse(test, m);
  std::cout << "test_mse=" << std::setprecision(17) << mse << "\n";
  return 0;
}

int run_rollout(const std::string& data, const std::string& ckpt, const std::string& out, int traj,
                int horizon) {
  Timer timer;
  const binn::sims::TrajectoryDataset test = load_split(data, "test");
  const binn::model::BinnModel m = binn::model::load_checkpoint(ckpt);
  if (traj < 0 || traj >= test.n_traj) throw std::invalid_argument("trajectory index out of range");
  const int h = horizon > 0 ? horizon : test.n_frames - 1;

  const auto [pred, trace] = binn::model::rollout(m, test.frame(traj, 0), h);
  fs::create_directories(out);

  const fs::path csv_path = fs::path(out) / "rollout.csv";
  {
    std::ofstream f(csv_path);
    f.precision(17);
    f << "frame,agent";
    for (int k = 0; k < m.state_dim; ++k) f << ",pred_" << k;
    for (int k = 0; k < m.state_dim; ++k) f << ",true_" << k;
    f << "\n";
    for (int step = 0; step < h; ++step) {
      const bool have_truth = step + 1 < test.n_frames;
      for (int a = 0; a < m.n_agents; ++a) {
        f << step + 1 << "," << a;
        for (int k = 0; k < m.state_dim; ++k)
          f << "," << pred[static_cast<std::size_t>(step)](a, k);
        for (int k = 0; k < m.state_dim; ++k)
          f << ","
            << (have_truth ? test.at(traj, step + 1, a, k)
                           : std::numeric_limits<double>::quiet_NaN());
        f << "\n";
      }
    }
  }

  // overlay plot of the first position coordinate
  std::vector<double> xs;
  std::vector<binn::plot::Series> series(2 * static_cast<std::size_t>(m.n_agents));
  for (int a = 0; a < m.n_agents; ++a) {
    series[static_cast<std::size_t>(2 * a)].name = "pred a" + std::to_string(a);
    series[static_cast<std::size_t>(2 * a + 1)].name = "true a" + std::to_string(a);
  }
  for (int step = 0; step < h; ++step) {
    xs.push_back((step + 1) * test.dt);
    for (int a = 0; a < m.n_agents; ++a) {
      series[static_cast<std::size_t>(2 * a)].y.push_back(
          pred[static_cast<std::size_t>(step)](a, 0));
      series[static_cast<std::size_t>(2 * a + 1)].y.push_back(
          step + 1 < test.n_frames ? test.at(traj, step + 1, a, 0)
                                   : std::numeric_limits<double>::quiet_NaN());
    }
  }
  const fs::path svg_path = fs::path(out) / "rollout.svg";
  binn::plot::write_svg_lineplot(svg_path.string(), "rollout: first position coordinate", xs,
                                 series);

  ordered_json cfg{{"traj", traj}, {"horizon", h}, {"ckpt", ckpt}};
  write_manifest(out, "rollout", cfg, 0, {data, ckpt}, {csv_path.string(), svg_path.string()},
                 timer.seconds());
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

int run_bifurcation(const std::string& kind, const std::string& sweep, double lo, double hi,
                    int resolution, double attention, double damping, double alpha, double input,
                    const std::string& out) {
  Timer timer;
  binn::nod::ScalarFamily family;
  if (kind == "pitchfork") {
    if (sweep == "b") {
      const double u = attention;
      family = [u](double b) {
        return [u, b](double z) { return binn::nod::pitchfork_rhs(z, u) + b; };
      };
    } else {
      family = binn::nod::pitchfork_family();
    }
  } else if (kind == "reduced") {
    binn::nod::ReducedNodParams base;
    base.damping = Eigen::VectorXd::Constant(1, damping);
    base.attention = Eigen::VectorXd::Constant(1, attention);
    base.self_reinforcement = Eigen::VectorXd::Constant(1, alpha);
    base.coupling = Eigen::MatrixXd::Zero(1, 1);
    base.input = Eigen::VectorXd::Constant(1, input);
    family = binn::nod::reduced_family(
        base, sweep == "b" ? binn::nod::SweepVariable::kInput : binn::nod::SweepVariable::kAttention);
  } else {
    throw std::invalid_argument("bifurcation kind must be pitchfork or reduced");
  }

  binn::nod::SweepOptions opt;
  opt.lo = lo;
  opt.hi = hi;
  opt.resolution = resolution;
  const binn::nod::BifurcationResult result = binn::nod::bifurcation_sweep(family, opt);

  fs::create_directories(out);
  const fs::path csv_path = fs::path(out) / "sweep.csv";
  binn::nod::write_sweep_csv(result, csv_path.string());

  binn::plot::PointSeries stable{"stable", {}, {}}, unstable{"unstable", {}, {}};
  for (std::size_t i = 0; i < result.sweep_values.size(); ++i)
    for (const auto& eq : result.equilibria[i]) {
      auto& target = eq.stable ? stable : unstable;
      target.x.push_back(result.sweep_values[i]);
      target.y.push_back(eq.z);
    }
  const fs::path svg_path = fs::path(out) / "sweep.svg";
  binn::plot::write_svg_scatter(svg_path.string(), "equilibria vs " + sweep, {stable, unstable});

  if (result.critical_value) std::cout << "critical_value=" << *result.critical_value << "\n";
  for (double fold : result.fold_points) std::cout << "fold at " << fold << "\n";

  ordered_json cfg{{"kind", kind},
                   {"sweep", sweep},
                   {"lo", lo},
                   {"hi", hi},
                   {"resolution", resolution},
                   {"attention", attention},
                   {"damping", damping},
                   {"alpha", alpha},
                   {"input", input}};
  write_manifest(out, "bifurcation", cfg, 0, {}, {csv_path.string(), svg_path.string()},
                 timer.seconds());
  return 0;
}

int run_analyze(const std::string& data, const std::string& ckpt, const std::string& out,
                int agent, int category, double lo, double hi, int resolution, int max_traj) {
  Timer timer;
  const binn::sims::TrajectoryDataset test = load_split(data, "test");
  const binn::model::BinnModel m = binn::model::load_checkpoint(ckpt);
  if (test.n_agents != m.n_agents || test.state_dim != m.state_dim)
    throw std::invalid_argument("checkpoint and dataset disagree on agents or state dim");
  if (agent < 0 || agent >= m.n_agents || category < 0 || category >= m.latent_dim)
    throw std::invalid_argument("agent or category out of range");
  fs::create_directories(out);
  std::vector<std::string> outputs;

  // latent traces of encoded ground-truth trajectories
  const int keep = std::min(max_traj, test.n_traj);
  std::vector<Eigen::MatrixXd> pooled;
  std::vector<Eigen::MatrixXd> kept_inputs;
  const fs::path traces_path = fs::path(out) / "traces.csv";
  {
    std::ofstream f(traces_path);
    f.precision(17);
    f << "traj,frame,agent";
    for (int j = 0; j < m.latent_dim; ++j) f << ",z_" << j;
    for (int j = 0; j < m.latent_dim; ++j) f << ",b_" << j;
    f << "\n";
    for (int t = 0; t < test.n_traj; ++t) {
      for (int fr = 0; fr < test.n_frames; ++fr) {
        const Eigen::MatrixXd z = binn::model::encode_preferences_value(m, test.frame(t, fr));
        pooled.push_back(z);
        if (t < keep) {
          const Eigen::MatrixXd b = binn::model::encode_env_input_value(m, test.frame(t, fr));
          kept_inputs.push_back(b);
          for (int a = 0; a < m.n_agents; ++a) {
            f << t << "," << fr << "," << a;
            for (int j = 0; j < m.latent_dim; ++j) f << "," << z(a, j);
            for (int j = 0; j < m.latent_dim; ++j) f << "," << b(a, j);
            f << "\n";
          }
        }
      }
    }
  }
  outputs.push_back(traces_path.string());

  // plot of the first trajectory's preferences for one agent
  if (keep > 0) {
    std::vector<double> xs;
    std::vector<binn::plot::Series> series(static_cast<std::size_t>(m.latent_dim));
    for (int j = 0; j < m.latent_dim; ++j)
      series[static_cast<std::size_t>(j)].name = "z_" + std::to_string(j);
    for (int fr = 0; fr < test.n_frames; ++fr) {
      xs.push_back(fr * test.dt);
      for (int j = 0; j < m.latent_dim; ++j)
        series[static_cast<std::size_t>(j)].y.push_back(
            pooled[static_cast<std::size_t>(fr)](agent, j));
    }
    const fs::path p = fs::path(out) / "traces.svg";
    binn::plot::write_svg_lineplot(p.string(), "encoded preferences, trajectory 0", xs, series);
    outputs.push_back(p.string());
  }

  // learned dynamics parameters
  const Eigen::MatrixXd belief = m.belief();
  {
    ordered_json params;
    params["belief"] = ordered_json::array();
    for (int j = 0; j < m.latent_dim; ++j) {
      ordered_json row = ordered_json::array();
      for (int l = 0; l < m.latent_dim; ++l) row.push_back(belief(j, l));
      params["belief"].push_back(row);
    }
    const Eigen::VectorXd d = m.damping(), a = m.self_reinforcement();
    params["damping"] = std::vector<double>(d.data(), d.data() + d.size());
    params["attention"] = m.attention();
    params["self_reinforcement"] = std::vector<double>(a.data(), a.data() + a.size());
    const fs::path p = fs::path(out) / "dynamics.json";
    std::ofstream f(p);
    f << params.dump(2) << "\n";
    outputs.push_back(p.string());
  }

  // mutual-exclusivity verdicts on the pooled encoded trace
  {
    ordered_json ex;
    try {
      const auto reports = binn::nod::detect_mutual_exclusivity(pooled, belief);
      ex = ordered_json::array();
      for (const auto& r : reports) {
        ex.push_back({{"category_a", r.category_a},
                      {"category_b", r.category_b},
                      {"scale_c", r.scale_c},
                      {"correlation", r.correlation},
                      {"belief_ab", r.belief_ab},
                      {"belief_ba", r.belief_ba},
                      {"mutually_exclusive", r.mutually_exclusive}});
        std::cout << "pair (" << r.category_a << "," << r.category_b << "): rho=" << r.correlation
                  << " c=" << r.scale_c << (r.mutually_exclusive ? "  mutually exclusive" : "")
                  << "\n";
      }
    } catch (const binn::nod::DegenerateTraceError& e) {
      ex = ordered_json{{"error", e.what()}};
      std::cout << "exclusivity: " << e.what() << "\n";
    }
    const fs::path p = fs::path(out) / "exclusivity.json";
    std::ofstream f(p);
    f << ex.dump(2) << "\n";
    outputs.push_back(p.string());
  }

  // equilibrium sweep of the learned latent dynamics in (b, z) for one
  // agent/category, the other coordinates frozen at zero
  {
    const double dj = m.damping()[category];
    const double u = m.attention();
    const double aj = m.self_reinforcement()[category];
    binn::nod::ScalarFamily family = [dj, u, aj](double b) {
      return [dj, u, aj, b](double z) { return -dj * z + std::tanh(u * aj * z) + b; };
    };
    binn::nod::SweepOptions opt;
    opt.lo = lo;
    opt.hi = hi;
    opt.resolution = resolution;
    const auto sweep = binn::nod::bifurcation_sweep(family, opt);
    const fs::path p = fs::path(out) / "bifurcation.csv";
    binn::nod::write_sweep_csv(sweep, p.string());
    outputs.push_back(p.string());

    binn::plot::PointSeries stable{"stable", {}, {}}, unstable{"unstable", {}, {}},
        observed{"observed (b,z)", {}, {}};
    for (std::size_t i = 0; i < sweep.sweep_values.size(); ++i)
      for (const auto& eq : sweep.equilibria[i]) {
        auto& target = eq.stable ? stable : unstable;
        target.x.push_back(sweep.sweep_values[i]);
        target.y.push_back(eq.z);
      }
    for (int t = 0; t < keep; ++t)
      for (int fr = 0; fr < test.n_frames; ++fr) {
        const std::size_t i = static_cast<std::size_t>(t) * test.n_frames + fr;
        observed.x.push_back(kept_inputs[i](agent, category));
        observed.y.push_back(pooled[i](agent, category));
      }
    const fs::path svg = fs::path(out) / "bifurcation.svg";
    binn::plot::write_svg_scatter(svg.string(), "latent equilibria and observed (b, z)",
                                  {stable, unstable, observed});
    outputs.push_back(svg.string());
  }

  ordered_json cfg{{"agent", agent},
                   {"category", category},
                   {"lo", lo},
                   {"hi", hi},
                   {"resolution", resolution},
                   {"max_traj", max_traj},
                   {"ckpt", ckpt}};
  write_manifest(out, "analyze", cfg, 0, {data, ckpt}, outputs, timer.seconds());
  return 0;
}

int run_reduce(const std::string& data, const std::string& ckpt, const std::string& out,
               const TrainFlags& flags) {
  Timer timer;
  const binn::sims::TrajectoryDataset train_ds = load_split(data, "train");
  const binn::sims::TrajectoryDataset val_ds = load_split(data, "val");
  const binn::sims::TrajectoryDataset test_ds = load_split(data, "test");
  const binn::model::BinnModel m = binn::model::load_checkpoint(ckpt);

  std::vector<Eigen::MatrixXd> pooled;
  for (int t = 0; t < test_ds.n_traj; ++t)
    for (int fr = 0; fr < test_ds.n_frames; ++fr)
      pooled.push_back(binn::model::encode_preferences_value(m, test_ds.frame(t, fr)));
  const auto reports = binn::nod::detect_mutual_exclusivity(pooled, m.belief());

  const binn::nod::ExclusivityReport* positive = nullptr;
  for (const auto& r : reports)
    if (r.mutually_exclusive) positive = &r;

  fs::create_directories(out);
  ordered_json result;
  result["original_latent_dim"] = m.latent_dim;
  result["original_test_mse"] = binn::train::evaluate_mse(test_ds, m);
  std::vector<std::string> outputs;

  binn::train::TrainConfig cfg = flags.resolve(train_ds.name);
  if (positive != nullptr && m.latent_dim >= 2) {
    std::cout << "mutually exclusive pair (" << positive->category_a << ","
              << positive->category_b << ") with rho=" << positive->correlation
              << "; retraining with latent dimension " << m.latent_dim - 1 << "\n";
    cfg.latent_dim = m.latent_dim - 1;
    const binn::train::FitResult fit = binn::train::fit(train_ds, val_ds, cfg, &std::cout);
    export_metrics_and_checkpoint(fit, out);
    outputs.push_back((fs::path(out) / "best.ckpt").string());
    outputs.push_back((fs::path(out) / "metrics.csv").string());
    result["reduced"] = true;
    result["pair"] = {positive->category_a, positive->category_b};
    result["correlation"] = positive->correlation;
    result["reduced_latent_dim"] = cfg.latent_dim;
    result["reduced_test_mse"] = binn::train::evaluate_mse(test_ds, fit.best);
  } else {
    std::cout << "no mutually exclusive pair found; nothing to reduce\n";
    result["reduced"] = false;
  }

  const fs::path p = fs::path(out) / "reduction.json";
  {
    std::ofstream f(p);
    f << result.dump(2) << "\n";
  }
  outputs.push_back(p.string());
  std::cout << result.dump(2) << "\n";
  write_manifest(out, "reduce", config_json(cfg), cfg.seed, {data, ckpt}, outputs, timer.seconds());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational inference with latent opinion dynamics"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "simulate a dataset");
  std::string system, out_dir, data_dir, ckpt_path;
  int n_train = 2000, n_val = 500, n_test = 500;
  bool desk_scale = false, full_scale = false;
  std::uint64_t seed = 0;
  gen->add_option("--system", system, "pendulum|double_pendulum|mass_spring|kuramoto")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--n-train", n_train, "training trajectories");
  gen->add_option("--n-val", n_val, "validation trajectories");
  gen->add_option("--n-test", n_test, "test trajectories");
  gen->add_flag("--desk-scale", desk_scale, "2000/500/500 split");
  gen->add_flag("--full-scale", full_scale, "50000/12500/12500 split");
  gen->add_option("--seed", seed, "RNG seed");

  auto* imp = app.add_subcommand("import-csv", "ingest trajectories from CSV");
  std::string csv_path;
  double csv_dt = 1.0, train_frac = 0.8, val_frac = 0.1;
  bool has_velocity = false;
  imp->add_option("--csv", csv_path, "input CSV (traj_id,t,agent_id,px,py[,vx,vy])")->required();
  imp->add_option("--out", out_dir, "output directory")->required();
  imp->add_option("--dt", csv_dt, "time between frames");
  imp->add_flag("--has-velocity", has_velocity, "CSV carries vx,vy columns");
  imp->add_option("--train-frac", train_frac, "training fraction");
  imp->add_option("--val-frac", val_frac, "validation fraction");
  imp->add_option("--seed", seed, "split shuffle seed");

  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  TrainFlags train_flags;
  tr->add_option("--data", data_dir, "dataset root (train/ val/ subdirectories)")->required();
  tr->add_option("--out", out_dir, "run output directory")->required();
  train_flags.add_to(tr);

  auto* ev = app.add_subcommand("eval", "evaluate test rollout MSE");
  ev->add_option("--data", data_dir, "dataset root (test/ subdirectory)")->required();
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();

  auto* ro = app.add_subcommand("rollout", "export one predicted trajectory");
  int traj = 0, horizon = 0;
  ro->add_option("--data", data_dir)->required();
  ro->add_option("--ckpt", ckpt_path)->required();
  ro->add_option("--out", out_dir)->required();
  ro->add_option("--traj", traj, "test trajectory index");
  ro->add_option("--horizon", horizon, "prediction steps (default T-1)");

  auto* bi = app.add_subcommand("bifurcation", "equilibrium sweep of a scalar system");
  std::string kind = "pitchfork", sweep = "u";
  double lo = -1.0, hi = 1.0, attention = 1.0, damping = 1.0, alpha = 1.0, input = 0.0;
  int resolution = 101;
  bi->add_option("--kind", kind, "pitchfork|reduced");
  bi->add_option("--sweep", sweep, "u|b");
  bi->add_option("--lo", lo);
  bi->add_option("--hi", hi);
  bi->add_option("--resolution", resolution);
  bi->add_option("--attention", attention, "fixed attention for b sweeps");
  bi->add_option("--damping", damping);
  bi->add_option("--alpha", alpha);
  bi->add_option("--input", input, "fixed input for u sweeps");
  bi->add_option("--out", out_dir)->required();

  auto* an = app.add_subcommand("analyze", "interpretability exports for a checkpoint");
  int agent = 0, category = 0, max_traj = 16;
  double an_lo = -1.5, an_hi = 1.5;
  int an_res = 121;
  an->add_option("--data", data_dir)->required();
  an->add_option("--ckpt", ckpt_path)->required();
  an->add_option("--out", out_dir)->required();
  an->add_option("--agent", agent);
  an->add_option("--category", category);
  an->add_option("--sweep-lo", an_lo);
  an->add_option("--sweep-hi", an_hi);
  an->add_option("--resolution", an_res);
  an->add_option("--max-traj", max_traj, "trajectories to export in traces.csv");

  auto* re =
      app.add_subcommand("reduce", "retrain with one fewer category after an exclusivity verdict");
  TrainFlags reduce_flags;
  re->add_option("--data", data_dir)->required();
  re->add_option("--ckpt", ckpt_path)->required();
  re->add_option("--out", out_dir)->required();
  reduce_flags.add_to(re);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints the error and usage
    return code == 0 ? 0 : 1;     // 0 stays 0 (e.g. --help), everything else is a usage error
  }

  try {
    if (gen->parsed()) {
      if (desk_scale) {
        n_train = 2000;
        n_val = 500;
        n_test = 500;
      }
      if (full_scale) {
        n_train = 50000;
        n_val = 12500;
        n_test = 12500;
      }
      return run_generate(system, out_dir, n_train, n_val, n_test, seed);
    }
    if (imp->parsed())
      return run_import_csv(csv_path, out_dir, csv_dt, has_velocity, train_frac, val_frac, seed);
    if (tr->parsed()) return run_train(data_dir, out_dir, train_flags);
    if (ev->parsed()) return run_eval(data_dir, ckpt_path);
    if (ro->parsed()) return run_rollout(data_dir, ckpt_path, out_dir, traj, horizon);
    if (bi->parsed())
      return run_bifurcation(kind, sweep, lo, hi, resolution, attention, damping, alpha, input,
                             out_dir);
    if (an->parsed())
      return run_analyze(data_dir, ckpt_path, out_dir, agent, category, an_lo, an_hi, an_res,
                         max_traj);
    if (re->parsed()) return run_reduce(data_dir, ckpt_path, out_dir, reduce_flags);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
