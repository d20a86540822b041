#include "binn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <thread>

#include "binn/rng.hpp"
#include "json.hpp"

namespace binn::train {

using ad::Index;
using ad::Tape;
using ad::Var;
using model::BinnModel;
using model::ModelVars;
using model::PairPlan;
using sims::TrajectoryDataset;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int env_thread_cap() {
  if (const char* s = std::getenv("BINN_THREADS")) {
    const int n = std::atoi(s);
    if (n >= 1) return n;
  }
  return 1;
}

}  // namespace

TrainConfig TrainConfig::system_defaults(const std::string& dataset_name) {
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 256;
  cfg.lr = 1e-3;
  if (dataset_name == "pendulum") {
    cfg.activation = "relu";
    cfg.hidden_dim = 64;
    cfg.latent_dim = 2;
  } else if (dataset_name == "double_pendulum") {
    cfg.activation = "elu";
    cfg.hidden_dim = 64;
    cfg.latent_dim = 2;
  } else if (dataset_name == "mass_spring") {
    cfg.activation = "tanh";
    cfg.hidden_dim = 128;
    cfg.latent_dim = 4;
    cfg.epochs = 1000;
    cfg.scheduler_step = 200;
    cfg.scheduler_gamma = 0.25;
  } else if (dataset_name == "kuramoto") {
    cfg.activation = "tanh";
    cfg.hidden_dim = 128;
    cfg.latent_dim = 2;
    cfg.epochs = 1000;
    cfg.scheduler_step = 200;
    cfg.scheduler_gamma = 0.25;
  }
  return cfg;
}

void TrainConfig::validate() const {
  require(epochs >= 0 && batch_size >= 1 && lr >= 0.0, "TrainConfig: bad epochs/batch/lr");
  require(scheduler_gamma > 0.0 && scheduler_gamma <= 1.0, "TrainConfig: bad scheduler gamma");
  require(hidden_dim >= 1 && latent_dim >= 1, "TrainConfig: bad dimensions");
  require(gamma1 >= 0.0 && gamma2 >= 0.0, "TrainConfig: bad loss weights");
  require(val_every >= 1, "TrainConfig: bad val_every");
  ad::activation_from_string(activation);
  model::comm_from_string(comm);
}

int TrainConfig::resolved_chunk_size(int n_agents, int n_frames) const {
  if (chunk_size > 0) return chunk_size;
  const int by_memory = 2048 / std::max(1, n_agents * n_frames);
  return std::clamp(by_memory, 1, 64);
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["scheduler_step"] = scheduler_step;
  j["scheduler_gamma"] = scheduler_gamma;
  j["activation"] = activation;
  j["hidden_dim"] = hidden_dim;
  j["latent_dim"] = latent_dim;
  j["gamma1"] = gamma1;
  j["gamma2"] = gamma2;
  j["seed"] = seed;
  j["comm"] = comm;
  j["epsilon"] = epsilon;
  j["grad_clip"] = grad_clip;
  j["chunk_size"] = chunk_size;
  j["val_every"] = val_every;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig cfg;
  auto pick = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  pick("epochs", cfg.epochs);
  pick("batch_size", cfg.batch_size);
  pick("lr", cfg.lr);
  pick("scheduler_step", cfg.scheduler_step);
  pick("scheduler_gamma", cfg.scheduler_gamma);
  pick("activation", cfg.activation);
  pick("hidden_dim", cfg.hidden_dim);
  pick("latent_dim", cfg.latent_dim);
  pick("gamma1", cfg.gamma1);
  pick("gamma2", cfg.gamma2);
  pick("seed", cfg.seed);
  pick("comm", cfg.comm);
  pick("epsilon", cfg.epsilon);
  pick("grad_clip", cfg.grad_clip);
  pick("chunk_size", cfg.chunk_size);
  pick("val_every", cfg.val_every);
  cfg.validate();
  return cfg;
}

// ---- optimizer ----------------------------------------------------------------

AdamState AdamState::init(const std::vector<Tensor*>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: size mismatch");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    require(p.same_shape(g) && p.same_shape(state.m[i]), "adam_step: shape mismatch");
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = beta1 * m + (1.0 - beta1) * g.array();
    v = beta2 * v + (1.0 - beta2) * g.array().square();
    p.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

double scheduler_lr(double initial_lr, int epoch, int step, double gamma) {
  if (step <= 0) return initial_lr;
  return initial_lr * std::pow(gamma, static_cast<double>(epoch / step));
}

// ---- loss graph ---------------------------------------------------------------

namespace {

ad::Tensor frame_tensor(const TrajectoryDataset& ds, const std::vector<int>& traj, int frame) {
  const int na = ds.n_agents, d = ds.state_dim;
  ad::Tensor out({static_cast<Index>(traj.size()) * na, d});
  Index r = 0;
  for (int ti : traj)
    for (int a = 0; a < na; ++a, ++r)
      for (int k = 0; k < d; ++k) out(r, k) = ds.at(ti, frame, a, k);
  return out;
}

struct ChunkGraph {
  Var pred_sum, recon_sum, latent_sum;  // raw element sums
  Var total;                            // scaled by the full-batch divisors
};

/// Builds the three-component loss for one chunk of trajectories. Sums are
/// scaled so that adding chunk totals over the whole batch yields the batch
/// mean losses.
ChunkGraph chunk_loss_graph(Tape& tape, const ModelVars& vars, const BinnModel& m,
                            const TrajectoryDataset& ds, const std::vector<int>& traj,
                            double gamma1, double gamma2, int batch_total) {
  const int c = static_cast<int>(traj.size());
  const int na = ds.n_agents, t_frames = ds.n_frames, d = ds.state_dim;
  const int pd = d / 2;
  const int horizon = t_frames - 1;

  const PairPlan plan_roll = PairPlan::make(c, na);

  // Prediction: full-horizon rollout against ground truth.
  Var x0 = tape.constant(frame_tensor(ds, traj, 0));
  const std::vector<Var> predicted =
      model::rollout_on_tape(tape, vars, m, x0, horizon, plan_roll);
  Var pred_sum;
  for (int f = 1; f < t_frames; ++f) {
    Var target = tape.constant(frame_tensor(ds, traj, f));
    Var err = ad::sum(tape, ad::squared_error(tape, predicted[static_cast<std::size_t>(f - 1)],
                                              target));
    pred_sum = pred_sum.valid() ? ad::add(tape, pred_sum, err) : err;
  }

  // Reconstruction of the initial frame through encode/decode.
  Var z0 = model::encode_preferences(tape, vars, m, x0, plan_roll);
  Var x0_hat = model::decode_states(tape, vars, m, z0, plan_roll);
  Var recon_sum = ad::sum(tape, ad::squared_error(tape, x0_hat, x0));

  // Latent alignment on ground-truth encodings: all frames are encoded in one
  // stacked pass, then split into (t, t+1) pairs.
  const PairPlan plan_enc = PairPlan::make(c * t_frames, na);
  ad::Tensor all_frames({static_cast<Index>(c) * t_frames * na, d});
  {
    Index r = 0;
    for (int ti : traj)
      for (int f = 0; f < t_frames; ++f)
        for (int a = 0; a < na; ++a, ++r)
          for (int k = 0; k < d; ++k) all_frames(r, k) = ds.at(ti, f, a, k);
  }
  Var xa = tape.constant(std::move(all_frames));
  Var z_all = model::encode_preferences(tape, vars, m, xa, plan_enc);
  Var b_all = model::encode_env_input(tape, vars, m, xa, plan_enc);

  std::vector<std::int32_t> lo_rows, hi_rows;
  lo_rows.reserve(static_cast<std::size_t>(c) * horizon * na);
  hi_rows.reserve(lo_rows.capacity());
  for (int ci = 0; ci < c; ++ci)
    for (int f = 0; f < horizon; ++f)
      for (int a = 0; a < na; ++a) {
        lo_rows.push_back(static_cast<std::int32_t>((ci * t_frames + f) * na + a));
        hi_rows.push_back(static_cast<std::int32_t>((ci * t_frames + f + 1) * na + a));
      }
  Var z_lo = ad::gather_rows(tape, z_all, lo_rows);
  Var z_hi = ad::gather_rows(tape, z_all, hi_rows);
  Var b_lo = ad::gather_rows(tape, b_all, lo_rows);
  Var dz = ad::scale(tape, ad::sub(tape, z_hi, z_lo), 1.0 / ds.dt);

  const PairPlan plan_lat = PairPlan::make(c * horizon, na);
  std::vector<Eigen::MatrixXd> gt_positions;
  if (plan_lat.n_pairs() > 0) {
    gt_positions.reserve(static_cast<std::size_t>(c) * horizon);
    for (int ci = 0; ci < c; ++ci)
      for (int f = 0; f < horizon; ++f) {
        Eigen::MatrixXd p(na, pd);
        for (int a = 0; a < na; ++a)
          for (int k = 0; k < pd; ++k) p(a, k) = ds.at(traj[static_cast<std::size_t>(ci)], f, a, k);
        gt_positions.push_back(std::move(p));
      }
  }
  Var w_lat = model::comm_pair_weights_const(tape, vars, m, gt_positions, plan_lat);
  Var f_nod = model::f_nod_latent(tape, vars, m, z_lo, b_lo, w_lat, plan_lat);
  Var latent_sum = ad::sum(tape, ad::squared_error(tape, dz, f_nod));

  const double per_frame = 1.0 / (static_cast<double>(horizon) * na * batch_total);
  const double per_agent = 1.0 / (static_cast<double>(na) * batch_total);
  ChunkGraph g;
  g.pred_sum = pred_sum;
  g.recon_sum = recon_sum;
  g.latent_sum = latent_sum;
  Var total = ad::scale(tape, pred_sum, per_frame);
  total = ad::add(tape, total, ad::scale(tape, recon_sum, gamma1 * per_agent));
  total = ad::add(tape, total, ad::scale(tape, latent_sum, gamma2 * per_frame));
  g.total = total;
  return g;
}

std::vector<std::vector<int>> split_chunks(const std::vector<int>& traj, int chunk_size) {
  std::vector<std::vector<int>> chunks;
  for (std::size_t i = 0; i < traj.size(); i += static_cast<std::size_t>(chunk_size)) {
    const std::size_t end = std::min(traj.size(), i + static_cast<std::size_t>(chunk_size));
    chunks.emplace_back(traj.begin() + static_cast<std::ptrdiff_t>(i),
                        traj.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

struct ChunkOutput {
  LossBreakdown parts;  // already batch-scaled
  std::vector<Tensor> grads;
  bool has_grads = false;
};

ChunkOutput run_chunk(const TrajectoryDataset& ds, const std::vector<int>& chunk,
                      const BinnModel& m, double gamma1, double gamma2, int batch_total,
                      bool want_grads) {
  Tape tape;
  ModelVars vars = model::make_vars(tape, m, want_grads);
  ChunkGraph g = chunk_loss_graph(tape, vars, m, ds, chunk, gamma1, gamma2, batch_total);

  const int horizon = ds.n_frames - 1;
  const double per_frame = 1.0 / (static_cast<double>(horizon) * ds.n_agents * batch_total);
  const double per_agent = 1.0 / (static_cast<double>(ds.n_agents) * batch_total);

  ChunkOutput out;
  out.parts.pred = tape.value(g.pred_sum)[0] * per_frame;
  out.parts.recon = tape.value(g.recon_sum)[0] * per_agent;
  out.parts.latent = tape.value(g.latent_sum)[0] * per_frame;
  out.parts.total = tape.value(g.total)[0];

  if (want_grads) {
    tape.backward(g.total);
    out.grads.reserve(vars.params.size());
    for (Var p : vars.params) out.grads.push_back(tape.grad(p));
    out.has_grads = true;
  }
  return out;
}

LossBreakdown reduce_chunks(const TrajectoryDataset& ds, const std::vector<int>& traj,
                            const BinnModel& m, double gamma1, double gamma2, int chunk_size,
                            std::vector<Tensor>* grads) {
  require(!traj.empty(), "loss: empty trajectory set");
  require(ds.n_frames >= 2, "loss: need at least 2 frames per trajectory");
  const auto chunks = split_chunks(traj, chunk_size);
  const int batch_total = static_cast<int>(traj.size());
  const bool want_grads = grads != nullptr;

  std::vector<ChunkOutput> results(chunks.size());
  const int workers =
      std::min<int>(env_thread_cap(), static_cast<int>(chunks.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < chunks.size(); ++i)
      results[i] = run_chunk(ds, chunks[i], m, gamma1, gamma2, batch_total, want_grads);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < chunks.size(); i = next.fetch_add(1))
          results[i] = run_chunk(ds, chunks[i], m, gamma1, gamma2, batch_total, want_grads);
      });
    for (auto& th : pool) th.join();
  }

  // Fixed chunk boundaries and in-order accumulation keep results identical
  // across worker counts.
  LossBreakdown sum;
  for (std::size_t i = 0; i < results.size(); ++i) {
    sum.pred += results[i].parts.pred;
    sum.recon += results[i].parts.recon;
    sum.latent += results[i].parts.latent;
    if (want_grads) {
      if (i == 0) {
        *grads = std::move(results[i].grads);
      } else {
        for (std::size_t p = 0; p < grads->size(); ++p)
          (*grads)[p].array() += results[i].grads[p].array();
      }
    }
  }
  sum.total = sum.pred + gamma1 * sum.recon + gamma2 * sum.latent;
  return sum;
}

}  // namespace

LossBreakdown loss_components(const TrajectoryDataset& ds, const std::vector<int>& traj,
                              const BinnModel& m, double gamma1, double gamma2, int chunk_size) {
  const int chunk = chunk_size > 0 ? chunk_size
                                   : TrainConfig{}.resolved_chunk_size(ds.n_agents, ds.n_frames);
  return reduce_chunks(ds, traj, m, gamma1, gamma2, chunk, nullptr);
}

LossBreakdown loss_and_gradients(const TrajectoryDataset& ds, const std::vector<int>& traj,
                                 const BinnModel& m, double gamma1, double gamma2, int chunk_size,
                                 std::vector<Tensor>& grads) {
  return reduce_chunks(ds, traj, m, gamma1, gamma2, chunk_size, &grads);
}

double evaluate_mse(const TrajectoryDataset& test, const BinnModel& m, int chunk_size) {
  require(test.n_traj > 0 && test.n_frames >= 2, "evaluate_mse: empty dataset");
  require(test.n_agents == m.n_agents && test.state_dim == m.state_dim,
          "evaluate_mse: dataset/model shape mismatch");
  const int chunk = chunk_size > 0 ? chunk_size
                                   : TrainConfig{}.resolved_chunk_size(test.n_agents, test.n_frames);
  const int horizon = test.n_frames - 1;

  double err_sum = 0.0;
  std::vector<int> all(static_cast<std::size_t>(test.n_traj));
  for (int i = 0; i < test.n_traj; ++i) all[static_cast<std::size_t>(i)] = i;
  for (const auto& chunk_traj : split_chunks(all, chunk)) {
    Tape tape;
    ModelVars vars = model::make_vars(tape, m, false);
    const PairPlan plan = PairPlan::make(static_cast<int>(chunk_traj.size()), test.n_agents);
    Var x0 = tape.constant(frame_tensor(test, chunk_traj, 0));
    const std::vector<Var> predicted = model::rollout_on_tape(tape, vars, m, x0, horizon, plan);
    for (int f = 1; f < test.n_frames; ++f) {
      Var target = tape.constant(frame_tensor(test, chunk_traj, f));
      Var err = ad::sum(
          tape, ad::squared_error(tape, predicted[static_cast<std::size_t>(f - 1)], target));
      err_sum += tape.value(err)[0];
    }
  }
  return err_sum / (static_cast<double>(test.n_traj) * horizon * test.n_agents * test.state_dim);
}

double constant_velocity_mse(const TrajectoryDataset& test) {
  require(test.n_traj > 0 && test.n_frames >= 2, "constant_velocity_mse: empty dataset");
  const int pd = test.state_dim / 2;
  const int horizon = test.n_frames - 1;
  double err_sum = 0.0;
  for (int ti = 0; ti < test.n_traj; ++ti)
    for (int f = 1; f < test.n_frames; ++f)
      for (int a = 0; a < test.n_agents; ++a)
        for (int k = 0; k < test.state_dim; ++k) {
          const double truth = test.at(ti, f, a, k);
          const double pred =
              k < pd ? test.at(ti, 0, a, k) + f * test.dt * test.at(ti, 0, a, pd + k)
                     : test.at(ti, 0, a, k);
          err_sum += (truth - pred) * (truth - pred);
        }
  return err_sum / (static_cast<double>(test.n_traj) * horizon * test.n_agents * test.state_dim);
}

// ---- training loop ------------------------------------------------------------

FitResult fit(const TrajectoryDataset& train_ds, const TrajectoryDataset& val_ds,
              const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  train_ds.validate();
  val_ds.validate();
  require(train_ds.n_agents == val_ds.n_agents && train_ds.state_dim == val_ds.state_dim &&
              train_ds.dt == val_ds.dt,
          "fit: train/val datasets disagree on agents, state dim, or dt");
  require(train_ds.n_frames >= 2, "fit: need at least 2 frames");

  BinnModel m = BinnModel::init(train_ds.n_agents, train_ds.state_dim, cfg.latent_dim,
                                cfg.hidden_dim, ad::activation_from_string(cfg.activation),
                                model::comm_from_string(cfg.comm), train_ds.dt, cfg.seed,
                                cfg.epsilon);

  std::vector<Tensor*> params;
  for (auto& [name, t] : m.parameters()) params.push_back(t);
  AdamState adam = AdamState::init(params);
  const int chunk = cfg.resolved_chunk_size(train_ds.n_agents, train_ds.n_frames);

  Rng shuffle_rng(Rng::mix(cfg.seed, 0x7368756666ULL));
  std::vector<int> order(static_cast<std::size_t>(train_ds.n_traj));
  for (int i = 0; i < train_ds.n_traj; ++i) order[static_cast<std::size_t>(i)] = i;

  FitResult result;
  result.best = m;
  result.best_val = std::numeric_limits<double>::infinity();

  double last_val = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduler_lr(cfg.lr, epoch, cfg.scheduler_step, cfg.scheduler_gamma);

    // Fisher-Yates with the project RNG keeps the shuffle reproducible.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i));
      std::swap(order[i - 1], order[j]);
    }

    LossBreakdown epoch_sum;
    long seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<Tensor> grads;
      LossBreakdown loss;
      try {
        loss = loss_and_gradients(train_ds, batch, m, cfg.gamma1, cfg.gamma2, chunk, grads);
      } catch (const ad::NonFiniteError& e) {
        ++result.skipped_batches;
        if (progress)
          (*progress) << "epoch " << epoch << ": skipped batch at " << start << ": " << e.what()
                      << "\n";
        continue;
      }
      if (cfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const Tensor& g : grads) norm_sq += g.array().square().sum();
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip) {
          const double s = cfg.grad_clip / norm;
          for (Tensor& g : grads) g.array() *= s;
        }
      }
      adam_step(params, grads, adam, lr);
      const double w = static_cast<double>(batch.size());
      epoch_sum.pred += loss.pred * w;
      epoch_sum.recon += loss.recon * w;
      epoch_sum.latent += loss.latent * w;
      seen += static_cast<long>(batch.size());
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    if (seen > 0) {
      log.train_pred = epoch_sum.pred / static_cast<double>(seen);
      log.train_recon = epoch_sum.recon / static_cast<double>(seen);
      log.train_latent = epoch_sum.latent / static_cast<double>(seen);
    }
    log.train_total = log.train_pred + cfg.gamma1 * log.train_recon + cfg.gamma2 * log.train_latent;

    if (epoch % cfg.val_every == 0 || epoch == cfg.epochs - 1) {
      try {
        last_val = evaluate_mse(val_ds, m, chunk);
      } catch (const std::exception& e) {
        last_val = std::numeric_limits<double>::quiet_NaN();
        if (progress) (*progress) << "epoch " << epoch << ": validation failed: " << e.what() << "\n";
      }
      if (std::isfinite(last_val) && last_val < result.best_val) {
        result.best_val = last_val;
        result.best_epoch = epoch;
        result.best = m;
      }
    }
    log.val_pred = last_val;
    result.log.push_back(log);
    if (progress) {
      (*progress) << "epoch " << epoch << " lr " << lr << " pred " << log.train_pred << " recon "
                  << log.train_recon << " latent " << log.train_latent << " total "
                  << log.train_total << " val " << log.val_pred << "\n";
      progress->flush();
    }
  }
  if (result.best_epoch < 0) result.best = m;  // zero-epoch runs keep the init
  return result;
}

void write_metrics_csv(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out.precision(17);
  out << "epoch,lr,train_pred,train_recon,train_latent,train_total,val_pred\n";
  for (const EpochLog& e : log)
    out << e.epoch << "," << e.lr << "," << e.train_pred << "," << e.train_recon << ","
        << e.train_latent << "," << e.train_total << "," << e.val_pred << "\n";
}

}  // namespace binn::train
