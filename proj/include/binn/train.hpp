#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "binn/model.hpp"
#include "binn/sims.hpp"

namespace binn::train {

using ad::Tensor;

struct TrainConfig {
  int epochs = 100;
  int batch_size = 256;
  double lr = 1e-3;
  int scheduler_step = 0;  // 0 disables step decay
  double scheduler_gamma = 1.0;
  std::string activation = "tanh";
  int hidden_dim = 64;
  int latent_dim = 2;  // N_o
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  std::uint64_t seed = 0;
  std::string comm = "sqdist";
  double epsilon = 1e-6;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  int chunk_size = 0;      // trajectories per tape; 0 picks from system size
  int val_every = 1;

  /// Published per-system hyperparameters (lr, hidden width, activation,
  /// latent dim, scheduler); unknown names fall back to the defaults above.
  static TrainConfig system_defaults(const std::string& dataset_name);

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);

  int resolved_chunk_size(int n_agents, int n_frames) const;
  void validate() const;
};

struct LossBreakdown {
  double pred = 0.0;
  double recon = 0.0;
  double latent = 0.0;
  double total = 0.0;  // pred + gamma1*recon + gamma2*latent
};

// ---- optimizer ----------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  static AdamState init(const std::vector<Tensor*>& params);
};

/// Standard Adam with beta = (0.9, 0.999), eps = 1e-8, bias correction.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr);

/// initial_lr * gamma^floor(epoch / step); step <= 0 means no decay.
double scheduler_lr(double initial_lr, int epoch, int step, double gamma);

// ---- losses -------------------------------------------------------------------

/// Loss over the given trajectories: full-horizon prediction, first-frame
/// reconstruction, and latent dynamics alignment on ground-truth encodings.
LossBreakdown loss_components(const sims::TrajectoryDataset& ds, const std::vector<int>& traj,
                              const model::BinnModel& m, double gamma1, double gamma2,
                              int chunk_size = 0);

/// Same losses with gradients for every model parameter accumulated into
/// grads (registry order). Chunks are reduced in fixed order, so results do
/// not depend on scheduling.
LossBreakdown loss_and_gradients(const sims::TrajectoryDataset& ds, const std::vector<int>& traj,
                                 const model::BinnModel& m, double gamma1, double gamma2,
                                 int chunk_size, std::vector<Tensor>& grads);

/// Mean squared state error of rollout(x_0, H = T-1) over all predicted
/// frames, agents, and state dimensions.
double evaluate_mse(const sims::TrajectoryDataset& test, const model::BinnModel& m,
                    int chunk_size = 0);

/// Straight-line baseline: p_t = p_0 + t dt v_0, v constant.
double constant_velocity_mse(const sims::TrajectoryDataset& test);

// ---- training loop ------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_pred = 0.0, train_recon = 0.0, train_latent = 0.0, train_total = 0.0;
  double val_pred = 0.0;
};

struct FitResult {
  model::BinnModel best;  // lowest validation prediction MSE
  std::vector<EpochLog> log;
  double best_val = 0.0;
  int best_epoch = -1;
  int skipped_batches = 0;  // aborted on non-finite loss
};

FitResult fit(const sims::TrajectoryDataset& train_ds, const sims::TrajectoryDataset& val_ds,
              const TrainConfig& cfg, std::ostream* progress = nullptr);

void write_metrics_csv(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace binn::train
