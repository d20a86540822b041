#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "binn/rng.hpp"
#include "binn/tape.hpp"

namespace binn::model {

using ad::Activation;
using ad::Index;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// Three-layer perceptron; activation after layers 1 and 2, linear output.
struct Mlp3 {
  Tensor w1, b1, w2, b2, w3, b3;

  static Mlp3 init(Index in, Index hidden, Index out, Rng& rng);
  Index in_dim() const { return w1.shape()[0]; }
  Index out_dim() const { return w3.shape()[1]; }
};

enum class CommVariant { kSquaredDistance, kInverseDistance, kLearnedMultiplier };

CommVariant comm_from_string(const std::string& name);
const char* comm_name(CommVariant v);

/// The full network: preference encoder E_z, environmental-input encoder E_b,
/// decoder D_x (message-passing stacks of three Mlp3 each), learned latent
/// dynamics parameters, and the communication-matrix recipe.
///
/// The intrinsic parameters are stored raw and mapped through softplus, so
/// damping, attention, and self-reinforcement stay positive. Damping and
/// self-reinforcement are per-category vectors shared across agents and
/// attention is a single scalar, which keeps the latent dynamics
/// permutation-equivariant. The belief matrix stores off-diagonal entries
/// only; its diagonal is structurally zero.
struct BinnModel {
  int n_agents = 1;
  int state_dim = 4;
  int latent_dim = 2;  // N_o
  int hidden_dim = 64;
  Activation activation = Activation::kTanh;
  CommVariant comm = CommVariant::kSquaredDistance;
  double epsilon = 1e-6;
  double dt = 0.1;  // latent Euler step, from the dataset

  Mlp3 ez_emb, ez_v2e, ez_e2v;
  Mlp3 eb_emb, eb_v2e, eb_e2v;
  Mlp3 dx_dec, dx_v2e, dx_e2v;

  Tensor rho_d;           // [1 x N_o]
  Tensor rho_u;           // [1 x 1]
  Tensor rho_alpha;       // [1 x N_o]
  Tensor belief_offdiag;  // [1 x N_o(N_o-1)], row-major over (j,l), l != j
  Tensor comm_multiplier; // A_pre [N_a x N_a]; learned-multiplier variant only

  static BinnModel init(int n_agents, int state_dim, int latent_dim, int hidden_dim,
                        Activation activation, CommVariant comm, double dt,
                        std::uint64_t seed, double epsilon = 1e-6);

  /// Learned parameters in fixed (checkpoint manifest) order.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  Index parameter_count() const;

  // Softplus-mapped values of the latent dynamics parameters.
  Eigen::VectorXd damping() const;
  double attention() const;
  Eigen::VectorXd self_reinforcement() const;
  Eigen::MatrixXd belief() const;

  int position_dim() const { return state_dim / 2; }
};

double softplus_value(double x);
double inverse_softplus(double y);

// ---- checkpoint file ---------------------------------------------------------

/// Single file: magic "BINNCKPT", a u64 little-endian JSON byte length, the
/// JSON meta segment (format_version, hyperparameters, parameter manifest of
/// name -> shape in fixed order), then one float32 blob per manifest entry.
void save_checkpoint(const BinnModel& m, const std::string& path);
BinnModel load_checkpoint(const std::string& path);

// ---- graph building ----------------------------------------------------------

/// Gather/scatter index plan for message passing over `groups` independent
/// fully-connected systems of n_agents nodes, stacked row-wise.
struct PairPlan {
  int groups = 1;
  int n_agents = 1;
  std::vector<std::int32_t> recv;  // per pair: receiving row in [groups*n_agents]
  std::vector<std::int32_t> src;   // per pair: sending row
  std::vector<std::int32_t> pair_flat;  // per pair: i*n_agents+k, group-local

  static PairPlan make(int groups, int n_agents);
  int n_pairs() const { return static_cast<int>(recv.size()); }
  int n_rows() const { return groups * n_agents; }
};

/// Parameter handles on a tape plus derived quantities reused across steps.
struct ModelVars {
  std::vector<Var> params;  // same order as BinnModel::parameters()
  Var rho_d, rho_u, rho_alpha, belief_offdiag, comm_multiplier;

  // derived (built once per tape)
  Var damping_diag;   // [N_o x N_o]
  Var alpha_diag;     // [N_o x N_o]
  Var attention;      // [1 x 1], softplus applied
  Var belief_t;       // transposed belief [N_o x N_o]; invalid when N_o == 1

  struct MlpVars {
    Var w1, b1, w2, b2, w3, b3;
  };
  MlpVars ez_emb, ez_v2e, ez_e2v, eb_emb, eb_v2e, eb_e2v, dx_dec, dx_v2e, dx_e2v;
};

/// Registers each model parameter as a tape leaf.
ModelVars make_vars(Tape& t, const BinnModel& m, bool requires_grad = true);

/// Builds the same handles by slicing a single flat parameter vector
/// theta [1 x P]; lets grad_check treat the whole model as one function.
ModelVars vars_from_flat(Tape& t, const BinnModel& m, Var theta);

Tensor flatten_parameters(const BinnModel& m);
void unflatten_parameters(BinnModel& m, const Tensor& theta);

/// Message-passing encoder E_z over stacked groups; x is [rows x state_dim],
/// returns [rows x N_o]. With a single agent the message sum is a zero vector.
Var encode_preferences(Tape& t, const ModelVars& v, const BinnModel& m, Var x,
                       const PairPlan& plan);
Var encode_env_input(Tape& t, const ModelVars& v, const BinnModel& m, Var x,
                     const PairPlan& plan);
/// Decoder D_x over the preference graph; z is [rows x N_o] -> [rows x d].
Var decode_states(Tape& t, const ModelVars& v, const BinnModel& m, Var z, const PairPlan& plan);

/// Communication weights per ordered pair, [n_pairs x 1], from on-tape
/// positions (gradients flow into the positions and, for the learned variant,
/// into A_pre).
Var comm_pair_weights(Tape& t, const ModelVars& v, const BinnModel& m, Var positions,
                      const PairPlan& plan);

/// Same weights from fixed (ground-truth) positions, one matrix per group.
Var comm_pair_weights_const(Tape& t, const ModelVars& v, const BinnModel& m,
                            const std::vector<Eigen::MatrixXd>& positions,
                            const PairPlan& plan);

/// Value-level communication matrix with zero diagonal (export surface).
Eigen::MatrixXd comm_matrix(const Eigen::MatrixXd& positions, CommVariant variant,
                            const Eigen::MatrixXd& a_pre, double epsilon);

/// Latent dynamics rhs on the tape; z, b are [rows x N_o], comm_pairs
/// [n_pairs x 1]. Saturation is tanh.
Var f_nod_latent(Tape& t, const ModelVars& v, const BinnModel& m, Var z, Var b, Var comm_pairs,
                 const PairPlan& plan);

/// Convenience overload for a single group with an explicit communication
/// matrix (diagonal ignored).
Var f_nod_latent(Tape& t, const ModelVars& v, const BinnModel& m, Var z, Var b,
                 const Eigen::MatrixXd& comm);

/// Latent quantities collected during a rollout.
struct LatentTrace {
  std::vector<Eigen::MatrixXd> z;     // H+1 frames [N_a x N_o]
  std::vector<Eigen::MatrixXd> input; // b, H+1 frames
  std::vector<Eigen::MatrixXd> comm;  // A_a, H+1 frames [N_a x N_a]
};

/// On-tape autoregressive rollout: encode x0 once, then alternate latent
/// Euler steps and decoding, recomputing b and the communication weights
/// from the predicted states. Returns the H predicted frames.
std::vector<Var> rollout_on_tape(Tape& t, const ModelVars& v, const BinnModel& m, Var x0,
                                 int horizon, const PairPlan& plan,
                                 std::vector<Var>* z_trace = nullptr,
                                 std::vector<Var>* b_trace = nullptr,
                                 std::vector<Var>* comm_trace = nullptr);

/// Value-level rollout for one system. Throws with the step index on a
/// non-finite state.
std::pair<std::vector<Eigen::MatrixXd>, LatentTrace> rollout(const BinnModel& m,
                                                             const Eigen::MatrixXd& x0,
                                                             int horizon);

/// Preference/environmental-input encodings of a single frame (value level).
Eigen::MatrixXd encode_preferences_value(const BinnModel& m, const Eigen::MatrixXd& x);
Eigen::MatrixXd encode_env_input_value(const BinnModel& m, const Eigen::MatrixXd& x);
Eigen::MatrixXd decode_states_value(const BinnModel& m, const Eigen::MatrixXd& z);

}  // namespace binn::model
