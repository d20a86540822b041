#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "binn/tape.hpp"

namespace binn::nod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Agent preferences z, one row per agent, one column per category.
using OpinionState = Eigen::MatrixXd;

/// Parameters of the full opinion dynamics
///   dz_ij/dt = -d_ij z_ij
///              + S(u_i (alpha_ij z_ij + sum_{k!=i} a^a_ik z_kj
///                       + sum_{l!=j} a^o_jl z_il
///                       + sum_{k!=i} sum_{l!=j} a^a_ik a^o_jl z_kl))
///              + b_ij.
///
/// Self terms are carried by alpha, so both coupling matrices have zero
/// diagonals.
struct NodParams {
  MatrixXd damping;             // d  [N_a x N_o], elementwise >= 0, 1/time
  VectorXd attention;           // u  [N_a], >= 0
  MatrixXd self_reinforcement;  // alpha [N_a x N_o], >= 0
  MatrixXd belief;              // A^o [N_o x N_o], zero diagonal
  MatrixXd communication;       // A^a [N_a x N_a], zero diagonal
  MatrixXd input;               // b  [N_a x N_o]
  double dt = 0.01;             // Euler timestep, > 0

  Eigen::Index n_agents() const { return damping.rows(); }
  Eigen::Index n_categories() const { return damping.cols(); }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

/// Parameters of the mutually-exclusive reduction (one column of dynamics):
///   dz_i/dt = -d_i z_i + S(u_i (alpha~_i z_i + sum_{k!=i} a~_ik z_k)) + b_i.
struct ReducedNodParams {
  VectorXd damping;
  VectorXd attention;
  VectorXd self_reinforcement;  // alpha~
  MatrixXd coupling;            // a~ [N_a x N_a], zero diagonal
  VectorXd input;
  double dt = 0.01;
};

/// Elementwise saturation; S(0)=0, S'(0)=1 for all three kinds.
double saturate(double x, ad::Activation kind);

MatrixXd nod_rhs_full(const OpinionState& z, const NodParams& p,
                      ad::Activation saturation = ad::Activation::kTanh);

VectorXd nod_rhs_reduced(const VectorXd& z, const VectorXd& damping, const VectorXd& attention,
                         const VectorXd& alpha_tilde, const MatrixXd& a_tilde,
                         const VectorXd& input,
                         ad::Activation saturation = ad::Activation::kTanh);

VectorXd nod_rhs_reduced(const VectorXd& z, const ReducedNodParams& p,
                         ad::Activation saturation = ad::Activation::kTanh);

/// One explicit Euler step z + rhs(z) * dt.
template <class State, class RhsFn>
State euler_step(const State& z, double dt, RhsFn&& rhs) {
  if (dt <= 0.0) throw std::invalid_argument("euler_step: dt must be positive");
  State next = z + dt * rhs(z);
  if (!next.allFinite()) throw std::runtime_error("euler_step: non-finite state");
  return next;
}

double euler_step_scalar(double z, double dt, const std::function<double(double)>& rhs);

/// Euler trajectory of the full model; returns steps+1 states including z0.
std::vector<MatrixXd> euler_trajectory_full(const OpinionState& z0, const NodParams& p, int steps,
                                            ad::Activation saturation = ad::Activation::kTanh);

std::vector<VectorXd> euler_trajectory_reduced(const VectorXd& z0, const ReducedNodParams& p,
                                               int steps,
                                               ad::Activation saturation = ad::Activation::kTanh);

/// Supercritical pitchfork normal form u z - z^3: one equilibrium below
/// u = 0, three above, with the outer branches at +-sqrt(u) stable.
double pitchfork_rhs(double z, double u);

// ---- equilibrium analysis (scalar systems) ----------------------------------

using ScalarRhs = std::function<double(double)>;

/// Maps a sweep value (attention or input) to the scalar dynamics at that
/// value.
using ScalarFamily = std::function<ScalarRhs(double)>;

struct EquilibriumOptions {
  double tol = 1e-8;             // convergence on |rhs|
  double dt = 0.01;              // forward-integration step
  long max_steps = 1000000;      // forward-integration cap
  int newton_max_iter = 100;
  double derivative_h = 1e-6;    // central-difference step for stability
  double cluster_radius = 1e-5;  // equilibria closer than this are merged
  double divergence_bound = 1e6;
};

struct Equilibrium {
  double z;
  bool stable;
};

/// Finds equilibria of a scalar system. Forward integration from each grid
/// point reaches stable equilibria; Newton iteration from the same grid also
/// converges to unstable ones. Stability comes from the sign of the
/// central-difference derivative at the root.
std::vector<Equilibrium> find_equilibria(const ScalarRhs& rhs, const std::vector<double>& grid,
                                         const EquilibriumOptions& opt = {});

struct BifurcationResult {
  std::vector<double> sweep_values;
  std::vector<std::vector<Equilibrium>> equilibria;  // per sweep value, ascending z
  std::optional<double> critical_value;  // first sweep value with >= 3 equilibria
  std::vector<double> fold_points;       // sweep values where the count changes
};

struct SweepOptions {
  double lo = -1.0;
  double hi = 1.0;
  int resolution = 41;
  std::vector<double> grid;  // initial conditions; default linspace(-3, 3, 13)
  EquilibriumOptions eq;
};

BifurcationResult bifurcation_sweep(const ScalarFamily& family, const SweepOptions& opt);

enum class SweepVariable { kAttention, kInput };

/// Pitchfork dynamics indexed by u.
ScalarFamily pitchfork_family();

/// Single-agent reduced model with the swept quantity replacing attention or
/// input. Requires a one-agent parameter set.
ScalarFamily reduced_family(const ReducedNodParams& base, SweepVariable which,
                            ad::Activation saturation = ad::Activation::kTanh);

struct HysteresisResult {
  std::vector<double> input_values;    // ascending b grid
  std::vector<double> forward_trace;   // equilibria sweeping b upward
  std::vector<double> backward_trace;  // equilibria sweeping b downward
};

/// Sweeps the input up then down, warm-starting each relaxation from the
/// previous equilibrium. Above the critical attention the two traces trace
/// out the hysteresis loop.
HysteresisResult hysteresis_sweep(const ScalarFamily& family_over_input, double lo, double hi,
                                  int resolution, const EquilibriumOptions& opt = {},
                                  double z_start = 0.0);

// ---- mutual exclusivity ------------------------------------------------------

class DegenerateTraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExclusivityReport {
  int category_a = 0;
  int category_b = 0;
  double scale_c = 0.0;       // fitted in z_a + c z_b ~ 0
  double correlation = 0.0;   // Pearson rho of pooled (z_a, z_b)
  double belief_ab = 0.0;     // a^o_{ab}
  double belief_ba = 0.0;
  bool mutually_exclusive = false;  // rho <= -0.95 and both beliefs <= 0
};

/// Examines a preference trace (T frames of [N_a x N_o]) for anti-phase
/// category pairs. Throws DegenerateTraceError when a category has zero
/// variance.
std::vector<ExclusivityReport> detect_mutual_exclusivity(const std::vector<MatrixXd>& z_trace,
                                                         const MatrixXd& belief);

/// Collapses a two-category parameter set with mutually exclusive categories
/// (belief off-diagonals <= 0, z_2 = -c z_1) onto the column-1 dynamics:
///   alpha~_i = alpha_i1 - c a^o_12,   a~_ik = a^a_ik (1 - c a^o_12).
ReducedNodParams reduce_params(const NodParams& p, double c);

/// CSV export with columns (sweep_value, equilibrium, stable).
void write_sweep_csv(const BifurcationResult& result, const std::string& path);

}  // namespace binn::nod
