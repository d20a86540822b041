#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace binn::sims {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class SystemKind { kPendulum, kDoublePendulum, kMassSpring, kKuramoto };

SystemKind system_from_string(const std::string& name);
const char* system_name(SystemKind kind);

/// Generation settings for one simulated system. table_defaults() fills the
/// integrator step, step count, and coarsening used for each dataset.
struct SimConfig {
  SystemKind kind = SystemKind::kPendulum;
  double dt = 1e-3;     // integrator timestep
  int steps = 5000;     // integrator steps per trajectory
  int coarsening = 100; // keep every k-th frame

  double gravity = 9.81;
  double length1 = 1.0, length2 = 1.0;
  double mass1 = 1.0, mass2 = 1.0;

  int n_agents = 1;  // mass-spring / Kuramoto; pendulum systems fix their own

  /// Symmetric zero-diagonal coupling with entries in {0, strength}. Left
  /// empty, a graph is drawn once per dataset from the seed: each unordered
  /// pair connects independently with coupling_probability.
  MatrixXd coupling;
  double coupling_probability = 0.5;
  double coupling_strength = 2.5;

  /// Kuramoto intrinsic frequencies; drawn once per dataset from the seed
  /// when empty.
  VectorXd frequencies;
  double frequency_lo = 1.0, frequency_hi = 10.0;

  double angle_lo = -1.5707963267948966, angle_hi = 1.5707963267948966;
  double mass_spring_sigma = 0.3;
  double phase_sigma = 6.283185307179586;

  std::uint64_t seed = 0;

  void validate() const;
  static SimConfig table_defaults(SystemKind kind, std::uint64_t seed = 0);

  int agent_count() const;
  int generalized_dim() const;
  int state_dim() const;  // stored per-agent dimension, [p, v]
};

/// N trajectories of T frames, each frame n_agents x state_dim with positions
/// first and velocities second. Row-major layout [traj][frame][agent][dim].
struct TrajectoryDataset {
  std::string name;
  int n_traj = 0;
  int n_frames = 0;
  int n_agents = 0;
  int state_dim = 0;
  double dt = 0.0;  // time between stored frames
  std::vector<double> data;

  std::size_t offset(int traj, int frame, int agent, int dim) const {
    return ((static_cast<std::size_t>(traj) * n_frames + frame) * n_agents + agent) * state_dim +
           dim;
  }
  double& at(int traj, int frame, int agent, int dim) { return data[offset(traj, frame, agent, dim)]; }
  double at(int traj, int frame, int agent, int dim) const {
    return data[offset(traj, frame, agent, dim)];
  }

  /// One frame as an [n_agents x state_dim] matrix.
  MatrixXd frame(int traj, int f) const;
  void set_frame(int traj, int f, const MatrixXd& value);

  void validate() const;
};

/// Classical 4th-order Runge-Kutta update.
template <class RhsFn>
VectorXd rk4_step(RhsFn&& f, const VectorXd& y, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("rk4_step: dt must be positive");
  const VectorXd k1 = f(y);
  const VectorXd k2 = f(y + 0.5 * dt * k1);
  const VectorXd k3 = f(y + 0.5 * dt * k2);
  const VectorXd k4 = f(y + dt * k3);
  VectorXd out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw std::runtime_error("rk4_step: non-finite derivative");
  return out;
}

/// Time derivative of the generalized state for cfg.kind:
///   pendulum         y = [theta, omega]
///   double pendulum  y = [theta1, theta2, omega1, omega2]
///   mass-spring      y = [x1 y1 ... xN yN, vx1 vy1 ... vxN vyN]
///   Kuramoto         y = [phi1 ... phiN]
/// The coupling matrix must be resolved (non-empty) for the coupled systems.
VectorXd system_derivative(const SimConfig& cfg, const VectorXd& y);

/// Keeps frames 0, factor, 2*factor, ...; factor must divide the count.
std::vector<VectorXd> coarsen(const std::vector<VectorXd>& frames, int factor);

/// Fills empty coupling/frequencies deterministically from cfg.seed.
SimConfig resolve(const SimConfig& cfg);

/// Draws initial conditions, integrates with RK4, coarsens, and converts to
/// Cartesian [p, v] states. Non-finite trajectories are rejected and
/// resampled; the count lands in *rejected when given.
TrajectoryDataset generate_dataset(const SimConfig& cfg, int n_traj, int* rejected = nullptr);

/// Reads trajectories from a CSV with header
///   traj_id,t,agent_id,px,py[,vx,vy].
/// Without velocity columns, velocities come from forward differences
/// (p_{t+1}-p_t)/dt with the final frame repeating the previous one.
TrajectoryDataset import_csv(const std::string& path, bool has_velocity, double dt);

/// Dataset directory format: meta.json + data.f32 (little-endian float32,
/// row-major [traj][frame][agent][dim]).
void save_dataset(const TrajectoryDataset& ds, const std::string& dir);
TrajectoryDataset load_dataset(const std::string& dir);

// Conserved-quantity helpers for the simulated systems (test oracles and
// sanity checks; per unit mass where masses are 1).
double pendulum_energy(const SimConfig& cfg, const VectorXd& y);
double double_pendulum_energy(const SimConfig& cfg, const VectorXd& y);
double mass_spring_energy(const SimConfig& cfg, const VectorXd& y);
Eigen::Vector2d mass_spring_momentum(const SimConfig& cfg, const VectorXd& y);

}  // namespace binn::sims
