#include "binn/nod.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace binn::nod {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Eigen::ArrayXXd saturate_array(const Eigen::ArrayXXd& x, ad::Activation kind) {
  switch (kind) {
    case ad::Activation::kTanh: return x.tanh();
    case ad::Activation::kRelu: return x.max(0.0);
    case ad::Activation::kElu: return (x >= 0.0).select(x, x.exp() - 1.0);
  }
  throw std::invalid_argument("saturate: bad kind");
}

}  // namespace

double saturate(double x, ad::Activation kind) {
  switch (kind) {
    case ad::Activation::kTanh: return std::tanh(x);
    case ad::Activation::kRelu: return x > 0.0 ? x : 0.0;
    case ad::Activation::kElu: return x >= 0.0 ? x : std::expm1(x);
  }
  throw std::invalid_argument("saturate: bad kind");
}

void NodParams::validate() const {
  const Eigen::Index na = n_agents();
  const Eigen::Index no = n_categories();
  require(na > 0 && no > 0, "NodParams: empty system");
  require(attention.size() == na, "NodParams: attention size");
  require(self_reinforcement.rows() == na && self_reinforcement.cols() == no,
          "NodParams: self_reinforcement shape");
  require(belief.rows() == no && belief.cols() == no, "NodParams: belief shape");
  require(communication.rows() == na && communication.cols() == na,
          "NodParams: communication shape");
  require(input.rows() == na && input.cols() == no, "NodParams: input shape");
  require(dt > 0.0, "NodParams: dt must be positive");
  require((damping.array() >= 0.0).all(), "NodParams: damping must be >= 0");
  require((attention.array() >= 0.0).all(), "NodParams: attention must be >= 0");
  require((self_reinforcement.array() >= 0.0).all(),
          "NodParams: self_reinforcement must be >= 0");
  require(belief.diagonal().isZero(0.0), "NodParams: belief diagonal must be zero");
  require(communication.diagonal().isZero(0.0),
          "NodParams: communication diagonal must be zero");
}

MatrixXd nod_rhs_full(const OpinionState& z, const NodParams& p, ad::Activation saturation) {
  require(z.rows() == p.n_agents() && z.cols() == p.n_categories(),
          "nod_rhs_full: state shape mismatch");
  // With zero diagonals the four coupling sums collapse to matrix products:
  //   alpha o z + A^a z + z A^oT + A^a z A^oT
  const MatrixXd z_belief = z * p.belief.transpose();
  MatrixXd inner = p.self_reinforcement.cwiseProduct(z) + p.communication * (z + z_belief)
                   + z_belief;
  inner.array().colwise() *= p.attention.array();
  return (-p.damping.cwiseProduct(z).array() + saturate_array(inner.array(), saturation)).matrix()
         + p.input;
}

VectorXd nod_rhs_reduced(const VectorXd& z, const VectorXd& damping, const VectorXd& attention,
                         const VectorXd& alpha_tilde, const MatrixXd& a_tilde,
                         const VectorXd& input, ad::Activation saturation) {
  const Eigen::Index na = z.size();
  require(damping.size() == na && attention.size() == na && alpha_tilde.size() == na &&
              input.size() == na && a_tilde.rows() == na && a_tilde.cols() == na,
          "nod_rhs_reduced: shape mismatch");
  require(a_tilde.diagonal().isZero(0.0), "nod_rhs_reduced: coupling diagonal must be zero");
  const Eigen::ArrayXd inner =
      attention.array() * (alpha_tilde.array() * z.array() + (a_tilde * z).array());
  Eigen::ArrayXd sat(na);
  for (Eigen::Index i = 0; i < na; ++i) sat[i] = saturate(inner[i], saturation);
  return (-damping.array() * z.array() + sat + input.array()).matrix();
}

VectorXd nod_rhs_reduced(const VectorXd& z, const ReducedNodParams& p,
                         ad::Activation saturation) {
  return nod_rhs_reduced(z, p.damping, p.attention, p.self_reinforcement, p.coupling, p.input,
                         saturation);
}

double euler_step_scalar(double z, double dt, const std::function<double(double)>& rhs) {
  if (dt <= 0.0) throw std::invalid_argument("euler_step: dt must be positive");
  const double next = z + dt * rhs(z);
  if (!std::isfinite(next)) throw std::runtime_error("euler_step: non-finite state");
  return next;
}

std::vector<MatrixXd> euler_trajectory_full(const OpinionState& z0, const NodParams& p, int steps,
                                            ad::Activation saturation) {
  p.validate();
  std::vector<MatrixXd> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  out.push_back(z0);
  for (int s = 0; s < steps; ++s)
    out.push_back(euler_step(out.back(), p.dt,
                             [&](const MatrixXd& z) { return nod_rhs_full(z, p, saturation); }));
  return out;
}

std::vector<VectorXd> euler_trajectory_reduced(const VectorXd& z0, const ReducedNodParams& p,
                                               int steps, ad::Activation saturation) {
  std::vector<VectorXd> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  out.push_back(z0);
  for (int s = 0; s < steps; ++s)
    out.push_back(euler_step(out.back(), p.dt, [&](const VectorXd& z) {
      return nod_rhs_reduced(z, p, saturation);
    }));
  return out;
}

double pitchfork_rhs(double z, double u) { return u * z - z * z * z; }

namespace {

double central_derivative(const ScalarRhs& rhs, double z, double h) {
  return (rhs(z + h) - rhs(z - h)) / (2.0 * h);
}

// Relax toward an equilibrium by forward integration; returns the final state
// and whether |rhs| dropped below tol.
bool relax(const ScalarRhs& rhs, double z0, const EquilibriumOptions& opt, double* out) {
  double z = z0;
  for (long s = 0; s < opt.max_steps; ++s) {
    const double f = rhs(z);
    if (!std::isfinite(f) || std::abs(z) > opt.divergence_bound) return false;
    if (std::abs(f) < opt.tol) {
      *out = z;
      return true;
    }
    z += opt.dt * f;
  }
  const double f = rhs(z);
  if (std::isfinite(f) && std::abs(f) < opt.tol) {
    *out = z;
    return true;
  }
  return false;
}

bool newton(const ScalarRhs& rhs, double z0, const EquilibriumOptions& opt, double* out) {
  double z = z0;
  for (int it = 0; it < opt.newton_max_iter; ++it) {
    const double f = rhs(z);
    if (!std::isfinite(f)) return false;
    if (std::abs(f) < opt.tol) {
      *out = z;
      return true;
    }
    const double df = central_derivative(rhs, z, opt.derivative_h);
    if (!std::isfinite(df) || std::abs(df) < 1e-14) return false;
    z -= f / df;
    if (std::abs(z) > opt.divergence_bound) return false;
  }
  return false;
}

}  // namespace

std::vector<Equilibrium> find_equilibria(const ScalarRhs& rhs, const std::vector<double>& grid,
                                         const EquilibriumOptions& opt) {
  require(opt.tol > 0.0, "find_equilibria: tol must be positive");
  require(!grid.empty(), "find_equilibria: empty init grid");

  std::vector<double> roots;
  bool any_converged = false;
  for (double g : grid) {
    double z;
    if (relax(rhs, g, opt, &z)) {
      roots.push_back(z);
      any_converged = true;
    }
    if (newton(rhs, g, opt, &z)) {
      roots.push_back(z);
      any_converged = true;
    }
  }
  if (!any_converged)
    throw std::runtime_error("find_equilibria: no convergence from any grid point");

  std::sort(roots.begin(), roots.end());
  std::vector<Equilibrium> out;
  std::size_t i = 0;
  while (i < roots.size()) {
    std::size_t j = i;
    double best = roots[i];
    while (j + 1 < roots.size() && roots[j + 1] - roots[j] < opt.cluster_radius) {
      ++j;
      if (std::abs(rhs(roots[j])) < std::abs(rhs(best))) best = roots[j];
    }
    const double df = central_derivative(rhs, best, opt.derivative_h);
    out.push_back({best, df < 0.0});
    i = j + 1;
  }
  return out;
}

BifurcationResult bifurcation_sweep(const ScalarFamily& family, const SweepOptions& opt) {
  require(opt.resolution >= 2, "bifurcation_sweep: resolution must be >= 2");
  std::vector<double> grid = opt.grid;
  if (grid.empty())
    for (int i = 0; i < 13; ++i) grid.push_back(-3.0 + 6.0 * i / 12.0);

  BifurcationResult result;
  result.sweep_values.reserve(static_cast<std::size_t>(opt.resolution));
  std::size_t prev_count = 0;
  for (int i = 0; i < opt.resolution; ++i) {
    const double v = opt.lo + (opt.hi - opt.lo) * i / (opt.resolution - 1);
    result.sweep_values.push_back(v);
    result.equilibria.push_back(find_equilibria(family(v), grid, opt.eq));
    const std::size_t count = result.equilibria.back().size();
    if (count >= 3 && !result.critical_value) result.critical_value = v;
    if (i > 0 && count != prev_count) result.fold_points.push_back(v);
    prev_count = count;
  }
  return result;
}

ScalarFamily pitchfork_family() {
  return [](double u) { return [u](double z) { return pitchfork_rhs(z, u); }; };
}

ScalarFamily reduced_family(const ReducedNodParams& base, SweepVariable which,
                            ad::Activation saturation) {
  require(base.damping.size() == 1, "reduced_family: single-agent parameters required");
  const double d = base.damping[0];
  const double u = base.attention[0];
  const double alpha = base.self_reinforcement[0];
  const double b = base.input[0];
  if (which == SweepVariable::kAttention) {
    return [d, alpha, b, saturation](double sweep_u) {
      return [=](double z) { return -d * z + saturate(sweep_u * alpha * z, saturation) + b; };
    };
  }
  return [d, u, alpha, saturation](double sweep_b) {
    return [=](double z) { return -d * z + saturate(u * alpha * z, saturation) + sweep_b; };
  };
}

HysteresisResult hysteresis_sweep(const ScalarFamily& family_over_input, double lo, double hi,
                                  int resolution, const EquilibriumOptions& opt, double z_start) {
  require(resolution >= 2, "hysteresis_sweep: resolution must be >= 2");
  HysteresisResult result;
  result.input_values.resize(static_cast<std::size_t>(resolution));
  result.forward_trace.resize(static_cast<std::size_t>(resolution));
  result.backward_trace.resize(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i)
    result.input_values[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * i / (resolution - 1);

  double z = z_start;
  for (int i = 0; i < resolution; ++i) {
    const double b = result.input_values[static_cast<std::size_t>(i)];
    if (!relax(family_over_input(b), z, opt, &z))
      throw std::runtime_error("hysteresis_sweep: no convergence at b=" + std::to_string(b));
    result.forward_trace[static_cast<std::size_t>(i)] = z;
  }
  for (int i = resolution - 1; i >= 0; --i) {
    const double b = result.input_values[static_cast<std::size_t>(i)];
    if (!relax(family_over_input(b), z, opt, &z))
      throw std::runtime_error("hysteresis_sweep: no convergence at b=" + std::to_string(b));
    result.backward_trace[static_cast<std::size_t>(i)] = z;
  }
  return result;
}

std::vector<ExclusivityReport> detect_mutual_exclusivity(const std::vector<MatrixXd>& z_trace,
                                                         const MatrixXd& belief) {
  require(z_trace.size() >= 2, "detect_mutual_exclusivity: need at least 2 frames");
  const Eigen::Index na = z_trace.front().rows();
  const Eigen::Index no = z_trace.front().cols();
  require(belief.rows() == no && belief.cols() == no,
          "detect_mutual_exclusivity: belief shape mismatch");
  for (const auto& frame : z_trace)
    require(frame.rows() == na && frame.cols() == no,
            "detect_mutual_exclusivity: inconsistent trace frames");

  const Eigen::Index n = static_cast<Eigen::Index>(z_trace.size()) * na;
  MatrixXd pooled(n, no);  // (t, agent) rows by category
  for (std::size_t t = 0; t < z_trace.size(); ++t)
    pooled.middleRows(static_cast<Eigen::Index>(t) * na, na) = z_trace[t];

  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  MatrixXd centered = pooled.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.colwise().squaredNorm() / static_cast<double>(n);
  for (Eigen::Index j = 0; j < no; ++j)
    if (var[j] < 1e-24)
      throw DegenerateTraceError("degenerate trace: zero variance in category " +
                                 std::to_string(j));

  std::vector<ExclusivityReport> reports;
  for (Eigen::Index ja = 0; ja < no; ++ja) {
    for (Eigen::Index jb = ja + 1; jb < no; ++jb) {
      ExclusivityReport r;
      r.category_a = static_cast<int>(ja);
      r.category_b = static_cast<int>(jb);
      const double dot_ab = pooled.col(ja).dot(pooled.col(jb));
      const double dot_bb = pooled.col(jb).squaredNorm();
      r.scale_c = dot_bb > 0.0 ? -dot_ab / dot_bb : 0.0;
      const double cov = centered.col(ja).dot(centered.col(jb)) / static_cast<double>(n);
      r.correlation = cov / std::sqrt(var[ja] * var[jb]);
      r.belief_ab = belief(ja, jb);
      r.belief_ba = belief(jb, ja);
      r.mutually_exclusive = r.correlation <= -0.95 && r.belief_ab <= 0.0 && r.belief_ba <= 0.0;
      reports.push_back(r);
    }
  }
  return reports;
}

ReducedNodParams reduce_params(const NodParams& p, double c) {
  p.validate();
  require(p.n_categories() == 2, "reduce_params: two categories required");
  require(c > 0.0, "reduce_params: c must be positive");
  const double a12 = p.belief(0, 1);
  const double a21 = p.belief(1, 0);
  require(a12 <= 0.0 && a21 <= 0.0, "reduce_params: belief off-diagonals must be <= 0");

  ReducedNodParams r;
  r.damping = p.damping.col(0);
  r.attention = p.attention;
  r.self_reinforcement = (p.self_reinforcement.col(0).array() - c * a12).matrix();
  r.coupling = p.communication * (1.0 - c * a12);
  r.input = p.input.col(0);
  r.dt = p.dt;
  return r;
}

void write_sweep_csv(const BifurcationResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  out << "sweep_value,equilibrium,stable\n";
  out.precision(17);
  for (std::size_t i = 0; i < result.sweep_values.size(); ++i)
    for (const Equilibrium& e : result.equilibria[i])
      out << result.sweep_values[i] << "," << e.z << "," << (e.stable ? 1 : 0) << "\n";
}

}  // namespace binn::nod
