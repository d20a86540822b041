#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "binn/nod.hpp"
#include "binn/rng.hpp"
#include "doctest.h"

using namespace binn;
using namespace binn::nod;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/// Term-by-term scalar evaluation of the full dynamics, independent of the
/// vectorized implementation.
MatrixXd rhs_loop_oracle(const MatrixXd& z, const NodParams& p) {
  const Eigen::Index na = z.rows(), no = z.cols();
  MatrixXd out(na, no);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < no; ++j) {
      double inner = p.self_reinforcement(i, j) * z(i, j);
      for (Eigen::Index k = 0; k < na; ++k)
        if (k != i) inner += p.communication(i, k) * z(k, j);
      for (Eigen::Index l = 0; l < no; ++l)
        if (l != j) inner += p.belief(j, l) * z(i, l);
      for (Eigen::Index k = 0; k < na; ++k)
        for (Eigen::Index l = 0; l < no; ++l)
          if (k != i && l != j) inner += p.communication(i, k) * p.belief(j, l) * z(k, l);
      out(i, j) = -p.damping(i, j) * z(i, j) + std::tanh(p.attention(i) * inner) + p.input(i, j);
    }
  }
  return out;
}

NodParams random_params(Eigen::Index na, Eigen::Index no, std::uint64_t seed) {
  Rng rng(seed);
  NodParams p;
  p.damping = MatrixXd::NullaryExpr(na, no, [&] { return rng.uniform(0.3, 2.0); });
  p.attention = VectorXd::NullaryExpr(na, [&] { return rng.uniform(0.0, 3.0); });
  p.self_reinforcement = MatrixXd::NullaryExpr(na, no, [&] { return rng.uniform(0.0, 2.0); });
  p.belief = MatrixXd::NullaryExpr(no, no, [&] { return rng.uniform(-1.0, 1.0); });
  p.belief.diagonal().setZero();
  p.communication = MatrixXd::NullaryExpr(na, na, [&] { return rng.uniform(-1.0, 1.0); });
  p.communication.diagonal().setZero();
  p.input = MatrixXd::NullaryExpr(na, no, [&] { return rng.uniform(-1.5, 1.5); });
  p.dt = 0.01;
  return p;
}

/// Bisection root finder on a dense grid; the independent equilibrium oracle.
std::vector<double> dense_grid_roots(const ScalarRhs& rhs, double lo, double hi, int cells) {
  std::vector<double> roots;
  double prev_z = lo, prev_f = rhs(lo);
  for (int i = 1; i <= cells; ++i) {
    const double z = lo + (hi - lo) * i / cells;
    const double f = rhs(z);
    if (prev_f == 0.0) roots.push_back(prev_z);
    if (prev_f * f < 0.0) {
      double a = prev_z, b = z, fa = prev_f;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = rhs(mid);
        if (fa * fm <= 0.0)
          b = mid;
        else {
          a = mid;
          fa = fm;
        }
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_z = z;
    prev_f = f;
  }
  if (prev_f == 0.0) roots.push_back(prev_z);
  return roots;
}

}  // namespace

TEST_CASE("origin with zero input is an equilibrium for any parameters") {
  for (std::uint64_t seed : {3ULL, 17ULL, 99ULL}) {
    NodParams p = random_params(3, 2, seed);
    p.input.setZero();
    const MatrixXd rhs = nod_rhs_full(MatrixXd::Zero(3, 2), p);
    CHECK(rhs.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("zero attention reduces the dynamics to damped input") {
  NodParams p = random_params(4, 3, 7);
  p.attention.setZero();
  Rng rng(8);
  const MatrixXd z = MatrixXd::NullaryExpr(4, 3, [&] { return rng.uniform(-2.0, 2.0); });
  const MatrixXd rhs = nod_rhs_full(z, p);
  const MatrixXd expected = (-p.damping.array() * z.array()).matrix() + p.input;
  CHECK((rhs - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("vectorized dynamics match the scalar-loop oracle") {
  SUBCASE("two agents, two categories, unit off-diagonals") {
    NodParams p;
    p.damping = MatrixXd::Ones(2, 2);
    p.attention = VectorXd::Ones(2);
    p.self_reinforcement = MatrixXd::Ones(2, 2);
    p.belief = MatrixXd::Ones(2, 2);
    p.belief.diagonal().setZero();
    p.communication = MatrixXd::Ones(2, 2);
    p.communication.diagonal().setZero();
    p.input = MatrixXd::Zero(2, 2);
    MatrixXd z(2, 2);
    z << 0.1, -0.1, 0.2, -0.2;
    const MatrixXd got = nod_rhs_full(z, p);
    const MatrixXd want = rhs_loop_oracle(z, p);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-15);
    // hand evaluation of the (0,0) term:
    //   inner = 1*0.1 + a_01*0.2 + o_01*(-0.1) + a_01*o_01*(-0.2) = 0.0
    CHECK(got(0, 0) == doctest::Approx(-0.1 + std::tanh(0.0)).epsilon(1e-15));
  }
  SUBCASE("random systems") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Eigen::Index na = 1 + seed % 4, no = 1 + (seed / 2) % 3;
      NodParams p = random_params(na, no, seed + 100);
      Rng rng(seed + 200);
      const MatrixXd z = MatrixXd::NullaryExpr(na, no, [&] { return rng.uniform(-2.0, 2.0); });
      CHECK((nod_rhs_full(z, p) - rhs_loop_oracle(z, p)).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
  SUBCASE("parameter invariants are enforced") {
    NodParams p = random_params(2, 2, 5);
    p.damping(0, 0) = -0.1;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = random_params(2, 2, 5);
    p.belief(0, 0) = 0.5;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = random_params(2, 2, 5);
    CHECK_THROWS_AS(nod_rhs_full(MatrixXd::Zero(3, 2), p), std::invalid_argument);
  }
}

TEST_CASE("reduced dynamics evaluate per the printed form") {
  SUBCASE("zero state, zero input") {
    ReducedNodParams p;
    p.damping = VectorXd::Ones(3);
    p.attention = VectorXd::Ones(3);
    p.self_reinforcement = VectorXd::Ones(3);
    p.coupling = MatrixXd::Ones(3, 3);
    p.coupling.diagonal().setZero();
    p.input = VectorXd::Zero(3);
    CHECK(nod_rhs_reduced(VectorXd::Zero(3), p).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("single agent hand evaluation: -0.5 + tanh(1.0)") {
    VectorXd z(1), d(1), u(1), a(1), b(1);
    z << 0.5;
    d << 1.0;
    u << 1.0;
    a << 2.0;
    b << 0.0;
    const VectorXd rhs = nod_rhs_reduced(z, d, u, a, MatrixXd::Zero(1, 1), b);
    CHECK(rhs[0] == doctest::Approx(-0.5 + std::tanh(1.0)).epsilon(1e-15));
  }
}

TEST_CASE("euler stepping") {
  SUBCASE("zero rhs keeps the state") {
    const MatrixXd z = MatrixXd::Constant(2, 2, 0.7);
    const MatrixXd next = euler_step(z, 0.1, [](const MatrixXd& s) {
      return MatrixXd::Zero(s.rows(), s.cols());
    });
    CHECK((next - z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("linear decay step") {
    const double next =
        euler_step_scalar(1.0, 0.1, [](double z) { return -z; });
    CHECK(next == doctest::Approx(0.9).epsilon(1e-15));
  }
  SUBCASE("first-order convergence against a fine-step reference") {
    ReducedNodParams p;
    p.damping = VectorXd::Ones(1);
    p.attention = VectorXd::Constant(1, 2.0);
    p.self_reinforcement = VectorXd::Ones(1);
    p.coupling = MatrixXd::Zero(1, 1);
    p.input = VectorXd::Constant(1, 0.3);
    VectorXd z0(1);
    z0 << 0.1;

    auto run = [&](double dt, int steps) {
      p.dt = dt;
      return euler_trajectory_reduced(z0, p, steps).back()[0];
    };
    const double coarse = run(0.05, 100);
    const double half = run(0.025, 200);
    const double reference = run(0.0005, 10000);  // dt/100
    const double err_coarse = std::abs(coarse - reference);
    const double err_half = std::abs(half - reference);
    CHECK(err_coarse < 10 * 0.05);  // O(dt)
    const double ratio = err_coarse / err_half;
    CHECK(ratio > 1.5);
    CHECK(ratio < 3.0);  // first order: halving dt roughly halves the error
  }
}

TEST_CASE("pitchfork normal form") {
  CHECK(pitchfork_rhs(0.0, -3.0) == 0.0);
  CHECK(pitchfork_rhs(0.0, 3.0) == 0.0);
  CHECK(pitchfork_rhs(1.0, 1.0) == 0.0);  // equilibrium at sqrt(u)
  CHECK(pitchfork_rhs(1.0, 4.0) == 3.0);
}

TEST_CASE("find_equilibria resolves the pitchfork branch structure") {
  std::vector<double> grid;
  for (int i = 0; i <= 12; ++i) grid.push_back(-3.0 + 0.5 * i);

  SUBCASE("subcritical: single stable equilibrium at zero") {
    const auto eq = find_equilibria([](double z) { return pitchfork_rhs(z, -1.0); }, grid);
    REQUIRE(eq.size() == 1);
    CHECK(std::abs(eq[0].z) < 1e-6);
    CHECK(eq[0].stable);
  }
  SUBCASE("supercritical: +-sqrt(u) stable, origin unstable") {
    for (double u : {0.25, 1.0, 4.0}) {
      const auto eq = find_equilibria([u](double z) { return pitchfork_rhs(z, u); }, grid);
      REQUIRE(eq.size() == 3);
      CHECK(std::abs(eq[0].z + std::sqrt(u)) < 1e-6);
      CHECK(std::abs(eq[1].z) < 1e-6);
      CHECK(std::abs(eq[2].z - std::sqrt(u)) < 1e-6);
      CHECK(eq[0].stable);
      CHECK(!eq[1].stable);
      CHECK(eq[2].stable);
    }
  }
  SUBCASE("reduced model below critical attention agrees with the dense-grid oracle") {
    const auto family = [](double z) { return -z + std::tanh(0.7 * z); };
    const auto eq = find_equilibria(family, grid);
    const auto oracle = dense_grid_roots(family, -3.0, 3.0, 6000);
    REQUIRE(eq.size() == oracle.size());
    REQUIRE(eq.size() == 1);
    CHECK(std::abs(eq[0].z - oracle[0]) < 1e-6);
    CHECK(eq[0].stable);
  }
  SUBCASE("reports each equilibrium only to tolerance") {
    const auto eq = find_equilibria([](double z) { return pitchfork_rhs(z, 1.0); }, grid);
    for (const auto& e : eq) CHECK(std::abs(pitchfork_rhs(e.z, 1.0)) < 1e-8);
  }
}

TEST_CASE("bifurcation sweeps locate the critical attention") {
  SUBCASE("pitchfork critical value near zero") {
    SweepOptions opt;
    opt.lo = -1.0;
    opt.hi = 1.0;
    opt.resolution = 41;  // cell width 0.05
    const BifurcationResult r = bifurcation_sweep(pitchfork_family(), opt);
    REQUIRE(r.critical_value.has_value());
    CHECK(std::abs(*r.critical_value) <= 0.05 + 1e-12);
  }
  SUBCASE("sweep capped below critical sees one equilibrium everywhere") {
    SweepOptions opt;
    opt.lo = -1.0;
    opt.hi = -0.2;
    opt.resolution = 9;
    const BifurcationResult r = bifurcation_sweep(pitchfork_family(), opt);
    CHECK(!r.critical_value.has_value());
    for (const auto& eq : r.equilibria) CHECK(eq.size() == 1);
  }
  SUBCASE("reduced single-agent critical attention near d/(alpha S'(0)) = 1") {
    ReducedNodParams base;
    base.damping = VectorXd::Ones(1);
    base.attention = VectorXd::Ones(1);
    base.self_reinforcement = VectorXd::Ones(1);
    base.coupling = MatrixXd::Zero(1, 1);
    base.input = VectorXd::Zero(1);
    SweepOptions opt;
    opt.lo = 0.5;
    opt.hi = 1.5;
    opt.resolution = 101;  // cell width 0.01
    const BifurcationResult r =
        bifurcation_sweep(reduced_family(base, SweepVariable::kAttention), opt);
    REQUIRE(r.critical_value.has_value());
    CHECK(std::abs(*r.critical_value - 1.0) <= 2 * 0.01 + 1e-12);
  }
}

TEST_CASE("hysteresis appears only above the critical attention") {
  ReducedNodParams base;
  base.damping = VectorXd::Ones(1);
  base.attention = VectorXd::Ones(1);
  base.self_reinforcement = VectorXd::Ones(1);
  base.coupling = MatrixXd::Zero(1, 1);
  base.input = VectorXd::Zero(1);

  SUBCASE("below critical the traces coincide") {
    base.attention[0] = 0.5;
    const auto r =
        hysteresis_sweep(reduced_family(base, SweepVariable::kInput), -1.5, 1.5, 61);
    for (std::size_t i = 0; i < r.input_values.size(); ++i)
      CHECK(std::abs(r.forward_trace[i] - r.backward_trace[i]) < 1e-6);
  }
  SUBCASE("above critical the loop has positive width at b = 0") {
    base.attention[0] = 2.0;
    const auto r =
        hysteresis_sweep(reduced_family(base, SweepVariable::kInput), -1.5, 1.5, 61);
    // resolution 61 over [-1.5, 1.5] puts b = 0 at index 30
    CHECK(r.input_values[30] == doctest::Approx(0.0));
    CHECK(std::abs(r.forward_trace[30] - r.backward_trace[30]) > 0.1);
  }
  SUBCASE("forward trace is nondecreasing in b (single agent, no coupling)") {
    base.attention[0] = 2.0;
    const auto r =
        hysteresis_sweep(reduced_family(base, SweepVariable::kInput), -1.5, 1.5, 101);
    for (std::size_t i = 1; i < r.forward_trace.size(); ++i)
      CHECK(r.forward_trace[i] >= r.forward_trace[i - 1] - 1e-9);
  }
  SUBCASE("pitchfork with input forcing: loop width matches the dense-grid oracle") {
    const double u = 2.0;
    auto family = [u](double b) {
      return [u, b](double z) { return pitchfork_rhs(z, u) + b; };
    };
    const auto r = hysteresis_sweep(family, -3.0, 3.0, 241);

    // measured fold locations: the b values where each trace jumps
    double b_up = 0, b_down = 0;
    for (std::size_t i = 1; i < r.input_values.size(); ++i) {
      if (r.forward_trace[i] - r.forward_trace[i - 1] > 1.0)
        b_up = r.input_values[i];
      if (r.backward_trace[i] - r.backward_trace[i - 1] > 1.0)
        b_down = r.input_values[i - 1];
    }
    const double measured_width = b_up - b_down;

    // oracle: count dense-grid roots per b; the 3-root interval is the loop
    double lo_fold = 0, hi_fold = 0;
    int prev = 1;
    for (int i = 0; i <= 1200; ++i) {
      const double b = -3.0 + 6.0 * i / 1200.0;
      const int roots = static_cast<int>(
          dense_grid_roots([u, b](double z) { return pitchfork_rhs(z, u) + b; }, -4, 4, 4000)
              .size());
      if (prev == 1 && roots == 3) lo_fold = b;
      if (prev == 3 && roots == 1) hi_fold = b;
      prev = roots;
    }
    const double oracle_width = hi_fold - lo_fold;
    CHECK(measured_width == doctest::Approx(oracle_width).epsilon(0.05));
  }
}

TEST_CASE("mutual exclusivity detection") {
  MatrixXd negative_belief(2, 2), mixed_belief(2, 2);
  negative_belief << 0, -1.2947, -0.9147, 0;
  mixed_belief << 0, -2.8137, 1.1597, 0;

  SUBCASE("exact anti-phase trace with c = 1") {
    std::vector<MatrixXd> trace;
    for (int t = 0; t < 50; ++t) {
      MatrixXd z(2, 2);
      const double v = std::sin(0.3 * t);
      z << v, -v, 0.5 * v, -0.5 * v;
      trace.push_back(z);
    }
    const auto reports = detect_mutual_exclusivity(trace, negative_belief);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].scale_c == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(reports[0].correlation == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(reports[0].mutually_exclusive);
  }
  SUBCASE("anti-phase trace with a negative-entry belief matrix is exclusive") {
    std::vector<MatrixXd> trace;
    for (int t = 0; t < 80; ++t) {
      MatrixXd z(1, 2);
      const double v = std::cos(0.2 * t);
      z << v, -0.7 * v;
      trace.push_back(z);
    }
    const auto reports = detect_mutual_exclusivity(trace, negative_belief);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].correlation < -0.99);
    CHECK(reports[0].scale_c == doctest::Approx(1.0 / 0.7).epsilon(1e-9));
    CHECK(reports[0].mutually_exclusive);
  }
  SUBCASE("a positive belief entry vetoes the verdict regardless of the trace") {
    std::vector<MatrixXd> trace;
    for (int t = 0; t < 80; ++t) {
      MatrixXd z(1, 2);
      const double v = std::cos(0.2 * t);
      z << v, -v;
      trace.push_back(z);
    }
    const auto reports = detect_mutual_exclusivity(trace, mixed_belief);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].correlation <= -0.95);
    CHECK(!reports[0].mutually_exclusive);
  }
  SUBCASE("degenerate traces are rejected") {
    std::vector<MatrixXd> trace(10, MatrixXd::Ones(2, 2));
    CHECK_THROWS_AS(detect_mutual_exclusivity(trace, negative_belief), DegenerateTraceError);
    CHECK_THROWS_AS(detect_mutual_exclusivity({MatrixXd::Ones(2, 2)}, negative_belief),
                    std::invalid_argument);
  }
}

namespace {

/// The anti-symmetric two-category construction: equal damping and
/// self-reinforcement across columns, symmetric negative belief, opposite
/// inputs and initial conditions.
NodParams exclusive_construction(Eigen::Index na, std::uint64_t seed, double belief_offdiag) {
  Rng rng(seed);
  NodParams p;
  const VectorXd d = VectorXd::NullaryExpr(na, [&] { return rng.uniform(0.5, 1.5); });
  const VectorXd alpha = VectorXd::NullaryExpr(na, [&] { return rng.uniform(0.2, 1.0); });
  p.damping = d.replicate(1, 2);
  p.self_reinforcement = alpha.replicate(1, 2);
  p.attention = VectorXd::NullaryExpr(na, [&] { return rng.uniform(0.5, 2.0); });
  p.belief = MatrixXd::Zero(2, 2);
  p.belief(0, 1) = belief_offdiag;
  p.belief(1, 0) = belief_offdiag;
  p.communication = MatrixXd::NullaryExpr(na, na, [&] { return rng.uniform(-0.3, 0.3); });
  p.communication.diagonal().setZero();
  p.input = MatrixXd::Zero(na, 2);
  for (Eigen::Index i = 0; i < na; ++i) {
    p.input(i, 0) = rng.uniform(-0.5, 0.5);
    p.input(i, 1) = -p.input(i, 0);
  }
  p.dt = 0.01;
  return p;
}

}  // namespace

TEST_CASE("reduce_params collapses the mutually exclusive system") {
  SUBCASE("zero belief coupling is the identity reduction") {
    NodParams p = exclusive_construction(3, 1, 0.0);
    const ReducedNodParams r = reduce_params(p, 1.0);
    CHECK((r.self_reinforcement - p.self_reinforcement.col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.coupling - p.communication).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("hand-substituted values") {
    NodParams p;
    p.damping = MatrixXd::Ones(2, 2);
    p.attention = VectorXd::Ones(2);
    p.self_reinforcement = MatrixXd::Ones(2, 2);
    p.belief = MatrixXd::Zero(2, 2);
    p.belief(0, 1) = -1.0;
    p.belief(1, 0) = -1.0;
    p.communication = MatrixXd::Constant(2, 2, 0.5);
    p.communication.diagonal().setZero();
    p.input = MatrixXd::Zero(2, 2);
    p.dt = 0.01;
    const ReducedNodParams r = reduce_params(p, 1.0);
    CHECK(r.self_reinforcement[0] == 2.0);  // alpha~ = 1 - 1*(-1)
    CHECK(r.coupling(0, 1) == 1.0);         // a~ = 0.5 * (1 - 1*(-1))
  }
  SUBCASE("sign precondition is enforced") {
    NodParams p = exclusive_construction(2, 2, 0.4);
    CHECK_THROWS_AS(reduce_params(p, 1.0), std::invalid_argument);
    p = exclusive_construction(2, 2, -0.4);
    CHECK_THROWS_AS(reduce_params(p, -1.0), std::invalid_argument);
  }
  SUBCASE("full simulation is the oracle for the reduced one") {
    const NodParams p = exclusive_construction(3, 5, -0.6);
    MatrixXd z0(3, 2);
    Rng rng(6);
    for (int i = 0; i < 3; ++i) {
      z0(i, 0) = rng.uniform(-0.5, 0.5);
      z0(i, 1) = -z0(i, 0);  // z_i2 = -z_i1 (c = 1)
    }
    const auto full = euler_trajectory_full(z0, p, 100);
    const ReducedNodParams rp = reduce_params(p, 1.0);
    const auto reduced = euler_trajectory_reduced(z0.col(0), rp, 100);
    for (std::size_t t = 0; t < full.size(); ++t) {
      CHECK((full[t].col(0) - reduced[t]).cwiseAbs().maxCoeff() < 1e-8);
      // decoupling invariant: column 2 stays the mirror of column 1
      CHECK((full[t].col(1) + full[t].col(0)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("euler trajectories of the full model stay bounded") {
  for (std::uint64_t seed : {1ULL, 2ULL}) {
    NodParams p = random_params(3, 2, seed);
    p.dt = 0.9 / p.damping.maxCoeff();
    const double bound = (1.0 + p.input.cwiseAbs().maxCoeff()) / p.damping.minCoeff() + 1.0;
    Rng rng(seed + 50);
    MatrixXd z = MatrixXd::NullaryExpr(3, 2, [&] { return rng.uniform(-1.0, 1.0); });
    double sup = z.cwiseAbs().maxCoeff();
    for (int step = 0; step < 10000; ++step) {
      z = euler_step(z, p.dt, [&](const MatrixXd& s) { return nod_rhs_full(s, p); });
      sup = std::max(sup, z.cwiseAbs().maxCoeff());
    }
    CHECK(sup <= bound);
  }
}

TEST_CASE("sweep results export as CSV") {
  SweepOptions opt;
  opt.lo = -0.5;
  opt.hi = 0.5;
  opt.resolution = 5;
  const BifurcationResult r = bifurcation_sweep(pitchfork_family(), opt);
  const std::string path = "/tmp/binn_nod_sweep_test.csv";
  write_sweep_csv(r, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "sweep_value,equilibrium,stable");
  int lines = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++lines;
  std::size_t expected = 0;
  for (const auto& eq : r.equilibria) expected += eq.size();
  CHECK(lines == static_cast<int>(expected));
}
