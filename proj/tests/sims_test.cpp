#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "binn/rng.hpp"
#include "binn/sims.hpp"
#include "doctest.h"

using namespace binn::sims;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd integrate(const SimConfig& cfg, VectorXd y, int steps, double dt) {
  for (int s = 0; s < steps; ++s)
    y = rk4_step([&](const VectorXd& v) { return system_derivative(cfg, v); }, y, dt);
  return y;
}

std::vector<VectorXd> trajectory(const SimConfig& cfg, VectorXd y, int steps, double dt) {
  std::vector<VectorXd> out{y};
  for (int s = 0; s < steps; ++s) {
    y = rk4_step([&](const VectorXd& v) { return system_derivative(cfg, v); }, y, dt);
    out.push_back(y);
  }
  return out;
}

}  // namespace

TEST_CASE("rk4_step basics") {
  SUBCASE("zero derivative keeps the state") {
    VectorXd y(3);
    y << 1, 2, 3;
    const VectorXd next = rk4_step([](const VectorXd& v) { return VectorXd::Zero(v.size()); },
                                   y, 0.1);
    CHECK((next - y).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("exponential growth matches the 4th-order Taylor polynomial") {
    VectorXd y(1);
    y << 1.0;
    const VectorXd next = rk4_step([](const VectorXd& v) { return v; }, y, 0.1);
    // 1 + h + h^2/2 + h^3/6 + h^4/24 at h = 0.1
    CHECK(next[0] == doctest::Approx(1.1051708333333333).epsilon(1e-15));
  }
  SUBCASE("dt must be positive") {
    VectorXd y = VectorXd::Zero(1);
    CHECK_THROWS_AS(rk4_step([](const VectorXd& v) { return v; }, y, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("system derivatives match the printed equations") {
  SUBCASE("pendulum") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum);
    VectorXd y(2);
    y << 0.0, 0.0;
    CHECK(system_derivative(cfg, y).cwiseAbs().maxCoeff() == 0.0);
    y << 1.5707963267948966, 0.0;  // theta = pi/2
    const VectorXd dy = system_derivative(cfg, y);
    CHECK(dy[1] == doctest::Approx(-9.81).epsilon(1e-12));
  }
  SUBCASE("double pendulum at rest hangs straight down") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kDoublePendulum);
    CHECK(system_derivative(cfg, VectorXd::Zero(4)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("double pendulum accelerations solve the printed 2x2 system") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kDoublePendulum);
    VectorXd y(4);
    y << 0.4, -0.3, 0.7, -0.2;
    const VectorXd dy = system_derivative(cfg, y);
    const double delta = y[1] - y[0];
    const double lhs1 = (cfg.mass1 + cfg.mass2) * cfg.length1 * dy[2] +
                        cfg.mass2 * cfg.length2 * dy[3] * std::cos(delta);
    const double rhs1 = cfg.mass2 * cfg.length2 * y[3] * y[3] * std::sin(delta) -
                        (cfg.mass1 + cfg.mass2) * cfg.gravity * std::sin(y[0]);
    const double lhs2 = cfg.length2 * dy[3] + cfg.length1 * dy[2] * std::cos(delta);
    const double rhs2 =
        -cfg.length1 * y[2] * y[2] * std::sin(delta) - cfg.gravity * std::sin(y[1]);
    CHECK(lhs1 == doctest::Approx(rhs1).epsilon(1e-12));
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-12));
  }
  SUBCASE("mass-spring pair force") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kMassSpring);
    cfg.n_agents = 2;
    cfg.coupling = MatrixXd::Zero(2, 2);
    cfg.coupling(0, 1) = cfg.coupling(1, 0) = 2.5;
    VectorXd y = VectorXd::Zero(8);
    y[0] = 1.0;  // r1 = (1,0), r2 = (0,0), at rest
    const VectorXd dy = system_derivative(cfg, y);
    CHECK(dy[4] == doctest::Approx(-2.5).epsilon(1e-14));
    CHECK(dy[5] == 0.0);
    CHECK(dy[6] == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(dy[7] == 0.0);
  }
  SUBCASE("kuramoto with equal phases reduces to intrinsic frequencies") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kKuramoto);
    cfg.n_agents = 4;
    cfg.coupling = MatrixXd::Constant(4, 4, 2.5);
    cfg.coupling.diagonal().setZero();
    cfg.frequencies = VectorXd::LinSpaced(4, 1.0, 4.0);
    const VectorXd dy = system_derivative(cfg, VectorXd::Constant(4, 0.8));
    CHECK((dy - cfg.frequencies).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("coarsen keeps every k-th frame") {
  std::vector<VectorXd> frames;
  for (int i = 0; i < 5000; ++i) frames.push_back(VectorXd::Constant(1, i));
  SUBCASE("factor 1 is the identity") {
    CHECK(coarsen(frames, 1).size() == frames.size());
  }
  SUBCASE("5000 frames coarsened by 100 keep {0, 100, ..., 4900}") {
    const auto kept = coarsen(frames, 100);
    REQUIRE(kept.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(kept[static_cast<std::size_t>(i)][0] == 100.0 * i);
  }
  SUBCASE("factor must divide") {
    frames.resize(10);
    CHECK_THROWS_AS(coarsen(frames, 3), std::invalid_argument);
  }
}

TEST_CASE("rk4 is fourth order on the pendulum") {
  SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum);
  VectorXd y0(2);
  y0 << 1.0, 0.0;
  const double t_end = 2.0;

  auto max_error_vs_fine = [&](double dt) {
    const int steps = static_cast<int>(std::lround(t_end / dt));
    const auto coarse = trajectory(cfg, y0, steps, dt);
    const auto fine = trajectory(cfg, y0, steps * 10, dt / 10.0);
    double err = 0.0;
    for (int i = 0; i <= steps; ++i)
      err = std::max(err,
                     (coarse[static_cast<std::size_t>(i)] -
                      fine[static_cast<std::size_t>(10 * i)]).cwiseAbs().maxCoeff());
    return err;
  };

  const double e1 = max_error_vs_fine(0.02);
  const double e2 = max_error_vs_fine(0.01);
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("conserved quantities at the published step sizes") {
  SUBCASE("pendulum energy drift below 1e-6 relative") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum);
    VectorXd y(2);
    y << 1.0, 0.0;
    const double e0 = pendulum_energy(cfg, y);
    double drift = 0.0;
    for (int s = 0; s < cfg.steps; ++s) {
      y = rk4_step([&](const VectorXd& v) { return system_derivative(cfg, v); }, y, cfg.dt);
      drift = std::max(drift, std::abs(pendulum_energy(cfg, y) - e0));
    }
    CHECK(drift / std::abs(e0) < 1e-6);
  }
  SUBCASE("double pendulum energy drift below 1e-4 relative") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kDoublePendulum);
    VectorXd y(4);
    y << 1.2, -0.9, 0.0, 0.0;
    const double e0 = double_pendulum_energy(cfg, y);
    double drift = 0.0;
    for (int s = 0; s < cfg.steps; ++s) {
      y = rk4_step([&](const VectorXd& v) { return system_derivative(cfg, v); }, y, cfg.dt);
      drift = std::max(drift, std::abs(double_pendulum_energy(cfg, y) - e0));
    }
    CHECK(drift / std::abs(e0) < 1e-4);
  }
  SUBCASE("mass-spring energy and momentum") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kMassSpring);
    cfg.seed = 3;
    const SimConfig resolved = resolve(cfg);
    binn::Rng rng(44);
    VectorXd y = VectorXd::NullaryExpr(4 * cfg.n_agents, [&] { return rng.normal(0.0, 0.3); });
    const double e0 = mass_spring_energy(resolved, y);
    const Eigen::Vector2d p0 = mass_spring_momentum(resolved, y);
    double energy_drift = 0.0, momentum_drift = 0.0;
    for (int s = 0; s < cfg.steps; ++s) {
      y = rk4_step([&](const VectorXd& v) { return system_derivative(resolved, v); }, y, cfg.dt);
      energy_drift = std::max(energy_drift, std::abs(mass_spring_energy(resolved, y) - e0));
      momentum_drift = std::max(momentum_drift,
                                (mass_spring_momentum(resolved, y) - p0).cwiseAbs().maxCoeff());
    }
    CHECK(energy_drift / std::abs(e0) < 1e-6);
    CHECK(momentum_drift < 1e-9);
  }
}

TEST_CASE("generate_dataset matches the published table shapes") {
  SUBCASE("pendulum: 5000 steps coarsened by 100 give 50 frames at dt 0.1") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum, 7);
    const TrajectoryDataset ds = generate_dataset(cfg, 3);
    CHECK(ds.n_traj == 3);
    CHECK(ds.n_frames == 50);
    CHECK(ds.n_agents == 1);
    CHECK(ds.state_dim == 4);
    CHECK(ds.dt == doctest::Approx(0.1).epsilon(1e-15));
    ds.validate();
  }
  SUBCASE("kuramoto: 500 steps coarsened by 10 give 50 frames at dt 5e-3") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kKuramoto, 7);
    const TrajectoryDataset ds = generate_dataset(cfg, 2);
    CHECK(ds.n_frames == 50);
    CHECK(ds.n_agents == 5);
    CHECK(ds.state_dim == 2);
    CHECK(ds.dt == doctest::Approx(5e-3).epsilon(1e-15));
  }
  SUBCASE("pendulum states are the Cartesian bob with consistent velocities") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum, 11);
    const TrajectoryDataset ds = generate_dataset(cfg, 1);
    // bob stays on the rod circle
    for (int f = 0; f < ds.n_frames; ++f) {
      const double x = ds.at(0, f, 0, 0), yy = ds.at(0, f, 0, 1);
      CHECK(x * x + yy * yy == doctest::Approx(1.0).epsilon(1e-12));
    }
    // velocity is tangent: finite difference of consecutive positions
    const double fd_vx = (ds.at(0, 1, 0, 0) - ds.at(0, 0, 0, 0)) / ds.dt;
    CHECK(fd_vx == doctest::Approx(0.5 * (ds.at(0, 0, 0, 2) + ds.at(0, 1, 0, 2))).epsilon(0.05));
  }
  SUBCASE("generation is deterministic in the seed") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kMassSpring, 21);
    const TrajectoryDataset a = generate_dataset(cfg, 2);
    const TrajectoryDataset b = generate_dataset(cfg, 2);
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
    SimConfig other = cfg;
    other.seed = 22;
    const TrajectoryDataset c = generate_dataset(other, 2);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
      if (a.data[i] != c.data[i]) any_diff = true;
    CHECK(any_diff);
  }
  SUBCASE("kuramoto stores unwrapped phase and matching rate") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kKuramoto, 5);
    const TrajectoryDataset ds = generate_dataset(cfg, 1);
    // phase rate should match the finite difference of the stored phase
    const double fd = (ds.at(0, 1, 0, 0) - ds.at(0, 0, 0, 0)) / ds.dt;
    CHECK(fd == doctest::Approx(0.5 * (ds.at(0, 0, 0, 1) + ds.at(0, 1, 0, 1))).epsilon(0.05));
  }
}

TEST_CASE("dataset persistence round-trips") {
  const std::string dir = "/tmp/binn_sims_roundtrip";
  std::filesystem::remove_all(dir);

  SUBCASE("metadata exact, data to 32-bit precision") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum, 13);
    const TrajectoryDataset ds = generate_dataset(cfg, 2);
    save_dataset(ds, dir);
    const TrajectoryDataset back = load_dataset(dir);
    CHECK(back.name == ds.name);
    CHECK(back.n_traj == ds.n_traj);
    CHECK(back.n_frames == ds.n_frames);
    CHECK(back.n_agents == ds.n_agents);
    CHECK(back.state_dim == ds.state_dim);
    CHECK(back.dt == ds.dt);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < ds.data.size(); ++i)
      max_diff = std::max(max_diff, std::abs(ds.data[i] - back.data[i]));
    CHECK(max_diff < 1e-6);
  }
  SUBCASE("empty dataset round-trips") {
    TrajectoryDataset empty;
    empty.name = "empty";
    empty.n_traj = 0;
    empty.n_frames = 50;
    empty.n_agents = 1;
    empty.state_dim = 4;
    empty.dt = 0.1;
    save_dataset(empty, dir);
    const TrajectoryDataset back = load_dataset(dir);
    CHECK(back.n_traj == 0);
    CHECK(back.data.empty());
  }
  SUBCASE("corrupted blob length is reported with byte counts") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum, 13);
    save_dataset(generate_dataset(cfg, 1), dir);
    std::ofstream((std::filesystem::path(dir) / "data.f32"), std::ios::binary) << "abc";
    try {
      load_dataset(dir);
      FAIL("expected a byte-count error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("3 bytes") != std::string::npos);
      CHECK(msg.find("expected 800") != std::string::npos);  // 1*50*1*4 floats
    }
  }
  SUBCASE("format version mismatch is rejected") {
    SimConfig cfg = SimConfig::table_defaults(SystemKind::kPendulum, 13);
    save_dataset(generate_dataset(cfg, 1), dir);
    std::ofstream(std::filesystem::path(dir) / "meta.json")
        << "{\"format_version\":2,\"name\":\"x\",\"n_traj\":1,\"T\":50,"
           "\"n_agents\":1,\"state_dim\":4,\"dt\":0.1}";
    CHECK_THROWS_AS(load_dataset(dir), std::runtime_error);
  }
}

TEST_CASE("csv import") {
  const std::string path = "/tmp/binn_import_test.csv";

  SUBCASE("velocities from forward differences; stationary agent is zero") {
    std::ofstream out(path);
    out << "traj_id,t,agent_id,px,py\n";
    for (int t = 0; t < 19; ++t)
      for (int a = 0; a < 5; ++a) {
        // agent 0 stationary, others move linearly with slope 3 in x
        const double px = a == 0 ? 2.0 : 3.0 * t + a;
        out << "0," << t << "," << a << "," << px << "," << (0.5 * a) << "\n";
      }
    out.close();
    const TrajectoryDataset ds = import_csv(path, false, 1.0);
    CHECK(ds.n_traj == 1);
    CHECK(ds.n_frames == 19);
    CHECK(ds.n_agents == 5);
    CHECK(ds.state_dim == 4);
    for (int f = 0; f < 19; ++f) {
      CHECK(ds.at(0, f, 0, 2) == 0.0);  // stationary
      CHECK(ds.at(0, f, 0, 3) == 0.0);
      CHECK(ds.at(0, f, 1, 2) == doctest::Approx(3.0).epsilon(1e-12));
      CHECK(ds.at(0, f, 1, 3) == 0.0);
    }
  }
  SUBCASE("explicit velocity columns are taken as-is") {
    std::ofstream out(path);
    out << "traj_id,t,agent_id,px,py,vx,vy\n";
    out << "4,0,9,1,2,3,4\n4,1,9,5,6,7,8\n";
    out.close();
    const TrajectoryDataset ds = import_csv(path, true, 0.4);
    CHECK(ds.n_traj == 1);
    CHECK(ds.n_frames == 2);
    CHECK(ds.at(0, 0, 0, 2) == 3.0);
    CHECK(ds.at(0, 1, 0, 3) == 8.0);
    CHECK(ds.dt == 0.4);
  }
  SUBCASE("ragged trajectories are rejected") {
    std::ofstream out(path);
    out << "traj_id,t,agent_id,px,py\n0,0,0,1,1\n0,1,0,1,1\n1,0,0,1,1\n";
    out.close();
    CHECK_THROWS_AS(import_csv(path, false, 1.0), std::runtime_error);
  }
  SUBCASE("missing agents are rejected") {
    std::ofstream out(path);
    out << "traj_id,t,agent_id,px,py\n0,0,0,1,1\n0,0,1,1,1\n0,1,0,1,1\n0,1,1,1,1\n"
        << "1,0,0,1,1\n1,0,1,1,1\n1,1,0,1,1\n1,1,2,1,1\n";
    out.close();
    CHECK_THROWS_AS(import_csv(path, false, 1.0), std::runtime_error);
  }
  SUBCASE("unparsable rows name the line") {
    std::ofstream out(path);
    out << "traj_id,t,agent_id,px,py\n0,0,0,1,1\n0,1,zero,1,1\n";
    out.close();
    try {
      import_csv(path, false, 1.0);
      FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("header is required") {
    std::ofstream out(path);
    out << "0,0,0,1,1\n";
    out.close();
    CHECK_THROWS_AS(import_csv(path, false, 1.0), std::runtime_error);
  }
}
