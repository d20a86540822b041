#include "binn/sims.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "binn/rng.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset blobs are little-endian; byte swapping is not implemented");

namespace binn::sims {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

SystemKind system_from_string(const std::string& name) {
  if (name == "pendulum") return SystemKind::kPendulum;
  if (name == "double_pendulum") return SystemKind::kDoublePendulum;
  if (name == "mass_spring") return SystemKind::kMassSpring;
  if (name == "kuramoto") return SystemKind::kKuramoto;
  throw std::invalid_argument("unknown system: " + name);
}

const char* system_name(SystemKind kind) {
  switch (kind) {
    case SystemKind::kPendulum: return "pendulum";
    case SystemKind::kDoublePendulum: return "double_pendulum";
    case SystemKind::kMassSpring: return "mass_spring";
    case SystemKind::kKuramoto: return "kuramoto";
  }
  return "?";
}

int SimConfig::agent_count() const {
  switch (kind) {
    case SystemKind::kPendulum: return 1;
    case SystemKind::kDoublePendulum: return 2;
    default: return n_agents;
  }
}

int SimConfig::generalized_dim() const {
  switch (kind) {
    case SystemKind::kPendulum: return 2;
    case SystemKind::kDoublePendulum: return 4;
    case SystemKind::kMassSpring: return 4 * n_agents;
    case SystemKind::kKuramoto: return n_agents;
  }
  return 0;
}

int SimConfig::state_dim() const {
  return kind == SystemKind::kKuramoto ? 2 : 4;
}

void SimConfig::validate() const {
  require(dt > 0.0, "SimConfig: dt must be positive");
  require(steps >= coarsening && coarsening > 0, "SimConfig: steps must cover coarsening");
  require(steps % coarsening == 0, "SimConfig: coarsening must divide steps");
  require(agent_count() > 0, "SimConfig: need at least one agent");
  if (coupling.size() > 0) {
    const int n = agent_count();
    require(coupling.rows() == n && coupling.cols() == n, "SimConfig: coupling shape");
    require(coupling.isApprox(coupling.transpose()), "SimConfig: coupling must be symmetric");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double k = coupling(i, j);
        require(k == 0.0 || k == coupling_strength,
                "SimConfig: coupling entries must be 0 or the coupling strength");
      }
  }
}

SimConfig SimConfig::table_defaults(SystemKind kind, std::uint64_t seed) {
  SimConfig cfg;
  cfg.kind = kind;
  cfg.seed = seed;
  switch (kind) {
    case SystemKind::kPendulum:
      cfg.dt = 1e-3;
      cfg.steps = 5000;
      cfg.coarsening = 100;
      break;
    case SystemKind::kDoublePendulum:
      cfg.dt = 5e-4;
      cfg.steps = 5000;
      cfg.coarsening = 100;
      break;
    case SystemKind::kMassSpring:
      cfg.dt = 5e-4;
      cfg.steps = 5000;
      cfg.coarsening = 100;
      cfg.n_agents = 5;
      break;
    case SystemKind::kKuramoto:
      cfg.dt = 5e-4;
      cfg.steps = 500;
      cfg.coarsening = 10;
      cfg.n_agents = 5;
      break;
  }
  return cfg;
}

MatrixXd TrajectoryDataset::frame(int traj, int f) const {
  MatrixXd out(n_agents, state_dim);
  for (int a = 0; a < n_agents; ++a)
    for (int d = 0; d < state_dim; ++d) out(a, d) = at(traj, f, a, d);
  return out;
}

void TrajectoryDataset::set_frame(int traj, int f, const MatrixXd& value) {
  for (int a = 0; a < n_agents; ++a)
    for (int d = 0; d < state_dim; ++d) at(traj, f, a, d) = value(a, d);
}

void TrajectoryDataset::validate() const {
  require(state_dim % 2 == 0, "TrajectoryDataset: state_dim must be even ([p, v])");
  require(dt > 0.0, "TrajectoryDataset: dt must be positive");
  const std::size_t expected = static_cast<std::size_t>(n_traj) * n_frames * n_agents * state_dim;
  require(data.size() == expected, "TrajectoryDataset: data size mismatch");
  for (double v : data)
    if (!std::isfinite(v)) throw std::invalid_argument("TrajectoryDataset: non-finite value");
}

VectorXd system_derivative(const SimConfig& cfg, const VectorXd& y) {
  require(y.size() == cfg.generalized_dim(), "system_derivative: state size mismatch");
  switch (cfg.kind) {
    case SystemKind::kPendulum: {
      VectorXd dy(2);
      dy[0] = y[1];
      dy[1] = -(cfg.gravity / cfg.length1) * std::sin(y[0]);
      return dy;
    }
    case SystemKind::kDoublePendulum: {
      // (m1+m2) l1 th1'' + m2 l2 th2'' cos(th2-th1) = m2 l2 w2^2 sin(th2-th1) - (m1+m2) g sin th1
      // l2 th2'' + l1 th1'' cos(th2-th1)            = -l1 w1^2 sin(th2-th1) - g sin th2
      const double th1 = y[0], th2 = y[1], w1 = y[2], w2 = y[3];
      const double delta = th2 - th1;
      const double m12 = cfg.mass1 + cfg.mass2;
      const double a11 = m12 * cfg.length1;
      const double a12 = cfg.mass2 * cfg.length2 * std::cos(delta);
      const double a21 = cfg.length1 * std::cos(delta);
      const double a22 = cfg.length2;
      const double r1 =
          cfg.mass2 * cfg.length2 * w2 * w2 * std::sin(delta) - m12 * cfg.gravity * std::sin(th1);
      const double r2 = -cfg.length1 * w1 * w1 * std::sin(delta) - cfg.gravity * std::sin(th2);
      const double det = a11 * a22 - a12 * a21;
      if (std::abs(det) < 1e-12)
        throw std::runtime_error("system_derivative: singular double-pendulum system");
      VectorXd dy(4);
      dy[0] = w1;
      dy[1] = w2;
      dy[2] = (r1 * a22 - a12 * r2) / det;
      dy[3] = (a11 * r2 - r1 * a21) / det;
      return dy;
    }
    case SystemKind::kMassSpring: {
      const int n = cfg.n_agents;
      require(cfg.coupling.rows() == n, "system_derivative: unresolved coupling");
      VectorXd dy(4 * n);
      dy.head(2 * n) = y.segment(2 * n, 2 * n);
      for (int i = 0; i < n; ++i) {
        double ax = 0.0, ay = 0.0;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const double k = cfg.coupling(i, j);
          ax -= k * (y[2 * i] - y[2 * j]);
          ay -= k * (y[2 * i + 1] - y[2 * j + 1]);
        }
        dy[2 * n + 2 * i] = ax;
        dy[2 * n + 2 * i + 1] = ay;
      }
      return dy;
    }
    case SystemKind::kKuramoto: {
      const int n = cfg.n_agents;
      require(cfg.coupling.rows() == n && cfg.frequencies.size() == n,
              "system_derivative: unresolved coupling/frequencies");
      VectorXd dy(n);
      for (int i = 0; i < n; ++i) {
        double s = cfg.frequencies[i];
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          s += cfg.coupling(i, j) * std::sin(y[i] - y[j]);
        }
        dy[i] = s;
      }
      return dy;
    }
  }
  throw std::invalid_argument("system_derivative: bad kind");
}

std::vector<VectorXd> coarsen(const std::vector<VectorXd>& frames, int factor) {
  require(factor > 0, "coarsen: factor must be positive");
  require(frames.size() % static_cast<std::size_t>(factor) == 0,
          "coarsen: factor must divide the frame count");
  std::vector<VectorXd> out;
  out.reserve(frames.size() / static_cast<std::size_t>(factor));
  for (std::size_t i = 0; i < frames.size(); i += static_cast<std::size_t>(factor))
    out.push_back(frames[i]);
  return out;
}

SimConfig resolve(const SimConfig& cfg) {
  cfg.validate();
  SimConfig out = cfg;
  const int n = cfg.agent_count();
  const bool coupled =
      cfg.kind == SystemKind::kMassSpring || cfg.kind == SystemKind::kKuramoto;
  if (coupled && out.coupling.size() == 0) {
    Rng rng(Rng::mix(cfg.seed, 0x636f7570));  // coupling stream
    out.coupling = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < cfg.coupling_probability)
          out.coupling(i, j) = out.coupling(j, i) = cfg.coupling_strength;
  }
  if (cfg.kind == SystemKind::kKuramoto && out.frequencies.size() == 0) {
    Rng rng(Rng::mix(cfg.seed, 0x66726571));  // frequency stream
    out.frequencies = VectorXd(n);
    for (int i = 0; i < n; ++i) out.frequencies[i] = rng.uniform(cfg.frequency_lo, cfg.frequency_hi);
  }
  return out;
}

namespace {

VectorXd sample_initial_state(const SimConfig& cfg, Rng& rng) {
  switch (cfg.kind) {
    case SystemKind::kPendulum: {
      VectorXd y(2);
      y[0] = rng.uniform(cfg.angle_lo, cfg.angle_hi);
      y[1] = 0.0;
      return y;
    }
    case SystemKind::kDoublePendulum: {
      VectorXd y(4);
      y[0] = rng.uniform(cfg.angle_lo, cfg.angle_hi);
      y[1] = rng.uniform(cfg.angle_lo, cfg.angle_hi);
      y[2] = 0.0;
      y[3] = 0.0;
      return y;
    }
    case SystemKind::kMassSpring: {
      VectorXd y(4 * cfg.n_agents);
      for (int i = 0; i < y.size(); ++i) y[i] = rng.normal(0.0, cfg.mass_spring_sigma);
      return y;
    }
    case SystemKind::kKuramoto: {
      VectorXd y(cfg.n_agents);
      for (int i = 0; i < y.size(); ++i) y[i] = rng.normal(0.0, cfg.phase_sigma);
      return y;
    }
  }
  throw std::invalid_argument("sample_initial_state: bad kind");
}

/// Generalized state -> stored [p, v] rows per agent.
MatrixXd to_stored_state(const SimConfig& cfg, const VectorXd& y) {
  switch (cfg.kind) {
    case SystemKind::kPendulum: {
      MatrixXd s(1, 4);
      const double th = y[0], w = y[1], l = cfg.length1;
      s << l * std::sin(th), -l * std::cos(th), l * std::cos(th) * w, l * std::sin(th) * w;
      return s;
    }
    case SystemKind::kDoublePendulum: {
      MatrixXd s(2, 4);
      const double th1 = y[0], th2 = y[1], w1 = y[2], w2 = y[3];
      const double l1 = cfg.length1, l2 = cfg.length2;
      const double x1 = l1 * std::sin(th1), y1 = -l1 * std::cos(th1);
      const double vx1 = l1 * std::cos(th1) * w1, vy1 = l1 * std::sin(th1) * w1;
      s.row(0) << x1, y1, vx1, vy1;
      s.row(1) << x1 + l2 * std::sin(th2), y1 - l2 * std::cos(th2),
          vx1 + l2 * std::cos(th2) * w2, vy1 + l2 * std::sin(th2) * w2;
      return s;
    }
    case SystemKind::kMassSpring: {
      const int n = cfg.n_agents;
      MatrixXd s(n, 4);
      for (int i = 0; i < n; ++i)
        s.row(i) << y[2 * i], y[2 * i + 1], y[2 * n + 2 * i], y[2 * n + 2 * i + 1];
      return s;
    }
    case SystemKind::kKuramoto: {
      const int n = cfg.n_agents;
      const VectorXd dy = system_derivative(cfg, y);
      MatrixXd s(n, 2);
      for (int i = 0; i < n; ++i) s.row(i) << y[i], dy[i];  // unwrapped phase, phase rate
      return s;
    }
  }
  throw std::invalid_argument("to_stored_state: bad kind");
}

}  // namespace

TrajectoryDataset generate_dataset(const SimConfig& raw_cfg, int n_traj, int* rejected) {
  const SimConfig cfg = resolve(raw_cfg);
  require(n_traj >= 0, "generate_dataset: negative trajectory count");

  TrajectoryDataset ds;
  ds.name = system_name(cfg.kind);
  ds.n_traj = n_traj;
  ds.n_frames = cfg.steps / cfg.coarsening;
  ds.n_agents = cfg.agent_count();
  ds.state_dim = cfg.state_dim();
  ds.dt = cfg.dt * cfg.coarsening;
  ds.data.assign(
      static_cast<std::size_t>(n_traj) * ds.n_frames * ds.n_agents * ds.state_dim, 0.0);

  int rejections = 0;
  for (int traj = 0; traj < n_traj; ++traj) {
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(traj),
                       static_cast<std::uint64_t>(attempt)));
      VectorXd y = sample_initial_state(cfg, rng);
      std::vector<VectorXd> frames;
      frames.reserve(static_cast<std::size_t>(cfg.steps));
      bool finite = true;
      for (int s = 0; s < cfg.steps && finite; ++s) {
        frames.push_back(y);
        try {
          y = rk4_step([&cfg](const VectorXd& v) { return system_derivative(cfg, v); }, y,
                       cfg.dt);
        } catch (const std::runtime_error&) {
          finite = false;
        }
        if (!y.allFinite()) finite = false;
      }
      if (!finite) {
        ++rejections;
        continue;
      }
      const std::vector<VectorXd> kept = coarsen(frames, cfg.coarsening);
      for (int f = 0; f < ds.n_frames; ++f)
        ds.set_frame(traj, f, to_stored_state(cfg, kept[static_cast<std::size_t>(f)]));
      accepted = true;
    }
    if (!accepted)
      throw std::runtime_error("generate_dataset: trajectory " + std::to_string(traj) +
                               " rejected 100 times");
  }
  if (rejected) *rejected = rejections;
  return ds;
}

// ---- CSV import --------------------------------------------------------------

TrajectoryDataset import_csv(const std::string& path, bool has_velocity, double dt) {
  require(dt > 0.0, "import_csv: dt must be positive");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_csv: cannot open " + path);

  const int ncols = has_velocity ? 7 : 5;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("import_csv: empty file");
  {
    const std::string expected =
        has_velocity ? "traj_id,t,agent_id,px,py,vx,vy" : "traj_id,t,agent_id,px,py";
    std::string header = line;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != expected)
      throw std::runtime_error("import_csv: bad header, expected '" + expected + "'");
  }

  struct Sample {
    double px, py, vx, vy;
  };
  // traj -> t -> agent -> sample
  std::map<long, std::map<double, std::map<long, Sample>>> rows;
  std::vector<long> traj_order;

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != ncols)
      throw std::runtime_error("import_csv: line " + std::to_string(line_no) + ": expected " +
                               std::to_string(ncols) + " columns, got " +
                               std::to_string(cells.size()));
    Sample s{0, 0, 0, 0};
    long traj, agent;
    double t;
    try {
      std::size_t pos = 0;
      traj = std::stol(cells[0], &pos);
      if (pos != cells[0].size()) throw std::invalid_argument("traj_id");
      t = std::stod(cells[1]);
      agent = std::stol(cells[2], &pos);
      if (pos != cells[2].size()) throw std::invalid_argument("agent_id");
      s.px = std::stod(cells[3]);
      s.py = std::stod(cells[4]);
      if (has_velocity) {
        s.vx = std::stod(cells[5]);
        s.vy = std::stod(cells[6]);
      }
    } catch (const std::exception&) {
      throw std::runtime_error("import_csv: line " + std::to_string(line_no) +
                               ": unparsable row");
    }
    if (rows.find(traj) == rows.end()) traj_order.push_back(traj);
    auto& frame = rows[traj][t];
    if (!frame.emplace(agent, s).second)
      throw std::runtime_error("import_csv: line " + std::to_string(line_no) +
                               ": duplicate agent at timestep");
  }
  if (rows.empty()) throw std::runtime_error("import_csv: no data rows");

  // All trajectories must share T and the agent set.
  const auto& first = rows[traj_order.front()];
  const std::size_t T = first.size();
  std::vector<long> agents;
  for (const auto& [aid, _] : first.begin()->second) agents.push_back(aid);
  for (long traj : traj_order) {
    const auto& frames = rows[traj];
    if (frames.size() != T)
      throw std::runtime_error("import_csv: trajectory " + std::to_string(traj) +
                               " has ragged length");
    for (const auto& [t, frame] : frames) {
      if (frame.size() != agents.size())
        throw std::runtime_error("import_csv: trajectory " + std::to_string(traj) +
                                 " is missing agents at t=" + std::to_string(t));
      for (long aid : agents)
        if (frame.find(aid) == frame.end())
          throw std::runtime_error("import_csv: trajectory " + std::to_string(traj) +
                                   " is missing agent " + std::to_string(aid) +
                                   " at t=" + std::to_string(t));
    }
  }

  TrajectoryDataset ds;
  ds.name = std::filesystem::path(path).stem().string();
  ds.n_traj = static_cast<int>(traj_order.size());
  ds.n_frames = static_cast<int>(T);
  ds.n_agents = static_cast<int>(agents.size());
  ds.state_dim = 4;
  ds.dt = dt;
  ds.data.assign(
      static_cast<std::size_t>(ds.n_traj) * ds.n_frames * ds.n_agents * ds.state_dim, 0.0);

  for (int ti = 0; ti < ds.n_traj; ++ti) {
    const auto& frames = rows[traj_order[static_cast<std::size_t>(ti)]];
    int f = 0;
    for (const auto& [t, frame] : frames) {
      for (int a = 0; a < ds.n_agents; ++a) {
        const Sample& s = frame.at(agents[static_cast<std::size_t>(a)]);
        ds.at(ti, f, a, 0) = s.px;
        ds.at(ti, f, a, 1) = s.py;
        if (has_velocity) {
          ds.at(ti, f, a, 2) = s.vx;
          ds.at(ti, f, a, 3) = s.vy;
        }
      }
      ++f;
    }
    if (!has_velocity) {
      for (int a = 0; a < ds.n_agents; ++a) {
        for (int fr = 0; fr + 1 < ds.n_frames; ++fr) {
          ds.at(ti, fr, a, 2) = (ds.at(ti, fr + 1, a, 0) - ds.at(ti, fr, a, 0)) / dt;
          ds.at(ti, fr, a, 3) = (ds.at(ti, fr + 1, a, 1) - ds.at(ti, fr, a, 1)) / dt;
        }
        if (ds.n_frames >= 2) {
          ds.at(ti, ds.n_frames - 1, a, 2) = ds.at(ti, ds.n_frames - 2, a, 2);
          ds.at(ti, ds.n_frames - 1, a, 3) = ds.at(ti, ds.n_frames - 2, a, 3);
        }
      }
    }
  }
  ds.validate();
  return ds;
}

// ---- persistence --------------------------------------------------------------

void save_dataset(const TrajectoryDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json meta;
  meta["format_version"] = 1;
  meta["name"] = ds.name;
  meta["n_traj"] = ds.n_traj;
  meta["T"] = ds.n_frames;
  meta["n_agents"] = ds.n_agents;
  meta["state_dim"] = ds.state_dim;
  meta["dt"] = ds.dt;
  {
    std::ofstream out(fs::path(dir) / "meta.json");
    if (!out) throw std::runtime_error("save_dataset: cannot write meta.json in " + dir);
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "data.f32", std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot write data.f32 in " + dir);
    std::vector<float> buf(ds.data.size());
    for (std::size_t i = 0; i < ds.data.size(); ++i) buf[i] = static_cast<float>(ds.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

TrajectoryDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream meta_in(fs::path(dir) / "meta.json");
  if (!meta_in) throw std::runtime_error("load_dataset: cannot open meta.json in " + dir);
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  if (meta.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_dataset: unsupported format_version " +
                             meta.at("format_version").dump());

  TrajectoryDataset ds;
  ds.name = meta.at("name").get<std::string>();
  ds.n_traj = meta.at("n_traj").get<int>();
  ds.n_frames = meta.at("T").get<int>();
  ds.n_agents = meta.at("n_agents").get<int>();
  ds.state_dim = meta.at("state_dim").get<int>();
  ds.dt = meta.at("dt").get<double>();

  const std::size_t count =
      static_cast<std::size_t>(ds.n_traj) * ds.n_frames * ds.n_agents * ds.state_dim;
  std::ifstream in(fs::path(dir) / "data.f32", std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("load_dataset: cannot open data.f32 in " + dir);
  const std::size_t bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(float))
    throw std::runtime_error("load_dataset: data.f32 has " + std::to_string(bytes) +
                             " bytes, expected " + std::to_string(count * sizeof(float)));
  in.seekg(0);
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("load_dataset: truncated read from data.f32");
  ds.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) ds.data[i] = static_cast<double>(buf[i]);
  if (ds.n_traj > 0) ds.validate();
  return ds;
}

// ---- conserved quantities ------------------------------------------------------

double pendulum_energy(const SimConfig& cfg, const VectorXd& y) {
  const double l = cfg.length1;
  return 0.5 * l * l * y[1] * y[1] - cfg.gravity * l * std::cos(y[0]);
}

double double_pendulum_energy(const SimConfig& cfg, const VectorXd& y) {
  const double th1 = y[0], th2 = y[1], w1 = y[2], w2 = y[3];
  const double m1 = cfg.mass1, m2 = cfg.mass2, l1 = cfg.length1, l2 = cfg.length2;
  const double kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1 + 0.5 * m2 * l2 * l2 * w2 * w2 +
                         m2 * l1 * l2 * w1 * w2 * std::cos(th1 - th2);
  const double potential =
      -(m1 + m2) * cfg.gravity * l1 * std::cos(th1) - m2 * cfg.gravity * l2 * std::cos(th2);
  return kinetic + potential;
}

double mass_spring_energy(const SimConfig& cfg, const VectorXd& y) {
  const int n = cfg.n_agents;
  double e = 0.5 * y.segment(2 * n, 2 * n).squaredNorm();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      e += 0.5 * cfg.coupling(i, j) * (dx * dx + dy * dy);
    }
  return e;
}

Eigen::Vector2d mass_spring_momentum(const SimConfig& cfg, const VectorXd& y) {
  const int n = cfg.n_agents;
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    p[0] += y[2 * n + 2 * i];
    p[1] += y[2 * n + 2 * i + 1];
  }
  return p;
}

}  // namespace binn::sims
