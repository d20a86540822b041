// End-to-end checks of the command-line tool: subcommand contracts, exit
// codes, manifest emission, and file-format round-trips through the binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "binn/model.hpp"
#include "binn/sims.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef BINN_CLI_EXE
#error "BINN_CLI_EXE must point at the binn binary"
#endif

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string out_file = "/tmp/binn_cli_out.txt";
  const std::string cmd = std::string(BINN_CLI_EXE) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kRoot = "/tmp/binn_cli_test";

}  // namespace

TEST_CASE("unknown flags exit with usage error") {
  CHECK(run_cli("generate --system pendulum --frobnicate").exit_code == 1);
  CHECK(run_cli("nonsense").exit_code != 0);
  CHECK(run_cli("generate --system not_a_system --out /tmp/x").exit_code == 1);
}

TEST_CASE("generate, train, eval, rollout, analyze pipeline") {
  fs::remove_all(kRoot);
  const std::string data = kRoot + "/data";
  const std::string run = kRoot + "/run";

  auto gen = run_cli("generate --system pendulum --out " + data +
                     " --n-train 24 --n-val 8 --n-test 8 --seed 5");
  REQUIRE(gen.exit_code == 0);
  CHECK(fs::exists(data + "/train/meta.json"));
  CHECK(fs::exists(data + "/test/data.f32"));
  CHECK(fs::exists(data + "/manifest.json"));
  {
    const auto meta = nlohmann::json::parse(slurp(data + "/train/meta.json"));
    CHECK(meta.at("T") == 50);
    CHECK(meta.at("n_traj") == 24);
    const auto manifest = nlohmann::json::parse(slurp(data + "/manifest.json"));
    CHECK(manifest.at("command") == "generate");
    CHECK(manifest.at("seed") == 5);
    CHECK(manifest.contains("tool_version"));
    CHECK(manifest.contains("duration_seconds"));
  }

  auto train = run_cli("train --data " + data + " --out " + run +
                       " --epochs 2 --batch-size 8 --hidden-dim 8 --seed 3");
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(run + "/best.ckpt"));
  CHECK(fs::exists(run + "/metrics.csv"));
  CHECK(fs::exists(run + "/manifest.json"));
  {
    std::ifstream metrics(run + "/metrics.csv");
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "epoch,lr,train_pred,train_recon,train_latent,train_total,val_pred");
  }

  auto eval = run_cli("eval --data " + data + " --ckpt " + run + "/best.ckpt");
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.output.find("test_mse=") != std::string::npos);

  auto rollout =
      run_cli("rollout --data " + data + " --ckpt " + run + "/best.ckpt --out " + kRoot +
              "/roll --traj 1");
  REQUIRE(rollout.exit_code == 0);
  CHECK(fs::exists(kRoot + "/roll/rollout.csv"));
  CHECK(fs::exists(kRoot + "/roll/rollout.svg"));

  auto analyze = run_cli("analyze --data " + data + " --ckpt " + run + "/best.ckpt --out " +
                         kRoot + "/ana --max-traj 2 --resolution 31");
  REQUIRE(analyze.exit_code == 0);
  CHECK(fs::exists(kRoot + "/ana/traces.csv"));
  CHECK(fs::exists(kRoot + "/ana/dynamics.json"));
  CHECK(fs::exists(kRoot + "/ana/exclusivity.json"));
  CHECK(fs::exists(kRoot + "/ana/bifurcation.csv"));
  CHECK(fs::exists(kRoot + "/ana/bifurcation.svg"));

  SUBCASE("shape-incompatible checkpoint is a validation error") {
    const std::string data2 = kRoot + "/data2";
    REQUIRE(run_cli("generate --system kuramoto --out " + data2 +
                    " --n-train 4 --n-val 2 --n-test 2 --seed 5")
               .exit_code == 0);
    CHECK(run_cli("analyze --data " + data2 + " --ckpt " + run + "/best.ckpt --out " + kRoot +
                  "/bad")
              .exit_code == 1);
  }
}

TEST_CASE("analysis of an untrained zero-decoder model reports a degenerate trace") {
  fs::remove_all(kRoot + "/degen");
  const std::string data = kRoot + "/degen/data";
  REQUIRE(run_cli("generate --system pendulum --out " + data +
                  " --n-train 4 --n-val 2 --n-test 2 --seed 9")
             .exit_code == 0);
  // an all-zero model encodes every frame to exactly zero
  binn::model::BinnModel m = binn::model::BinnModel::init(
      1, 4, 2, 8, binn::ad::Activation::kRelu, binn::model::CommVariant::kSquaredDistance, 0.1, 0);
  for (auto& [name, t] : m.parameters())
    for (binn::ad::Index i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
  binn::model::save_checkpoint(m, kRoot + "/degen/zero.ckpt");

  auto analyze = run_cli("analyze --data " + data + " --ckpt " + kRoot +
                         "/degen/zero.ckpt --out " + kRoot + "/degen/out --resolution 31");
  REQUIRE(analyze.exit_code == 0);
  const auto ex = nlohmann::json::parse(slurp(kRoot + "/degen/out/exclusivity.json"));
  REQUIRE(ex.contains("error"));
  CHECK(ex.at("error").get<std::string>().find("degenerate") != std::string::npos);
}

TEST_CASE("bifurcation subcommand emits the documented CSV") {
  fs::remove_all(kRoot + "/bif");
  auto r = run_cli("bifurcation --kind pitchfork --sweep u --lo -1 --hi 1 --resolution 21 --out " +
                   kRoot + "/bif");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("critical_value=") != std::string::npos);
  std::ifstream csv(kRoot + "/bif/sweep.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "sweep_value,equilibrium,stable");
  CHECK(fs::exists(kRoot + "/bif/sweep.svg"));
}

TEST_CASE("import-csv round-trips through the tool's own loader") {
  fs::remove_all(kRoot + "/imp");
  fs::create_directories(kRoot + "/imp");
  const std::string csv = kRoot + "/imp/input.csv";
  {
    std::ofstream f(csv);
    f << "traj_id,t,agent_id,px,py\n";
    for (int traj = 0; traj < 5; ++traj)
      for (int t = 0; t < 19; ++t)
        for (int a = 0; a < 5; ++a)
          f << traj << "," << t << "," << a << "," << (0.1 * traj + 0.3 * t) << ","
            << (0.2 * a - 0.05 * t) << "\n";
  }
  auto r = run_cli("import-csv --csv " + csv + " --out " + kRoot + "/imp/ds --dt 1.0" +
                   " --train-frac 0.6 --val-frac 0.2 --seed 1");
  REQUIRE(r.exit_code == 0);
  const auto train = binn::sims::load_dataset(kRoot + "/imp/ds/train");
  CHECK(train.n_traj == 3);
  CHECK(train.n_frames == 19);
  CHECK(train.n_agents == 5);
  CHECK(train.state_dim == 4);
  const auto test = binn::sims::load_dataset(kRoot + "/imp/ds/test");
  CHECK(test.n_traj == 1);
}

TEST_CASE("fixed seeds make the pipeline idempotent") {
  const std::string a = kRoot + "/idem_a", b = kRoot + "/idem_b";
  fs::remove_all(a);
  fs::remove_all(b);
  for (const std::string& root : {a, b}) {
    REQUIRE(run_cli("generate --system pendulum --out " + root +
                    "/data --n-train 10 --n-val 4 --n-test 4 --seed 21")
               .exit_code == 0);
    REQUIRE(run_cli("train --data " + root + "/data --out " + root +
                    "/run --epochs 2 --batch-size 4 --hidden-dim 8 --seed 2")
               .exit_code == 0);
  }
  CHECK(slurp(a + "/data/train/data.f32") == slurp(b + "/data/train/data.f32"));
  CHECK(slurp(a + "/run/best.ckpt") == slurp(b + "/run/best.ckpt"));
  CHECK(slurp(a + "/run/metrics.csv") == slurp(b + "/run/metrics.csv"));

  // manifests agree except for the wall-clock field
  auto ma = nlohmann::json::parse(slurp(a + "/run/manifest.json"));
  auto mb = nlohmann::json::parse(slurp(b + "/run/manifest.json"));
  ma.erase("duration_seconds");
  mb.erase("duration_seconds");
  ma.erase("inputs");
  mb.erase("inputs");  // paths differ by design in this test
  ma.erase("outputs");
  mb.erase("outputs");
  CHECK(ma == mb);
}
