// Configuration parsing/resolution and the command-line binary contract:
// run-directory layout, override precedence, exit codes, deterministic
// reruns, and the metrics CSV.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cdrl/config.hpp"
#include "cdrl/errors.hpp"

namespace fs = std::filesystem;

namespace {

using Entries = std::vector<std::pair<std::string, std::string>>;

fs::path temp_dir(const std::string& stem) {
  const fs::path dir = fs::temp_directory_path() / ("cdrl_cli_" + stem);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

// Runs the built binary through the shell; returns its exit code.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(CDRL_BIN) + " " + args + " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// Same, but captures stdout into `out`.
int run_cli_capture(const std::string& args, const fs::path& scratch, std::string* out) {
  const fs::path cap = scratch / "stdout.txt";
  const std::string cmd =
      std::string(CDRL_BIN) + " " + args + " >" + cap.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  *out = slurp(cap);
  return WEXITSTATUS(status);
}

std::set<std::string> dir_entries(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    names.insert(e.path().filename().string());
  }
  return names;
}

}  // namespace

TEST_CASE("config text parses into ordered entries") {
  const Entries entries = cdrl::parse_config_lines(
      "# comment line\n"
      "env = monster_treasure\n"
      "\n"
      "  total_steps =   50   # trailing comment\n"
      "lr=6.25e-5\n");
  REQUIRE(entries.size() == 3);
  CHECK(entries[0] == std::pair<std::string, std::string>("env", "monster_treasure"));
  CHECK(entries[1] == std::pair<std::string, std::string>("total_steps", "50"));
  CHECK(entries[2] == std::pair<std::string, std::string>("lr", "6.25e-5"));

  CHECK_THROWS_AS(cdrl::parse_config_lines("lr\n"), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::parse_config_lines("= 3\n"), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::parse_config_lines("lr =\n"), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::parse_config_lines("lr = 1\nlr = 2\n"), cdrl::ConfigError);
}

TEST_CASE("config values are validated") {
  CHECK_THROWS_AS(cdrl::resolve_config({{"nonsense", "1"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"env", "cartpole"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"method", "dqn"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"total_steps", "ten"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"total_steps", "10x"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"gamma", "1.5"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"seeds", "1,,2"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"seeds", "1,1"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"seeds", "-3"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"distractor_dims", "-1"}}), cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"env", "pixel_grid"}, {"distractor_dims", "2"}}),
                  cdrl::ConfigError);
  CHECK_THROWS_AS(cdrl::resolve_config({{"eps_log", "0"}}), cdrl::ConfigError);
}

TEST_CASE("environment profiles apply before explicit keys, wherever env appears") {
  const cdrl::RunConfig defaults = cdrl::resolve_config({});
  CHECK(defaults.env_id() == "monster_treasure");
  CHECK(defaults.train.learning_start == 1000);
  CHECK(defaults.train.n2 == 16);
  CHECK(defaults.train.k == 2);

  const cdrl::RunConfig pixel = cdrl::resolve_config({{"env", "pixel_grid"}});
  CHECK(pixel.train.learning_start == 5000);
  CHECK(pixel.train.n1 == 20);
  CHECK(pixel.train.n2 == 100);
  CHECK(pixel.train.n3 == 20);
  CHECK(pixel.train.n4 == 20);

  // The explicit learning_start wins even though the env key comes later in
  // the file.
  const cdrl::RunConfig mixed =
      cdrl::resolve_config({{"learning_start", "7"}, {"env", "pixel_grid"}});
  CHECK(mixed.train.learning_start == 7);
  CHECK(mixed.train.n1 == 20);

  // Later entries beat earlier ones, which is how command-line overrides
  // (appended after the file) win.
  const cdrl::RunConfig overridden =
      cdrl::resolve_config({{"total_steps", "50"}, {"total_steps", "0"}});
  CHECK(overridden.train.total_steps == 0);

  const cdrl::RunConfig seeds = cdrl::resolve_config({{"seeds", "3,1,2"}});
  REQUIRE(seeds.seeds == std::vector<std::uint64_t>{3, 1, 2});
}

TEST_CASE("config snapshots reload to the same configuration byte for byte") {
  const fs::path dir = temp_dir("snapshot");
  cdrl::RunConfig rc = cdrl::resolve_config({{"env", "monster_treasure"},
                                             {"method", "r_mask"},
                                             {"total_steps", "12345"},
                                             {"lr", "6.25e-5"},
                                             {"w_sparse", "0.1"},
                                             {"eps_fraction", "0.2"},
                                             {"distractor_dims", "3"},
                                             {"hidden", "48"}});
  rc.train.seed = 9;
  const fs::path snap = dir / "config.cfg";
  cdrl::write_config_snapshot(rc, 9, snap.string());

  const cdrl::RunConfig back = cdrl::resolve_config(cdrl::load_config_file(snap.string()));
  CHECK(back.method == "r_mask");
  CHECK(back.seeds == std::vector<std::uint64_t>{9});
  CHECK(back.distractor_dims == 3);
  CHECK(back.train.total_steps == 12345);
  CHECK(back.train.lr == rc.train.lr);
  CHECK(back.train.w_sparse == rc.train.w_sparse);
  CHECK(back.train.eps_fraction == rc.train.eps_fraction);
  CHECK(back.train.hidden == 48);

  const fs::path snap2 = dir / "config2.cfg";
  cdrl::write_config_snapshot(back, 9, snap2.string());
  CHECK(slurp(snap) == slurp(snap2));
}

TEST_CASE("train writes exactly the three run files") {
  const fs::path dir = temp_dir("train_layout");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --out " +
                  run.string()) == 0);
  CHECK(dir_entries(run) ==
        std::set<std::string>{"checkpoint.bin", "config.cfg", "train_log.csv"});
  CHECK(slurp(run / "train_log.csv") ==
        "step,episode_return,loss_interv,loss_reward,loss_sparse,loss_orth,td_loss,epsilon\n");

  const std::string snapshot = slurp(run / "config.cfg");
  CHECK(snapshot.find("method = rd\n") != std::string::npos);
  CHECK(snapshot.find("total_steps = 0\n") != std::string::npos);
  CHECK(snapshot.find("out =") == std::string::npos);
}

TEST_CASE("multi-seed runs get one complete directory per seed") {
  const fs::path dir = temp_dir("train_multi");
  const fs::path run = dir / "sweep";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --seeds 5,6 --out " +
                  run.string()) == 0);
  CHECK(dir_entries(run) == std::set<std::string>{"seed5", "seed6"});
  for (const char* sub : {"seed5", "seed6"}) {
    CHECK(dir_entries(run / sub) ==
          std::set<std::string>{"checkpoint.bin", "config.cfg", "train_log.csv"});
  }
  CHECK(slurp(run / "seed5" / "config.cfg").find("seeds = 5\n") != std::string::npos);
  CHECK(slurp(run / "seed6" / "config.cfg").find("seeds = 6\n") != std::string::npos);

  const fs::path forked = dir / "forked";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --seeds 5,6 "
                  "--fork-per-seed --out " +
                  forked.string()) == 0);
  CHECK(slurp(forked / "seed5" / "checkpoint.bin") == slurp(run / "seed5" / "checkpoint.bin"));
  CHECK(slurp(forked / "seed6" / "checkpoint.bin") == slurp(run / "seed6" / "checkpoint.bin"));
}

TEST_CASE("command-line overrides beat the config file") {
  const fs::path dir = temp_dir("override");
  spit(dir / "base.cfg",
       "env = monster_treasure\n"
       "method = rd\n"
       "total_steps = 50\n"
       "seeds = 2\n");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --config " + (dir / "base.cfg").string() +
                  " --total-steps 0 --out " + run.string()) == 0);
  const std::string snapshot = slurp(run / "config.cfg");
  CHECK(snapshot.find("total_steps = 0\n") != std::string::npos);
  CHECK(snapshot.find("seeds = 2\n") != std::string::npos);
}

TEST_CASE("identical config and seed give byte-identical runs") {
  const fs::path dir = temp_dir("determinism");
  // learning_start is lowered so the run exercises every update path (the
  // profile default would leave a short run purely exploratory).
  for (const char* method : {"q_mask", "r_mask"}) {
    spit(dir / "det.cfg", std::string() +
                              "env = monster_treasure\n"
                              "method = " + method + "\n"
                              "total_steps = 800\n"
                              "learning_start = 100\n"
                              "seeds = 11\n");
    const std::string common = "train --config " + (dir / "det.cfg").string() + " --out ";
    REQUIRE(run_cli(common + (dir / "a").string()) == 0);
    REQUIRE(run_cli(common + (dir / "b").string()) == 0);
    const std::string log = slurp(dir / "a" / "train_log.csv");
    CHECK(log == slurp(dir / "b" / "train_log.csv"));
    // The last episode row must carry a real TD loss: updates actually ran.
    std::vector<std::string> lines;
    {
      std::istringstream in(log);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
      }
    }
    REQUIRE(lines.size() >= 3);
    std::vector<std::string> fields;
    {
      std::istringstream in(lines.back());
      std::string f;
      while (std::getline(in, f, ',')) fields.push_back(f);
    }
    REQUIRE(fields.size() == 8);
    CHECK(fields[6] != "nan");
    CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
    CHECK(slurp(dir / "a" / "config.cfg") == slurp(dir / "b" / "config.cfg"));
    fs::remove_all(dir / "a");
    fs::remove_all(dir / "b");
  }
}

TEST_CASE("bad arguments and missing inputs map to exit code 2") {
  CHECK(run_cli("") == 2);                       // no subcommand
  CHECK(run_cli("bogus") == 2);                  // unknown subcommand
  CHECK(run_cli("train --nonsense 3") == 2);     // unknown flag
  CHECK(run_cli("eval --episodes 3") == 2);      // --config is required
  CHECK(run_cli("train --config /nonexistent/none.cfg") == 2);
  CHECK(run_cli("train --method dqn --total-steps 0") == 2);
  CHECK(run_cli("train --env cartpole --total-steps 0") == 2);

  const fs::path dir = temp_dir("badkey");
  spit(dir / "bad.cfg", "env = monster_treasure\nnonsense = 1\n");
  CHECK(run_cli("train --config " + (dir / "bad.cfg").string()) == 2);
}

TEST_CASE("missing or corrupt checkpoints map to exit code 3") {
  const fs::path dir = temp_dir("ckpt_codes");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --out " +
                  run.string()) == 0);

  const std::string cfg = (run / "config.cfg").string();
  fs::remove(run / "checkpoint.bin");
  CHECK(run_cli("eval --config " + cfg) == 3);
  CHECK(run_cli("metrics --config " + cfg) == 3);
  CHECK(run_cli("explain --config " + cfg) == 3);

  spit(run / "checkpoint.bin", "not a checkpoint at all");
  CHECK(run_cli("eval --config " + cfg) == 3);
}

TEST_CASE("eval prints the greedy mean return") {
  const fs::path dir = temp_dir("eval_out");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --out " +
                  run.string()) == 0);
  std::string out;
  REQUIRE(run_cli_capture("eval --config " + (run / "config.cfg").string() + " --episodes 7",
                          dir, &out) == 0);
  CHECK(out.rfind("mean_return = ", 0) == 0);
  CHECK(out.find("over 7 episodes") != std::string::npos);
}

TEST_CASE("metrics on a maskless bundle reports NoMasks rows") {
  const fs::path dir = temp_dir("metrics_nomasks");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --method rd --env monster_treasure --total-steps 0 --out " +
                  run.string()) == 0);
  REQUIRE(run_cli("metrics --config " + (run / "config.cfg").string() + " --episodes 2") == 0);

  const std::string csv = slurp(run / "metrics.csv");
  std::istringstream lines(csv);
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "metric,value,n_states,seed");
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("fidelity,NoMasks,", 0) == 0);
  CHECK(rows[1].rfind("sparsity,NoMasks,", 0) == 0);
  CHECK(rows[2].rfind("orthogonality,NoMasks,", 0) == 0);
  CHECK(rows[3].rfind("mask_score,NoMasks,", 0) == 0);
}

TEST_CASE("explain exports records for a trained run directory") {
  const fs::path dir = temp_dir("explain_cli");
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --method q_mask --env monster_treasure --total-steps 200 --out " +
                  run.string()) == 0);
  REQUIRE(run_cli("explain --config " + (run / "config.cfg").string() + " --episodes 1") == 0);

  const fs::path exp = run / "explanations";
  REQUIRE(fs::exists(exp / "index.csv"));
  int records = 0, pgms = 0;
  for (const auto& e : fs::directory_iterator(exp)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 7 && name.substr(name.size() - 7) == ".record") ++records;
    if (name.size() > 4 && name.substr(name.size() - 4) == ".pgm") ++pgms;
  }
  CHECK(records >= 1);
  CHECK(pgms == 2 * records);  // one mask image per component
}
