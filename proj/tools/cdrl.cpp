// Command-line interface: reproducible training runs, plus evaluation,
// metric reports, explanation export and gradient checking over them.
//
// A run directory is self-describing and contains exactly three files: the
// resolved configuration snapshot (config.cfg), the weight checkpoint
// (checkpoint.bin) and the per-episode training log (train_log.csv).  The
// read-side subcommands take --config pointing at a snapshot and find the
// checkpoint next to it.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad arguments or configuration,
// 3 missing or corrupt checkpoint.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "cdrl/bundle.hpp"
#include "cdrl/config.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/explain.hpp"
#include "cdrl/gradcheck_suite.hpp"
#include "cdrl/metrics.hpp"
#include "cdrl/monster_treasure.hpp"
#include "cdrl/pixel_grid.hpp"
#include "cdrl/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

// CDRL_DETERMINISTIC=1 is the default and the only behaviour: execution is
// single-threaded with a fixed summation order.  Setting 0 therefore changes
// nothing; say so instead of silently accepting it.
void note_determinism_env() {
  const char* v = std::getenv("CDRL_DETERMINISTIC");
  if (v != nullptr && std::string(v) == "0") {
    std::fprintf(stderr,
                 "note: CDRL_DETERMINISTIC=0 has no effect; execution is "
                 "single-threaded with a fixed summation order either way\n");
  }
}

// Builds the environment and an untrained bundle for the resolved config and
// hands both to `fn`, which returns the process exit code.
template <typename Fn>
int with_bundle_env(const cdrl::RunConfig& rc, Fn&& fn) {
  cdrl::Rng rng = cdrl::make_rng(rc.train.seed, "bundle_init");
  const cdrl::Method method = cdrl::method_from_name(rc.method);
  if (rc.env_id() == "monster_treasure") {
    cdrl::MonsterTreasure::Config ec;
    ec.distractor_dims = rc.distractor_dims;
    cdrl::MonsterTreasure env(ec);
    cdrl::VectorBundle<float> bundle(method, env.obs_dim(), env.action_count(), env.k(), rng,
                                     rc.train.hidden);
    return fn(bundle, env);
  }
  if (rc.env_id() == "pixel_grid") {
    cdrl::PixelGrid env;
    cdrl::PixelBundle<float> bundle(method, env.action_count(), env.k(), rng, rc.train.hidden);
    return fn(bundle, env);
  }
  throw cdrl::ConfigError("unknown environment '" + rc.env_id() + "'");
}

using Entries = std::vector<std::pair<std::string, std::string>>;

// File entries (if a config file was given) with command-line overrides
// appended, so the overrides win during resolution.
cdrl::RunConfig resolve_from(const std::string& config_path, const Entries& overrides) {
  Entries entries;
  if (!config_path.empty()) entries = cdrl::load_config_file(config_path);
  for (const auto& kv : overrides) entries.push_back(kv);
  return cdrl::resolve_config(entries);
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  Entries overrides;
  bool fork_per_seed = false;
};

void run_one_seed(const cdrl::RunConfig& rc, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  cdrl::RunConfig local = rc;
  local.train.seed = seed;
  cdrl::write_config_snapshot(local, seed, (dir / "config.cfg").string());
  with_bundle_env(local, [&](auto& bundle, auto& env) {
    cdrl::train_bundle(bundle, env, local.train, (dir / "train_log.csv").string());
    cdrl::save_bundle(bundle, (dir / "checkpoint.bin").string());
    return kExitOk;
  });
  std::printf("seed %llu: run written to %s\n", static_cast<unsigned long long>(seed),
              dir.string().c_str());
}

int cmd_train(const TrainArgs& a) {
  cdrl::RunConfig rc;
  try {
    rc = resolve_from(a.config_path, a.overrides);
  } catch (const cdrl::Error& e) {
    std::fprintf(stderr, "cdrl train: %s\n", e.what());
    return kExitConfig;
  }
  try {
    std::vector<std::pair<std::uint64_t, fs::path>> jobs;
    for (std::uint64_t s : rc.seeds) {
      jobs.emplace_back(s, rc.seeds.size() == 1
                               ? fs::path(rc.out_dir)
                               : fs::path(rc.out_dir) / ("seed" + std::to_string(s)));
    }
    if (a.fork_per_seed && jobs.size() > 1) {
      std::vector<pid_t> pids;
      for (const auto& job : jobs) {
        const pid_t pid = fork();
        if (pid < 0) throw cdrl::IoError("fork failed");
        if (pid == 0) {
          try {
            run_one_seed(rc, job.first, job.second);
            std::fflush(stdout);
            _exit(kExitOk);
          } catch (const std::exception& e) {
            std::fprintf(stderr, "cdrl train (seed %llu): %s\n",
                         static_cast<unsigned long long>(job.first), e.what());
            _exit(kExitRuntime);
          }
        }
        pids.push_back(pid);
      }
      int worst = kExitOk;
      for (pid_t pid : pids) {
        int status = 0;
        if (waitpid(pid, &status, 0) < 0 || !WIFEXITED(status) ||
            WEXITSTATUS(status) != kExitOk) {
          worst = kExitRuntime;
        }
      }
      return worst;
    }
    for (const auto& job : jobs) run_one_seed(rc, job.first, job.second);
    return kExitOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdrl train: %s\n", e.what());
    return kExitRuntime;
  }
}

// ---- shared read-side plumbing -------------------------------------------

struct LoadedRun {
  cdrl::RunConfig rc;
  fs::path run_dir;
  std::string checkpoint;
};

// Loads and resolves a run snapshot; the checkpoint is expected next to it.
LoadedRun load_run(const std::string& config_path) {
  LoadedRun run;
  run.rc = resolve_from(config_path, {});
  run.rc.train.seed = run.rc.seeds.front();
  run.run_dir = fs::path(config_path).parent_path();
  run.checkpoint = (run.run_dir / "checkpoint.bin").string();
  return run;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string config_path;
  int episodes = 100;
  long long seed_override = -1;  // < 0: use the run's own seed
};

int cmd_eval(const EvalArgs& a) {
  LoadedRun run;
  try {
    run = load_run(a.config_path);
  } catch (const cdrl::Error& e) {
    std::fprintf(stderr, "cdrl eval: %s\n", e.what());
    return kExitConfig;
  }
  try {
    return with_bundle_env(run.rc, [&](auto& bundle, auto& env) {
      try {
        cdrl::load_bundle(bundle, run.checkpoint);
      } catch (const cdrl::Error& e) {
        std::fprintf(stderr, "cdrl eval: %s\n", e.what());
        return kExitCheckpoint;
      }
      const std::uint64_t seed = a.seed_override >= 0
                                     ? static_cast<std::uint64_t>(a.seed_override)
                                     : run.rc.train.seed;
      const double mean = cdrl::evaluate_return(bundle, env, a.episodes, seed);
      std::printf("mean_return = %.9g over %d episodes\n", mean, a.episodes);
      return kExitOk;
    });
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdrl eval: %s\n", e.what());
    return kExitRuntime;
  }
}

// ---- metrics -------------------------------------------------------------

struct MetricsArgs {
  std::string config_path;
  std::string out_path;  // default: metrics.csv next to the snapshot
  int episodes = cdrl::kEvalEpisodes;
};

int cmd_metrics(const MetricsArgs& a) {
  LoadedRun run;
  try {
    run = load_run(a.config_path);
  } catch (const cdrl::Error& e) {
    std::fprintf(stderr, "cdrl metrics: %s\n", e.what());
    return kExitConfig;
  }
  try {
    return with_bundle_env(run.rc, [&](auto& bundle, auto& env) {
      try {
        cdrl::load_bundle(bundle, run.checkpoint);
      } catch (const cdrl::Error& e) {
        std::fprintf(stderr, "cdrl metrics: %s\n", e.what());
        return kExitCheckpoint;
      }
      const auto states = cdrl::collect_eval_states(bundle, env, a.episodes,
                                                    cdrl::kEvalStateCap, run.rc.train.seed);
      auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
      };
      std::vector<std::pair<std::string, std::string>> rows;
      // A metric that cannot exist for this bundle/environment reports a
      // status code in the value column instead of a number.
      auto add = [&](const char* name, auto compute) {
        try {
          rows.emplace_back(name, fmt(compute()));
        } catch (const cdrl::NoMasks&) {
          rows.emplace_back(name, "NoMasks");
        } catch (const cdrl::NotAvailable&) {
          rows.emplace_back(name, "NoIdealMasks");
        }
      };
      add("fidelity", [&] { return cdrl::fidelity_metric(bundle, env, states); });
      add("sparsity", [&] { return cdrl::sparsity_metric(bundle, env, states); });
      add("orthogonality", [&] { return cdrl::orthogonality_metric(bundle, env, states); });
      add("mask_score", [&]() -> double {
        using EnvT = std::decay_t<decltype(env)>;
        if constexpr (std::is_same_v<EnvT, cdrl::MonsterTreasure>) {
          return cdrl::mask_score_metric(bundle, env, states, env.ideal_masks());
        } else {
          throw cdrl::NotAvailable("this environment defines no ideal masks");
        }
      });

      const std::string out =
          a.out_path.empty() ? (run.run_dir / "metrics.csv").string() : a.out_path;
      std::FILE* f = std::fopen(out.c_str(), "wb");
      if (!f) throw cdrl::IoError("cannot open '" + out + "' for writing");
      std::fprintf(f, "metric,value,n_states,seed\n");
      for (const auto& row : rows) {
        std::fprintf(f, "%s,%s,%zu,%llu\n", row.first.c_str(), row.second.c_str(),
                     states.size(), static_cast<unsigned long long>(run.rc.train.seed));
        std::printf("%s = %s\n", row.first.c_str(), row.second.c_str());
      }
      std::fclose(f);
      std::printf("metrics written to %s\n", out.c_str());
      return kExitOk;
    });
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdrl metrics: %s\n", e.what());
    return kExitRuntime;
  }
}

// ---- explain -------------------------------------------------------------

struct ExplainArgs {
  std::string config_path;
  std::string out_dir;  // default: explanations/ next to the snapshot
  int episodes = 4;
  bool only_critical = false;
};

int cmd_explain(const ExplainArgs& a) {
  LoadedRun run;
  try {
    run = load_run(a.config_path);
  } catch (const cdrl::Error& e) {
    std::fprintf(stderr, "cdrl explain: %s\n", e.what());
    return kExitConfig;
  }
  try {
    return with_bundle_env(run.rc, [&](auto& bundle, auto& env) {
      try {
        cdrl::load_bundle(bundle, run.checkpoint);
      } catch (const cdrl::Error& e) {
        std::fprintf(stderr, "cdrl explain: %s\n", e.what());
        return kExitCheckpoint;
      }
      cdrl::ExportOptions opt;
      opt.episodes = a.episodes;
      opt.only_critical = a.only_critical;
      opt.seed = run.rc.train.seed;
      const std::string out =
          a.out_dir.empty() ? (run.run_dir / "explanations").string() : a.out_dir;
      const cdrl::ExportSummary summary = cdrl::export_explanations(bundle, env, out, opt);
      std::printf("wrote %d records over %d episodes; index at %s\n", summary.records,
                  summary.episodes, summary.index_path.c_str());
      return kExitOk;
    });
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdrl explain: %s\n", e.what());
    return kExitRuntime;
  }
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  try {
    const cdrl::GradSuiteResult result = cdrl::run_gradcheck_suite(20, 1e-4, a.seed);
    for (const cdrl::GradSuiteCase& c : result.cases) {
      std::printf("%-28s %s  max_rel_err=%.3g  checked=%d  skipped_nonsmooth=%d\n",
                  c.name.c_str(), c.pass ? "PASS" : "FAIL", c.report.max_rel_err,
                  c.report.checked, c.report.skipped_nonsmooth);
    }
    std::printf("gradcheck: %zu/%zu cases passed (tolerance %.1e, %d draws)\n",
                static_cast<std::size_t>(
                    std::count_if(result.cases.begin(), result.cases.end(),
                                  [](const cdrl::GradSuiteCase& c) { return c.pass; })),
                result.cases.size(), result.tol, result.draws);
    return result.all_pass ? kExitOk : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdrl gradcheck: %s\n", e.what());
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-decomposed Q-learning with learned causal state masks"};
  app.require_subcommand(1);

  int code = kExitOk;

  TrainArgs train_args;
  std::string train_method, train_env, train_seeds, train_out;
  long long train_steps = -1;
  CLI::App* train = app.add_subcommand("train", "Train one bundle per seed into a run directory");
  train->add_option("--config", train_args.config_path, "Config file (key = value lines)");
  train->add_option("--method", train_method,
                    "Method tag: rd, rd_pred, rd_pred_u, q_mask, q_mask_lite, r_mask, r_mask_lite");
  train->add_option("--env", train_env, "Environment: monster_treasure or pixel_grid");
  train->add_option("--seed,--seeds", train_seeds, "Comma-separated seed list");
  train->add_option("--total-steps", train_steps, "Environment steps to train for");
  train->add_option("--out", train_out, "Run directory (per-seed subdirectories when multiple)");
  train->add_flag("--fork-per-seed", train_args.fork_per_seed,
                  "Run seeds in parallel, one process each");
  train->callback([&] {
    if (!train_method.empty()) train_args.overrides.emplace_back("method", train_method);
    if (!train_env.empty()) train_args.overrides.emplace_back("env", train_env);
    if (!train_seeds.empty()) train_args.overrides.emplace_back("seeds", train_seeds);
    if (train_steps >= 0) {
      train_args.overrides.emplace_back("total_steps", std::to_string(train_steps));
    }
    if (!train_out.empty()) train_args.overrides.emplace_back("out", train_out);
    code = cmd_train(train_args);
  });

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Greedy mean return of a trained bundle");
  eval->add_option("--config", eval_args.config_path, "Run config snapshot (config.cfg)")
      ->required();
  eval->add_option("--episodes", eval_args.episodes, "Evaluation episodes (default 100)")
      ->check(CLI::Range(1, 1000000));
  eval->add_option("--seed", eval_args.seed_override, "Evaluation seed (default: run seed)")
      ->check(CLI::NonNegativeNumber);
  eval->callback([&] { code = cmd_eval(eval_args); });

  MetricsArgs metrics_args;
  CLI::App* metrics = app.add_subcommand("metrics", "Fidelity/sparsity/overlap/mask-score CSV");
  metrics->add_option("--config", metrics_args.config_path, "Run config snapshot (config.cfg)")
      ->required();
  metrics->add_option("--episodes", metrics_args.episodes,
                      "Greedy episodes to collect states from (default 16)")
      ->check(CLI::Range(1, 1000000));
  metrics->add_option("--out", metrics_args.out_path,
                      "Output CSV path (default: metrics.csv next to the snapshot)");
  metrics->callback([&] { code = cmd_metrics(metrics_args); });

  ExplainArgs explain_args;
  CLI::App* explain = app.add_subcommand("explain", "Export per-step explanation records");
  explain->add_option("--config", explain_args.config_path, "Run config snapshot (config.cfg)")
      ->required();
  explain->add_option("--episodes", explain_args.episodes, "Greedy episodes to export (default 4)")
      ->check(CLI::Range(1, 1000000));
  explain->add_option("--out", explain_args.out_dir,
                      "Output directory (default: explanations/ next to the snapshot)");
  explain->add_flag("--only-critical", explain_args.only_critical,
                    "Keep only critical decision points");
  explain->callback([&] { code = cmd_explain(explain_args); });

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of every network/loss gradient");
  gradcheck->add_option("--seed", gradcheck_args.seed, "Random draw seed");
  gradcheck->callback([&] { code = cmd_gradcheck(gradcheck_args); });

  note_determinism_env();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the diagnostic
    return kExitConfig;
  }
  return code;
}
