// Run configuration: flat UTF-8 `key = value` files with `#` comments,
// strict key checking (typos are hard errors), per-environment cadence
// profiles, and snapshots that reload to the identical resolved
// configuration.
#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cdrl/bundle.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/train.hpp"

namespace cdrl {

// Everything a reproducible run needs: the training hyperparameters plus the
// method tag, seed list, output directory and environment options.
struct RunConfig {
  std::string method = "rd";
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "run";
  int distractor_dims = 0;  // monster_treasure only
  TrainConfig train;

  const std::string& env_id() const { return train.env_id; }
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline long long config_ll(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + value + "'");
  }
  return v;
}

inline int config_int(const std::string& key, const std::string& value) {
  return static_cast<int>(config_ll(key, value));
}

inline double config_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value + "'");
  }
  return v;
}

inline std::vector<std::uint64_t> config_seeds(const std::string& value) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(value);
  std::string token;
  while (std::getline(in, token, ',')) {
    token = trim_ws(token);
    if (token.empty()) throw ConfigError("config key 'seeds' has an empty entry");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(token.c_str(), &end, 10);
    if (end == token.c_str() || *end != '\0' || token[0] == '-') {
      throw ConfigError("config key 'seeds' needs nonnegative integers, got '" + token + "'");
    }
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (seeds.empty()) throw ConfigError("config key 'seeds' must list at least one seed");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) {
      if (seeds[i] == seeds[j]) {
        throw ConfigError("config key 'seeds' repeats seed " + std::to_string(seeds[i]));
      }
    }
  }
  return seeds;
}

// Shortest decimal that parses back to the identical double.
inline std::string config_format_double(double v) {
  char buf[64];
  const std::to_chars_result res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Syntax pass: comments stripped, blank lines skipped, every remaining line
// split at its first '='.  Duplicate keys within one source are typos.
inline std::vector<std::pair<std::string, std::string>> parse_config_lines(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim_ws(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value': '" +
                        line + "'");
    }
    const std::string key = detail::trim_ws(line.substr(0, eq));
    const std::string value = detail::trim_ws(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has no key");
    if (value.empty()) throw ConfigError("config key '" + key + "' has no value");
    for (const auto& prev : entries) {
      if (prev.first == key) throw ConfigError("config key '" + key + "' appears twice");
    }
    entries.emplace_back(key, value);
  }
  return entries;
}

inline std::vector<std::pair<std::string, std::string>> load_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_lines(os.str());
}

// Cadence profile for an environment; applied before explicit keys so any
// explicit value wins.
inline void apply_env_profile(RunConfig& rc, const std::string& env_id) {
  rc.train.env_id = env_id;
  if (env_id == "monster_treasure") {
    rc.train.learning_start = 1000;
    rc.train.n1 = 4;
    rc.train.n2 = 16;
    rc.train.n3 = 4;
    rc.train.n4 = 4;
  } else if (env_id == "pixel_grid") {
    rc.train.learning_start = 5000;
    rc.train.n1 = 20;
    rc.train.n2 = 100;
    rc.train.n3 = 20;
    rc.train.n4 = 20;
  } else {
    throw ConfigError("unknown env '" + env_id + "' (expected monster_treasure or pixel_grid)");
  }
}

// Applies one key.  The full key set; anything else is a hard error.
inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
  TrainConfig& t = rc.train;
  if (key == "env") {
    t.env_id = value;  // validated by the profile pass
  } else if (key == "method") {
    rc.method = value;
  } else if (key == "seeds") {
    rc.seeds = detail::config_seeds(value);
  } else if (key == "out") {
    rc.out_dir = value;
  } else if (key == "distractor_dims") {
    rc.distractor_dims = detail::config_int(key, value);
  } else if (key == "total_steps") {
    t.total_steps = detail::config_ll(key, value);
  } else if (key == "learning_start") {
    t.learning_start = detail::config_ll(key, value);
  } else if (key == "gamma") {
    t.gamma = detail::config_double(key, value);
  } else if (key == "lr") {
    t.lr = detail::config_double(key, value);
  } else if (key == "batch_size") {
    t.batch_size = detail::config_int(key, value);
  } else if (key == "replay_capacity") {
    t.replay_capacity = detail::config_int(key, value);
  } else if (key == "n1") {
    t.n1 = detail::config_int(key, value);
  } else if (key == "n2") {
    t.n2 = detail::config_int(key, value);
  } else if (key == "n3") {
    t.n3 = detail::config_int(key, value);
  } else if (key == "n4") {
    t.n4 = detail::config_int(key, value);
  } else if (key == "target_sync") {
    t.target_sync = detail::config_ll(key, value);
  } else if (key == "eps_start") {
    t.eps_start = detail::config_double(key, value);
  } else if (key == "eps_end") {
    t.eps_end = detail::config_double(key, value);
  } else if (key == "eps_fraction") {
    t.eps_fraction = detail::config_double(key, value);
  } else if (key == "w_interv") {
    t.w_interv = detail::config_double(key, value);
  } else if (key == "w_reward") {
    t.w_reward = detail::config_double(key, value);
  } else if (key == "w_sparse") {
    t.w_sparse = detail::config_double(key, value);
  } else if (key == "w_orth") {
    t.w_orth = detail::config_double(key, value);
  } else if (key == "eps_intervention") {
    t.eps_intervention = detail::config_double(key, value);
  } else if (key == "eps_log") {
    t.eps_log = detail::config_double(key, value);
  } else if (key == "hidden") {
    t.hidden = detail::config_int(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

// Resolution: defaults -> environment profile -> entries in order.  Callers
// append command-line overrides after the file entries so overrides win.
inline RunConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& entries) {
  RunConfig rc;
  std::string env_id = rc.train.env_id;
  for (const auto& e : entries) {
    if (e.first == "env") env_id = e.second;
  }
  apply_env_profile(rc, env_id);
  for (const auto& e : entries) apply_config_key(rc, e.first, e.second);
  rc.train.env_id = env_id;

  method_from_name(rc.method);  // unknown method names fail here
  if (rc.distractor_dims < 0) throw ConfigError("distractor_dims must be >= 0");
  if (env_id == "pixel_grid" && rc.distractor_dims != 0) {
    throw ConfigError("pixel_grid takes no distractor_dims");
  }
  if (rc.train.eps_log <= 0.0) throw ConfigError("eps_log must be positive");
  rc.train.k = 2;  // both shipped environments decompose into two channels
  rc.train.validate();
  return rc;
}

// The snapshot a run directory stores: every key, one concrete seed, no `out`
// (the snapshot already lives in the run directory).  Reloading it resolves
// to the same configuration.
inline void write_config_snapshot(const RunConfig& rc, std::uint64_t seed,
                                  const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  const TrainConfig& t = rc.train;
  std::fprintf(f, "# resolved run configuration\n");
  std::fprintf(f, "env = %s\n", t.env_id.c_str());
  std::fprintf(f, "method = %s\n", rc.method.c_str());
  std::fprintf(f, "seeds = %llu\n", static_cast<unsigned long long>(seed));
  std::fprintf(f, "distractor_dims = %d\n", rc.distractor_dims);
  std::fprintf(f, "total_steps = %lld\n", t.total_steps);
  std::fprintf(f, "learning_start = %lld\n", t.learning_start);
  std::fprintf(f, "gamma = %s\n", detail::config_format_double(t.gamma).c_str());
  std::fprintf(f, "lr = %s\n", detail::config_format_double(t.lr).c_str());
  std::fprintf(f, "batch_size = %d\n", t.batch_size);
  std::fprintf(f, "replay_capacity = %d\n", t.replay_capacity);
  std::fprintf(f, "n1 = %d\n", t.n1);
  std::fprintf(f, "n2 = %d\n", t.n2);
  std::fprintf(f, "n3 = %d\n", t.n3);
  std::fprintf(f, "n4 = %d\n", t.n4);
  std::fprintf(f, "target_sync = %lld\n", t.target_sync);
  std::fprintf(f, "eps_start = %s\n", detail::config_format_double(t.eps_start).c_str());
  std::fprintf(f, "eps_end = %s\n", detail::config_format_double(t.eps_end).c_str());
  std::fprintf(f, "eps_fraction = %s\n", detail::config_format_double(t.eps_fraction).c_str());
  std::fprintf(f, "w_interv = %s\n", detail::config_format_double(t.w_interv).c_str());
  std::fprintf(f, "w_reward = %s\n", detail::config_format_double(t.w_reward).c_str());
  std::fprintf(f, "w_sparse = %s\n", detail::config_format_double(t.w_sparse).c_str());
  std::fprintf(f, "w_orth = %s\n", detail::config_format_double(t.w_orth).c_str());
  std::fprintf(f, "eps_intervention = %s\n",
               detail::config_format_double(t.eps_intervention).c_str());
  std::fprintf(f, "eps_log = %s\n", detail::config_format_double(t.eps_log).c_str());
  std::fprintf(f, "hidden = %d\n", t.hidden);
  std::fclose(f);
}

}  // namespace cdrl
