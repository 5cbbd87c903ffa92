// Per-state explanations and their on-disk formats: an explanation record
// (component Q values, criticality, reward-difference breakdown, predicted
// sub-rewards and masks when the method provides them), binary PGM rendering
// of masks, a nested key-value record file, and batch export of greedy
// episodes with an index.
#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cdrl/bundle.hpp"
#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/metrics.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

inline constexpr int kRecordSchemaVersion = 1;
// Pixel masks live at feature resolution; rendered images scale them up by
// this nearest-neighbor factor to state resolution.
inline constexpr int kMaskUpsample = 8;

// ---- record --------------------------------------------------------------

struct ExplanationRecord {
  int schema_version = kRecordSchemaVersion;
  long long episode = 0;
  long long step = 0;
  std::string method;
  int chosen_action = 0;
  Tensor<double> q;  // [K, A]
  Criticality crit;
  bool has_predicted_rewards = false;
  Tensor<double> predicted_rewards;  // [K, A] when present
  bool has_masks = false;
  std::vector<Tensor<double>> masks;  // per channel, [H, W] (vector states: [1, D])
  // Pixel bundles only: the same masks upsampled to state resolution for
  // visualization; empty elsewhere.
  std::vector<Tensor<double>> masks_upsampled;
  RdxResult rdx;
};

// Nearest-neighbor upsampling of a [H, W] plane by an integer factor.
inline Tensor<double> upsample_nearest(const Tensor<double>& plane, int factor) {
  require_rank(plane, 2, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const int H = plane.shape[0], W = plane.shape[1];
  Tensor<double> out({H * factor, W * factor});
  for (int r = 0; r < H * factor; ++r) {
    for (int c = 0; c < W * factor; ++c) {
      out.at2(r, c) = plane.at2(r / factor, c / factor);
    }
  }
  return out;
}

// ---- building records ----------------------------------------------------

template <typename BundleT, typename Env>
ExplanationRecord explain_state(const BundleT& bundle, const Env& env,
                                const typename BundleT::State& state, long long episode,
                                long long step, double tau = 0.1) {
  using T = typename BundleT::Scalar;
  ExplanationRecord rec;
  rec.episode = episode;
  rec.step = step;
  rec.method = method_name(bundle.method);
  rec.q = component_q(bundle, env, state);
  rec.crit = action_criticality(rec.q, tau);
  rec.chosen_action = rec.crit.best_action;
  rec.rdx = reward_difference(rec.q, rec.crit.best_action, rec.crit.second_action);

  Tensor<T> obs = observe_batch<T, Env>(env, {&state});
  if (method_has_maskers(bundle.method)) {
    rec.has_masks = true;
    for (Tensor<T>& m : bundle.infer_masks(obs)) {
      Tensor<double> plane;
      if constexpr (BundleT::kPixel) {
        plane = Tensor<double>({m.shape[2], m.shape[3]});
      } else {
        plane = Tensor<double>({1, m.shape[1]});
      }
      for (std::size_t e = 0; e < m.numel(); ++e) plane[e] = static_cast<double>(m[e]);
      rec.masks.push_back(std::move(plane));
    }
    if constexpr (BundleT::kPixel) {
      for (const Tensor<double>& plane : rec.masks) {
        rec.masks_upsampled.push_back(upsample_nearest(plane, kMaskUpsample));
      }
    }
  }
  if (method_has_reward_heads(bundle.method)) {
    rec.has_predicted_rewards = true;
    rec.predicted_rewards = Tensor<double>({bundle.k(), bundle.action_count()});
    std::vector<Tensor<T>> masks;
    if (method_has_maskers(bundle.method)) masks = bundle.infer_masks(obs);
    Tensor<T> feats;
    if constexpr (BundleT::kPixel) {
      feats = bundle.encoder.infer(obs);
    } else {
      feats = obs;
    }
    for (int i = 0; i < bundle.k(); ++i) {
      Tensor<T> input;
      if (method_has_maskers(bundle.method)) {
        if constexpr (BundleT::kPixel) {
          input = flatten_rows(mask_features(masks[static_cast<std::size_t>(i)], feats));
        } else {
          input = feats;
          for (std::size_t e = 0; e < input.numel(); ++e) {
            input[e] *= masks[static_cast<std::size_t>(i)][e];
          }
        }
      } else {
        if constexpr (BundleT::kPixel) {
          input = flatten_rows(feats);
        } else {
          input = feats;
        }
      }
      Tensor<T> pred = bundle.reward_heads[static_cast<std::size_t>(i)].infer(input);
      for (int a = 0; a < bundle.action_count(); ++a) {
        rec.predicted_rewards.at2(i, a) = static_cast<double>(pred.at2(0, a));
      }
    }
  }
  return rec;
}

// ---- PGM rendering -------------------------------------------------------

// Binary (P5) PGM with maxval 255; values quantized by rounding half away
// from zero and clamped to [0, 255].
inline void write_pgm(const Tensor<double>& plane, const std::string& path) {
  require_rank(plane, 2, "write_pgm");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::fprintf(f, "P5\n%d %d\n255\n", plane.shape[1], plane.shape[0]);
  for (std::size_t e = 0; e < plane.numel(); ++e) {
    long q = std::lround(plane[e] * 255.0);
    q = q < 0 ? 0 : (q > 255 ? 255 : q);
    const unsigned char byte = static_cast<unsigned char>(q);
    std::fwrite(&byte, 1, 1, f);
  }
  std::fclose(f);
}

// Reads a P5 PGM written by write_pgm back into [0, 1] values.
inline Tensor<double> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw IoError("cannot open '" + path + "' for reading");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0) throw FormatError("'" + path + "' is not a P5 PGM");
  if (maxval != 255) throw FormatError("'" + path + "' must use maxval 255");
  in.get();  // the single whitespace byte after the header
  std::vector<char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("'" + path + "' is truncated");
  }
  Tensor<double> out({h, w});
  for (std::size_t e = 0; e < out.numel(); ++e) {
    out[e] = static_cast<double>(static_cast<unsigned char>(bytes[e])) / 255.0;
  }
  return out;
}

// ---- record file format --------------------------------------------------
//
// UTF-8 text, one `key = value` pair per line, one level of `name { ... }`
// blocks, floats printed with %.9g. Unknown keys and missing fields are
// format errors.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string fmt_row(const Tensor<double>& t, int row) {
  std::string out;
  for (int c = 0; c < t.shape[1]; ++c) {
    if (c) out += ' ';
    out += fmt_double(t.at2(row, c));
  }
  return out;
}

struct RecordLines {
  std::vector<std::string> lines;
  std::size_t pos = 0;

  bool done() const { return pos >= lines.size(); }
  const std::string& peek() const { return lines[pos]; }
  std::string next() { return lines[pos++]; }
};

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Key-value pairs of one block (flat: nested blocks are read recursively by
// the caller).
struct Block {
  std::vector<std::pair<std::string, std::string>> pairs;

  const std::string& get(const std::string& key, const std::string& where) const {
    for (const auto& p : pairs) {
      if (p.first == key) return p.second;
    }
    throw FormatError("record is missing '" + key + "' in " + where);
  }
};

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("bad number for " + what);
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw FormatError("bad integer for " + what);
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw FormatError("bad boolean for " + what);
}

inline std::vector<double> parse_values(const std::string& s, const std::string& what) {
  std::istringstream in(s);
  std::vector<double> out;
  std::string token;
  while (in >> token) out.push_back(parse_double(token, what));
  return out;
}

inline Tensor<double> parse_matrix(const Block& block, int rows, int cols,
                                   const std::string& where) {
  Tensor<double> out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const std::vector<double> vals =
        parse_values(block.get("row" + std::to_string(r), where), where);
    if (static_cast<int>(vals.size()) != cols) {
      throw FormatError("record row length mismatch in " + where);
    }
    for (int c = 0; c < cols; ++c) out.at2(r, c) = vals[static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace detail

inline void write_record(const ExplanationRecord& rec, const std::string& path) {
  require_rank(rec.q, 2, "write_record q");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  const int K = rec.q.shape[0], A = rec.q.shape[1];
  std::fprintf(f, "schema_version = %d\n", rec.schema_version);
  std::fprintf(f, "episode = %lld\n", rec.episode);
  std::fprintf(f, "step = %lld\n", rec.step);
  std::fprintf(f, "method = %s\n", rec.method.c_str());
  std::fprintf(f, "chosen_action = %d\n", rec.chosen_action);
  std::fprintf(f, "k = %d\n", K);
  std::fprintf(f, "actions = %d\n", A);
  std::fprintf(f, "q {\n");
  for (int r = 0; r < K; ++r) {
    std::fprintf(f, "  row%d = %s\n", r, detail::fmt_row(rec.q, r).c_str());
  }
  std::fprintf(f, "}\n");
  std::fprintf(f, "criticality {\n");
  std::fprintf(f, "  best_action = %d\n", rec.crit.best_action);
  std::fprintf(f, "  second_action = %d\n", rec.crit.second_action);
  std::fprintf(f, "  gap = %s\n", detail::fmt_double(rec.crit.gap).c_str());
  std::fprintf(f, "  critical = %s\n", rec.crit.critical ? "true" : "false");
  std::fprintf(f, "}\n");
  std::fprintf(f, "rdx {\n");
  std::fprintf(f, "  preferred = %d\n", rec.rdx.preferred);
  std::fprintf(f, "  over = %d\n", rec.rdx.over);
  std::string delta;
  for (std::size_t i = 0; i < rec.rdx.delta.size(); ++i) {
    if (i) delta += ' ';
    delta += detail::fmt_double(rec.rdx.delta[i]);
  }
  std::fprintf(f, "  delta = %s\n", delta.c_str());
  std::fprintf(f, "  total = %s\n", detail::fmt_double(rec.rdx.total).c_str());
  std::fprintf(f, "}\n");
  if (rec.has_predicted_rewards) {
    require_rank(rec.predicted_rewards, 2, "write_record predicted_rewards");
    std::fprintf(f, "predicted_rewards {\n");
    for (int r = 0; r < rec.predicted_rewards.shape[0]; ++r) {
      std::fprintf(f, "  row%d = %s\n", r, detail::fmt_row(rec.predicted_rewards, r).c_str());
    }
    std::fprintf(f, "}\n");
  }
  auto write_planes = [&](const char* name, const std::vector<Tensor<double>>& planes) {
    std::fprintf(f, "%s {\n", name);
    std::fprintf(f, "  channels = %d\n", static_cast<int>(planes.size()));
    for (std::size_t i = 0; i < planes.size(); ++i) {
      const Tensor<double>& m = planes[i];
      std::fprintf(f, "  channel%d {\n", static_cast<int>(i));
      std::fprintf(f, "    height = %d\n", m.shape[0]);
      std::fprintf(f, "    width = %d\n", m.shape[1]);
      for (int r = 0; r < m.shape[0]; ++r) {
        std::fprintf(f, "    row%d = %s\n", r, detail::fmt_row(m, r).c_str());
      }
      std::fprintf(f, "  }\n");
    }
    std::fprintf(f, "}\n");
  };
  if (rec.has_masks) {
    write_planes("masks", rec.masks);
    if (!rec.masks_upsampled.empty()) write_planes("masks_upsampled", rec.masks_upsampled);
  }
  std::fclose(f);
}

inline ExplanationRecord read_record(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot open '" + path + "' for reading");
  detail::RecordLines src;
  std::string line;
  while (std::getline(in, line)) src.lines.push_back(line);

  // Parses one block body (after "name {") into pairs and nested blocks.
  struct Parser {
    detail::RecordLines& src;

    void parse_block(detail::Block& out,
                     std::vector<std::pair<std::string, detail::Block>>* nested) {
      while (!src.done()) {
        const std::string raw = detail::trim(src.next());
        if (raw.empty()) continue;
        if (raw == "}") return;
        if (raw.size() > 1 && raw.back() == '{') {
          detail::Block inner;
          std::vector<std::pair<std::string, detail::Block>> deeper;
          const std::string name = detail::trim(raw.substr(0, raw.size() - 1));
          parse_block(inner, &deeper);
          if (!deeper.empty()) {
            throw FormatError("record nests too deeply at '" + name + "'");
          }
          if (!nested) throw FormatError("unexpected block '" + name + "'");
          nested->emplace_back(name, std::move(inner));
          continue;
        }
        const std::size_t eq = raw.find(" = ");
        if (eq == std::string::npos) throw FormatError("bad record line: '" + raw + "'");
        out.pairs.emplace_back(detail::trim(raw.substr(0, eq)), detail::trim(raw.substr(eq + 3)));
      }
    }
  };

  // Top level: scalars plus named blocks.
  detail::Block top;
  std::vector<std::pair<std::string, detail::Block>> blocks;
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, detail::Block>>>>
      channel_blocks;  // masks: per-channel sub-blocks
  while (!src.done()) {
    const std::string raw = detail::trim(src.next());
    if (raw.empty()) continue;
    if (raw.size() > 1 && raw.back() == '{') {
      const std::string name = detail::trim(raw.substr(0, raw.size() - 1));
      detail::Block inner;
      std::vector<std::pair<std::string, detail::Block>> deeper;
      Parser{src}.parse_block(inner, &deeper);
      blocks.emplace_back(name, std::move(inner));
      channel_blocks.emplace_back(name, std::move(deeper));
      continue;
    }
    const std::size_t eq = raw.find(" = ");
    if (eq == std::string::npos) throw FormatError("bad record line: '" + raw + "'");
    top.pairs.emplace_back(detail::trim(raw.substr(0, eq)), detail::trim(raw.substr(eq + 3)));
  }

  auto block_of = [&](const std::string& name) -> detail::Block* {
    for (auto& b : blocks) {
      if (b.first == name) return &b.second;
    }
    return nullptr;
  };

  ExplanationRecord rec;
  rec.schema_version = static_cast<int>(detail::parse_int(top.get("schema_version", "record"),
                                                          "schema_version"));
  if (rec.schema_version != kRecordSchemaVersion) {
    throw FormatError("unsupported record schema version " +
                      std::to_string(rec.schema_version));
  }
  rec.episode = detail::parse_int(top.get("episode", "record"), "episode");
  rec.step = detail::parse_int(top.get("step", "record"), "step");
  rec.method = top.get("method", "record");
  rec.chosen_action =
      static_cast<int>(detail::parse_int(top.get("chosen_action", "record"), "chosen_action"));
  const int K = static_cast<int>(detail::parse_int(top.get("k", "record"), "k"));
  const int A = static_cast<int>(detail::parse_int(top.get("actions", "record"), "actions"));
  if (K < 1 || A < 2) throw FormatError("record has impossible dimensions");

  const detail::Block* qb = block_of("q");
  if (!qb) throw FormatError("record is missing the q block");
  rec.q = detail::parse_matrix(*qb, K, A, "q");

  const detail::Block* cb = block_of("criticality");
  if (!cb) throw FormatError("record is missing the criticality block");
  rec.crit.best_action =
      static_cast<int>(detail::parse_int(cb->get("best_action", "criticality"), "best_action"));
  rec.crit.second_action = static_cast<int>(
      detail::parse_int(cb->get("second_action", "criticality"), "second_action"));
  rec.crit.gap = detail::parse_double(cb->get("gap", "criticality"), "gap");
  rec.crit.critical = detail::parse_bool(cb->get("critical", "criticality"), "critical");

  const detail::Block* rb = block_of("rdx");
  if (!rb) throw FormatError("record is missing the rdx block");
  rec.rdx.preferred = static_cast<int>(detail::parse_int(rb->get("preferred", "rdx"), "preferred"));
  rec.rdx.over = static_cast<int>(detail::parse_int(rb->get("over", "rdx"), "over"));
  rec.rdx.delta = detail::parse_values(rb->get("delta", "rdx"), "delta");
  if (static_cast<int>(rec.rdx.delta.size()) != K) {
    throw FormatError("rdx delta length does not match k");
  }
  rec.rdx.total = detail::parse_double(rb->get("total", "rdx"), "total");

  if (const detail::Block* pb = block_of("predicted_rewards")) {
    rec.has_predicted_rewards = true;
    rec.predicted_rewards = detail::parse_matrix(*pb, K, A, "predicted_rewards");
  }
  auto read_planes = [&](const std::string& name, std::vector<Tensor<double>>& out) {
    const detail::Block* mb = block_of(name);
    if (!mb) return false;
    const int channels =
        static_cast<int>(detail::parse_int(mb->get("channels", name), "channels"));
    if (channels != K) throw FormatError(name + " channel count does not match k");
    const std::vector<std::pair<std::string, detail::Block>>* subs = nullptr;
    for (const auto& cbk : channel_blocks) {
      if (cbk.first == name) subs = &cbk.second;
    }
    if (!subs) throw FormatError(name + " block holds no channels");
    for (int i = 0; i < channels; ++i) {
      const detail::Block* ch = nullptr;
      for (const auto& s : *subs) {
        if (s.first == "channel" + std::to_string(i)) ch = &s.second;
      }
      if (!ch) throw FormatError(name + " is missing channel " + std::to_string(i));
      const int h = static_cast<int>(detail::parse_int(ch->get("height", "mask"), "height"));
      const int w = static_cast<int>(detail::parse_int(ch->get("width", "mask"), "width"));
      if (h < 1 || w < 1) throw FormatError("mask plane has impossible dimensions");
      out.push_back(detail::parse_matrix(*ch, h, w, "mask channel"));
    }
    return true;
  };
  rec.has_masks = read_planes("masks", rec.masks);
  read_planes("masks_upsampled", rec.masks_upsampled);
  return rec;
}

// ---- batch export --------------------------------------------------------

struct ExportOptions {
  int episodes = 4;
  bool only_critical = false;
  double tau = 0.1;
  std::uint64_t seed = 0;
};

struct ExportSummary {
  int episodes = 0;
  int records = 0;
  std::string index_path;
};

// Runs greedy episodes and writes ep<e>_step<t>.record (plus one PGM per mask
// channel) and an index.csv into `out_dir`.
template <typename BundleT, typename Env>
ExportSummary export_explanations(const BundleT& bundle, Env& env, const std::string& out_dir,
                                  const ExportOptions& opt) {
  if (opt.episodes < 1) throw ConfigError("export_explanations: episodes must be >= 1");
  std::filesystem::create_directories(out_dir);
  const std::string index_path = out_dir + "/index.csv";
  std::FILE* index = std::fopen(index_path.c_str(), "w");
  if (!index) throw IoError("cannot open '" + index_path + "' for writing");
  std::fprintf(index, "episode,step,criticality,is_critical,chosen_action\n");

  ExportSummary summary;
  summary.index_path = index_path;
  Rng rng = make_rng(opt.seed, "eval_episodes");
  for (int e = 0; e < opt.episodes; ++e) {
    auto s = env.reset(rng());
    bool done = false;
    long long t = 0;
    while (!done) {
      ExplanationRecord rec = explain_state(bundle, env, s, e, t, opt.tau);
      if (!opt.only_critical || rec.crit.critical) {
        const std::string stem =
            out_dir + "/ep" + std::to_string(e) + "_step" + std::to_string(t);
        write_record(rec, stem + ".record");
        for (std::size_t i = 0; i < rec.masks.size(); ++i) {
          const Tensor<double>& image =
              rec.masks_upsampled.empty() ? rec.masks[i] : rec.masks_upsampled[i];
          write_pgm(image, stem + "_mask" + std::to_string(i) + ".pgm");
        }
        std::fprintf(index, "%d,%lld,%s,%d,%d\n", e, t,
                     detail::fmt_double(rec.crit.gap).c_str(), rec.crit.critical ? 1 : 0,
                     rec.chosen_action);
        ++summary.records;
      }
      auto res = env.step(rec.chosen_action);
      done = res.done;
      s = res.state;
      ++t;
    }
    ++summary.episodes;
  }
  std::fclose(index);
  return summary;
}

}  // namespace cdrl
