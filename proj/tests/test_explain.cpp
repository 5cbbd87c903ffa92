// Explanation records: construction from bundles, PGM mask rendering, the
// key-value record file, and batch export of greedy episodes — checked with
// crafted tabular bundles where every number is known, plus roundtrip and
// quantization invariants.
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cdrl/bundle.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/explain.hpp"
#include "cdrl/monster_treasure.hpp"
#include "cdrl/pixel_grid.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"
#include "support/chain_env.hpp"
#include "support/test_util.hpp"

using cdrl::ExplanationRecord;
using cdrl::Method;
using cdrl::PixelBundle;
using cdrl::Rng;
using cdrl::Tensor;
using cdrl::VectorBundle;
using cdrl_test::ChainEnv;
using cdrl_test::ChainSpec;

namespace {

namespace fs = std::filesystem;

// Fresh scratch directory under the build tree's cwd.
fs::path temp_dir(const std::string& stem) {
  fs::path dir = fs::path("cdrl_test_" + stem);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

ChainSpec plain_spec() {
  ChainSpec spec;
  spec.n = 4;
  spec.arrive_r0 = {0.0, 0.0, 0.0, 2.0};
  spec.arrive_r1 = {-1.0, 0.0, 0.0, 0.0};
  spec.terminal = {3};
  return spec;
}

VectorBundle<float> make_chain_bundle(Method m, const ChainEnv& env, std::uint64_t seed) {
  Rng rng = cdrl::make_rng(seed, "init");
  return VectorBundle<float>(m, env.obs_dim(), env.action_count(), env.k(), rng, /*hidden=*/0);
}

void pin_masker(VectorBundle<float>& bundle, int i, float bias) {
  bundle.maskers[static_cast<std::size_t>(i)].params.at("W0").fill(0.0f);
  bundle.maskers[static_cast<std::size_t>(i)].params.at("b0").fill(bias);
}

// Writes the exact per-channel reward table into the (linear) reward heads.
void set_exact_reward_heads(VectorBundle<float>& bundle, const ChainEnv& env) {
  for (int i = 0; i < env.k(); ++i) {
    Tensor<float>& w = bundle.reward_heads[static_cast<std::size_t>(i)].params.at("W0");
    w.fill(0.0f);
    for (int s = 0; s < env.spec().n; ++s) {
      if (env.spec().is_terminal(s)) continue;
      for (int a = 0; a < env.action_count(); ++a) {
        w.at2(a, s) =
            static_cast<float>(env.reward(s, a).components[static_cast<std::size_t>(i)]);
      }
    }
  }
}

// Writes a fixed dyadic Q-table (values exact in float and in %.9g decimal).
void set_q_table(VectorBundle<float>& bundle, int i,
                 const std::vector<std::vector<float>>& per_action_rows) {
  Tensor<float>& w = bundle.q_heads[static_cast<std::size_t>(i)].params.at("W0");
  w.fill(0.0f);
  for (std::size_t a = 0; a < per_action_rows.size(); ++a) {
    for (std::size_t s = 0; s < per_action_rows[a].size(); ++s) {
      w.at2(static_cast<int>(a), static_cast<int>(s)) = per_action_rows[a][s];
    }
  }
}

void zero_q_heads(VectorBundle<float>& bundle) {
  for (auto& head : bundle.q_heads) {
    head.params.at("W0").fill(0.0f);
    head.params.at("b0").fill(0.0f);
  }
  bundle.sync_targets();
}

double summed_q(const Tensor<double>& q, int a) {
  double t = 0.0;
  for (int i = 0; i < q.shape[0]; ++i) t += q.at2(i, a);
  return t;
}

int argmax_summed(const Tensor<double>& q) {
  int best = 0;
  for (int a = 1; a < q.shape[1]; ++a) {
    if (summed_q(q, a) > summed_q(q, best)) best = a;
  }
  return best;
}

}  // namespace

TEST_CASE("a crafted tabular bundle explains itself with exact numbers") {
  ChainEnv env(plain_spec());
  VectorBundle<float> bundle = make_chain_bundle(Method::kRMask, env, 11);
  pin_masker(bundle, 0, 40.0f);
  pin_masker(bundle, 1, 40.0f);
  set_exact_reward_heads(bundle, env);
  // Per-channel Q tables, rows indexed by action: dyadic values, no ties in
  // any column sum.
  set_q_table(bundle, 0, {{0.5f, 0.25f, 0.125f, 0.0625f}, {1.0f, 0.75f, 0.375f, 0.1875f}});
  set_q_table(bundle, 1, {{-0.25f, 0.0f, 0.125f, 0.25f}, {0.5f, -0.5f, 0.25f, -0.125f}});
  bundle.sync_targets();

  const ExplanationRecord rec =
      cdrl::explain_state(bundle, env, ChainEnv::state_of(0), /*episode=*/7, /*step=*/3);

  // State 0 sums: action 0 -> 0.5 - 0.25 = 0.25; action 1 -> 1.0 + 0.5 = 1.5.
  CHECK(rec.episode == 7);
  CHECK(rec.step == 3);
  CHECK(rec.method == "r_mask");
  CHECK(rec.chosen_action == 1);
  CHECK(rec.crit.best_action == 1);
  CHECK(rec.crit.second_action == 0);
  CHECK(rec.crit.gap == 1.25);
  CHECK(rec.crit.critical);
  REQUIRE(rec.q.shape == (cdrl::Shape{2, 2}));
  CHECK(rec.q.at2(0, 0) == 0.5);
  CHECK(rec.q.at2(0, 1) == 1.0);
  CHECK(rec.q.at2(1, 0) == -0.25);
  CHECK(rec.q.at2(1, 1) == 0.5);
  // Reward-difference of action 1 over action 0: (0.5, 0.75), total 1.25.
  REQUIRE(rec.rdx.delta.size() == 2);
  CHECK(rec.rdx.preferred == 1);
  CHECK(rec.rdx.over == 0);
  CHECK(rec.rdx.delta[0] == 0.5);
  CHECK(rec.rdx.delta[1] == 0.75);
  CHECK(rec.rdx.total == 1.25);
  // Exact reward heads on pinned all-ones masks reproduce the reward table:
  // from state 0, left lands on 0 (0, -1), right lands on 1 (0, 0).
  REQUIRE(rec.has_predicted_rewards);
  REQUIRE(rec.predicted_rewards.shape == (cdrl::Shape{2, 2}));
  CHECK(rec.predicted_rewards.at2(0, 0) == 0.0);
  CHECK(rec.predicted_rewards.at2(0, 1) == 0.0);
  CHECK(rec.predicted_rewards.at2(1, 0) == -1.0);
  CHECK(rec.predicted_rewards.at2(1, 1) == 0.0);
  REQUIRE(rec.has_masks);
  REQUIRE(rec.masks.size() == 2);
  CHECK(rec.masks_upsampled.empty());
  for (const Tensor<double>& m : rec.masks) {
    REQUIRE(m.shape == (cdrl::Shape{1, 4}));
    for (double v : m.data) CHECK(v == 1.0);
  }

  SECTION("writing and rereading reproduces every field exactly") {
    const fs::path dir = temp_dir("record_exact");
    const fs::path path = dir / "state.record";
    cdrl::write_record(rec, path.string());

    const std::string text = slurp(path);
    CHECK(text.find("schema_version = 1") == 0);
    CHECK(text.find("method = r_mask") != std::string::npos);
    CHECK(text.find("masks_upsampled") == std::string::npos);

    const ExplanationRecord back = cdrl::read_record(path.string());
    CHECK(back.episode == rec.episode);
    CHECK(back.step == rec.step);
    CHECK(back.method == rec.method);
    CHECK(back.chosen_action == rec.chosen_action);
    CHECK(back.crit.best_action == rec.crit.best_action);
    CHECK(back.crit.second_action == rec.crit.second_action);
    CHECK(back.crit.gap == rec.crit.gap);
    CHECK(back.crit.critical == rec.crit.critical);
    REQUIRE(back.q.shape == rec.q.shape);
    for (std::size_t e = 0; e < rec.q.numel(); ++e) CHECK(back.q[e] == rec.q[e]);
    REQUIRE(back.has_predicted_rewards);
    for (std::size_t e = 0; e < rec.predicted_rewards.numel(); ++e) {
      CHECK(back.predicted_rewards[e] == rec.predicted_rewards[e]);
    }
    REQUIRE(back.has_masks);
    REQUIRE(back.masks.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      REQUIRE(back.masks[i].shape == rec.masks[i].shape);
      for (std::size_t e = 0; e < rec.masks[i].numel(); ++e) {
        CHECK(back.masks[i][e] == rec.masks[i][e]);
      }
    }
    CHECK(back.masks_upsampled.empty());
    CHECK(back.rdx.preferred == 1);
    CHECK(back.rdx.over == 0);
    CHECK(back.rdx.delta[0] == 0.5);
    CHECK(back.rdx.delta[1] == 0.75);
    CHECK(back.rdx.total == 1.25);
    // The two documented roundtrip invariants.
    double delta_sum = 0.0;
    for (double d : back.rdx.delta) delta_sum += d;
    CHECK(std::fabs(back.rdx.total - delta_sum) <= 1e-6);
    CHECK(argmax_summed(back.q) == back.chosen_action);
    fs::remove_all(dir);
  }
}

TEST_CASE("a zeroed bundle yields a zero record that is not critical") {
  ChainEnv env(plain_spec());
  VectorBundle<float> bundle = make_chain_bundle(Method::kRd, env, 3);
  zero_q_heads(bundle);

  const ExplanationRecord rec = cdrl::explain_state(bundle, env, ChainEnv::state_of(1), 0, 0);
  CHECK(rec.method == "rd");
  CHECK(rec.chosen_action == 0);
  CHECK(rec.crit.gap == 0.0);
  CHECK_FALSE(rec.crit.critical);
  for (double v : rec.q.data) CHECK(v == 0.0);
  for (double d : rec.rdx.delta) CHECK(d == 0.0);
  CHECK(rec.rdx.total == 0.0);
  CHECK_FALSE(rec.has_predicted_rewards);
  CHECK_FALSE(rec.has_masks);

  SECTION("absent parts are omitted from the file, not null-padded") {
    const fs::path dir = temp_dir("record_zero");
    const fs::path path = dir / "zero.record";
    cdrl::write_record(rec, path.string());
    const std::string text = slurp(path);
    CHECK(text.find("predicted_rewards") == std::string::npos);
    CHECK(text.find("masks") == std::string::npos);

    const ExplanationRecord back = cdrl::read_record(path.string());
    CHECK_FALSE(back.has_predicted_rewards);
    CHECK_FALSE(back.has_masks);
    CHECK(back.masks.empty());
    fs::remove_all(dir);
  }
}

TEST_CASE("masked methods without reward heads write masks but no rewards") {
  ChainEnv env(plain_spec());
  VectorBundle<float> bundle = make_chain_bundle(Method::kQMask, env, 5);
  const ExplanationRecord rec = cdrl::explain_state(bundle, env, ChainEnv::state_of(2), 1, 9);
  CHECK(rec.has_masks);
  CHECK_FALSE(rec.has_predicted_rewards);

  const fs::path dir = temp_dir("record_qmask");
  const fs::path path = dir / "q.record";
  cdrl::write_record(rec, path.string());
  const std::string text = slurp(path);
  CHECK(text.find("masks {") != std::string::npos);
  CHECK(text.find("predicted_rewards") == std::string::npos);
  const ExplanationRecord back = cdrl::read_record(path.string());
  CHECK(back.has_masks);
  CHECK_FALSE(back.has_predicted_rewards);
  fs::remove_all(dir);
}

TEST_CASE("random records survive the file format at nine significant digits") {
  ChainEnv env(plain_spec());
  VectorBundle<float> bundle = make_chain_bundle(Method::kRdPred, env, 21);
  const fs::path dir = temp_dir("record_roundtrip");
  for (int s = 0; s < 3; ++s) {
    const ExplanationRecord rec = cdrl::explain_state(bundle, env, ChainEnv::state_of(s), 0, s);
    const fs::path path = dir / ("s" + std::to_string(s) + ".record");
    cdrl::write_record(rec, path.string());
    const ExplanationRecord back = cdrl::read_record(path.string());

    for (std::size_t e = 0; e < rec.q.numel(); ++e) {
      CHECK(back.q[e] == Catch::Approx(rec.q[e]).epsilon(1e-8).margin(1e-9));
    }
    REQUIRE(back.has_predicted_rewards);
    for (std::size_t e = 0; e < rec.predicted_rewards.numel(); ++e) {
      CHECK(back.predicted_rewards[e] ==
            Catch::Approx(rec.predicted_rewards[e]).epsilon(1e-8).margin(1e-9));
    }
    CHECK(back.crit.gap == Catch::Approx(rec.crit.gap).epsilon(1e-8).margin(1e-9));
    // Invariants hold on the parsed values, not just the originals.
    double delta_sum = 0.0;
    for (double d : back.rdx.delta) delta_sum += d;
    CHECK(std::fabs(back.rdx.total - delta_sum) <= 1e-6);
    CHECK(argmax_summed(back.q) == back.chosen_action);
    CHECK(back.rdx.preferred == back.crit.best_action);
    CHECK(back.rdx.over == back.crit.second_action);
  }
  fs::remove_all(dir);
}

TEST_CASE("PGM files quantize half away from zero and bound the roundtrip error") {
  const fs::path dir = temp_dir("pgm");

  SECTION("known values map to known bytes") {
    // 1/510 sits exactly on the first rounding boundary; 0.5 maps to 128.
    Tensor<double> plane({2, 3}, {0.0, 1.0, 0.5, 1.0 / 510.0, 1.0 / 255.0, 0.7});
    const fs::path path = dir / "known.pgm";
    cdrl::write_pgm(plane, path.string());
    const std::string bytes = slurp(path);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.compare(0, header.size(), header) == 0);
    const unsigned char* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[1] == 255);
    CHECK(px[2] == 128);
    CHECK(px[3] == 1);
    CHECK(px[4] == 1);
    CHECK(px[5] == 179);  // 0.7 * 255 = 178.5 rounds away from zero

    const Tensor<double> back = cdrl::read_pgm(path.string());
    REQUIRE(back.shape == plane.shape);
    for (std::size_t e = 0; e < plane.numel(); ++e) {
      CHECK(std::fabs(back[e] - plane[e]) <= 1.0 / 510.0 + 1e-12);
    }
  }

  SECTION("all-ones and all-zeros masks are all-255 and all-0 images") {
    Tensor<double> ones = Tensor<double>::full({4, 4}, 1.0);
    Tensor<double> zeros({4, 4});
    cdrl::write_pgm(ones, (dir / "ones.pgm").string());
    cdrl::write_pgm(zeros, (dir / "zeros.pgm").string());
    const std::string one_bytes = slurp(dir / "ones.pgm");
    const std::string zero_bytes = slurp(dir / "zeros.pgm");
    for (std::size_t i = one_bytes.size() - 16; i < one_bytes.size(); ++i) {
      CHECK(static_cast<unsigned char>(one_bytes[i]) == 255);
    }
    for (std::size_t i = zero_bytes.size() - 16; i < zero_bytes.size(); ++i) {
      CHECK(static_cast<unsigned char>(zero_bytes[i]) == 0);
    }
  }

  SECTION("out-of-range values clamp instead of wrapping") {
    Tensor<double> plane({1, 2}, {-0.25, 1.5});
    const fs::path path = dir / "clamp.pgm";
    cdrl::write_pgm(plane, path.string());
    const std::string bytes = slurp(path);
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 2]) == 0);
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 1]) == 255);
  }

  SECTION("random planes stay within the quantization bound") {
    Rng rng(77);
    const Tensor<double> plane = cdrl_test::random_tensor<double>({16, 16}, rng, 0.0, 1.0);
    const fs::path path = dir / "random.pgm";
    cdrl::write_pgm(plane, path.string());
    const Tensor<double> back = cdrl::read_pgm(path.string());
    double worst = 0.0;
    for (std::size_t e = 0; e < plane.numel(); ++e) {
      worst = std::max(worst, std::fabs(back[e] - plane[e]));
    }
    CHECK(worst <= 1.0 / 510.0 + 1e-12);
  }

  SECTION("malformed image files are rejected") {
    spit(dir / "p6.pgm", "P6\n2 2\n255\n0000");
    CHECK_THROWS_AS(cdrl::read_pgm((dir / "p6.pgm").string()), cdrl::FormatError);
    spit(dir / "depth.pgm", "P5\n2 2\n128\n0000");
    CHECK_THROWS_AS(cdrl::read_pgm((dir / "depth.pgm").string()), cdrl::FormatError);
    spit(dir / "short.pgm", "P5\n2 2\n255\n000");
    CHECK_THROWS_AS(cdrl::read_pgm((dir / "short.pgm").string()), cdrl::FormatError);
    CHECK_THROWS_AS(cdrl::read_pgm((dir / "absent.pgm").string()), cdrl::IoError);
  }

  fs::remove_all(dir);
}

TEST_CASE("nearest-neighbor upsampling repeats each cell as a block") {
  Tensor<double> plane({2, 3}, {0.0, 0.25, 0.5, 0.75, 1.0, 0.125});
  const Tensor<double> up = cdrl::upsample_nearest(plane, 2);
  REQUIRE(up.shape == (cdrl::Shape{4, 6}));
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 6; ++c) {
      CHECK(up.at2(r, c) == plane.at2(r / 2, c / 2));
    }
  }
  const Tensor<double> same = cdrl::upsample_nearest(plane, 1);
  for (std::size_t e = 0; e < plane.numel(); ++e) CHECK(same[e] == plane[e]);
  CHECK_THROWS_AS(cdrl::upsample_nearest(plane, 0), cdrl::ConfigError);
}

TEST_CASE("pixel records carry masks at feature and state resolution") {
  cdrl::PixelGrid env;
  Rng rng = cdrl::make_rng(9, "init");
  PixelBundle<float> bundle(Method::kRMask, env.action_count(), env.k(), rng);
  const cdrl::PixelState s = env.reset(0);

  const ExplanationRecord rec = cdrl::explain_state(bundle, env, s, 0, 0);
  REQUIRE(rec.has_masks);
  REQUIRE(rec.masks.size() == 2);
  REQUIRE(rec.masks_upsampled.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(rec.masks[i].shape == (cdrl::Shape{4, 4}));
    REQUIRE(rec.masks_upsampled[i].shape == (cdrl::Shape{32, 32}));
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < 32; ++c) {
        REQUIRE(rec.masks_upsampled[i].at2(r, c) == rec.masks[i].at2(r / 8, c / 8));
      }
    }
  }
  REQUIRE(rec.has_predicted_rewards);
  CHECK(rec.predicted_rewards.shape == (cdrl::Shape{2, 4}));

  const fs::path dir = temp_dir("record_pixel");
  const fs::path path = dir / "pixel.record";
  cdrl::write_record(rec, path.string());
  CHECK(slurp(path).find("masks_upsampled {") != std::string::npos);
  const ExplanationRecord back = cdrl::read_record(path.string());
  REQUIRE(back.masks_upsampled.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back.masks[i].shape == (cdrl::Shape{4, 4}));
    REQUIRE(back.masks_upsampled[i].shape == (cdrl::Shape{32, 32}));
    for (std::size_t e = 0; e < back.masks[i].numel(); ++e) {
      CHECK(back.masks[i][e] == Catch::Approx(rec.masks[i][e]).epsilon(1e-8).margin(1e-9));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("episode export writes records, mask images and a consistent index") {
  cdrl::MonsterTreasure env;
  Rng rng = cdrl::make_rng(31, "init");
  VectorBundle<float> bundle(Method::kRMask, env.obs_dim(), env.action_count(), env.k(), rng,
                             /*hidden=*/8);

  const fs::path dir = temp_dir("export_all");
  cdrl::ExportOptions opt;
  opt.episodes = 2;
  opt.seed = 123;
  const cdrl::ExportSummary summary =
      cdrl::export_explanations(bundle, env, dir.string(), opt);
  CHECK(summary.episodes == 2);
  CHECK(summary.records >= 2);

  // Index: exact header, one row per record, fields consistent with the
  // record files next to it.
  std::ifstream index(dir / "index.csv");
  REQUIRE(index.good());
  std::string line;
  REQUIRE(std::getline(index, line));
  CHECK(line == "episode,step,criticality,is_critical,chosen_action");
  int rows = 0;
  while (std::getline(index, line)) {
    ++rows;
    std::istringstream row(line);
    std::string episode, step, crit, is_critical, chosen;
    REQUIRE(std::getline(row, episode, ','));
    REQUIRE(std::getline(row, step, ','));
    REQUIRE(std::getline(row, crit, ','));
    REQUIRE(std::getline(row, is_critical, ','));
    REQUIRE(std::getline(row, chosen, ','));

    const fs::path stem = dir / ("ep" + episode + "_step" + step);
    REQUIRE(fs::exists(fs::path(stem.string() + ".record")));
    const ExplanationRecord rec = cdrl::read_record(stem.string() + ".record");
    CHECK(rec.episode == std::stoll(episode));
    CHECK(rec.step == std::stoll(step));
    CHECK(rec.chosen_action == std::stoi(chosen));
    CHECK(rec.crit.critical == (is_critical == "1"));
    // Roundtrip invariants on every exported record.
    double delta_sum = 0.0;
    for (double d : rec.rdx.delta) delta_sum += d;
    CHECK(std::fabs(rec.rdx.total - delta_sum) <= 1e-6);
    CHECK(argmax_summed(rec.q) == rec.chosen_action);
    // One image per mask channel, matching the stored plane up to quantization.
    REQUIRE(rec.masks.size() == 2);
    for (int i = 0; i < 2; ++i) {
      const fs::path img = fs::path(stem.string() + "_mask" + std::to_string(i) + ".pgm");
      REQUIRE(fs::exists(img));
      const Tensor<double> pixels = cdrl::read_pgm(img.string());
      REQUIRE(pixels.shape == rec.masks[static_cast<std::size_t>(i)].shape);
      for (std::size_t e = 0; e < pixels.numel(); ++e) {
        CHECK(std::fabs(pixels[e] - rec.masks[static_cast<std::size_t>(i)][e]) <=
              1.0 / 510.0 + 1e-12);
      }
    }
  }
  CHECK(rows == summary.records);

  SECTION("the same seed exports byte-identical files") {
    const fs::path again = temp_dir("export_again");
    cdrl::export_explanations(bundle, env, again.string(), opt);
    CHECK(slurp(again / "index.csv") == slurp(dir / "index.csv"));
    CHECK(slurp(again / "ep0_step0.record") == slurp(dir / "ep0_step0.record"));
    fs::remove_all(again);
  }

  SECTION("critical-only export keeps exactly the critical rows") {
    const fs::path crit_dir = temp_dir("export_critical");
    cdrl::ExportOptions crit_opt = opt;
    crit_opt.only_critical = true;
    const cdrl::ExportSummary crit_summary =
        cdrl::export_explanations(bundle, env, crit_dir.string(), crit_opt);
    CHECK(crit_summary.records <= summary.records);

    int critical_in_full = 0;
    std::ifstream full_index(dir / "index.csv");
    std::string full_line;
    std::getline(full_index, full_line);  // header
    while (std::getline(full_index, full_line)) {
      std::istringstream row(full_line);
      std::string field;
      for (int i = 0; i < 4; ++i) std::getline(row, field, ',');
      if (field == "1") ++critical_in_full;
    }
    CHECK(crit_summary.records == critical_in_full);

    int record_files = 0;
    std::ifstream crit_index(crit_dir / "index.csv");
    std::getline(crit_index, full_line);  // header
    while (std::getline(crit_index, full_line)) {
      std::istringstream row(full_line);
      std::string field;
      for (int i = 0; i < 4; ++i) std::getline(row, field, ',');
      CHECK(field == "1");
    }
    for (const auto& entry : fs::directory_iterator(crit_dir)) {
      if (entry.path().extension() == ".record") ++record_files;
    }
    CHECK(record_files == crit_summary.records);
    fs::remove_all(crit_dir);
  }

  fs::remove_all(dir);
}

TEST_CASE("corrupt record files fail loudly") {
  const fs::path dir = temp_dir("record_corrupt");

  ChainEnv env(plain_spec());
  VectorBundle<float> bundle = make_chain_bundle(Method::kRMask, env, 13);
  const ExplanationRecord rec = cdrl::explain_state(bundle, env, ChainEnv::state_of(0), 0, 0);
  const fs::path good = dir / "good.record";
  cdrl::write_record(rec, good.string());
  const std::string text = slurp(good);

  SECTION("a missing file is an IO error") {
    CHECK_THROWS_AS(cdrl::read_record((dir / "missing.record").string()), cdrl::IoError);
  }
  SECTION("non-record text is a format error") {
    spit(dir / "garbage.record", "hello there\n");
    CHECK_THROWS_AS(cdrl::read_record((dir / "garbage.record").string()), cdrl::FormatError);
  }
  SECTION("a future schema version is refused") {
    std::string bumped = text;
    bumped.replace(bumped.find("schema_version = 1"), 18, "schema_version = 2");
    spit(dir / "v2.record", bumped);
    CHECK_THROWS_AS(cdrl::read_record((dir / "v2.record").string()), cdrl::FormatError);
  }
  SECTION("a missing q block is a format error") {
    std::string renamed = text;
    renamed.replace(renamed.find("\nq {"), 4, "\nqq {");
    spit(dir / "noq.record", renamed);
    CHECK_THROWS_AS(cdrl::read_record((dir / "noq.record").string()), cdrl::FormatError);
  }
  SECTION("mask channel counts must match k") {
    std::string fewer = text;
    fewer.replace(fewer.find("channels = 2"), 12, "channels = 1");
    spit(dir / "short.record", fewer);
    CHECK_THROWS_AS(cdrl::read_record((dir / "short.record").string()), cdrl::FormatError);
  }
  SECTION("a short q row is a format error") {
    const std::size_t row_at = text.find("  row0 = ");
    REQUIRE(row_at != std::string::npos);
    const std::size_t line_end = text.find('\n', row_at);
    std::string clipped = text;
    clipped.erase(row_at, line_end - row_at);
    clipped.insert(row_at, "  row0 = 1.0");
    spit(dir / "clipped.record", clipped);
    CHECK_THROWS_AS(cdrl::read_record((dir / "clipped.record").string()), cdrl::FormatError);
  }

  fs::remove_all(dir);
}

TEST_CASE("export validates its options") {
  cdrl::MonsterTreasure env;
  Rng rng = cdrl::make_rng(1, "init");
  VectorBundle<float> bundle(Method::kRd, env.obs_dim(), env.action_count(), env.k(), rng,
                             /*hidden=*/8);
  cdrl::ExportOptions opt;
  opt.episodes = 0;
  CHECK_THROWS_AS(cdrl::export_explanations(bundle, env, "cdrl_test_unused", opt),
                  cdrl::ConfigError);
}
