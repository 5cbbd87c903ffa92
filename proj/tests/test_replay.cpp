// Replay buffer: FIFO eviction against a list-model oracle, seeded sampling
// determinism, and uniformity of sampling frequencies.
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <deque>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/replay.hpp"
#include "cdrl/rng.hpp"

using cdrl::EpisodeStep;
using cdrl::ReplayBuffer;
using cdrl::RewardVector;

namespace {

// Minimal state payload carrying an id for tracking.
struct TagState {
  int id = 0;
};

EpisodeStep<TagState> tagged(int id) {
  EpisodeStep<TagState> s;
  s.state.id = id;
  s.next_state.id = id + 1;
  s.action = id % 4;
  s.reward = RewardVector::of({static_cast<double>(id), 0.5});
  return s;
}

}  // namespace

TEST_CASE("push appends and reports the stored entry") {
  ReplayBuffer<TagState> buf(8);
  REQUIRE(buf.size() == 0);
  buf.push(tagged(42));
  REQUIRE(buf.size() == 1);
  REQUIRE(buf.entry(0).state.id == 42);
  REQUIRE(buf.entry(0).reward.additive());
}

TEST_CASE("capacity-2 buffer keeps the two newest entries in order") {
  ReplayBuffer<TagState> buf(2);
  buf.push(tagged(1));
  buf.push(tagged(2));
  buf.push(tagged(3));
  REQUIRE(buf.size() == 2);
  REQUIRE(buf.oldest_first(0).state.id == 2);
  REQUIRE(buf.oldest_first(1).state.id == 3);
}

TEST_CASE("sampling below the fill threshold is refused") {
  ReplayBuffer<TagState> buf(100);
  for (int i = 0; i < 10; ++i) buf.push(tagged(i));
  cdrl::Rng rng(1);
  REQUIRE_THROWS_AS(buf.sample(32, rng), cdrl::InsufficientData);
  REQUIRE(buf.sample(10, rng).size() == 10);
}

TEST_CASE("identical engine states give identical batches") {
  ReplayBuffer<TagState> buf(64);
  for (int i = 0; i < 64; ++i) buf.push(tagged(i));
  cdrl::Rng r1(777), r2(777);
  auto b1 = buf.sample(32, r1);
  auto b2 = buf.sample(32, r2);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    REQUIRE(b1[i]->state.id == b2[i]->state.id);
  }
}

TEST_CASE("sampling a 4-entry buffer is uniform within 3 sigma") {
  // 1e5 draws, p = 1/4: sigma = sqrt(n p (1-p)) ~ 137.  Frequencies must sit
  // within 3 sigma of n/4 = 25000.
  ReplayBuffer<TagState> buf(4);
  for (int i = 0; i < 4; ++i) buf.push(tagged(i));
  cdrl::Rng rng(123456);
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) {
    counts[static_cast<std::size_t>(buf.sample(1, rng)[0]->state.id)] += 1;
  }
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) {
    REQUIRE(std::fabs(c - n / 4.0) < 3.0 * sigma);
  }
}

TEST_CASE("eviction order matches a list-model oracle over random pushes") {
  cdrl::Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cap = 1 + rng() % 17;
    ReplayBuffer<TagState> buf(cap);
    std::deque<int> model;
    const int pushes = static_cast<int>(rng() % 60);
    for (int i = 0; i < pushes; ++i) {
      buf.push(tagged(i));
      model.push_back(i);
      if (model.size() > cap) model.pop_front();
      REQUIRE(buf.size() == model.size());
    }
    for (std::size_t i = 0; i < model.size(); ++i) {
      REQUIRE(buf.oldest_first(i).state.id == model[i]);
    }
  }
}

TEST_CASE("sampled indices always reference live entries") {
  ReplayBuffer<TagState> buf(16);
  cdrl::Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    buf.push(tagged(i));
    if (buf.size() >= 4) {
      for (const auto* e : buf.sample(4, rng)) {
        // Live window is the last `capacity` pushes.
        REQUIRE(e->state.id > i - 16);
        REQUIRE(e->state.id <= i);
      }
    }
  }
}
