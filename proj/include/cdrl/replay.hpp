// Bounded FIFO experience store with seeded uniform sampling.
//
// Storage grows on demand up to `capacity`; once full, pushes overwrite the
// oldest entry via a ring cursor.  Sampling draws uniformly with replacement
// from the caller's engine, so identical engine state yields identical
// batches.
#pragma once

#include <cstdint>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

template <typename S>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay: capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }

  void push(EpisodeStep<S> step) {
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(step));
    } else {
      entries_[write_cursor_] = std::move(step);
    }
    write_cursor_ = (write_cursor_ + 1) % capacity_;
  }

  const EpisodeStep<S>& entry(std::size_t i) const { return entries_.at(i); }

  // Oldest-first view order: logical index 0 is the oldest stored entry.
  const EpisodeStep<S>& oldest_first(std::size_t logical) const {
    if (logical >= entries_.size()) throw InsufficientData("replay: index past fill");
    if (entries_.size() < capacity_) return entries_[logical];
    return entries_[(write_cursor_ + logical) % capacity_];
  }

  // Uniform with replacement; deterministic given the engine state.
  std::vector<const EpisodeStep<S>*> sample(std::size_t batch_size, Rng& rng) const {
    if (entries_.size() < batch_size) {
      throw InsufficientData("replay: have " + std::to_string(entries_.size()) +
                             " entries, asked for batch of " + std::to_string(batch_size));
    }
    std::vector<const EpisodeStep<S>*> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch.push_back(&entries_[static_cast<std::size_t>(
          uniform_index(rng, static_cast<int>(entries_.size())))]);
    }
    return batch;
  }

 private:
  std::size_t capacity_;
  std::size_t write_cursor_ = 0;
  std::vector<EpisodeStep<S>> entries_;
};

}  // namespace cdrl
