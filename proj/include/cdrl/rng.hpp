// Deterministic random-number utilities.
//
// Every stochastic component draws from its own named stream derived from the
// single master seed.  Derivation goes through splitmix64 so that stream ids
// that differ in one bit still yield statistically independent mt19937_64
// engines, and so a run is reproducible regardless of which subsystems happen
// to consume randomness in which order.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cdrl {

using Rng = std::mt19937_64;

// One step of the splitmix64 sequence; mutates the state and returns the next
// output.  Used both as a seed scrambler and a tiny standalone generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn stream names into stream ids.
inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives the seed for a named sub-stream of `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_id) {
  std::uint64_t s = master;
  std::uint64_t a = splitmix64(s);
  s ^= stream_id;
  std::uint64_t b = splitmix64(s);
  return a ^ (b + 0x632be59bd9b4e019ULL);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name) {
  return derive_seed(master, fnv1a64(stream_name));
}

// Engine for a named stream.
inline Rng make_rng(std::uint64_t master, std::string_view stream_name) {
  return Rng(derive_seed(master, stream_name));
}

// Uniform draw in [0,1) from the top 53 bits of the engine output; avoids the
// implementation-defined behaviour of std::uniform_real_distribution so runs
// are reproducible across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

// Uniform integer in [0, n) by modulo; the tiny modulo bias over a 64-bit
// range is irrelevant at the n values used here.
inline int uniform_index(Rng& rng, int n) {
  return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
}

}  // namespace cdrl
