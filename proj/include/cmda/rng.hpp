#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace cmda {

// Counter-based randomness. Every draw is a pure function of
// (root seed, substream, keys...), so runs are reproducible and a paused
// run resumes on the exact same random sequence without serialized RNG state.
enum class Stream : std::uint64_t {
  Init = 1,       // parameter initialization
  DataOrder = 2,  // epoch shuffles and batch composition
  Masking = 3,    // masked-example position selection
  Dropout = 4,    // dropout masks
  GammaGate = 5,  // per-token substitution gating
  HardSample = 6, // sampling replacement tokens
  Noise = 7,      // swap/drop/blank/smooth baselines
  Bootstrap = 8,  // significance resampling
  Synth = 9,      // synthetic corpus generation (tests, tools)
};

namespace detail {
inline std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

inline std::uint64_t hash_u64(std::uint64_t a) { return detail::splitmix(a); }

inline std::uint64_t hash_u64(std::uint64_t a, std::uint64_t b) {
  return detail::splitmix(detail::splitmix(a) ^ b);
}

template <typename... Rest>
std::uint64_t hash_u64(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return hash_u64(hash_u64(a, b), static_cast<std::uint64_t>(rest)...);
}

// Uniform in [0, 1) with 53 bits of mantissa.
inline double to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

template <typename... Keys>
double uniform01(std::uint64_t seed, Stream stream, Keys... keys) {
  return to_unit(hash_u64(seed, static_cast<std::uint64_t>(stream),
                          static_cast<std::uint64_t>(keys)...));
}

// Stateful convenience wrapper over the counter scheme: a keyed stream with
// an incrementing counter. Cheap to copy; the counter is the only state.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t key = 0)
      : base_(hash_u64(seed, static_cast<std::uint64_t>(stream), key)) {}

  std::uint64_t next_u64() { return hash_u64(base_, counter_++); }

  double uniform() { return to_unit(next_u64()); }

  // Uniform integer in [0, n) via 128-bit multiply (no modulo bias to speak of).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

// Deterministic Fisher-Yates; std::shuffle is not portable across stdlibs.
template <typename T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace cmda
