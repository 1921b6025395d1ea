#pragma once
// Deterministic counter-derived random streams.
//
// Every stochastic quantity in the toolkit is drawn from a NormalStream keyed
// by (master seed, purpose tag, replica id, particle id). Keys are derived by
// chaining a SplitMix64 finalizer over the id words, so streams never share
// state: replicas and particles can be simulated in any order and on any
// number of workers while reproducing bit-identical draws.

#include <cmath>
#include <cstdint>

namespace mvmv::rng {

// SplitMix64 output finalizer (Steele/Lea/Flood constants).
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream identity words are folded in one at a time, each offset by a distinct
// odd constant so (tag, replica, particle) permutations land on distinct keys.
inline constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t tag,
                                          std::uint64_t replica,
                                          std::uint64_t particle) noexcept {
  std::uint64_t k = mix64(seed + 0x9e3779b97f4a7c15ULL);
  k = mix64(k ^ (tag + 0xd1342543de82ef95ULL));
  k = mix64(k ^ (replica + 0xaf251af3b0f025b5ULL));
  k = mix64(k ^ (particle + 0x2545f4914f6cdd1dULL));
  return k;
}

// Purpose tags keep independent uses of the same (seed, replica, particle)
// triple on disjoint streams.
enum class StreamTag : std::uint64_t {
  noise = 1,        // Brownian increments of the driving process
  law_noise = 2,    // increments of an auxiliary uncontrolled ensemble
  probes = 3,       // hypothesis-validation probe points
  controls = 4,     // randomized controls in tests
  scratch = 5,      // miscellaneous test draws
  independent = 6,  // deliberately decoupled noise (coupling comparisons)
};

// Sequential SplitMix64 stream with Box-Muller normals. The spare normal is
// cached, so a stream's draws depend only on its key and call count.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t key) noexcept : state_(key) {}
  NormalStream(std::uint64_t seed, StreamTag tag, std::uint64_t replica = 0,
               std::uint64_t particle = 0) noexcept
      : state_(stream_key(seed, static_cast<std::uint64_t>(tag), replica, particle)) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform on the open interval (0, 1); never returns an endpoint.
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n >= 1. Modulo bias is irrelevant at the n used here.
  std::uint64_t uniform_index(std::uint64_t n) noexcept { return next_u64() % n; }

  double normal() noexcept {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double stddev) noexcept { return stddev * normal(); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mvmv::rng
