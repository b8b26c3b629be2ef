#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace shrink {

// splitmix64; used both as a stream generator and to derive child seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed derivation: hash(master, a, b, c). Every component
// that forks work (NAS slots, data shards, per-tensor init) goes through
// this so results never depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0x632be59bd9b4e019ULL + a;
  splitmix64(s);
  s ^= 0x9e6c63d0876a9a47ULL + b;
  splitmix64(s);
  s ^= 0xd1b54a32d192ed03ULL + c;
  return splitmix64(s);
}

// Self-contained xoshiro256** generator with hand-rolled distributions.
// The C++ standard pins mt19937_64 but not the distributions, so we keep
// the whole sampling path in our own code for bit-reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Rejection-free bounded multiply.
  std::uint64_t next_below(std::uint64_t n) {
    // Lemire reduction; deterministic for a given seed stream.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(
                    static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller; consumes two uniforms per pair, caches the second.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_cached_) {
      has_cached_ = false;
      return mean + stddev * cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4] = {};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace shrink
