#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace tract::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Derives an independent stream seed from a root seed and a stream name.
// All randomness in the pipeline flows from one root seed through named
// sub-streams so that stages cannot perturb each other's sequences.
inline std::uint64_t sub_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t s = root ^ fnv1a64(name);
  return splitmix64(s);
}

inline std::uint64_t sub_seed(std::uint64_t root, std::string_view name, std::uint64_t index) {
  std::uint64_t s = sub_seed(root, name) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  return splitmix64(s);
}

// Deterministic generator. Distributions are implemented here rather than
// via <random> so that streams replay identically across standard libraries.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Modulo bias is negligible for
  // the small ranges used here.
  int uniform_int(int lo, int hi) {
    if (hi < lo) return lo;
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Box-Muller; keeps the spare deviate so consecutive calls stay cheap.
  double normal(double mean = 0.0, double sd = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + sd * spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + sd * r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tract::rng
