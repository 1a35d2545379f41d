#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace envedit {

using Vec = std::vector<double>;
using NodeId = int;

inline constexpr int kNumHeadings = 12;
inline constexpr int kNumElevations = 3;
inline constexpr int kViewsPerPanorama = kNumHeadings * kNumElevations;
inline constexpr int kOrientationDim = 4;

// Error with a stable machine-readable code; the CLI serializes both fields.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer, used to derive independent sub-seeds from a base seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t s = mix_seed(base);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

inline std::uint64_t hash_tag(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline Vec normal_vector(Rng& rng, std::size_t n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vec v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace envedit
