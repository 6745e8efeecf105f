#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace audioplan {

// splitmix64 finalizer. Used everywhere a seed has to be mixed with a step
// index or a group tag; std::hash is implementation-defined and would break
// the byte-identical-plan contract across standard libraries.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream seed from a root seed, a domain tag and an index
// (e.g. the batch step). Plans stay reproducible under partial regeneration
// because stream n never depends on streams 0..n-1.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t domain,
                                    std::uint64_t index = 0) {
  return mix64(root ^ mix64(domain ^ 0x6d6f646f6d61696eULL) ^ mix64(index));
}

// mt19937_64 produces identical output on every conforming platform. The
// draw helpers below replace std::uniform_int_distribution / std::shuffle /
// std::bernoulli_distribution, whose mappings from raw bits to values are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Unbiased draw in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return unit() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Domain tags for derive_seed.
inline constexpr std::uint64_t kDomainBatch = 0xb1;
inline constexpr std::uint64_t kDomainStratify = 0x57;
inline constexpr std::uint64_t kDomainKmeans = 0x4b;
inline constexpr std::uint64_t kDomainRoundRobin = 0x88;

}  // namespace audioplan
