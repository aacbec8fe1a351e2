#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prismwf {

// Identifies a deterministic random stream.
struct RngHandle {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  friend bool operator==(const RngHandle&, const RngHandle&) = default;
};

// Child stream keyed on a label. Same (parent, label) -> same child.
RngHandle rng_fork(const RngHandle& parent, std::string_view label);
RngHandle rng_fork(const RngHandle& parent, std::string_view label,
                   std::uint64_t index);

// Draw source for a handle. The engine is mt19937_64, whose output sequence
// is fixed by the standard; the transforms below avoid std distributions,
// which differ between standard library implementations.
class Rng {
 public:
  explicit Rng(const RngHandle& handle);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double rayleigh(double scale);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = uniform_int(0, static_cast<std::int64_t>(i));
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace prismwf
