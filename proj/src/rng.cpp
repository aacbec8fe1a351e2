#include "prismwf/rng.hpp"

#include <cmath>
#include <numbers>

#include "prismwf/core.hpp"

namespace prismwf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

RngHandle rng_fork(const RngHandle& parent, std::string_view label) {
  const std::uint64_t tag = fnv1a64(label);
  return RngHandle{splitmix64(parent.seed ^ splitmix64(tag)),
                   splitmix64(parent.stream + tag)};
}

RngHandle rng_fork(const RngHandle& parent, std::string_view label,
                   std::uint64_t index) {
  const RngHandle base = rng_fork(parent, label);
  return RngHandle{splitmix64(base.seed + splitmix64(index)),
                   base.stream ^ index};
}

Rng::Rng(const RngHandle& handle)
    : engine_(splitmix64(handle.seed ^ splitmix64(handle.stream))) {}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw Error("invalid_argument", "uniform_int with hi < lo");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span + 1) % span;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x > limit);
  return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::rayleigh(double scale) {
  // Inverse CDF; 1 - u lies in (0, 1].
  return scale * std::sqrt(-2.0 * std::log(1.0 - uniform()));
}

}  // namespace prismwf
