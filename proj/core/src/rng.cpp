#include "slopekit/rng.hpp"

namespace slopekit {

namespace {
// splitmix64 finalizer
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t RngStream::derive_seed(std::uint64_t master_seed, std::uint64_t rep_index,
                                     StreamPurpose purpose) noexcept {
  std::uint64_t h = mix(master_seed);
  h = mix(h ^ rep_index);
  h = mix(h ^ static_cast<std::uint64_t>(purpose));
  return h;
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t rep_index, StreamPurpose purpose)
    : engine_(derive_seed(master_seed, rep_index, purpose)) {}

double RngStream::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double RngStream::standard_normal() { return normal_(engine_); }

}  // namespace slopekit
