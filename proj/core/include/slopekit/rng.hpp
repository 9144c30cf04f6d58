#pragma once

#include <cstdint>
#include <random>

namespace slopekit {

/// Independent draw streams used by the generator. Keeping them separate
/// means toggling one design knob (e.g. MCAR) never shifts the draws of another.
enum class StreamPurpose : std::uint64_t {
  Metabolite = 1,
  RandomEffects = 2,
  Noise = 3,
  Jitter = 4,
  Mcar = 5,
};

/// Deterministic pseudo-random stream keyed by (master seed, replication, purpose).
/// Identical keys give identical sequences regardless of thread scheduling.
class RngStream {
public:
  RngStream(std::uint64_t master_seed, std::uint64_t rep_index, StreamPurpose purpose);

  double uniform(double lo, double hi);
  double standard_normal();

  std::mt19937_64& engine() noexcept { return engine_; }

  static std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t rep_index,
                                   StreamPurpose purpose) noexcept;

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace slopekit
