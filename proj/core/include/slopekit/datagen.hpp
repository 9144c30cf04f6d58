#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "slopekit/rng.hpp"
#include "slopekit/types.hpp"

namespace slopekit {

/// Random-effects covariance [[w0^2, r w0 w1], [r w0 w1, w1^2]] from SDs and correlation.
/// Throws ParameterDomainError for negative SDs or |rho| > 1. Singular output is allowed.
Eigen::Matrix2d build_omega(double omega0, double omega1, double rho);

/// Visit times for every subject. Regular spacing copies the nominal grid.
/// Irregular spacing keeps the baseline at 0 and moves each later visit by a
/// uniform draw in [-jitter, +jitter], reflected back into [0, last nominal time].
/// Visits may swap order across grid points; each subject's list is sorted and
/// redrawn in the (probability zero) event of a tie.
std::vector<std::vector<double>> generate_times(const ScenarioConfig& cfg, RngStream& stream);

/// Deletes each observation (baseline included) independently with probability `rate`.
/// Subjects that lose every observation stay in the dataset.
LongitudinalDataset apply_mcar(LongitudinalDataset ds, double rate, RngStream& stream);

/// One replication of the data-generating mixed model. Deterministic in
/// (cfg.master_seed, rep_index).
LongitudinalDataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t rep_index);

}  // namespace slopekit
