#pragma once

#include <optional>

#include <Eigen/Dense>

#include "slopekit/types.hpp"

namespace slopekit {

/// (y_last - y_first) / (t_last - t_first); subjects with fewer than two
/// observations are ineligible.
SlopeSet simple_slopes(const LongitudinalDataset& ds);

/// Per-subject least-squares slope of y on t; needs two distinct times.
SlopeSet ols_slopes(const LongitudinalDataset& ds);

/// eta1 + u1_i from a SLOPE_ONLY fit. Subjects without data are ineligible.
SlopeSet blup_slopes(const LmmFit& fit);

/// Re-inflation of the BLUPs so that their crude covariance matches the REML estimate.
///   S = U'U / I,  R = Omega_hat,  A = (L_R L_S^-1)',  U* = U A
struct InflationTransform {
  Eigen::Matrix2d s_matrix;
  Eigen::Matrix2d r_matrix;
  Eigen::Matrix2d a_matrix;  // upper triangular
};

struct InflationResult {
  SlopeSet slopes;
  InflationTransform transform;
  Eigen::MatrixX2d inflated;  // U*, one row per subject with data, dataset order
};

/// Builds A from S and R. Throws InflationInfeasibleError if either is not
/// numerically positive definite.
InflationTransform make_inflation_transform(const Eigen::Matrix2d& s, const Eigen::Matrix2d& r);

/// Throws InflationInfeasibleError if S or R is singular.
InflationResult inflate_random_effects(const LmmFit& fit);

/// Multiplicative bias of the BLUPs, B = G Z' V^-1 H Z with
/// H = I - X (X'V^-1X)^-1 X'V^-1, assembled as a dense 2I x 2I matrix.
///
/// Because X_i = Z_i in the SLOPE_ONLY model, B maps every subject-constant
/// shift to zero, so B is singular by construction. The BLUPs always lie in
/// the complementary (mean-zero) subspace; the correction solves B x = U on
/// that subspace and `condition_estimate` is the 1-norm condition of B
/// restricted to it. Any further singularity (for example a subject with a
/// single visit) makes the correction infeasible.
struct BiasCorrection {
  static constexpr double kConditionLimit = 1e12;

  Eigen::MatrixXd matrix;
  double condition_estimate = 0.0;
  bool feasible = false;
};

struct CorrectionResult {
  std::optional<SlopeSet> slopes;  // empty when infeasible
  BiasCorrection correction;
  /// Stacked (u0_1, u1_1, u0_2, ...) BLUPs and, when feasible, their corrected values.
  Eigen::VectorXd blups;
  Eigen::VectorXd corrected;
};

/// Requires a SLOPE_ONLY fit of `ds`. Returns an infeasible result (no slopes)
/// when any subject has no observations or the condition estimate is >= 1e12.
/// Memory is O(I^2): 2I x 2I doubles per call.
CorrectionResult bias_correction(const LmmFit& fit, const LongitudinalDataset& ds);

/// OLS of eligible slopes on the subjects' predictor values, with the classical
/// homoskedastic SE of the slope coefficient.
SecondStageFit second_stage_regress(const SlopeSet& slopes, const LongitudinalDataset& ds);

}  // namespace slopekit
