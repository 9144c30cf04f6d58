#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slopekit/types.hpp"

namespace slopekit {

/// Unconstrained optimizer coordinates for (omega0, omega1, rho, sigma).
/// SDs are stored on the log scale and floored at kSdFloor when mapped back.
struct VarianceParams {
  static constexpr double kSdFloor = 1e-6;
  static constexpr double kSdCeiling = 1e6;
  static constexpr double kAtanhBound = 12.0;

  double log_omega0 = 0.0;
  double log_omega1 = 0.0;
  double atanh_rho = 0.0;
  double log_sigma = 0.0;

  static VarianceParams from_natural(double omega0, double omega1, double rho, double sigma);
  static VarianceParams from_vector(const Eigen::Vector4d& v);
  Eigen::Vector4d to_vector() const;

  double omega0() const;
  double omega1() const;
  double rho() const;
  double sigma() const;
  Eigen::Matrix2d omega() const;
};

std::vector<std::string> fixed_effect_names(Design design);
int fixed_effect_count(Design design);

/// -2 * restricted log-likelihood of the Gaussian mixed model with per-subject
/// covariance V_i = Z_i Omega Z_i' + sigma^2 I, fixed effects profiled out by GLS.
/// Evaluated subject by subject; the N x N covariance is never formed.
/// Returns +infinity when a covariance block or X'V^-1X cannot be factorized.
double reml_objective(const VarianceParams& vp, const LongitudinalDataset& ds, Design design);

struct GlsResult {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // (X'V^-1X)^-1
};

/// Generalized least squares fixed effects for a given Omega and sigma.
/// Throws RankDeficiencyError naming the collinear columns when X'V^-1X is singular.
GlsResult gls_fixed_effects(const LongitudinalDataset& ds, Design design,
                            const Eigen::Matrix2d& omega, double sigma);

struct FitOptions {
  int max_evaluations = 2000;
  double objective_tolerance = 1e-8;  // relative, final iteration
  double parameter_tolerance = 1e-6;  // max-abs in optimizer coordinates
};

/// REML fit by multi-start Nelder-Mead (method-of-moments start plus a
/// dispersed default) followed by a BFGS polish, then GLS fixed effects, Wald
/// SEs and BLUPs at the optimum. Non-convergence is reported through
/// LmmFit::converged, never thrown.
LmmFit fit_lmm(const LongitudinalDataset& ds, Design design, const FitOptions& options = {});

/// u_i = Omega Z_i' V_i^-1 (y_i - X_i beta) for every subject in `ds`, in dataset order.
/// Subjects with no observations get (0, 0) and has_data = false.
std::vector<RandomEffect> extract_blups(const LmmFit& fit, const LongitudinalDataset& ds);

}  // namespace slopekit
