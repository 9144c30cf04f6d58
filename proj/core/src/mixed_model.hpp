#pragma once

// Per-subject linear algebra shared by the REML fitter and the bias correction.
//
// For subject i with random-effects design Z_i (n x 2) and Omega = L L', write
// A = Z_i L. Then V_i = sigma^2 I + A A' and, with C = sigma^2 I_2 + A'A,
//
//   V_i^-1       = sigma^-2 (I - A C^-1 A')
//   log|V_i|     = (n - 2) log sigma^2 + log|C|
//   A' V_i^-1 D  = C^-1 A' D                 =: S
//   D' V_i^-1 D  = E'E / sigma^2 + S'S,       E := D - A S
//
// Both terms of the last identity are Gram matrices, so quadratic forms are
// accumulated without cancellation even when sigma is tiny.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "slopekit/types.hpp"

namespace slopekit::detail {

struct SubjectBlock {
  SubjectId id = 0;
  std::size_t dataset_index = 0;
  Eigen::Index offset = 0;
  Eigen::Index n = 0;
  double metabolite = 0.0;
};

/// Stacked design for the subjects that have at least one observation.
struct ModelData {
  ModelData(const LongitudinalDataset& ds, Design design);

  Design design;
  int p;
  std::vector<SubjectBlock> blocks;
  Eigen::MatrixXd Z;  // N x 2: (1, t)
  Eigen::MatrixXd D;  // N x (p + 1): (X | y)

  Eigen::Index n_obs() const { return Z.rows(); }
  auto X() const { return D.leftCols(p); }
  auto y() const { return D.col(p); }
};

/// Lower-triangular L with L L' = omega for any symmetric PSD 2x2 matrix.
Eigen::Matrix2d psd_lower_factor(const Eigen::Matrix2d& omega);

/// Lower factor written directly from SDs and correlation.
Eigen::Matrix2d lower_factor(double omega0, double omega1, double rho);

struct WhitenedSubject {
  double sigma2 = 0.0;   // effective residual variance (after any ridge)
  double logdet_v = 0.0;
  bool ridged = false;
};

/// Whitens the columns of `d` for one subject. Writes E / sigma (n x k) into
/// `e_scaled` and S (2 x k) into `s`. Returns false if V_i stays singular after
/// a ridge of 1e-10 * tr(V_i) / n.
bool whiten_subject(const Eigen::Ref<const Eigen::MatrixXd>& z, const Eigen::Matrix2d& lower,
                    double sigma2, const Eigen::Ref<const Eigen::MatrixXd>& d,
                    Eigen::Ref<Eigen::MatrixXd> e_scaled, Eigen::Ref<Eigen::MatrixXd> s,
                    WhitenedSubject& info);

/// All whitened blocks for one parameter value.
class Whitening {
public:
  explicit Whitening(const ModelData& md);

  /// False if any subject's covariance is singular.
  bool compute(const Eigen::Matrix2d& lower, double sigma);

  const ModelData& data() const { return md_; }
  const Eigen::MatrixXd& e_scaled() const { return e_; }  // N x (p+1)
  const Eigen::MatrixXd& s() const { return s_; }         // 2I x (p+1)
  const Eigen::MatrixXd& gram() const { return gram_; }   // (X y)' V^-1 (X y)
  double logdet_v() const { return logdet_v_; }

private:
  const ModelData& md_;
  Eigen::MatrixXd e_;
  Eigen::MatrixXd s_;
  Eigen::MatrixXd gram_;
  double logdet_v_ = 0.0;
};

/// REML criterion from a completed whitening; +inf if X'V^-1X is singular.
double reml_from_whitening(const Whitening& w);

/// Column indices (into X) that are linearly dependent on earlier pivots of X'V^-1X.
std::vector<int> collinear_columns(const Eigen::MatrixXd& xtvx);

}  // namespace slopekit::detail
