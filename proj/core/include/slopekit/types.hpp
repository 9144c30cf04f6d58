#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace slopekit {

using SubjectId = std::int64_t;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A parameter outside its mathematical domain (negative SD, |rho| > 1, ...).
class ParameterDomainError : public Error {
public:
  using Error::Error;
};

/// Fixed-effect or second-stage design without full column rank.
class RankDeficiencyError : public Error {
public:
  RankDeficiencyError(const std::string& what, std::vector<std::string> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
  std::vector<std::string> columns_;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

/// Empirical or REML covariance of the random effects cannot be factorized.
class InflationInfeasibleError : public Error {
public:
  using Error::Error;
};

/// A marginal covariance block stayed singular after ridging.
class NumericalError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

enum class Spacing { Regular, Irregular };
enum class Provenance { Generated, Ingested };

/// FULL: y ~ 1 + M + t + M:t with random (1 + t | subject).
/// SLOPE_ONLY: y ~ 1 + t with random (1 + t | subject).
enum class Design { Full, SlopeOnly };

enum class Method { Lmm, Simple, Ols, Blup, Inflated, BlupCorrected };

inline constexpr Method kAllMethods[] = {Method::Lmm,  Method::Simple,   Method::Ols,
                                         Method::Blup, Method::Inflated, Method::BlupCorrected};
inline constexpr std::size_t kMethodCount = std::size(kAllMethods);

std::string_view to_string(Spacing s);
std::string_view to_string(Design d);
std::string_view to_string(Method m);
std::optional<Spacing> parse_spacing(std::string_view text);
/// Accepts the display names ("BLUP-corrected") and lower-case CLI forms ("blup-corrected").
std::optional<Method> parse_method(std::string_view text);
constexpr std::size_t index_of(Method m) { return static_cast<std::size_t>(m); }

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Data-generating parameters of one simulation scenario. Defaults are the
/// baseline study design (I = 200, biennial visits over 10 years).
struct ScenarioConfig {
  int n_subjects = 200;
  std::vector<double> nominal_times{0.0, 2.0, 4.0, 6.0, 8.0, 10.0};
  Spacing spacing = Spacing::Regular;
  /// Half-width (years) of the uniform visit jitter used when spacing is irregular.
  double jitter = 2.0;
  double mcar_rate = 0.0;

  double beta0 = -24.22;
  double beta1 = 4.34;
  double beta2 = -5.13;
  double beta3 = 0.223;

  double mu_m = 14.8;
  double sigma_m = 0.79;
  double omega0 = 9.87;
  double omega1 = 2.27;
  double rho = 0.159;
  double sigma_err = 5.87;

  int n_reps = 1000;
  std::uint64_t master_seed = 42;

  /// Throws ParameterDomainError on the first violated invariant.
  void validate() const;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

struct SubjectRecord {
  SubjectId subject_id = 0;
  double metabolite = 0.0;
  std::vector<double> times;
  std::vector<double> responses;
  // True random effects; only set on generated data and never read by estimators.
  std::optional<double> latent_intercept;
  std::optional<double> latent_slope;

  std::size_t n_obs() const noexcept { return times.size(); }
};

struct LongitudinalDataset {
  std::vector<SubjectRecord> subjects;
  Provenance provenance = Provenance::Ingested;

  std::size_t total_observations() const noexcept;
};

struct SlopeEntry {
  SubjectId subject_id = 0;
  double slope = 0.0;
  bool eligible = false;
};

/// Per-subject first-stage slopes, in dataset order.
struct SlopeSet {
  Method method = Method::Simple;
  std::vector<SlopeEntry> entries;

  std::size_t n_eligible() const noexcept;
};

struct SecondStageFit {
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double se_alpha1 = 0.0;
  double sigma_ss = 0.0;
  int n_used = 0;
};

struct RandomEffect {
  SubjectId subject_id = 0;
  double intercept = 0.0;
  double slope = 0.0;
  /// False for subjects without observations; their effects are reported as (0, 0).
  bool has_data = false;
};

struct LmmFit {
  Design design = Design::Full;
  /// FULL: (beta0, beta1, beta2, beta3); SLOPE_ONLY: (eta0, eta1).
  Eigen::VectorXd fixed_effects;
  Eigen::VectorXd fixed_se;
  Eigen::MatrixXd fixed_cov;
  Eigen::Matrix2d omega = Eigen::Matrix2d::Zero();
  double sigma = 0.0;
  std::vector<RandomEffect> random_effects;
  bool converged = false;
  double reml_value = 0.0;
  int n_iter = 0;
  int n_evals = 0;
};

struct MetricsSummary {
  std::string scenario_id;
  Method method = Method::Lmm;
  double bias = 0.0;
  double rel_bias_pct = 0.0;
  double sd = 0.0;
  double se = 0.0;
  double root_mse = 0.0;
  int n_reps_used = 0;
  int n_reps_failed = 0;
};

}  // namespace slopekit
