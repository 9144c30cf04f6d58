#include "slopekit/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mixed_model.hpp"
#include "optimize.hpp"

namespace slopekit {

// ---------------------------------------------------------------------------
// VarianceParams
// ---------------------------------------------------------------------------

namespace {
const double kLogSdFloor = std::log(VarianceParams::kSdFloor);
const double kLogSdCeiling = std::log(VarianceParams::kSdCeiling);

double clamp_log_sd(double v) { return std::clamp(v, kLogSdFloor, kLogSdCeiling); }
}  // namespace

VarianceParams VarianceParams::from_natural(double omega0, double omega1, double rho,
                                            double sigma) {
  if (!(omega0 >= 0.0 && omega1 >= 0.0 && sigma >= 0.0))
    throw ParameterDomainError("variance parameters must be nonnegative");
  if (!(rho >= -1.0 && rho <= 1.0)) throw ParameterDomainError("rho must lie in [-1, 1]");
  auto log_sd = [](double sd) { return sd > 0.0 ? clamp_log_sd(std::log(sd)) : kLogSdFloor; };
  VarianceParams vp;
  vp.log_omega0 = log_sd(omega0);
  vp.log_omega1 = log_sd(omega1);
  vp.atanh_rho = std::clamp(std::atanh(rho), -kAtanhBound, kAtanhBound);
  vp.log_sigma = log_sd(sigma);
  return vp;
}

VarianceParams VarianceParams::from_vector(const Eigen::Vector4d& v) {
  return VarianceParams{v[0], v[1], v[2], v[3]};
}

Eigen::Vector4d VarianceParams::to_vector() const {
  return {log_omega0, log_omega1, atanh_rho, log_sigma};
}

double VarianceParams::omega0() const { return std::exp(clamp_log_sd(log_omega0)); }
double VarianceParams::omega1() const { return std::exp(clamp_log_sd(log_omega1)); }
double VarianceParams::rho() const {
  return std::tanh(std::clamp(atanh_rho, -kAtanhBound, kAtanhBound));
}
double VarianceParams::sigma() const { return std::exp(clamp_log_sd(log_sigma)); }

Eigen::Matrix2d VarianceParams::omega() const {
  const double o0 = omega0(), o1 = omega1(), r = rho();
  Eigen::Matrix2d m;
  m << o0 * o0, r * o0 * o1, r * o0 * o1, o1 * o1;
  return m;
}

std::vector<std::string> fixed_effect_names(Design design) {
  if (design == Design::Full) return {"(Intercept)", "M", "t", "M:t"};
  return {"(Intercept)", "t"};
}

int fixed_effect_count(Design design) { return design == Design::Full ? 4 : 2; }

// ---------------------------------------------------------------------------
// Per-subject machinery
// ---------------------------------------------------------------------------

namespace detail {

ModelData::ModelData(const LongitudinalDataset& ds, Design design_)
    : design(design_), p(fixed_effect_count(design_)) {
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const auto& s = ds.subjects[i];
    if (s.n_obs() == 0) continue;
    blocks.push_back({s.subject_id, i, total, static_cast<Eigen::Index>(s.n_obs()), s.metabolite});
    total += static_cast<Eigen::Index>(s.n_obs());
  }
  Z.resize(total, 2);
  D.resize(total, p + 1);
  for (const auto& b : blocks) {
    const auto& s = ds.subjects[b.dataset_index];
    for (Eigen::Index j = 0; j < b.n; ++j) {
      const double t = s.times[static_cast<std::size_t>(j)];
      const Eigen::Index r = b.offset + j;
      Z(r, 0) = 1.0;
      Z(r, 1) = t;
      if (design == Design::Full) {
        D(r, 0) = 1.0;
        D(r, 1) = s.metabolite;
        D(r, 2) = t;
        D(r, 3) = s.metabolite * t;
      } else {
        D(r, 0) = 1.0;
        D(r, 1) = t;
      }
      D(r, p) = s.responses[static_cast<std::size_t>(j)];
    }
  }
}

Eigen::Matrix2d psd_lower_factor(const Eigen::Matrix2d& omega) {
  Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
  if (omega(0, 0) > 0.0) {
    l(0, 0) = std::sqrt(omega(0, 0));
    l(1, 0) = omega(1, 0) / l(0, 0);
  }
  l(1, 1) = std::sqrt(std::max(0.0, omega(1, 1) - l(1, 0) * l(1, 0)));
  return l;
}

Eigen::Matrix2d lower_factor(double omega0, double omega1, double rho) {
  Eigen::Matrix2d l;
  l << omega0, 0.0, omega1 * rho, omega1 * std::sqrt(std::max(0.0, 1.0 - rho * rho));
  return l;
}

bool whiten_subject(const Eigen::Ref<const Eigen::MatrixXd>& z, const Eigen::Matrix2d& lower,
                    double sigma2, const Eigen::Ref<const Eigen::MatrixXd>& d,
                    Eigen::Ref<Eigen::MatrixXd> e_scaled, Eigen::Ref<Eigen::MatrixXd> s,
                    WhitenedSubject& info) {
  const Eigen::Index n = z.rows();
  const Eigen::MatrixXd a = z * lower;
  const Eigen::Matrix2d ata = a.transpose() * a;

  // Ridge only blocks whose smallest eigenvalue (sigma^2) is negligible against tr(V)/n.
  const double ridge = 1e-10 * (sigma2 + ata.trace() / static_cast<double>(n));
  double var = sigma2;
  info.ridged = false;
  if (!(var > ridge)) {
    var += ridge;
    info.ridged = true;
  }
  if (!(var > 0.0) || !std::isfinite(var)) return false;

  Eigen::Matrix2d c = ata;
  c.diagonal().array() += var;
  const Eigen::LLT<Eigen::Matrix2d> llt(c);
  if (llt.info() != Eigen::Success) return false;

  s = llt.solve(a.transpose() * d);
  e_scaled = (d - a * s) / std::sqrt(var);

  const Eigen::Vector2d diag = llt.matrixLLT().diagonal();
  info.sigma2 = var;
  info.logdet_v = static_cast<double>(n - 2) * std::log(var) + 2.0 * diag.array().log().sum();
  return std::isfinite(info.logdet_v);
}

Whitening::Whitening(const ModelData& md)
    : md_(md),
      e_(md.n_obs(), md.p + 1),
      s_(2 * static_cast<Eigen::Index>(md.blocks.size()), md.p + 1),
      gram_(md.p + 1, md.p + 1) {}

bool Whitening::compute(const Eigen::Matrix2d& lower, double sigma) {
  logdet_v_ = 0.0;
  WhitenedSubject info;
  for (std::size_t b = 0; b < md_.blocks.size(); ++b) {
    const auto& blk = md_.blocks[b];
    const auto bi = static_cast<Eigen::Index>(b);
    if (!whiten_subject(md_.Z.middleRows(blk.offset, blk.n), lower, sigma * sigma,
                        md_.D.middleRows(blk.offset, blk.n), e_.middleRows(blk.offset, blk.n),
                        s_.middleRows(2 * bi, 2), info))
      return false;
    logdet_v_ += info.logdet_v;
  }
  gram_.noalias() = e_.transpose() * e_;
  gram_.noalias() += s_.transpose() * s_;
  return true;
}

namespace {
// Cholesky of X'V^-1X that also rejects numerically rank-deficient matrices.
bool factor_information(const Eigen::MatrixXd& k, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(k);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd piv = llt.matrixLLT().diagonal().array().square();
  const Eigen::VectorXd diag = k.diagonal();
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    if (!(piv[i] > 1e-13 * diag[i])) return false;
  }
  return true;
}
}  // namespace

double reml_from_whitening(const Whitening& w) {
  const auto& md = w.data();
  const int p = md.p;
  const Eigen::MatrixXd k = w.gram().topLeftCorner(p, p);
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (!factor_information(k, llt)) return std::numeric_limits<double>::infinity();

  Eigen::VectorXd coef(p + 1);
  coef.head(p) = -llt.solve(w.gram().topRightCorner(p, 1));
  coef[p] = 1.0;
  const double rss = (w.e_scaled() * coef).squaredNorm() + (w.s() * coef).squaredNorm();
  const double logdet_k = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double dof = static_cast<double>(md.n_obs() - p);
  const double value = w.logdet_v() + logdet_k + rss + dof * std::log(2.0 * std::numbers::pi);
  return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
}

std::vector<int> collinear_columns(const Eigen::MatrixXd& xtvx) {
  const Eigen::Index p = xtvx.rows();
  std::vector<int> out;
  Eigen::VectorXd scale(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const double d = xtvx(i, i);
    scale[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    if (!(d > 0.0)) out.push_back(static_cast<int>(i));
  }
  const Eigen::MatrixXd corr = scale.asDiagonal() * xtvx * scale.asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(corr);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  for (Eigen::Index i = rank; i < p; ++i) {
    const int col = static_cast<int>(qr.colsPermutation().indices()[i]);
    if (std::find(out.begin(), out.end(), col) == out.end()) out.push_back(col);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

namespace {

void require_psd(const Eigen::Matrix2d& omega) {
  const bool symmetric = std::abs(omega(0, 1) - omega(1, 0)) <=
                         1e-12 * std::max(1.0, omega.cwiseAbs().maxCoeff());
  const double det = omega(0, 0) * omega(1, 1) - omega(0, 1) * omega(1, 0);
  const double tol = 1e-12 * std::max(1.0, omega(0, 0) * omega(1, 1));
  if (!symmetric || omega(0, 0) < 0.0 || omega(1, 1) < 0.0 || det < -tol)
    throw ParameterDomainError("omega must be symmetric positive semidefinite");
}

[[noreturn]] void throw_rank_deficient(Design design, const std::vector<int>& cols) {
  const auto names = fixed_effect_names(design);
  std::vector<std::string> named;
  std::ostringstream msg;
  msg << "rank-deficient fixed-effect design; collinear columns:";
  for (int c : cols) {
    named.push_back(names[static_cast<std::size_t>(c)]);
    msg << ' ' << names[static_cast<std::size_t>(c)];
  }
  throw RankDeficiencyError(msg.str(), std::move(named));
}

GlsResult gls_from_whitening(const detail::Whitening& w, Design design) {
  const int p = w.data().p;
  const Eigen::MatrixXd k = w.gram().topLeftCorner(p, p);
  const auto cols = detail::collinear_columns(k);
  if (!cols.empty()) throw_rank_deficient(design, cols);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw_rank_deficient(design, {});
  GlsResult out;
  out.coefficients = llt.solve(w.gram().topRightCorner(p, 1));
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(p, p));
  return out;
}

std::vector<RandomEffect> blups_from_whitening(const detail::Whitening& w,
                                               const Eigen::Matrix2d& lower,
                                               const Eigen::VectorXd& beta,
                                               const LongitudinalDataset& ds) {
  const auto& md = w.data();
  std::vector<RandomEffect> out(ds.subjects.size());
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) out[i].subject_id = ds.subjects[i].subject_id;

  Eigen::VectorXd coef(md.p + 1);
  coef.head(md.p) = -beta;
  coef[md.p] = 1.0;
  const Eigen::VectorXd s_r = w.s() * coef;
  for (std::size_t b = 0; b < md.blocks.size(); ++b) {
    const Eigen::Vector2d u = lower * s_r.segment<2>(2 * static_cast<Eigen::Index>(b));
    auto& re = out[md.blocks[b].dataset_index];
    re.intercept = u[0];
    re.slope = u[1];
    re.has_data = true;
  }
  return out;
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// Per-subject OLS lines -> moment estimates of (omega0, omega1, rho, sigma).
std::optional<VarianceParams> moment_start(const detail::ModelData& md) {
  std::vector<double> a, b, m;
  double rss = 0.0, dof = 0.0;
  Eigen::Matrix2d mean_inv = Eigen::Matrix2d::Zero();
  for (const auto& blk : md.blocks) {
    if (blk.n < 2) continue;
    const auto z = md.Z.middleRows(blk.offset, blk.n);
    const Eigen::VectorXd y = md.y().segment(blk.offset, blk.n);
    const Eigen::Matrix2d ztz = z.transpose() * z;
    const Eigen::FullPivLU<Eigen::Matrix2d> lu(ztz);
    if (!lu.isInvertible()) continue;
    const Eigen::Vector2d coef = lu.solve(z.transpose() * y);
    a.push_back(coef[0]);
    b.push_back(coef[1]);
    m.push_back(blk.metabolite);
    rss += (y - z * coef).squaredNorm();
    dof += static_cast<double>(blk.n - 2);
    mean_inv += lu.inverse();
  }
  const std::size_t count = a.size();
  if (count < 3) return std::nullopt;
  mean_inv /= static_cast<double>(count);
  const double sigma2 = dof > 0.0 ? rss / dof : 0.25 * sample_variance(b);

  // Remove the predictor's contribution for the FULL design.
  if (md.design == Design::Full && sample_variance(m) > 0.0) {
    Eigen::MatrixXd xm(static_cast<Eigen::Index>(count), 2);
    Eigen::MatrixXd rhs(static_cast<Eigen::Index>(count), 2);
    for (std::size_t i = 0; i < count; ++i) {
      xm.row(static_cast<Eigen::Index>(i)) << 1.0, m[i];
      rhs.row(static_cast<Eigen::Index>(i)) << a[i], b[i];
    }
    const Eigen::MatrixXd fit = xm.colPivHouseholderQr().solve(rhs);
    const Eigen::MatrixXd resid = rhs - xm * fit;
    for (std::size_t i = 0; i < count; ++i) {
      a[i] = resid(static_cast<Eigen::Index>(i), 0);
      b[i] = resid(static_cast<Eigen::Index>(i), 1);
    }
  }

  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(count);
  mb /= static_cast<double>(count);
  double vaa = 0.0, vbb = 0.0, vab = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    vaa += (a[i] - ma) * (a[i] - ma);
    vbb += (b[i] - mb) * (b[i] - mb);
    vab += (a[i] - ma) * (b[i] - mb);
  }
  const double denom = static_cast<double>(count - 1);
  vaa /= denom;
  vbb /= denom;
  vab /= denom;

  const double w00 = std::max(vaa - sigma2 * mean_inv(0, 0), 0.05 * vaa);
  const double w11 = std::max(vbb - sigma2 * mean_inv(1, 1), 0.05 * vbb);
  const double w01 = vab - sigma2 * mean_inv(0, 1);
  const double o0 = std::sqrt(w00), o1 = std::sqrt(w11);
  const double rho = (o0 > 0.0 && o1 > 0.0) ? std::clamp(w01 / (o0 * o1), -0.9, 0.9) : 0.0;
  return VarianceParams::from_natural(o0, o1, rho, std::sqrt(std::max(sigma2, 0.0)));
}

VarianceParams dispersed_start(const detail::ModelData& md) {
  const auto y = md.y();
  const double mean = y.mean();
  double sd = std::sqrt((y.array() - mean).square().sum() /
                        std::max<double>(1.0, static_cast<double>(y.size() - 1)));
  if (!(sd > 0.0)) sd = 1.0;
  const auto t = md.Z.col(1);
  const double span = std::max(1.0, t.maxCoeff() - t.minCoeff());
  return VarianceParams::from_natural(sd, sd / span, 0.0, 0.5 * sd);
}

}  // namespace

double reml_objective(const VarianceParams& vp, const LongitudinalDataset& ds, Design design) {
  const detail::ModelData md(ds, design);
  if (md.blocks.empty()) throw InsufficientDataError("no subject has observations");
  detail::Whitening w(md);
  if (!w.compute(detail::lower_factor(vp.omega0(), vp.omega1(), vp.rho()), vp.sigma()))
    return std::numeric_limits<double>::infinity();
  return detail::reml_from_whitening(w);
}

GlsResult gls_fixed_effects(const LongitudinalDataset& ds, Design design,
                            const Eigen::Matrix2d& omega, double sigma) {
  require_psd(omega);
  if (!(sigma >= 0.0)) throw ParameterDomainError("sigma must be nonnegative");
  const detail::ModelData md(ds, design);
  if (md.blocks.empty()) throw InsufficientDataError("no subject has observations");
  detail::Whitening w(md);
  if (!w.compute(detail::psd_lower_factor(omega), sigma))
    throw NumericalError("marginal covariance block is singular");
  return gls_from_whitening(w, design);
}

LmmFit fit_lmm(const LongitudinalDataset& ds, Design design, const FitOptions& options) {
  const detail::ModelData md(ds, design);
  if (md.blocks.size() < 2)
    throw InsufficientDataError("mixed model needs at least 2 subjects with observations");
  if (md.n_obs() < md.p + 3)
    throw InsufficientDataError("mixed model needs at least p + 3 observations");

  detail::Whitening w(md);
  auto objective = [&](const Eigen::VectorXd& x) {
    const auto vp = VarianceParams::from_vector(x);
    if (!w.compute(detail::lower_factor(vp.omega0(), vp.omega1(), vp.rho()), vp.sigma()))
      return std::numeric_limits<double>::infinity();
    return detail::reml_from_whitening(w);
  };

  const double lsf = std::log(VarianceParams::kSdFloor);
  const double lsc = std::log(VarianceParams::kSdCeiling);
  const double ab = VarianceParams::kAtanhBound;
  detail::Box box{Eigen::Vector4d(lsf, lsf, -ab, lsf), Eigen::Vector4d(lsc, lsc, ab, lsc)};
  const Eigen::VectorXd step = Eigen::Vector4d::Constant(0.5);

  std::vector<VarianceParams> starts;
  if (auto mom = moment_start(md)) starts.push_back(*mom);
  starts.push_back(dispersed_start(md));

  // Surface a degenerate fixed-effect design before optimizing.
  {
    const auto& s0 = starts.front();
    if (!w.compute(detail::lower_factor(s0.omega0(), s0.omega1(), s0.rho()), s0.sigma()))
      throw NumericalError("marginal covariance block is singular at the starting values");
    gls_from_whitening(w, design);
  }

  const int per_start = std::max(100, options.max_evaluations / 3);
  int evals = 0, iters = 0;
  detail::OptimResult best;
  best.fx = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    const int budget = std::min(per_start, options.max_evaluations - evals);
    if (budget <= 0) break;
    auto r = detail::nelder_mead(objective, s.to_vector(), step, box, budget, 1e-11, 1e-5);
    evals += r.evals;
    iters += r.iterations;
    if (r.fx < best.fx) best = std::move(r);
  }

  LmmFit fit;
  fit.design = design;
  Eigen::VectorXd x = best.x;
  double fx = best.fx;
  const int remaining = options.max_evaluations - evals;
  if (remaining > 0 && std::isfinite(fx)) {
    const auto polish = detail::bfgs_polish(objective, x, fx, box, remaining,
                                            options.objective_tolerance,
                                            options.parameter_tolerance);
    evals += polish.evals;
    iters += polish.iterations;
    x = polish.x;
    fx = polish.fx;
    fit.converged = polish.stopped_on_tolerance &&
                    polish.last_df < options.objective_tolerance &&
                    polish.last_dx < options.parameter_tolerance;
  }

  const auto vp = VarianceParams::from_vector(x);
  const Eigen::Matrix2d lower = detail::lower_factor(vp.omega0(), vp.omega1(), vp.rho());
  if (!w.compute(lower, vp.sigma())) throw NumericalError("marginal covariance block is singular");
  const auto gls = gls_from_whitening(w, design);

  fit.fixed_effects = gls.coefficients;
  fit.fixed_cov = gls.covariance;
  fit.fixed_se = gls.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.omega = vp.omega();
  fit.sigma = vp.sigma();
  fit.random_effects = blups_from_whitening(w, lower, gls.coefficients, ds);
  fit.reml_value = fx;
  fit.n_iter = iters;
  fit.n_evals = evals;
  fit.converged = fit.converged && std::isfinite(fx);
  return fit;
}

std::vector<RandomEffect> extract_blups(const LmmFit& fit, const LongitudinalDataset& ds) {
  const detail::ModelData md(ds, fit.design);
  if (fit.fixed_effects.size() != md.p)
    throw ParameterDomainError("fit does not match the dataset design");
  require_psd(fit.omega);
  detail::Whitening w(md);
  const Eigen::Matrix2d lower = detail::psd_lower_factor(fit.omega);
  if (!w.compute(lower, fit.sigma)) throw NumericalError("marginal covariance block is singular");
  return blups_from_whitening(w, lower, fit.fixed_effects, ds);
}

}  // namespace slopekit
