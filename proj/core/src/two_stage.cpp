#include "slopekit/two_stage.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

#include "mixed_model.hpp"

namespace slopekit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SlopeSet per_subject(const LongitudinalDataset& ds, Method method,
                     double (*estimate)(const SubjectRecord&)) {
  SlopeSet out;
  out.method = method;
  out.entries.reserve(ds.subjects.size());
  for (const auto& s : ds.subjects) {
    const double c = estimate(s);
    out.entries.push_back({s.subject_id, c, std::isfinite(c)});
  }
  return out;
}

double simple_estimate(const SubjectRecord& s) {
  if (s.n_obs() < 2) return kNaN;
  const double dt = s.times.back() - s.times.front();
  if (dt == 0.0) return kNaN;
  return (s.responses.back() - s.responses.front()) / dt;
}

double ols_estimate(const SubjectRecord& s) {
  const std::size_t n = s.n_obs();
  if (n < 2) return kNaN;
  double tbar = 0.0, ybar = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    tbar += s.times[j];
    ybar += s.responses[j];
  }
  tbar /= static_cast<double>(n);
  ybar /= static_cast<double>(n);
  double sty = 0.0, stt = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double dt = s.times[j] - tbar;
    sty += dt * (s.responses[j] - ybar);
    stt += dt * dt;
  }
  if (!(stt > 0.0)) return kNaN;
  return sty / stt;
}

void require_slope_only(const LmmFit& fit) {
  if (fit.design != Design::SlopeOnly)
    throw ParameterDomainError("BLUP slopes require a SLOPE_ONLY fit");
}

bool positive_definite(const Eigen::Matrix2d& m, Eigen::Matrix2d& lower) {
  if (!m.allFinite()) return false;
  const Eigen::LLT<Eigen::Matrix2d> llt(m);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  const double scale = std::max(m(0, 0), m(1, 1));
  const Eigen::Vector2d piv = lower.diagonal().array().square();
  return piv.minCoeff() > 1e-12 * scale;
}

}  // namespace

SlopeSet simple_slopes(const LongitudinalDataset& ds) {
  return per_subject(ds, Method::Simple, simple_estimate);
}

SlopeSet ols_slopes(const LongitudinalDataset& ds) {
  return per_subject(ds, Method::Ols, ols_estimate);
}

SlopeSet blup_slopes(const LmmFit& fit) {
  require_slope_only(fit);
  const double eta1 = fit.fixed_effects[1];
  SlopeSet out;
  out.method = Method::Blup;
  for (const auto& re : fit.random_effects)
    out.entries.push_back({re.subject_id, re.has_data ? eta1 + re.slope : kNaN, re.has_data});
  return out;
}

InflationTransform make_inflation_transform(const Eigen::Matrix2d& s, const Eigen::Matrix2d& r) {
  Eigen::Matrix2d ls, lr;
  if (!positive_definite(s, ls))
    throw InflationInfeasibleError("empirical BLUP covariance S is singular");
  if (!positive_definite(r, lr)) throw InflationInfeasibleError("REML covariance R is singular");
  InflationTransform t;
  t.s_matrix = s;
  t.r_matrix = r;
  // L_R L_S^-1 is lower triangular; its transpose is the upper-triangular A.
  const Eigen::Matrix2d ls_inv =
      ls.triangularView<Eigen::Lower>().solve(Eigen::Matrix2d::Identity());
  t.a_matrix = (lr * ls_inv).transpose();
  return t;
}

InflationResult inflate_random_effects(const LmmFit& fit) {
  require_slope_only(fit);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fit.random_effects.size(); ++i)
    if (fit.random_effects[i].has_data) rows.push_back(i);
  if (rows.size() < 2) throw InflationInfeasibleError("fewer than two subjects with BLUPs");

  Eigen::MatrixX2d u(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& re = fit.random_effects[rows[k]];
    u.row(static_cast<Eigen::Index>(k)) << re.intercept, re.slope;
  }
  const Eigen::Matrix2d s = u.transpose() * u / static_cast<double>(rows.size());

  InflationResult out;
  out.transform = make_inflation_transform(s, fit.omega);
  out.inflated = u * out.transform.a_matrix;

  const double eta1 = fit.fixed_effects[1];
  out.slopes.method = Method::Inflated;
  out.slopes.entries.reserve(fit.random_effects.size());
  for (const auto& re : fit.random_effects) out.slopes.entries.push_back({re.subject_id, kNaN, false});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& e = out.slopes.entries[rows[k]];
    e.slope = eta1 + out.inflated(static_cast<Eigen::Index>(k), 1);
    e.eligible = true;
  }
  return out;
}

CorrectionResult bias_correction(const LmmFit& fit, const LongitudinalDataset& ds) {
  require_slope_only(fit);
  const std::size_t n_subj = ds.subjects.size();
  if (fit.random_effects.size() != n_subj)
    throw ParameterDomainError("fit and dataset have different subjects");
  for (std::size_t i = 0; i < n_subj; ++i)
    if (fit.random_effects[i].subject_id != ds.subjects[i].subject_id)
      throw ParameterDomainError("fit and dataset subjects are not aligned");
  if (n_subj < 2) throw InsufficientDataError("bias correction needs at least two subjects");

  const detail::ModelData md(ds, Design::SlopeOnly);
  const int p = md.p;
  const auto dim = static_cast<Eigen::Index>(2 * n_subj);
  const Eigen::Matrix2d lower = detail::psd_lower_factor(fit.omega);

  // Per-subject P_i = Z'V^-1Z and W_i = Z'V^-1X from the Gram of (Z | X).
  Eigen::MatrixXd w_all = Eigen::MatrixXd::Zero(dim, p);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::Matrix2d> p_blocks(n_subj, Eigen::Matrix2d::Zero());
  for (const auto& blk : md.blocks) {
    const auto z = md.Z.middleRows(blk.offset, blk.n);
    Eigen::MatrixXd d(blk.n, 2 + p);
    d << z, md.X().middleRows(blk.offset, blk.n);
    Eigen::MatrixXd e(blk.n, 2 + p), s(2, 2 + p);
    detail::WhitenedSubject info;
    if (!detail::whiten_subject(z, lower, fit.sigma * fit.sigma, d, e, s, info))
      throw NumericalError("marginal covariance block is singular");
    const Eigen::MatrixXd g = e.transpose() * e + s.transpose() * s;
    const auto row = static_cast<Eigen::Index>(2 * blk.dataset_index);
    p_blocks[blk.dataset_index] = g.topLeftCorner(2, 2);
    w_all.middleRows(row, 2) = g.topRightCorner(2, p);
    k += g.bottomRightCorner(p, p);
  }

  Eigen::MatrixXd m = -w_all * k.ldlt().solve(w_all.transpose());
  for (std::size_t i = 0; i < n_subj; ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    m.block<2, 2>(r, r) += p_blocks[i];
  }

  CorrectionResult out;
  auto& bc = out.correction;
  bc.matrix.resize(dim, dim);
  for (std::size_t i = 0; i < n_subj; ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    bc.matrix.middleRows(r, 2).noalias() = fit.omega * m.middleRows(r, 2);
  }

  out.blups.resize(dim);
  bool all_have_data = true;
  for (std::size_t i = 0; i < n_subj; ++i) {
    const auto& re = fit.random_effects[i];
    out.blups[static_cast<Eigen::Index>(2 * i)] = re.intercept;
    out.blups[static_cast<Eigen::Index>(2 * i + 1)] = re.slope;
    all_have_data = all_have_data && re.has_data;
  }

  // Deflate the structural null space spanned by subject-constant shifts.
  const double nonzero = static_cast<double>(dim - 2);
  double shift = bc.matrix.trace() / nonzero;
  if (!(shift > 0.0) || !std::isfinite(shift)) shift = 1.0;
  Eigen::MatrixXd deflated = bc.matrix;
  const double q = shift / static_cast<double>(n_subj);
  for (Eigen::Index r = 0; r < dim; ++r)
    for (Eigen::Index c = r % 2; c < dim; c += 2) deflated(r, c) += q;

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(deflated);
  const double rcond = lu.rcond();
  bc.condition_estimate = (rcond > 0.0 && std::isfinite(rcond))
                              ? 1.0 / rcond
                              : std::numeric_limits<double>::infinity();
  bc.feasible = all_have_data && bc.condition_estimate < BiasCorrection::kConditionLimit;
  if (!all_have_data) bc.condition_estimate = std::numeric_limits<double>::infinity();
  if (!bc.feasible) return out;

  out.corrected = lu.solve(out.blups);
  const double eta1 = fit.fixed_effects[1];
  SlopeSet slopes;
  slopes.method = Method::BlupCorrected;
  for (std::size_t i = 0; i < n_subj; ++i)
    slopes.entries.push_back({ds.subjects[i].subject_id,
                              eta1 + out.corrected[static_cast<Eigen::Index>(2 * i + 1)], true});
  out.slopes = std::move(slopes);
  return out;
}

SecondStageFit second_stage_regress(const SlopeSet& slopes, const LongitudinalDataset& ds) {
  std::unordered_map<SubjectId, double> predictor;
  predictor.reserve(ds.subjects.size());
  for (const auto& s : ds.subjects) predictor.emplace(s.subject_id, s.metabolite);

  std::vector<double> m, c;
  for (const auto& e : slopes.entries) {
    if (!e.eligible || !std::isfinite(e.slope)) continue;
    const auto it = predictor.find(e.subject_id);
    if (it == predictor.end())
      throw ParameterDomainError("slope for a subject missing from the dataset");
    m.push_back(it->second);
    c.push_back(e.slope);
  }
  const std::size_t n = m.size();
  if (n < 3) throw InsufficientDataError("second stage needs at least 3 eligible subjects");

  double mbar = 0.0, cbar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mbar += m[i];
    cbar += c[i];
  }
  mbar /= static_cast<double>(n);
  cbar /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (m[i] - mbar) * (m[i] - mbar);
    sxy += (m[i] - mbar) * (c[i] - cbar);
  }
  if (!(sxx > 1e-14 * static_cast<double>(n) * std::max(1.0, mbar * mbar)))
    throw RankDeficiencyError("predictor is constant across eligible subjects", {"M"});

  SecondStageFit fit;
  fit.alpha1 = sxy / sxx;
  fit.alpha0 = cbar - fit.alpha1 * mbar;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = c[i] - fit.alpha0 - fit.alpha1 * m[i];
    rss += r * r;
  }
  fit.sigma_ss = std::sqrt(rss / static_cast<double>(n - 2));
  fit.se_alpha1 = fit.sigma_ss / std::sqrt(sxx);
  fit.n_used = static_cast<int>(n);
  return fit;
}

}  // namespace slopekit
