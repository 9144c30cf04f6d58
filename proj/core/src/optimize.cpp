#include "optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace slopekit::detail {

namespace {

class CountingObjective {
public:
  explicit CountingObjective(const Objective& f) : f_(f) {}
  double operator()(const Eigen::VectorXd& x) {
    ++evals_;
    const double v = f_(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }
  int evals() const noexcept { return evals_; }

private:
  const Objective& f_;
  int evals_ = 0;
};

}  // namespace

OptimResult nelder_mead(const Objective& objective, const Eigen::VectorXd& x0,
                        const Eigen::VectorXd& step, const Box& box, int max_evals, double ftol,
                        double xtol) {
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  CountingObjective f(objective);
  const Eigen::Index n = x0.size();

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1));
  std::vector<double> vals(pts.size());
  pts[0] = box.clamp(x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd p = pts[0];
    p[i] += step[i];
    if (box.clamp(p) == pts[0]) p[i] = pts[0][i] - step[i];
    pts[static_cast<std::size_t>(i + 1)] = box.clamp(p);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = f(pts[i]);

  std::vector<std::size_t> order(pts.size());
  OptimResult res;
  double prev_best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd prev_x = pts[0];

  while (f.evals() < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double spread = 0.0;
    for (const auto& p : pts) spread = std::max(spread, (p - pts[best]).cwiseAbs().maxCoeff());
    const double fspread = vals[worst] - vals[best];
    res.last_df = std::isfinite(prev_best)
                      ? std::abs(prev_best - vals[best]) / std::max(1.0, std::abs(vals[best]))
                      : std::numeric_limits<double>::infinity();
    res.last_dx = (pts[best] - prev_x).cwiseAbs().maxCoeff();
    prev_best = vals[best];
    prev_x = pts[best];
    if (std::isfinite(vals[best]) && fspread <= ftol * (1.0 + std::abs(vals[best])) &&
        spread <= xtol) {
      res.stopped_on_tolerance = true;
      break;
    }
    ++res.iterations;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = box.clamp(centroid + kReflect * (centroid - pts[worst]));
    const double fr = f(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = box.clamp(centroid + kExpand * (xr - centroid));
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc = outside ? box.clamp(centroid + kContract * (xr - centroid))
                                       : box.clamp(centroid + kContract * (pts[worst] - centroid));
    const double fc = f(xc);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = box.clamp(pts[best] + kShrink * (pts[i] - pts[best]));
      vals[i] = f(pts[i]);
    }
  }

  const auto best = static_cast<std::size_t>(
      std::min_element(vals.begin(), vals.end()) - vals.begin());
  res.x = pts[best];
  res.fx = vals[best];
  res.evals = f.evals();
  return res;
}

namespace {

Eigen::VectorXd numeric_gradient(CountingObjective& f, const Eigen::VectorXd& x, double fx,
                                 const Box& box) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] = std::min(x[i] + h, box.upper[i]);
    xm[i] = std::max(x[i] - h, box.lower[i]);
    const double fp = xp[i] > x[i] ? f(xp) : fx;
    const double fm = xm[i] < x[i] ? f(xm) : fx;
    const double width = xp[i] - xm[i];
    g[i] = width > 0.0 ? (fp - fm) / width : 0.0;
  }
  return g;
}

// Zeroes the components of v that would push x through an active bound.
void mask_active(Eigen::VectorXd& v, const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                 const Box& box) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const bool at_lo = x[i] <= box.lower[i] && g[i] > 0.0;
    const bool at_hi = x[i] >= box.upper[i] && g[i] < 0.0;
    if (at_lo || at_hi) v[i] = 0.0;
  }
}

}  // namespace

OptimResult bfgs_polish(const Objective& objective, const Eigen::VectorXd& x0, double f0,
                        const Box& box, int max_evals, double ftol_rel, double xtol) {
  CountingObjective f(objective);
  const Eigen::Index n = x0.size();
  OptimResult res;
  Eigen::VectorXd x = box.clamp(x0);
  double fx = f0;
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = numeric_gradient(f, x, fx, box);

  while (f.evals() + 2 * n + 1 < max_evals) {
    ++res.iterations;
    Eigen::VectorXd pg = g;
    mask_active(pg, x, g, box);
    Eigen::VectorXd d = -(hinv * pg);
    mask_active(d, x, g, box);
    if (g.dot(d) >= 0.0) {
      hinv.setIdentity();
      d = -pg;
    }

    double a = 1.0;
    Eigen::VectorXd x_new = x;
    double f_new = fx;
    bool improved = false;
    for (int k = 0; k < 40 && f.evals() < max_evals; ++k, a *= 0.5) {
      const Eigen::VectorXd trial = box.clamp(x + a * d);
      if ((trial - x).cwiseAbs().maxCoeff() == 0.0) break;
      const double ft = f(trial);
      if (ft <= fx + 1e-4 * g.dot(trial - x)) {
        x_new = trial;
        f_new = ft;
        improved = true;
        break;
      }
    }
    if (!improved) {
      // No descent is available at working precision.
      res.last_df = 0.0;
      res.last_dx = 0.0;
      res.stopped_on_tolerance = true;
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd g_new = numeric_gradient(f, x_new, f_new, box);
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      hinv = (eye - rho * s * y.transpose()) * hinv * (eye - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }

    res.last_df = std::abs(fx - f_new) / std::max(1.0, std::abs(fx));
    res.last_dx = s.cwiseAbs().maxCoeff();
    x = x_new;
    fx = f_new;
    g = g_new;
    if (res.last_df < ftol_rel && res.last_dx < xtol) {
      res.stopped_on_tolerance = true;
      break;
    }
  }

  res.x = x;
  res.fx = fx;
  res.evals = f.evals();
  return res;
}

}  // namespace slopekit::detail
