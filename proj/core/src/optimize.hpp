#pragma once

#include <functional>

#include <Eigen/Core>

namespace slopekit::detail {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }
};

struct OptimResult {
  Eigen::VectorXd x;
  double fx = 0.0;
  int evals = 0;
  int iterations = 0;
  /// Relative objective change and max-abs parameter change of the last iteration.
  double last_df = 0.0;
  double last_dx = 0.0;
  /// True when the method's own stopping rule fired before the evaluation cap.
  bool stopped_on_tolerance = false;
};

/// Box-projected Nelder-Mead simplex search.
OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                        const Box& box, int max_evals, double ftol, double xtol);

/// Projected BFGS with central-difference gradients, started at a point whose
/// objective value is already known. Stops when one iteration changes the
/// objective by less than `ftol_rel` (relative) and the parameters by less than `xtol`.
OptimResult bfgs_polish(const Objective& f, const Eigen::VectorXd& x0, double f0, const Box& box,
                        int max_evals, double ftol_rel, double xtol);

}  // namespace slopekit::detail
