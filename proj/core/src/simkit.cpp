#include "slopekit/simkit.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <thread>

#include "slopekit/datagen.hpp"
#include "slopekit/lmm.hpp"
#include "slopekit/two_stage.hpp"

namespace slopekit {

namespace {

bool wants(std::span<const Method> methods, Method m) {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void record_stage(MethodOutcome& out, const SlopeSet& slopes, const LongitudinalDataset& ds) {
  const auto fit = second_stage_regress(slopes, ds);
  out.ok = true;
  out.estimate = fit.alpha1;
  out.se = fit.se_alpha1;
}

template <typename Fn>
void guarded(MethodOutcome& out, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    out.ok = false;
    out.failure = e.what();
  }
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

ReplicationRecord run_replication(const ScenarioConfig& cfg, std::uint64_t rep_index,
                                  std::span<const Method> methods) {
  ReplicationRecord rec;
  rec.rep_index = rep_index;
  for (Method m : methods) rec.outcomes[index_of(m)].requested = true;

  const auto ds = generate_dataset(cfg, rep_index);

  if (wants(methods, Method::Lmm)) {
    auto& out = rec.outcomes[index_of(Method::Lmm)];
    guarded(out, [&] {
      const auto fit = fit_lmm(ds, Design::Full);
      if (!fit.converged) {
        out.failure = "REML optimization did not converge";
        return;
      }
      out.ok = true;
      out.estimate = fit.fixed_effects[3];
      out.se = fit.fixed_se[3];
    });
  }
  if (wants(methods, Method::Simple))
    guarded(rec.outcomes[index_of(Method::Simple)],
            [&] { record_stage(rec.outcomes[index_of(Method::Simple)], simple_slopes(ds), ds); });
  if (wants(methods, Method::Ols))
    guarded(rec.outcomes[index_of(Method::Ols)],
            [&] { record_stage(rec.outcomes[index_of(Method::Ols)], ols_slopes(ds), ds); });

  const bool blup_family = wants(methods, Method::Blup) || wants(methods, Method::Inflated) ||
                           wants(methods, Method::BlupCorrected);
  if (!blup_family) return rec;

  std::optional<LmmFit> fit;
  std::string fit_failure;
  try {
    fit = fit_lmm(ds, Design::SlopeOnly);
    if (!fit->converged) fit_failure = "REML optimization did not converge";
  } catch (const std::exception& e) {
    fit_failure = e.what();
  }
  if (!fit_failure.empty()) {
    for (Method m : {Method::Blup, Method::Inflated, Method::BlupCorrected})
      if (wants(methods, m)) rec.outcomes[index_of(m)].failure = fit_failure;
    return rec;
  }

  if (wants(methods, Method::Blup)) {
    auto& out = rec.outcomes[index_of(Method::Blup)];
    guarded(out, [&] { record_stage(out, blup_slopes(*fit), ds); });
  }
  if (wants(methods, Method::Inflated)) {
    auto& out = rec.outcomes[index_of(Method::Inflated)];
    guarded(out, [&] { record_stage(out, inflate_random_effects(*fit).slopes, ds); });
  }
  if (wants(methods, Method::BlupCorrected)) {
    auto& out = rec.outcomes[index_of(Method::BlupCorrected)];
    guarded(out, [&] {
      const auto corr = bias_correction(*fit, ds);
      rec.correction_condition = corr.correction.condition_estimate;
      if (!corr.slopes) {
        out.failure = "CORRECTION_INFEASIBLE";
        return;
      }
      record_stage(out, *corr.slopes, ds);
    });
  }
  return rec;
}

MetricsSummary compute_metrics(std::span<const double> estimates, std::span<const double> ses,
                               double true_beta3, int n_failed, std::string scenario_id,
                               Method method) {
  const std::size_t d = estimates.size();
  if (d < 2) throw InsufficientDataError("metrics need at least 2 successful estimates");
  if (ses.size() != d) throw ParameterDomainError("estimates and SEs differ in length");

  double mean = 0.0, mean_se = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    mean += estimates[i];
    mean_se += ses[i];
  }
  mean /= static_cast<double>(d);
  mean_se /= static_cast<double>(d);
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);

  MetricsSummary m;
  m.scenario_id = std::move(scenario_id);
  m.method = method;
  m.bias = mean - true_beta3;
  m.rel_bias_pct = 100.0 * m.bias / true_beta3;
  m.sd = std::sqrt(ss / static_cast<double>(d - 1));
  m.se = mean_se;
  m.root_mse = std::sqrt(m.bias * m.bias + m.sd * m.sd);
  m.n_reps_used = static_cast<int>(d);
  m.n_reps_failed = n_failed;
  return m;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg, std::span<const Method> methods,
                            int parallelism, std::string scenario_id) {
  cfg.validate();
  build_omega(cfg.omega0, cfg.omega1, cfg.rho);

  ScenarioResult res;
  const auto n = static_cast<std::size_t>(cfg.n_reps);
  res.records.resize(n);

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        res.records[i] = run_replication(cfg, i + 1, methods);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp(parallelism, 1, 1024));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  // Reduction in replication order keeps the output independent of scheduling.
  for (Method m : methods) {
    std::vector<double> est, ses;
    int failures = 0;
    for (const auto& rec : res.records) {
      const auto& o = rec[m];
      if (o.ok) {
        est.push_back(o.estimate);
        ses.push_back(o.se);
      } else {
        ++failures;
      }
    }
    if (est.size() >= 2) {
      res.metrics.push_back(compute_metrics(est, ses, cfg.beta3, failures, scenario_id, m));
    } else {
      MetricsSummary empty;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      empty.scenario_id = scenario_id;
      empty.method = m;
      empty.bias = empty.rel_bias_pct = empty.sd = empty.se = empty.root_mse = nan;
      empty.n_reps_used = static_cast<int>(est.size());
      empty.n_reps_failed = failures;
      res.metrics.push_back(empty);
    }
  }
  return res;
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::SigmaM: return "sigma_m";
    case SweepParameter::Omega0: return "omega0";
    case SweepParameter::Omega1: return "omega1";
    case SweepParameter::SigmaErr: return "sigma_err";
    case SweepParameter::Rho: return "rho";
  }
  return "?";
}

std::optional<SweepParameter> parse_sweep_parameter(std::string_view name) {
  for (auto p : {SweepParameter::SigmaM, SweepParameter::Omega0, SweepParameter::Omega1,
                 SweepParameter::SigmaErr, SweepParameter::Rho})
    if (name == to_string(p)) return p;
  return std::nullopt;
}

void set_parameter(ScenarioConfig& cfg, SweepParameter p, double value) {
  switch (p) {
    case SweepParameter::SigmaM: cfg.sigma_m = value; break;
    case SweepParameter::Omega0: cfg.omega0 = value; break;
    case SweepParameter::Omega1: cfg.omega1 = value; break;
    case SweepParameter::SigmaErr: cfg.sigma_err = value; break;
    case SweepParameter::Rho: cfg.rho = value; break;
  }
}

double get_parameter(const ScenarioConfig& cfg, SweepParameter p) {
  switch (p) {
    case SweepParameter::SigmaM: return cfg.sigma_m;
    case SweepParameter::Omega0: return cfg.omega0;
    case SweepParameter::Omega1: return cfg.omega1;
    case SweepParameter::SigmaErr: return cfg.sigma_err;
    case SweepParameter::Rho: return cfg.rho;
  }
  return 0.0;
}

void SweepSpec::validate() const {
  if (design_cells.empty()) throw ParameterDomainError("sweep needs at least one design cell");
  if (parameter && values.empty()) throw ParameterDomainError("sweep needs at least one value");
  ScenarioConfig probe = base;
  for (const auto& cell : design_cells) {
    probe.spacing = cell.spacing;
    probe.mcar_rate = cell.mcar_rate;
    if (parameter) {
      for (double v : values) {
        set_parameter(probe, *parameter, v);
        probe.validate();
      }
    } else {
      probe.validate();
    }
  }
}

std::string scenario_label(const std::optional<SweepParameter>& p, std::optional<double> value,
                           const DesignCell& cell) {
  std::string id = p ? std::string(to_string(*p)) + "=" + shortest(value.value_or(0.0))
                     : std::string("baseline");
  id += '/';
  id += to_string(cell.spacing);
  id += "/mcar=" + shortest(cell.mcar_rate);
  return id;
}

std::vector<MetricsRow> run_sweep(const SweepSpec& spec, std::span<const Method> methods,
                                  int parallelism, const ProgressFn& progress) {
  spec.validate();
  std::vector<std::optional<double>> values;
  if (spec.parameter) {
    for (double v : spec.values) values.emplace_back(v);
  } else {
    values.emplace_back(std::nullopt);
  }

  std::vector<MetricsRow> rows;
  const std::size_t total = values.size() * spec.design_cells.size();
  std::size_t done = 0;
  for (const auto& value : values) {
    for (const auto& cell : spec.design_cells) {
      ScenarioConfig cfg = spec.base;
      cfg.spacing = cell.spacing;
      cfg.mcar_rate = cell.mcar_rate;
      if (spec.parameter) set_parameter(cfg, *spec.parameter, *value);
      const auto id = scenario_label(spec.parameter, value, cell);
      const auto result = run_scenario(cfg, methods, parallelism, id);
      for (const auto& m : result.metrics) {
        MetricsRow row;
        row.scenario_id = id;
        row.spacing = cell.spacing;
        row.mcar_rate = cell.mcar_rate;
        row.param_name = spec.parameter ? std::string(to_string(*spec.parameter)) : "none";
        row.param_value = value;
        row.summary = m;
        rows.push_back(std::move(row));
      }
      if (progress) progress(id, ++done, total);
    }
  }
  return rows;
}

std::vector<double> sweep_values(SweepParameter p) {
  switch (p) {
    case SweepParameter::SigmaM: return {0.79, 2, 7, 10, 15, 20};
    case SweepParameter::Omega0: return {0.5, 1, 4, 7, 9.87, 12, 16};
    case SweepParameter::Omega1: return {0.5, 1, 2.27, 4, 7, 10};
    case SweepParameter::SigmaErr: return {0.5, 1, 3, 5.87, 8, 10, 15};
    case SweepParameter::Rho: return {-1, -0.75, -0.5, -0.25, 0, 0.159, 0.25, 0.5, 0.75, 1};
  }
  return {};
}

std::vector<std::string> preset_names() {
  return {"table1", "fig1-sigma-m", "fig2-omega1", "fig3-rho", "supp4-omega0", "supp5-sigma-err"};
}

std::optional<SweepSpec> make_preset(std::string_view name, const ScenarioConfig& base) {
  SweepSpec spec;
  spec.base = base;
  const std::vector<DesignCell> figure_cells{{Spacing::Regular, 0.0},
                                             {Spacing::Irregular, 0.0},
                                             {Spacing::Regular, 0.5},
                                             {Spacing::Irregular, 0.5}};
  if (name == "table1") {
    for (double rate : {0.0, 0.2, 0.5, 0.8})
      for (Spacing s : {Spacing::Regular, Spacing::Irregular}) spec.design_cells.push_back({s, rate});
    return spec;
  }
  const std::pair<std::string_view, SweepParameter> sweeps[] = {
      {"fig1-sigma-m", SweepParameter::SigmaM},   {"fig2-omega1", SweepParameter::Omega1},
      {"fig3-rho", SweepParameter::Rho},          {"supp4-omega0", SweepParameter::Omega0},
      {"supp5-sigma-err", SweepParameter::SigmaErr}};
  for (const auto& [preset, param] : sweeps) {
    if (name != preset) continue;
    spec.parameter = param;
    spec.values = sweep_values(param);
    spec.design_cells = figure_cells;
    return spec;
  }
  return std::nullopt;
}

}  // namespace slopekit
