#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slopekit/types.hpp"

namespace slopekit {

struct MethodOutcome {
  bool ok = false;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  std::string failure;  // empty when ok, or when the method was not requested
  bool requested = false;
};

struct ReplicationRecord {
  std::uint64_t rep_index = 0;
  std::array<MethodOutcome, kMethodCount> outcomes;
  /// Condition estimate of the bias-correction system; NaN if it was not attempted.
  double correction_condition = std::numeric_limits<double>::quiet_NaN();

  const MethodOutcome& operator[](Method m) const { return outcomes[index_of(m)]; }
};

/// Generates replication `rep_index` and applies every requested method to the
/// same dataset. Method failures are recorded, never thrown; only an invalid
/// configuration throws.
ReplicationRecord run_replication(const ScenarioConfig& cfg, std::uint64_t rep_index,
                                  std::span<const Method> methods);

/// Bias, relative bias (%), SD (denominator D - 1), mean SE and root MSE of the
/// successful estimates. Throws InsufficientDataError with fewer than 2 estimates.
MetricsSummary compute_metrics(std::span<const double> estimates, std::span<const double> ses,
                               double true_beta3, int n_failed = 0, std::string scenario_id = {},
                               Method method = Method::Lmm);

struct ScenarioResult {
  std::vector<MetricsSummary> metrics;  // one per requested method, in request order
  std::vector<ReplicationRecord> records;  // index r holds rep_index r + 1
};

/// Runs replications 1..cfg.n_reps on `parallelism` worker threads. Results do
/// not depend on the number of threads. Methods with fewer than two successful
/// replications get a row of NaN statistics with their failure count.
ScenarioResult run_scenario(const ScenarioConfig& cfg, std::span<const Method> methods,
                            int parallelism, std::string scenario_id = "baseline");

// ---------------------------------------------------------------------------
// Sweeps and presets
// ---------------------------------------------------------------------------

enum class SweepParameter { SigmaM, Omega0, Omega1, SigmaErr, Rho };

std::string_view to_string(SweepParameter p);
std::optional<SweepParameter> parse_sweep_parameter(std::string_view name);
void set_parameter(ScenarioConfig& cfg, SweepParameter p, double value);
double get_parameter(const ScenarioConfig& cfg, SweepParameter p);

struct DesignCell {
  Spacing spacing = Spacing::Regular;
  double mcar_rate = 0.0;
};

/// A parameter sweep over design cells. Without a parameter, each design cell
/// is run once at the base configuration (the Table 1 layout).
struct SweepSpec {
  std::optional<SweepParameter> parameter;
  std::vector<double> values;
  ScenarioConfig base;
  std::vector<DesignCell> design_cells;

  void validate() const;
};

struct MetricsRow {
  std::string scenario_id;
  Spacing spacing = Spacing::Regular;
  double mcar_rate = 0.0;
  std::string param_name;  // "none" for table-style runs
  std::optional<double> param_value;
  MetricsSummary summary;
};

using ProgressFn = std::function<void(std::string_view scenario_id, std::size_t done,
                                      std::size_t total)>;

/// One block of rows per (value, design cell), one row per method. Cells whose
/// methods all fail still produce rows carrying the failure counts.
std::vector<MetricsRow> run_sweep(const SweepSpec& spec, std::span<const Method> methods,
                                  int parallelism, const ProgressFn& progress = {});

/// Grid values for each swept parameter; the baseline value is included.
std::vector<double> sweep_values(SweepParameter p);

std::vector<std::string> preset_names();
/// table1 | fig1-sigma-m | fig2-omega1 | fig3-rho | supp4-omega0 | supp5-sigma-err.
/// Returns nullopt for an unknown name.
std::optional<SweepSpec> make_preset(std::string_view name, const ScenarioConfig& base);

std::string scenario_label(const std::optional<SweepParameter>& p, std::optional<double> value,
                           const DesignCell& cell);

}  // namespace slopekit
