#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include "slopekit/simkit.hpp"
#include "slopekit/types.hpp"

namespace slopekit {

/// Malformed input file; `line()` is 1-based and counts the header.
class SchemaError : public Error {
public:
  SchemaError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

private:
  int line_;
};

inline constexpr const char* kDatasetHeader = "subject_id,time_years,response,predictor";
inline constexpr const char* kMetricsHeader =
    "scenario_id,spacing,mcar_rate,param_name,param_value,method,bias,rel_bias_pct,sd,se,"
    "root_mse,n_reps_used,n_reps_failed";
inline constexpr const char* kSlopesHeader = "subject_id,method,slope,eligible";
inline constexpr const char* kAssociationHeader = "method,alpha0,alpha1,se_alpha1,sigma_ss,n_used";
inline constexpr const char* kFixedEffectsHeader = "term,estimate,se";

/// 17 significant digits, '.' decimal separator; "nan"/"inf"/"-inf" for non-finite values.
std::string format_double(double v);

/// Long format, one row per observation. Subjects without observations have
/// no rows and therefore do not survive a write/read round trip.
void write_dataset_csv(std::ostream& os, const LongitudinalDataset& ds);

/// Subjects appear in order of first occurrence; rows within a subject may be
/// in any order and are sorted by time. Throws SchemaError for a bad header,
/// malformed fields, a duplicated (subject_id, time) pair or a predictor that
/// changes within a subject.
LongitudinalDataset read_dataset_csv(std::istream& is);

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows);
void write_slopes_csv(std::ostream& os, const SlopeSet& slopes);
void write_association_csv(std::ostream& os, Method method, const SecondStageFit& fit);
void write_fixed_effects_csv(std::ostream& os, const LmmFit& fit);

}  // namespace slopekit
