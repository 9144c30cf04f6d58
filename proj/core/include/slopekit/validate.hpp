#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slopekit/types.hpp"

namespace slopekit {

struct Violation {
  /// Empty for dataset-level rules.
  std::optional<SubjectId> subject_id;
  std::string rule;

  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace rules {
inline constexpr const char* kLengthMismatch = "times and responses differ in length";
inline constexpr const char* kTimesNotIncreasing = "times not strictly increasing";
inline constexpr const char* kNonFinite = "non-finite time, response or predictor";
inline constexpr const char* kDuplicateId = "duplicate subject_id";
inline constexpr const char* kNoSlopeSubject = "no subject with >=2 observations";
}  // namespace rules

/// Checks every dataset invariant; returns one record per breach and an
/// empty list when the dataset is well formed.
std::vector<Violation> validate_dataset(const LongitudinalDataset& ds);

}  // namespace slopekit
