#include "slopekit/validate.hpp"

#include <cmath>
#include <unordered_set>

namespace slopekit {

std::vector<Violation> validate_dataset(const LongitudinalDataset& ds) {
  std::vector<Violation> out;
  std::unordered_set<SubjectId> seen;
  bool any_slope_subject = false;

  for (const auto& s : ds.subjects) {
    if (!seen.insert(s.subject_id).second) out.push_back({s.subject_id, rules::kDuplicateId});

    if (s.times.size() != s.responses.size()) {
      out.push_back({s.subject_id, rules::kLengthMismatch});
      continue;
    }

    bool finite = std::isfinite(s.metabolite);
    for (std::size_t j = 0; j < s.times.size(); ++j)
      finite = finite && std::isfinite(s.times[j]) && std::isfinite(s.responses[j]);
    if (!finite) out.push_back({s.subject_id, rules::kNonFinite});

    for (std::size_t j = 1; j < s.times.size(); ++j) {
      if (!(s.times[j] > s.times[j - 1])) {
        out.push_back({s.subject_id, rules::kTimesNotIncreasing});
        break;
      }
    }
    if (s.n_obs() >= 2) any_slope_subject = true;
  }

  if (!any_slope_subject) out.push_back({std::nullopt, rules::kNoSlopeSubject});
  return out;
}

}  // namespace slopekit
