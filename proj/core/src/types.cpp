#include "slopekit/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace slopekit {

std::string_view to_string(Spacing s) {
  return s == Spacing::Regular ? "regular" : "irregular";
}

std::string_view to_string(Design d) {
  return d == Design::Full ? "FULL" : "SLOPE_ONLY";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Lmm: return "LMM";
    case Method::Simple: return "Simple";
    case Method::Ols: return "OLS";
    case Method::Blup: return "BLUP";
    case Method::Inflated: return "Inflated";
    case Method::BlupCorrected: return "BLUP-corrected";
  }
  return "?";
}

namespace {
std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}
}  // namespace

std::optional<Spacing> parse_spacing(std::string_view text) {
  const auto t = lower(text);
  if (t == "regular") return Spacing::Regular;
  if (t == "irregular") return Spacing::Irregular;
  return std::nullopt;
}

std::optional<Method> parse_method(std::string_view text) {
  const auto t = lower(text);
  for (Method m : kAllMethods) {
    if (t == lower(to_string(m))) return m;
  }
  if (t == "blup_corrected" || t == "corrected") return Method::BlupCorrected;
  return std::nullopt;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterDomainError(msg); };
  if (n_subjects <= 0) fail("n_subjects must be positive");
  if (n_reps <= 0) fail("n_reps must be positive");
  if (nominal_times.empty()) fail("nominal_times must not be empty");
  if (nominal_times.front() != 0.0) fail("nominal_times must start at 0");
  for (std::size_t j = 1; j < nominal_times.size(); ++j) {
    if (!(nominal_times[j] > nominal_times[j - 1]))
      fail("nominal_times must be strictly increasing");
  }
  if (!(mcar_rate >= 0.0 && mcar_rate <= 1.0)) fail("mcar_rate must lie in [0, 1]");
  if (!(rho >= -1.0 && rho <= 1.0)) fail("rho must lie in [-1, 1]");
  if (!(sigma_m >= 0.0)) fail("sigma_m must be nonnegative");
  if (!(omega0 >= 0.0)) fail("omega0 must be nonnegative");
  if (!(omega1 >= 0.0)) fail("omega1 must be nonnegative");
  if (!(sigma_err >= 0.0)) fail("sigma_err must be nonnegative");
  if (!(jitter >= 0.0)) fail("jitter must be nonnegative");
  for (double v : {beta0, beta1, beta2, beta3, mu_m}) {
    if (!std::isfinite(v)) fail("fixed effects and mu_m must be finite");
  }
}

std::size_t LongitudinalDataset::total_observations() const noexcept {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.n_obs();
  return n;
}

std::size_t SlopeSet::n_eligible() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const SlopeEntry& e) { return e.eligible; }));
}

}  // namespace slopekit
