#include "slopekit/datagen.hpp"

#include <algorithm>
#include <cmath>

namespace slopekit {

Eigen::Matrix2d build_omega(double omega0, double omega1, double rho) {
  if (!(omega0 >= 0.0) || !(omega1 >= 0.0))
    throw ParameterDomainError("random-effect SDs must be nonnegative");
  if (!(rho >= -1.0 && rho <= 1.0)) throw ParameterDomainError("rho must lie in [-1, 1]");
  const double cov = rho * omega0 * omega1;
  Eigen::Matrix2d omega;
  omega << omega0 * omega0, cov, cov, omega1 * omega1;
  return omega;
}

namespace {

double reflect_into(double t, double hi) {
  while (t < 0.0 || t > hi) {
    if (t < 0.0) t = -t;
    if (t > hi) t = 2.0 * hi - t;
  }
  return t;
}

std::vector<double> jittered_grid(const std::vector<double>& nominal, double jitter,
                                  RngStream& stream) {
  const double t_max = nominal.back();
  std::vector<double> t(nominal.size());
  for (;;) {
    t[0] = 0.0;
    for (std::size_t j = 1; j < nominal.size(); ++j)
      t[j] = reflect_into(nominal[j] + stream.uniform(-jitter, jitter), t_max);
    std::sort(t.begin(), t.end());
    if (std::adjacent_find(t.begin(), t.end()) == t.end()) return t;
  }
}

}  // namespace

std::vector<std::vector<double>> generate_times(const ScenarioConfig& cfg, RngStream& stream) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(cfg.n_subjects));
  const bool jittered = cfg.spacing == Spacing::Irregular && cfg.jitter > 0.0 &&
                        cfg.nominal_times.size() > 1;
  for (auto& times : out)
    times = jittered ? jittered_grid(cfg.nominal_times, cfg.jitter, stream) : cfg.nominal_times;
  return out;
}

LongitudinalDataset apply_mcar(LongitudinalDataset ds, double rate, RngStream& stream) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterDomainError("mcar rate must lie in [0, 1]");
  for (auto& s : ds.subjects) {
    std::size_t kept = 0;
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      const bool drop = stream.uniform(0.0, 1.0) < rate;
      if (!drop) {
        s.times[kept] = s.times[j];
        s.responses[kept] = s.responses[j];
        ++kept;
      }
    }
    s.times.resize(kept);
    s.responses.resize(kept);
  }
  return ds;
}

LongitudinalDataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t rep_index) {
  cfg.validate();
  build_omega(cfg.omega0, cfg.omega1, cfg.rho);

  RngStream metab(cfg.master_seed, rep_index, StreamPurpose::Metabolite);
  RngStream effects(cfg.master_seed, rep_index, StreamPurpose::RandomEffects);
  RngStream noise(cfg.master_seed, rep_index, StreamPurpose::Noise);
  RngStream jitter(cfg.master_seed, rep_index, StreamPurpose::Jitter);
  RngStream mcar(cfg.master_seed, rep_index, StreamPurpose::Mcar);

  const auto times = generate_times(cfg, jitter);
  // Cholesky-style construction stays valid at rho = +-1.
  const double rho_c = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));

  LongitudinalDataset ds;
  ds.provenance = Provenance::Generated;
  ds.subjects.resize(static_cast<std::size_t>(cfg.n_subjects));
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    auto& s = ds.subjects[i];
    s.subject_id = static_cast<SubjectId>(i + 1);
    s.metabolite = cfg.mu_m + cfg.sigma_m * metab.standard_normal();

    const double z1 = effects.standard_normal();
    const double z2 = effects.standard_normal();
    const double b0 = cfg.omega0 * z1;
    const double b1 = cfg.omega1 * (cfg.rho * z1 + rho_c * z2);
    s.latent_intercept = b0;
    s.latent_slope = b1;

    const double intercept = cfg.beta0 + b0 + cfg.beta1 * s.metabolite;
    const double slope = cfg.beta2 + b1 + cfg.beta3 * s.metabolite;
    s.times = times[i];
    s.responses.resize(s.times.size());
    for (std::size_t j = 0; j < s.times.size(); ++j)
      s.responses[j] = intercept + slope * s.times[j] + cfg.sigma_err * noise.standard_normal();
  }

  if (cfg.mcar_rate > 0.0) ds = apply_mcar(std::move(ds), cfg.mcar_rate, mcar);
  return ds;
}

}  // namespace slopekit
