#include "slopekit/csv_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slopekit/lmm.hpp"

namespace slopekit {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view field, const char* name, int line) {
  field = trim(field);
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || field.empty())
    throw SchemaError(std::string("cannot parse ") + name + " '" + std::string(field) + "'", line);
  if (!std::isfinite(v)) throw SchemaError(std::string(name) + " must be finite", line);
  return v;
}

SubjectId parse_id(std::string_view field, int line) {
  field = trim(field);
  SubjectId v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || field.empty())
    throw SchemaError("cannot parse subject_id '" + std::string(field) + "'", line);
  return v;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const LongitudinalDataset& ds) {
  os << kDatasetHeader << '\n';
  for (const auto& s : ds.subjects) {
    for (std::size_t j = 0; j < s.n_obs(); ++j) {
      os << s.subject_id << ',' << format_double(s.times[j]) << ','
         << format_double(s.responses[j]) << ',' << format_double(s.metabolite) << '\n';
    }
  }
}

LongitudinalDataset read_dataset_csv(std::istream& is) {
  std::string line;
  int lineno = 1;
  if (!std::getline(is, line)) throw SchemaError("missing header", lineno);
  if (trim(line) != kDatasetHeader)
    throw SchemaError(std::string("expected header '") + kDatasetHeader + "'", lineno);

  struct Row {
    double time;
    double response;
    int line;
  };
  struct Pending {
    SubjectId id;
    double predictor;
    int first_line;
    std::vector<Row> rows;
  };
  std::vector<Pending> subjects;
  std::unordered_map<SubjectId, std::size_t> index;

  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != 4)
      throw SchemaError("expected 4 fields, found " + std::to_string(fields.size()), lineno);
    const SubjectId id = parse_id(fields[0], lineno);
    const double t = parse_real(fields[1], "time_years", lineno);
    const double y = parse_real(fields[2], "response", lineno);
    const double m = parse_real(fields[3], "predictor", lineno);

    auto [it, inserted] = index.try_emplace(id, subjects.size());
    if (inserted) subjects.push_back({id, m, lineno, {}});
    auto& subj = subjects[it->second];
    if (subj.predictor != m)
      throw SchemaError("predictor for subject " + std::to_string(id) +
                            " differs from the value on line " + std::to_string(subj.first_line),
                        lineno);
    for (const auto& r : subj.rows) {
      if (r.time == t)
        throw SchemaError("duplicate (subject_id, time) pair; first seen on line " +
                              std::to_string(r.line),
                          lineno);
    }
    subj.rows.push_back({t, y, lineno});
  }

  LongitudinalDataset ds;
  ds.provenance = Provenance::Ingested;
  ds.subjects.reserve(subjects.size());
  for (auto& p : subjects) {
    std::sort(p.rows.begin(), p.rows.end(),
              [](const Row& a, const Row& b) { return a.time < b.time; });
    SubjectRecord s;
    s.subject_id = p.id;
    s.metabolite = p.predictor;
    for (const auto& r : p.rows) {
      s.times.push_back(r.time);
      s.responses.push_back(r.response);
    }
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    const auto& m = r.summary;
    os << r.scenario_id << ',' << to_string(r.spacing) << ',' << format_double(r.mcar_rate) << ','
       << r.param_name << ',' << (r.param_value ? format_double(*r.param_value) : std::string())
       << ',' << to_string(m.method) << ',' << format_double(m.bias) << ','
       << format_double(m.rel_bias_pct) << ',' << format_double(m.sd) << ','
       << format_double(m.se) << ',' << format_double(m.root_mse) << ',' << m.n_reps_used << ','
       << m.n_reps_failed << '\n';
  }
}

void write_slopes_csv(std::ostream& os, const SlopeSet& slopes) {
  os << kSlopesHeader << '\n';
  for (const auto& e : slopes.entries) {
    os << e.subject_id << ',' << to_string(slopes.method) << ',' << format_double(e.slope) << ','
       << (e.eligible ? "true" : "false") << '\n';
  }
}

void write_association_csv(std::ostream& os, Method method, const SecondStageFit& fit) {
  os << kAssociationHeader << '\n'
     << to_string(method) << ',' << format_double(fit.alpha0) << ',' << format_double(fit.alpha1)
     << ',' << format_double(fit.se_alpha1) << ',' << format_double(fit.sigma_ss) << ','
     << fit.n_used << '\n';
}

void write_fixed_effects_csv(std::ostream& os, const LmmFit& fit) {
  os << kFixedEffectsHeader << '\n';
  const auto names = fixed_effect_names(fit.design);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    os << names[i] << ',' << format_double(fit.fixed_effects[k]) << ','
       << format_double(fit.fixed_se[k]) << '\n';
  }
}

}  // namespace slopekit
