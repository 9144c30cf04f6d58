#include "slopekit/config.hpp"

#include <charconv>
#include <istream>
#include <sstream>

#include "slopekit/csv_io.hpp"

namespace slopekit {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(text) + "'");
  return v;
}

std::vector<double> parse_list(std::string_view key, std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(',', start);
    out.push_back(parse_number<double>(key, text.substr(start, pos == std::string_view::npos
                                                                      ? pos
                                                                      : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "n_subjects", "nominal_times", "spacing", "jitter", "mcar_rate", "beta0",
      "beta1",      "beta2",         "beta3",   "mu_m",   "sigma_m",   "omega0",
      "omega1",     "rho",           "sigma_err", "n_reps", "master_seed"};
  return keys;
}

void apply_override(ScenarioConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "n_subjects") cfg.n_subjects = parse_number<int>(key, value);
  else if (key == "nominal_times") cfg.nominal_times = parse_list(key, value);
  else if (key == "spacing") {
    const auto s = parse_spacing(value);
    if (!s) throw ConfigError("spacing must be 'regular' or 'irregular'");
    cfg.spacing = *s;
  }
  else if (key == "jitter") cfg.jitter = real();
  else if (key == "mcar_rate") cfg.mcar_rate = real();
  else if (key == "beta0") cfg.beta0 = real();
  else if (key == "beta1") cfg.beta1 = real();
  else if (key == "beta2") cfg.beta2 = real();
  else if (key == "beta3") cfg.beta3 = real();
  else if (key == "mu_m") cfg.mu_m = real();
  else if (key == "sigma_m") cfg.sigma_m = real();
  else if (key == "omega0") cfg.omega0 = real();
  else if (key == "omega1") cfg.omega1 = real();
  else if (key == "rho") cfg.rho = real();
  else if (key == "sigma_err") cfg.sigma_err = real();
  else if (key == "n_reps") cfg.n_reps = parse_number<int>(key, value);
  else if (key == "master_seed") cfg.master_seed = parse_number<std::uint64_t>(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ScenarioConfig parse_config(std::istream& is, ScenarioConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_override(base, view.substr(0, eq), view.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

std::string format_config(const ScenarioConfig& cfg) {
  std::ostringstream os;
  os << "n_subjects = " << cfg.n_subjects << '\n' << "nominal_times = ";
  for (std::size_t j = 0; j < cfg.nominal_times.size(); ++j)
    os << (j ? "," : "") << format_double(cfg.nominal_times[j]);
  os << '\n'
     << "spacing = " << to_string(cfg.spacing) << '\n'
     << "jitter = " << format_double(cfg.jitter) << '\n'
     << "mcar_rate = " << format_double(cfg.mcar_rate) << '\n'
     << "beta0 = " << format_double(cfg.beta0) << '\n'
     << "beta1 = " << format_double(cfg.beta1) << '\n'
     << "beta2 = " << format_double(cfg.beta2) << '\n'
     << "beta3 = " << format_double(cfg.beta3) << '\n'
     << "mu_m = " << format_double(cfg.mu_m) << '\n'
     << "sigma_m = " << format_double(cfg.sigma_m) << '\n'
     << "omega0 = " << format_double(cfg.omega0) << '\n'
     << "omega1 = " << format_double(cfg.omega1) << '\n'
     << "rho = " << format_double(cfg.rho) << '\n'
     << "sigma_err = " << format_double(cfg.sigma_err) << '\n'
     << "n_reps = " << cfg.n_reps << '\n'
     << "master_seed = " << cfg.master_seed << '\n';
  return os.str();
}

}  // namespace slopekit
