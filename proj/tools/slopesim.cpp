// slopesim: run simulation presets and fit slope methods to long-format data.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "slopekit/config.hpp"
#include "slopekit/csv_io.hpp"
#include "slopekit/lmm.hpp"
#include "slopekit/simkit.hpp"
#include "slopekit/two_stage.hpp"
#include "slopekit/validate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slopekit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct ConfigFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ConfigFailure("cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

// Returns the bytes written so callers can digest them.
std::string write_file(const fs::path& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigFailure("cannot write '" + path.string() + "'");
  os << contents;
  os.close();
  if (!os) throw ConfigFailure("error while writing '" + path.string() + "'");
  return contents;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  if (names.empty()) return {std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<Method> out;
  for (const auto& n : names) {
    const auto m = parse_method(n);
    if (!m) throw ConfigFailure("unknown method '" + n + "'");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

json config_json(const ScenarioConfig& cfg) {
  json j = json::object();
  std::istringstream is(format_config(cfg));
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset;
  std::string config_path;
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out = ".";
  std::vector<std::string> methods;
  std::map<std::string, std::string> overrides;
  bool quiet = false;
};

int run_simulate(const SimulateArgs& args, const std::string& command_line) {
  const std::string started = utc_now();

  ScenarioConfig cfg;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw ConfigFailure("cannot open config '" + args.config_path + "'");
    cfg = parse_config(in, cfg);
  }
  for (const auto& [key, value] : args.overrides) apply_override(cfg, key, value);
  if (args.reps) cfg.n_reps = *args.reps;
  if (args.seed) cfg.master_seed = *args.seed;

  SweepSpec spec;
  if (!args.preset.empty()) {
    auto preset = make_preset(args.preset, cfg);
    if (!preset)
      throw ConfigFailure("unknown preset '" + args.preset +
                          "'; valid presets: " + join(preset_names(), ", "));
    spec = std::move(*preset);
  } else {
    spec.base = cfg;
    spec.design_cells = {{cfg.spacing, cfg.mcar_rate}};
  }
  spec.validate();

  const auto methods = parse_methods(args.methods);
  const int threads =
      args.threads > 0 ? args.threads
                       : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  const fs::path out_dir = prepare_out_dir(args.out);

  ProgressFn progress;
  if (!args.quiet) {
    progress = [](std::string_view id, std::size_t done, std::size_t total) {
      std::cerr << '[' << done << '/' << total << "] " << id << '\n';
    };
  }
  const auto rows = run_sweep(spec, methods, threads, progress);

  std::ostringstream csv;
  write_metrics_csv(csv, rows);
  const auto metrics = write_file(out_dir / "metrics.csv", csv.str());

  json manifest;
  manifest["command"] = command_line;
  manifest["preset"] = args.preset.empty() ? json(nullptr) : json(args.preset);
  manifest["config"] = config_json(spec.base);
  if (spec.parameter) {
    manifest["sweep"]["parameter"] = std::string(to_string(*spec.parameter));
    manifest["sweep"]["values"] = spec.values;
  }
  json cells = json::array();
  for (const auto& c : spec.design_cells)
    cells.push_back({{"spacing", std::string(to_string(c.spacing))}, {"mcar_rate", c.mcar_rate}});
  manifest["design_cells"] = cells;
  std::vector<std::string> method_names;
  for (auto m : methods) method_names.emplace_back(to_string(m));
  manifest["methods"] = method_names;
  manifest["master_seed"] = spec.base.master_seed;
  manifest["version"] = SLOPEKIT_VERSION;
  manifest["threads"] = threads;
  manifest["started_utc"] = started;
  manifest["finished_utc"] = utc_now();
  manifest["outputs"] = json::array(
      {{{"file", "metrics.csv"}, {"sha256", sha256_hex(metrics)}, {"bytes", metrics.size()}}});
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (!args.quiet) std::cerr << "wrote " << (out_dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
  std::string input;
  std::string method = "ols";
  std::string out = ".";
};

void warn_if_not_converged(const LmmFit& fit) {
  if (!fit.converged)
    std::cerr << "warning: REML optimizer did not converge after " << fit.n_evals
              << " evaluations; estimates are the best values found\n";
}

int run_fit(const FitArgs& args) {
  const auto method = parse_method(args.method);
  if (!method) {
    std::vector<std::string> names;
    for (auto m : kAllMethods) names.emplace_back(to_string(m));
    throw ConfigFailure("unknown method '" + args.method + "'; valid methods: " +
                        join(names, ", "));
  }

  std::ifstream in(args.input, std::ios::binary);
  if (!in) throw DataFailure("cannot open input '" + args.input + "'");
  LongitudinalDataset ds;
  try {
    ds = read_dataset_csv(in);
  } catch (const SchemaError& e) {
    throw DataFailure(args.input + ": " + e.what());
  }
  if (const auto violations = validate_dataset(ds); !violations.empty()) {
    std::string msg = "invalid dataset:";
    for (const auto& v : violations) {
      msg += "\n  ";
      if (v.subject_id) msg += "subject " + std::to_string(*v.subject_id) + ": ";
      msg += v.rule;
    }
    throw DataFailure(msg);
  }

  const fs::path out_dir = prepare_out_dir(args.out);

  if (*method == Method::Lmm) {
    const auto fit = fit_lmm(ds, Design::Full);
    warn_if_not_converged(fit);
    std::ostringstream os;
    write_fixed_effects_csv(os, fit);
    write_file(out_dir / "fixed_effects.csv", os.str());
    return kExitOk;
  }

  SlopeSet slopes;
  switch (*method) {
    case Method::Simple: slopes = simple_slopes(ds); break;
    case Method::Ols: slopes = ols_slopes(ds); break;
    default: {
      const auto fit = fit_lmm(ds, Design::SlopeOnly);
      warn_if_not_converged(fit);
      if (*method == Method::Blup) {
        slopes = blup_slopes(fit);
      } else if (*method == Method::Inflated) {
        slopes = inflate_random_effects(fit).slopes;
      } else {
        auto corr = bias_correction(fit, ds);
        if (!corr.slopes) {
          std::ostringstream msg;
          msg << "CORRECTION_INFEASIBLE: condition estimate "
              << format_double(corr.correction.condition_estimate);
          throw DataFailure(msg.str());
        }
        slopes = std::move(*corr.slopes);
      }
    }
  }

  std::ostringstream slopes_csv;
  write_slopes_csv(slopes_csv, slopes);
  write_file(out_dir / "slopes.csv", slopes_csv.str());

  const auto assoc = second_stage_regress(slopes, ds);
  std::ostringstream assoc_csv;
  write_association_csv(assoc_csv, slopes.method, assoc);
  write_file(out_dir / "association.csv", assoc_csv.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear mixed model and two-stage slope methods: simulation and fitting"};
  app.set_version_flag("--version", SLOPEKIT_VERSION);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario or preset");
  simulate->add_option("--preset", sim.preset, "Preset: " + join(preset_names(), ", "));
  simulate->add_option("--config", sim.config_path, "key = value scenario file");
  simulate->add_option("--reps", sim.reps, "Replications per design cell")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--threads", sim.threads, "Worker threads (default: available cores)")
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate->add_option("--method", sim.methods, "Restrict to these methods")->delimiter(',');
  simulate->add_flag("--quiet", sim.quiet, "No progress output");
  std::map<std::string, std::string> override_values;
  for (const auto& key : config_keys()) {
    if (key == "n_reps" || key == "master_seed") continue;
    simulate->add_option("--" + key, override_values[key], "Override " + key);
  }

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit one method to a long-format CSV");
  fit->add_option("--in", fit_args.input, "Input CSV (subject_id,time_years,response,predictor)")
      ->required();
  fit->add_option("--method", fit_args.method,
                  "lmm, simple, ols, blup, inflated or blup-corrected")
      ->capture_default_str();
  fit->add_option("--out", fit_args.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::vector<std::string> words(argv, argv + argc);
  const std::string command_line = join(words, " ");

  try {
    if (*simulate) {
      for (const auto& key : config_keys()) {
        const auto* opt = simulate->get_option_no_throw("--" + key);
        if (opt && opt->count() > 0) sim.overrides[key] = override_values[key];
      }
      return run_simulate(sim, command_line);
    }
    return run_fit(fit_args);
  } catch (const ConfigFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const ParameterDomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return *simulate ? kExitConfig : kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
