#include "cli.hpp"

#include "addlink/asymptotics.hpp"
#include "addlink/bandwidth.hpp"
#include "addlink/data.hpp"
#include "addlink/error.hpp"
#include "addlink/first_stage.hpp"
#include "addlink/link.hpp"
#include "addlink/montecarlo.hpp"
#include "addlink/parallel.hpp"
#include "addlink/second_stage.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace addlink::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

//! Round-trip decimal representation.
std::string
num(double v)
{
  if (std::isnan(v))
    return "nan";
  return fmt::format("{:.17g}", v);
}

//! Files are staged in memory and written only once the command succeeded.
struct Files
{
  std::vector<std::pair<std::string, std::string>> entries;

  void add(std::string name, std::string text)
  {
    entries.emplace_back(std::move(name), std::move(text));
  }
  void add(std::string name, const json& j) { add(std::move(name), j.dump(2) + "\n"); }
};

struct Common
{
  std::string out;
  unsigned threads = 1;
};

void
prepare_output(const fs::path& dir)
{
  if (dir.empty())
    throw UsageError("an output directory (--out) is required");
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec))
    throw UsageError(
      fmt::format("output path '{}' exists and is not a directory", dir.string()));
  fs::create_directories(dir, ec);
  if (ec)
    throw UsageError(fmt::format(
      "cannot create output directory '{}': {}", dir.string(), ec.message()));
}

void
write_file(const fs::path& path, const std::string& text)
{
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f)
    throw DataError(fmt::format("cannot write '{}'", path.string()));
}

void
commit(const fs::path& dir, const Files& files)
{
  for (const auto& [name, text] : files.entries)
    write_file(dir / name, text);
  std::error_code ec;
  fs::remove(dir / "error.json", ec);
}

std::string_view
kind_name(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::usage:
      return "usage";
    case ErrorKind::data:
      return "data";
    case ErrorKind::numerical:
      return "numerical";
  }
  return "numerical";
}

int
exit_code(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::usage:
      return exit_usage;
    case ErrorKind::data:
      return exit_data;
    case ErrorKind::numerical:
      return exit_numerical;
  }
  return exit_numerical;
}

//! Writes the machine-readable error record to stderr and, when the output
//! directory is known, to error.json inside it.
int
report_error(std::ostream& err,
             const std::string& command,
             const std::string& out_dir,
             ErrorKind kind,
             const std::string& message)
{
  const int code = exit_code(kind);
  json record;
  record["status"] = "error";
  record["command"] = command;
  record["kind"] = kind_name(kind);
  record["exit_code"] = code;
  record["message"] = message;
  err << "error: " << message << "\n" << record.dump() << "\n";
  if (!out_dir.empty()) {
    try {
      prepare_output(out_dir);
      write_file(fs::path(out_dir) / "error.json", record.dump(2) + "\n");
    } catch (const std::exception& e) {
      err << "error: could not write error record: " << e.what() << "\n";
    }
  }
  return code;
}

//! Value of --out when the command line could not be parsed completely.
std::string
scan_out(int argc, const char* const* argv)
{
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--out" && i + 1 < argc)
      return argv[i + 1];
    if (a.starts_with("--out="))
      return std::string(a.substr(6));
  }
  return {};
}

std::vector<double>
broadcast(const std::vector<double>& v, Eigen::Index d, std::string_view what)
{
  if (v.size() == 1)
    return std::vector<double>(d, v[0]);
  if (static_cast<Eigen::Index>(v.size()) != d)
    throw UsageError(
      fmt::format("{}: {} values given for {} components", what, v.size(), d));
  return v;
}

void
require_positive(const std::vector<double>& v, std::string_view what)
{
  for (double x : v)
    if (!(x > 0.0 && std::isfinite(x)))
      throw UsageError(fmt::format("{} must be positive and finite", what));
}

// ---------------------------------------------------------------- options

struct DataOptions
{
  std::string input;
  std::string response = "y";
  std::vector<std::string> covariates;
  std::string link = "logit";
};

void
add_data_options(CLI::App& app, DataOptions& o, bool required)
{
  auto* in = app.add_option("--input", o.input, "CSV file with a header row")
               ->check(CLI::ExistingFile);
  if (required)
    in->required();
  app.add_option("--response", o.response, "response column")
    ->capture_default_str();
  app.add_option("--covariates",
                 o.covariates,
                 "covariate columns (default: all other columns)")
    ->delimiter(',');
  app.add_option("--link", o.link, "link function: logit | identity")
    ->capture_default_str();
}

json
to_json(const DataOptions& o)
{
  return { { "input", o.input },
           { "response", o.response },
           { "covariates", o.covariates },
           { "link", o.link } };
}

struct SeriesOptions
{
  std::vector<int> kappa{ 2 };
  std::string family = "bspline";
  double c_theta = 100.0;
  int max_iterations = 200;
};

void
add_series_options(CLI::App& app, SeriesOptions& o)
{
  app.add_option("--kappa", o.kappa, "series length, scalar or per covariate")
    ->delimiter(',')
    ->capture_default_str();
  app.add_option("--family", o.family, "basis family: bspline | legendre")
    ->capture_default_str();
  app.add_option("--c-theta", o.c_theta, "coefficient box half-width")
    ->capture_default_str();
  app.add_option("--max-iterations", o.max_iterations, "first-stage iterations")
    ->capture_default_str();
}

json
to_json(const SeriesOptions& o)
{
  return { { "kappa", o.kappa },
           { "family", o.family },
           { "c_theta", o.c_theta },
           { "max_iterations", o.max_iterations } };
}

FirstStageConfig
first_stage_config(const SeriesOptions& o)
{
  FirstStageConfig c;
  c.family = basis_family_by_name(o.family);
  if (o.kappa.empty())
    throw UsageError("--kappa needs at least one value");
  if (o.kappa.size() == 1)
    c.kappa = o.kappa[0];
  else
    c.kappa_per_coordinate = o.kappa;
  c.c_theta = o.c_theta;
  c.max_iterations = o.max_iterations;
  c.validate();
  return c;
}

struct PlsOptions
{
  double c_lo = 0.2;
  double c_hi = 3.0;
  int grid_points = 10;
  bool no_polish = false;
  double variance_factor = 1.5;
};

void
add_pls_options(CLI::App& app, PlsOptions& o)
{
  app.add_option("--pls-c-lo", o.c_lo, "PLS search box lower end for C_h")
    ->capture_default_str();
  app.add_option("--pls-c-hi", o.c_hi, "PLS search box upper end for C_h")
    ->capture_default_str();
  app.add_option("--pls-grid-points", o.grid_points, "PLS candidates per axis")
    ->capture_default_str();
  app.add_flag("--no-polish", o.no_polish, "skip the Nelder-Mead polish");
  app.add_option("--variance-factor",
                 o.variance_factor,
                 "conditional-variance bandwidth as a multiple of n^{-1/5}")
    ->capture_default_str();
}

json
to_json(const PlsOptions& o)
{
  return { { "pls_c_lo", o.c_lo },
           { "pls_c_hi", o.c_hi },
           { "pls_grid_points", o.grid_points },
           { "pls_polish", !o.no_polish },
           { "variance_factor", o.variance_factor } };
}

PlsConfig
pls_config(const PlsOptions& o, unsigned threads)
{
  PlsConfig c;
  c.c_lo = o.c_lo;
  c.c_hi = o.c_hi;
  c.grid_points = o.grid_points;
  c.polish = !o.no_polish;
  c.threads = threads;
  c.validate();
  return c;
}

std::string
zero_bias_guidance(const std::string& what)
{
  return what + " (bandwidth: use --method pls; fit: pass --ch).";
}

std::string
trace_csv(const PlsResult& r, Eigen::Index d)
{
  std::string s = "stage";
  for (Eigen::Index j = 0; j < d; ++j)
    s += fmt::format(",c{}", j + 1);
  s += ",rss,penalty,total,best_so_far\n";
  for (const auto& row : r.trace) {
    s += row.stage;
    for (double c : row.c)
      s += "," + num(c);
    s += "," + num(row.terms.rss) + "," + num(row.terms.penalty) + "," +
         num(row.terms.total) + "," + num(row.best_so_far) + "\n";
  }
  return s;
}

Eigen::VectorXd
first_stage_index(const FirstStageFit& fit, const Dataset& data)
{
  const Eigen::MatrixXd m = fit.component_values(data.x);
  return (m.rowwise().sum().array() + fit.mu()).matrix();
}

json
first_stage_json(const FirstStageFit& fit, const QHat& q)
{
  return { { "mu", fit.mu() },
           { "theta", std::vector<double>(fit.theta.begin(), fit.theta.end()) },
           { "objective", fit.objective },
           { "iterations", fit.iterations },
           { "converged", fit.converged },
           { "q_hat_min_eigenvalue", q.min_eigenvalue },
           { "q_hat_warning", q.min_eigenvalue < q_hat_warning_threshold } };
}

void
collect_first_stage_warnings(const FirstStageFit& fit,
                             const QHat& q,
                             std::vector<std::string>& warnings)
{
  if (!fit.converged)
    warnings.push_back(fmt::format(
      "first stage stopped after {} iterations without meeting the gradient "
      "tolerance",
      fit.iterations));
  if (q.min_eigenvalue < q_hat_warning_threshold)
    warnings.push_back(fmt::format(
      "first-stage information matrix is nearly singular (min eigenvalue "
      "{:.3g} < {:.0e})",
      q.min_eigenvalue,
      q_hat_warning_threshold));
}

// -------------------------------------------------------------------- fit

struct FitOptions
{
  DataOptions data;
  SeriesOptions series;
  PlsOptions pls;
  std::vector<double> h;
  std::vector<double> ch;
  std::string method;
  std::string smoother = "local-linear";
  std::string weight = "none";
  double weight_exponent = 1.0;
  std::string hessian = "expected";
  int grid = 201;
  double alpha = 0.05;
  std::string ci_mode = "bias-corrected";
  double gamma = 0.3;
  std::uint64_t seed = 1;
};

void
setup_fit(CLI::App& app, FitOptions& o)
{
  add_data_options(app, o.data, true);
  add_series_options(app, o.series);
  auto* h = app.add_option("--h", o.h, "fixed bandwidths, scalar or per covariate")
              ->delimiter(',');
  auto* ch = app.add_option("--ch", o.ch, "fixed bandwidth constants C_h")
               ->delimiter(',');
  auto* m = app.add_option("--bandwidth", o.method, "selector: plugin | pls")
              ->check(CLI::IsMember({ "plugin", "pls" }));
  h->excludes(ch)->excludes(m);
  ch->excludes(m);
  add_pls_options(app, o.pls);
  app.add_option("--smoother", o.smoother, "local-linear | local-constant")
    ->capture_default_str();
  app.add_option("--weight", o.weight, "none | variance-min")
    ->capture_default_str();
  app.add_option("--weight-exponent",
                 o.weight_exponent,
                 "variance-min weight is Var^{-exponent}")
    ->capture_default_str();
  app.add_option("--hessian", o.hessian, "exact | expected | safeguarded")
    ->capture_default_str();
  app.add_option("--grid", o.grid, "output grid size")->capture_default_str();
  app.add_option("--alpha", o.alpha, "interval level 1 - alpha")
    ->capture_default_str();
  app.add_option("--ci-mode", o.ci_mode, "bias-corrected | undersmoothed")
    ->capture_default_str();
  app.add_option("--gamma", o.gamma, "undersmoothing exponent, h = C_h n^-gamma")
    ->capture_default_str();
  app.add_option("--seed", o.seed, "recorded for reproducibility")
    ->capture_default_str();
}

json
to_json(const FitOptions& o)
{
  json j = to_json(o.data);
  j.update(to_json(o.series));
  if (!o.h.empty())
    j["h"] = o.h;
  if (!o.ch.empty())
    j["ch"] = o.ch;
  if (!o.method.empty())
    j["bandwidth"] = o.method;
  j.update(to_json(o.pls));
  j["smoother"] = o.smoother;
  j["weight"] = o.weight;
  j["weight_exponent"] = o.weight_exponent;
  j["hessian"] = o.hessian;
  j["grid"] = o.grid;
  j["alpha"] = o.alpha;
  j["ci_mode"] = o.ci_mode;
  j["gamma"] = o.gamma;
  j["seed"] = o.seed;
  return j;
}

Files
run_fit(const FitOptions& o, const Common& common, std::ostream& err)
{
  const Link link = link_by_name(o.data.link);
  const auto fs_cfg = first_stage_config(o.series);
  const Smoother smoother = smoother_by_name(o.smoother);
  const Hessian hessian = hessian_by_name(o.hessian);
  const CiMode mode = ci_mode_by_name(o.ci_mode);
  const bool weighted = o.weight == "variance-min";
  if (!weighted && o.weight != "none")
    throw UsageError(
      fmt::format("unknown weight '{}' (valid: none, variance-min)", o.weight));
  if (weighted && !(o.weight_exponent > 0.0))
    throw UsageError("--weight-exponent must be positive");
  if (weighted && mode == CiMode::bias_corrected)
    throw UsageError("bias-corrected intervals are available for the "
                     "unweighted estimator only; use --ci-mode undersmoothed");
  if (o.grid < 2)
    throw UsageError("--grid needs at least two points");
  if (!(o.alpha > 0.0 && o.alpha < 1.0))
    throw UsageError("--alpha must lie in (0, 1)");
  if (mode == CiMode::undersmoothed && !(o.gamma > 0.2 && o.gamma < 1.0))
    throw UsageError("--gamma must lie in (1/5, 1)");
  if (!(o.pls.variance_factor > 0.0))
    throw UsageError("--variance-factor must be positive");
  if (o.h.empty() && o.ch.empty() && o.method.empty())
    throw UsageError("a bandwidth is required: --h, --ch or --bandwidth "
                     "(plugin | pls)");
  std::optional<PlsConfig> pls;
  if (o.method == "pls")
    pls = pls_config(o.pls, common.threads);

  const auto table = load_csv(o.data.input, { o.data.response, o.data.covariates });
  const Dataset data = make_dataset(table);
  const Eigen::Index d = data.d();
  const auto n = static_cast<double>(data.n());

  const FirstStageFit fit = fit_first_stage(data, link, fs_cfg);
  const QHat q = q_hat_diagnostic(fit, data, link);
  std::vector<std::string> warnings;
  collect_first_stage_warnings(fit, q, warnings);

  // Bandwidths: h = C_h n^{-rate}; the rate is 1/5 unless undersmoothing.
  const double rate = mode == CiMode::undersmoothed ? o.gamma : 0.2;
  const Kernel kernel;
  std::vector<double> c_h;
  std::vector<double> h;
  std::string method;
  json selector = json::object();
  if (!o.h.empty()) {
    method = "fixed-h";
    h = broadcast(o.h, d, "--h");
    require_positive(h, "--h");
    for (double v : h)
      c_h.push_back(v * std::pow(n, rate));
  } else {
    if (!o.ch.empty()) {
      method = "fixed-ch";
      c_h = broadcast(o.ch, d, "--ch");
    } else if (o.method == "plugin") {
      method = "plugin";
      PluginOptions po;
      po.smoother = smoother;
      po.variance_factor = o.pls.variance_factor;
      try {
        const auto r = plugin_bandwidths(data, fit, link, po);
        c_h = r.c_h;
        selector["pilot_h"] = r.pilot_h;
      } catch (const ZeroBias& e) {
        throw ZeroBias(zero_bias_guidance(e.what()));
      }
    } else {
      method = "pls";
      const PlsEvaluator ev(
        data, fit, link, smoother, kernel, o.pls.variance_factor);
      const auto r = minimize_pls(ev, *pls);
      c_h = r.c;
      selector["pls_objective"] = r.objective;
    }
    require_positive(c_h, "C_h");
    for (double c : c_h)
      h.push_back(c * std::pow(n, -rate));
  }

  const Eigen::VectorXd index = first_stage_index(fit, data);
  const ConditionalVariance variance(
    data,
    squared_residuals(data, link, index),
    std::vector<double>(d, o.pls.variance_factor * std::pow(n, -0.2)));
  int variance_flagged = 0;
  variance.at_samples(&variance_flagged);
  if (variance_flagged > 0)
    warnings.push_back(fmt::format(
      "conditional variance floored or imputed at {} sample points",
      variance_flagged));

  const auto grid = uniform_grid(o.grid);
  Files files;
  json components = json::array();
  for (Eigen::Index j = 0; j < d; ++j) {
    const PilotFit pilot = pilot_from_first_stage(fit, data, j);
    const auto provider = variance.provider(j);
    SecondStageConfig sc;
    sc.h = h[j];
    sc.smoother = smoother;
    sc.kernel = kernel;
    sc.hessian = hessian;
    std::optional<VarianceMinWeight> wmin;
    if (weighted) {
      wmin.emplace(
        pilot, data, link, kernel, h[j], provider, o.weight_exponent);
      sc.weight = *wmin;
    }
    const auto est = estimate_component(pilot, data, link, sc, grid);

    std::optional<DerivativeEstimator> deriv;
    const double g = DerivativeEstimator::default_bandwidth(data.n());
    if (mode == CiMode::bias_corrected) {
      const auto fine = estimate_component(pilot, data, link, sc, uniform_grid(1025));
      deriv.emplace(fine.grid, fine.values);
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> beta(grid.size(), nan);
    std::vector<double> v(grid.size(), nan);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double x = grid[k];
      const auto ing = kernel_ingredients(x, pilot, data, kernel, h[j], provider);
      if (ing.weight.size() == 0)
        continue;
      if (!weighted) {
        v[k] = estimate_V1(ing, link, c_h[j]);
      } else if (o.weight_exponent == 1.0) {
        v[k] = estimate_V1_optimal(ing, link, c_h[j]);
      } else {
        // Same observation order and window as kernel_ingredients.
        const Eigen::VectorXd all = (*wmin)(x);
        Eigen::VectorXd w(ing.weight.size());
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < data.n(); ++i)
          if (std::abs(data.x(i, j) - x) < h[j])
            w[r++] = all[i];
        v[k] = estimate_V1(ing, link, c_h[j], w);
      }
      if (deriv)
        beta[k] = estimate_beta1(
          ing, link, (*deriv)(x, 1, g), (*deriv)(x, 2, g), c_h[j], smoother);
    }
    const auto ci = confidence_interval(grid,
                                        est.values,
                                        mode == CiMode::bias_corrected
                                          ? std::span<const double>(beta)
                                          : std::span<const double>(),
                                        v,
                                        data.n(),
                                        o.alpha,
                                        mode,
                                        o.gamma);

    std::string csv = "x_cube,x_original,m_tilde,m_hat,boundary,ci_lower,ci_upper\n";
    for (std::size_t k = 0; k < grid.size(); ++k) {
      csv += fmt::format("{},{},{},{},{},{},{}\n",
                         num(grid[k]),
                         num(data.scale[j].to_original(grid[k])),
                         num(est.mtilde[k]),
                         num(est.values[k]),
                         est.boundary[k] ? 1 : 0,
                         num(ci.lower[k]),
                         num(ci.upper[k]));
    }
    const std::string file = fmt::format("component_{}.csv", j + 1);
    files.add(file, std::move(csv));
    if (est.missing > 0)
      warnings.push_back(fmt::format(
        "component {}: {} grid points have a degenerate kernel window",
        j + 1,
        est.missing));
    int boundary = 0;
    for (bool b : est.boundary)
      boundary += b ? 1 : 0;
    json c = { { "name", data.names[j] },
               { "file", file },
               { "c_h", c_h[j] },
               { "h", h[j] },
               { "missing", est.missing },
               { "boundary_points", boundary } };
    if (wmin)
      c["weights_clamped"] = wmin->clamped();
    components.push_back(std::move(c));
  }

  for (const auto& w : warnings)
    err << "warning: " << w << "\n";

  json summary;
  summary["status"] = "ok";
  summary["command"] = "fit";
  summary["n"] = data.n();
  summary["d"] = d;
  summary["response"] = table.response_name;
  summary["covariates"] = data.names;
  summary["link"] = link.name();
  summary["first_stage"] = first_stage_json(fit, q);
  json bw = { { "method", method }, { "rate", rate }, { "c_h", c_h }, { "h", h } };
  bw.update(selector);
  summary["bandwidth"] = std::move(bw);
  summary["smoother"] = smoother_name(smoother);
  summary["hessian"] = hessian_name(hessian);
  summary["weight"] = o.weight;
  summary["interval"] = { { "mode", ci_mode_name(mode) },
                          { "alpha", o.alpha },
                          { "gamma", o.gamma } };
  summary["components"] = std::move(components);
  summary["warnings"] = warnings;
  files.add("summary.json", summary);
  files.add("config.json", to_json(o));
  return files;
}

// --------------------------------------------------------------- simulate

struct SimulateOptions
{
  std::string dgp = "benchmark";
  int d = 2;
  long n = 500;
  std::string estimator = "two-stage-ll";
  std::vector<int> kappa{ 4, 2 };
  int nuisance_kappa = 2;
  std::vector<double> h{ 0.5, 1.4 };
  std::vector<double> ch;
  std::vector<int> components{ 1, 2 };
  int replications = 1000;
  bool fast = false;
  std::uint64_t seed = 1;
  int grid = 201;
  std::string trim = "none";
  double trim_a = 1.0;
  std::string hessian = "expected";
  double ise_density = 0.5;
};

void
setup_simulate(CLI::App& app, SimulateOptions& o)
{
  app.add_option("--dgp", o.dgp, "benchmark | heteroskedastic | linear-identity")
    ->capture_default_str();
  app.add_option("--d", o.d, "number of covariates")->capture_default_str();
  app.add_option("--n", o.n, "sample size")->capture_default_str();
  app.add_option("--estimator", o.estimator, "two-stage-ll | two-stage-lc | oracle")
    ->capture_default_str();
  app.add_option("--kappa", o.kappa, "series lengths of the first coordinates")
    ->delimiter(',')
    ->capture_default_str();
  app.add_option("--nuisance-kappa", o.nuisance_kappa, "series length of the rest")
    ->capture_default_str();
  auto* h = app.add_option("--h", o.h, "bandwidth per evaluated component")
              ->delimiter(',')
              ->capture_default_str();
  auto* ch = app.add_option("--ch", o.ch, "bandwidth constants, h = C_h n^{-1/5}")
               ->delimiter(',');
  h->excludes(ch);
  app.add_option("--components", o.components, "evaluated components (1-based)")
    ->delimiter(',')
    ->capture_default_str();
  app.add_option("--replications", o.replications, "Monte Carlo replications")
    ->capture_default_str();
  app.add_flag("--fast", o.fast, "fast mode: 200 replications");
  app.add_option("--seed", o.seed, "base seed; replication r uses seed + r")
    ->capture_default_str();
  app.add_option("--grid", o.grid, "ISE grid size")->capture_default_str();
  app.add_option("--trim", o.trim, "boundary | none | fixed")->capture_default_str();
  app.add_option("--trim-a", o.trim_a, "half-width kept by --trim fixed")
    ->capture_default_str();
  app.add_option("--hessian", o.hessian, "exact | expected | safeguarded")
    ->capture_default_str();
  app.add_option("--ise-density", o.ise_density, "measure of the ISE integral")
    ->capture_default_str();
}

int
effective_replications(const SimulateOptions& o)
{
  return o.fast ? 200 : o.replications;
}

json
to_json(const SimulateOptions& o)
{
  json j = { { "dgp", o.dgp },
             { "d", o.d },
             { "n", o.n },
             { "estimator", o.estimator },
             { "kappa", o.kappa },
             { "nuisance_kappa", o.nuisance_kappa } };
  if (!o.ch.empty())
    j["ch"] = o.ch;
  else
    j["h"] = o.h;
  j["components"] = o.components;
  j["replications"] = effective_replications(o);
  j["seed"] = o.seed;
  j["grid"] = o.grid;
  j["trim"] = o.trim;
  j["trim_a"] = o.trim_a;
  j["hessian"] = o.hessian;
  j["ise_density"] = o.ise_density;
  return j;
}

ExperimentConfig
experiment_config(const SimulateOptions& o, unsigned threads)
{
  ExperimentConfig c;
  c.dgp = dgp_by_name(o.dgp);
  c.d = o.d;
  if (o.n < 1)
    throw UsageError("--n must be positive");
  c.n = o.n;
  c.estimator = estimator_by_name(o.estimator);
  c.kappa = o.kappa;
  c.nuisance_kappa = o.nuisance_kappa;
  c.components.clear();
  for (int k : o.components) {
    if (k < 1 || k > o.d)
      throw UsageError(
        fmt::format("--components: {} is outside 1..{}", k, o.d));
    c.components.push_back(k - 1);
  }
  const auto m = static_cast<Eigen::Index>(c.components.size());
  if (!o.ch.empty()) {
    c.h = broadcast(o.ch, m, "--ch");
    for (double& v : c.h)
      v *= std::pow(static_cast<double>(o.n), -0.2);
  } else {
    c.h = broadcast(o.h, m, "--h");
  }
  c.replications = effective_replications(o);
  c.seed = o.seed;
  c.grid_points = o.grid;
  c.trim = trim_by_name(o.trim);
  c.trim_a = o.trim_a;
  c.threads = threads;
  c.hessian = hessian_by_name(o.hessian);
  c.ise_density = o.ise_density;
  c.validate();
  return c;
}

Files
run_simulate(const SimulateOptions& o, const Common& common, std::ostream&)
{
  const ExperimentConfig cfg = experiment_config(o, common.threads);
  const EimseReport report = run_experiment(cfg);

  std::vector<int> ok;
  for (int r = 0; r < cfg.replications; ++r)
    if (std::find(report.failed_replications.begin(),
                  report.failed_replications.end(),
                  r) == report.failed_replications.end())
      ok.push_back(r);

  json comps = json::array();
  std::string csv = "component,eimse,standard_error,replications,failures\n";
  for (const auto& c : report.components) {
    comps.push_back({ { "component", c.component + 1 },
                      { "eimse", c.eimse },
                      { "standard_error", c.standard_error } });
    csv += fmt::format("{},{},{},{},{}\n",
                       c.component + 1,
                       num(c.eimse),
                       num(c.standard_error),
                       cfg.replications,
                       report.failures);
  }

  std::string ise = "replication,seed";
  for (const auto& c : report.components)
    ise += fmt::format(",ise_f{}", c.component + 1);
  ise += "\n";
  for (std::size_t k = 0; k < ok.size(); ++k) {
    ise += fmt::format("{},{}", ok[k], cfg.seed + static_cast<std::uint64_t>(ok[k]));
    for (const auto& c : report.components)
      ise += "," + num(c.ise[k]);
    ise += "\n";
  }

  json j;
  j["status"] = "ok";
  j["command"] = "simulate";
  j["config"] = to_json(o);
  j["replications"] = cfg.replications;
  j["succeeded"] = report.replications;
  j["failures"] = report.failures;
  j["failed_replications"] = report.failed_replications;
  j["components"] = std::move(comps);

  Files files;
  files.add("report.json", j);
  files.add("report.csv", std::move(csv));
  files.add("ise_replications.csv", std::move(ise));
  files.add("config.json", to_json(o));
  return files;
}

// -------------------------------------------------------------- bandwidth

struct BandwidthOptions
{
  DataOptions data;
  SeriesOptions series;
  PlsOptions pls;
  std::string dgp;
  int d = 2;
  long n = 500;
  std::uint64_t seed = 1;
  std::string method;
  std::string smoother = "local-linear";
};

void
setup_bandwidth(CLI::App& app, BandwidthOptions& o)
{
  add_data_options(app, o.data, false);
  add_series_options(app, o.series);
  add_pls_options(app, o.pls);
  auto* dgp = app.add_option(
    "--dgp", o.dgp, "simulate data instead: benchmark | heteroskedastic | linear-identity");
  app.get_option("--input")->excludes(dgp);
  app.add_option("--d", o.d, "covariates of the simulated data")->capture_default_str();
  app.add_option("--n", o.n, "size of the simulated data")->capture_default_str();
  app.add_option("--seed", o.seed, "seed of the simulated data")->capture_default_str();
  app.add_option("--method", o.method, "plugin | pls")
    ->required()
    ->check(CLI::IsMember({ "plugin", "pls" }));
  app.add_option("--smoother", o.smoother, "local-linear | local-constant")
    ->capture_default_str();
}

json
to_json(const BandwidthOptions& o)
{
  json j;
  if (!o.dgp.empty())
    j = { { "dgp", o.dgp }, { "d", o.d }, { "n", o.n }, { "seed", o.seed } };
  else
    j = to_json(o.data);
  j.update(to_json(o.series));
  j["method"] = o.method;
  j["smoother"] = o.smoother;
  j.update(to_json(o.pls));
  return j;
}

Files
run_bandwidth(const BandwidthOptions& o, const Common& common, std::ostream& err)
{
  if (o.data.input.empty() && o.dgp.empty())
    throw UsageError("bandwidth needs data: --input or --dgp");
  const auto fs_cfg = first_stage_config(o.series);
  const Smoother smoother = smoother_by_name(o.smoother);
  if (!(o.pls.variance_factor > 0.0))
    throw UsageError("--variance-factor must be positive");
  std::optional<PlsConfig> pls;
  if (o.method == "pls")
    pls = pls_config(o.pls, common.threads);

  Dataset data;
  std::optional<Link> link;
  if (!o.dgp.empty()) {
    if (o.n < 1)
      throw UsageError("--n must be positive");
    const Dgp dgp(dgp_by_name(o.dgp), o.d);
    data = generate_sample(dgp, o.n, o.seed);
    link = dgp.link();
  } else {
    link = link_by_name(o.data.link);
    data = make_dataset(load_csv(o.data.input, { o.data.response, o.data.covariates }));
  }
  const FirstStageFit fit = fit_first_stage(data, *link, fs_cfg);
  const QHat q = q_hat_diagnostic(fit, data, *link);
  std::vector<std::string> warnings;
  collect_first_stage_warnings(fit, q, warnings);
  for (const auto& w : warnings)
    err << "warning: " << w << "\n";

  const auto n = static_cast<double>(data.n());
  json j;
  j["status"] = "ok";
  j["command"] = "bandwidth";
  j["method"] = o.method;
  j["n"] = data.n();
  j["d"] = data.d();
  Files files;
  std::vector<double> c_h;
  if (o.method == "plugin") {
    PluginOptions po;
    po.smoother = smoother;
    po.variance_factor = o.pls.variance_factor;
    try {
      const auto r = plugin_bandwidths(data, fit, *link, po);
      c_h = r.c_h;
      j["pilot_h"] = r.pilot_h;
    } catch (const ZeroBias& e) {
      throw ZeroBias(zero_bias_guidance(e.what()));
    }
  } else {
    const PlsEvaluator ev(
      data, fit, *link, smoother, Kernel{}, o.pls.variance_factor);
    const auto r = minimize_pls(ev, *pls);
    c_h = r.c;
    j["objective"] = r.objective;
    files.add("pls_trace.csv", trace_csv(r, data.d()));
  }
  std::vector<double> h;
  for (double c : c_h)
    h.push_back(c * std::pow(n, -0.2));
  j["c_h"] = c_h;
  j["h"] = h;
  j["warnings"] = warnings;
  files.add("bandwidth.json", j);
  files.add("config.json", to_json(o));
  return files;
}

// --------------------------------------------------------------- diagnose

struct DiagnoseOptions
{
  DataOptions data;
  SeriesOptions series;
};

void
setup_diagnose(CLI::App& app, DiagnoseOptions& o)
{
  add_data_options(app, o.data, true);
  add_series_options(app, o.series);
}

json
to_json(const DiagnoseOptions& o)
{
  json j = to_json(o.data);
  j.update(to_json(o.series));
  return j;
}

Files
run_diagnose(const DiagnoseOptions& o, const Common&, std::ostream& err)
{
  const Link link = link_by_name(o.data.link);
  const auto fs_cfg = first_stage_config(o.series);
  const auto table = load_csv(o.data.input, { o.data.response, o.data.covariates });
  const Dataset data = make_dataset(table);
  const auto kappa = fs_cfg.kappa_for(data.d());
  int dim = 1;
  for (int k : kappa)
    dim += k;

  const FirstStageFit fit = fit_first_stage(data, link, fs_cfg);
  const QHat q = q_hat_diagnostic(fit, data, link);
  std::vector<std::string> warnings;
  collect_first_stage_warnings(fit, q, warnings);

  const Eigen::VectorXd index = first_stage_index(fit, data);
  double fp_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < data.n(); ++i)
    fp_min = std::min(fp_min, link.Fp(index[i]));

  json cov = json::array();
  for (Eigen::Index j = 0; j < data.d(); ++j)
    cov.push_back({ { "name", data.names[j] },
                    { "min", data.scale[j].min },
                    { "max", data.scale[j].max },
                    { "kappa", kappa[j] } });

  for (const auto& w : warnings)
    err << "warning: " << w << "\n";

  json j;
  j["status"] = "ok";
  j["command"] = "diagnose";
  j["n"] = data.n();
  j["d"] = data.d();
  j["response"] = table.response_name;
  j["link"] = link.name();
  j["parameters"] = dim;
  j["covariates"] = std::move(cov);
  j["first_stage"] = first_stage_json(fit, q);
  j["first_stage"]["objective_trace"] = fit.objective_trace;
  j["index_range"] = { index.minCoeff(), index.maxCoeff() };
  j["min_link_derivative"] = fp_min;
  j["warnings"] = warnings;
  Files files;
  files.add("diagnose.json", j);
  files.add("config.json", to_json(o));
  return files;
}

// ------------------------------------------------------------------ driver

template<class Options>
int
execute(const std::string& name,
        const std::string& description,
        void (*setup)(CLI::App&, Options&),
        Files (*body)(const Options&, const Common&, std::ostream&),
        int argc,
        const char* const* argv,
        std::ostream& out,
        std::ostream& err)
{
  CLI::App app(description, "addlink " + name);
  Options options;
  Common common;
  // -h is taken by the bandwidth option.
  app.set_help_flag("--help", "print this help and exit");
  app.set_config("--config", "", "TOML/INI file; command-line flags win");
  app.add_option("--out", common.out, "output directory")->required();
  app.add_option("--threads", common.threads, "worker cap (0 = all cores)")
    ->capture_default_str();
  setup(app, options);

  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    return report_error(err, name, scan_out(argc, argv), ErrorKind::usage, e.what());
  }
  if (common.threads == 0)
    common.threads = default_threads();

  try {
    prepare_output(common.out);
    const Files files = body(options, common, err);
    commit(common.out, files);
    return exit_ok;
  } catch (const Error& e) {
    return report_error(err, name, common.out, e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(err, name, common.out, ErrorKind::numerical, e.what());
  }
}

constexpr const char* usage_text =
  "usage: addlink <command> [options]\n"
  "\n"
  "commands:\n"
  "  fit        estimate an additive model with a known link from CSV\n"
  "  simulate   run a Monte Carlo experiment and report EIMSE\n"
  "  bandwidth  select bandwidth constants (plugin or pls)\n"
  "  diagnose   first-stage fit and conditioning diagnostics\n"
  "\n"
  "Run 'addlink <command> --help' for the options of a command.\n";

} // namespace

int
run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  if (argc < 2) {
    err << usage_text;
    return exit_usage;
  }
  const std::string command = argv[1];
  if (command == "-h" || command == "--help" || command == "help") {
    out << usage_text;
    return exit_ok;
  }
  if (command == "fit")
    return execute<FitOptions>(command,
                               "Two-stage additive model fit",
                               setup_fit,
                               run_fit,
                               argc,
                               argv,
                               out,
                               err);
  if (command == "simulate")
    return execute<SimulateOptions>(command,
                                    "Monte Carlo EIMSE experiment",
                                    setup_simulate,
                                    run_simulate,
                                    argc,
                                    argv,
                                    out,
                                    err);
  if (command == "bandwidth")
    return execute<BandwidthOptions>(command,
                                     "Bandwidth constant selection",
                                     setup_bandwidth,
                                     run_bandwidth,
                                     argc,
                                     argv,
                                     out,
                                     err);
  if (command == "diagnose")
    return execute<DiagnoseOptions>(command,
                                    "First-stage diagnostics",
                                    setup_diagnose,
                                    run_diagnose,
                                    argc,
                                    argv,
                                    out,
                                    err);
  return report_error(
    err,
    command,
    scan_out(argc, argv),
    ErrorKind::usage,
    fmt::format("unknown command '{}' (valid: fit, simulate, bandwidth, diagnose)",
                command));
}

int
run(int argc, const char* const* argv)
{
  return run(argc, argv, std::cout, std::cerr);
}

} // namespace addlink::cli
