#include "blend/cli.hpp"

#include "blend/calibration.hpp"
#include "blend/csv.hpp"
#include "blend/error.hpp"
#include "blend/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <boost/version.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace blend::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_spec(const std::string& msg) { throw Error(ErrorCode::BadSpec, msg); }

std::vector<std::string> string_list(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array()) bad_spec("config key '" + key + "' must be a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) bad_spec("config key '" + key + "' must be a list of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string string_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) bad_spec("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

double number_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) bad_spec("config key '" + key + "' must be a number");
  return v.get<double>();
}

int int_value(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer()) bad_spec("config key '" + key + "' must be an integer");
  return v.get<int>();
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

Kappa parse_kappa(const std::string& text) {
  if (lower(text) == "auto") return kAutoKappa;
  auto v = csv::parse_double(text);
  if (!v || *v < 0.0 || *v > 1.0) bad_spec("kappa must be 'auto' or a number in [0, 1]");
  return *v;
}

CalibrationInit parse_init(const std::string& text) {
  const std::string low = lower(text);
  if (low == "propensity") return CalibrationInit::PropensityWeights;
  if (low == "equal") return CalibrationInit::Equal;
  bad_spec("calibration_init must be 'propensity' or 'equal'");
}

std::string init_name(CalibrationInit init) {
  return init == CalibrationInit::Equal ? "equal" : "propensity";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> split_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    auto v = csv::parse_double(item);
    if (!v) bad_spec(what + ": '" + item + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

const std::vector<std::string>& or_auxiliary(const std::vector<std::string>& v,
                                             const RunConfig& c) {
  return v.empty() ? c.auxiliary : v;
}

ojson versions_json() {
  ojson v;
  v["blend"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  v["boost"] = BOOST_LIB_VERSION;
  v["json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
              std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["cli11"] = CLI11_VERSION;
  v["compiler"] = __VERSION__;
  return v;
}

ojson config_object(const RunConfig& c) {
  ojson j;
  j["data"] = c.data;
  j["auxiliary"] = c.auxiliary;
  j["binary"] = c.binary;
  j["outcomes"] = c.outcomes;
  j["response_column"] = c.response_column ? ojson(*c.response_column) : ojson(nullptr);
  j["nonrespondents"] = c.nonrespondents ? ojson(*c.nonrespondents) : ojson(nullptr);
  j["response_vars"] = c.response_vars;
  j["propensity_vars"] = c.propensity_vars;
  j["calibration_vars"] = c.calibration_vars;
  j["scheme"] = std::string(scheme_name(c.scheme));
  j["kappa"] = c.kappa ? ojson(*c.kappa) : ojson("auto");
  j["trim_pct"] = c.trim_pct;
  j["variance"] = std::string(variance_method_name(c.variance));
  j["groups"] = c.groups;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["benchmark_source"] = std::string(benchmark_source_name(c.benchmark_source));
  j["benchmarks"] = c.benchmarks ? ojson(*c.benchmarks) : ojson(nullptr);
  j["calibration_init"] = init_name(c.init);
  j["estimands"] = c.estimands;
  j["workers"] = c.workers;
  j["out_dir"] = c.out_dir;
  return j;
}

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const ojson& config, const std::vector<std::string>& outputs) {
  ojson m;
  m["tool"] = "blend";
  m["command"] = command;
  m["seed"] = seed;
  m["versions"] = versions_json();
  m["config"] = config;
  m["outputs"] = outputs;
  write_text(join(dir, "manifest.json"), m.dump(2) + "\n");
}

std::string fmt(double v) { return std::isnan(v) ? "NA" : csv::format(v); }

ojson num(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ojson model_json(const LogisticModel& m) {
  ojson j;
  ojson coef = ojson::object();
  for (std::size_t k = 0; k < m.names.size(); ++k) {
    coef[m.names[k]] = m.coefficients(static_cast<Eigen::Index>(k));
  }
  j["coefficients"] = coef;
  j["converged"] = m.converged;
  j["iterations"] = m.iterations;
  j["max_abs_score"] = m.max_abs_score;
  j["separation"] = m.separation;
  return j;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    bad_spec(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad_spec("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "data") c.data = string_value(v, key);
    else if (key == "auxiliary") c.auxiliary = string_list(v, key);
    else if (key == "binary") c.binary = string_list(v, key);
    else if (key == "outcomes") c.outcomes = string_list(v, key);
    else if (key == "response_column") {
      if (!v.is_null()) c.response_column = string_value(v, key);
    } else if (key == "nonrespondents") {
      if (!v.is_null()) c.nonrespondents = string_value(v, key);
    } else if (key == "response_vars") c.response_vars = string_list(v, key);
    else if (key == "propensity_vars") c.propensity_vars = string_list(v, key);
    else if (key == "calibration_vars") c.calibration_vars = string_list(v, key);
    else if (key == "scheme") c.scheme = parse_scheme(string_value(v, key));
    else if (key == "kappa") {
      if (v.is_string()) {
        c.kappa = parse_kappa(v.get<std::string>());
      } else {
        c.kappa = parse_kappa(csv::format(number_value(v, key)));
      }
    } else if (key == "trim_pct") c.trim_pct = number_value(v, key);
    else if (key == "variance") c.variance = parse_variance_method(string_value(v, key));
    else if (key == "groups") c.groups = int_value(v, key);
    else if (key == "alpha") c.alpha = number_value(v, key);
    else if (key == "seed") {
      if (!v.is_number_unsigned()) bad_spec("config key 'seed' must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "benchmark_source") c.benchmark_source = parse_benchmark_source(string_value(v, key));
    else if (key == "benchmarks") {
      if (!v.is_null()) c.benchmarks = string_value(v, key);
    } else if (key == "calibration_init") c.init = parse_init(string_value(v, key));
    else if (key == "estimands") c.estimands = string_list(v, key);
    else if (key == "workers") c.workers = int_value(v, key);
    else if (key == "out_dir") c.out_dir = string_value(v, key);
    else bad_spec("unknown config key '" + key + "'");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_config(ss.str());
  // File references inside a config are relative to the config itself.
  const fs::path base = fs::path(path).parent_path();
  auto rebase = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  rebase(c.data);
  if (c.nonrespondents) rebase(*c.nonrespondents);
  if (c.benchmarks) rebase(*c.benchmarks);
  return c;
}

std::string config_json(const RunConfig& config) { return config_object(config).dump(2); }

void validate(const RunConfig& c, const Dataset& data) {
  const auto& schema = data.schema();
  auto is_aux = [&](const std::string& v) {
    return std::find(schema.auxiliary.begin(), schema.auxiliary.end(), v) != schema.auxiliary.end();
  };
  auto is_outcome = [&](const std::string& v) {
    return std::find(schema.outcomes.begin(), schema.outcomes.end(), v) != schema.outcomes.end();
  };
  auto require_aux = [&](const std::vector<std::string>& vars, const char* role) {
    for (const auto& v : vars) {
      if (!is_aux(v)) {
        throw Error(ErrorCode::UnknownVariable,
                    std::string(role) + " variable '" + v + "' is not an auxiliary column");
      }
    }
  };
  require_aux(c.propensity_vars, "propensity");
  require_aux(c.calibration_vars, "calibration");
  require_aux(c.response_vars, "response");
  for (const auto& text : c.estimands) {
    const Estimand e = parse_estimand(text);
    if (!is_outcome(e.outcome)) {
      throw Error(ErrorCode::UnknownVariable, "estimand outcome '" + e.outcome + "' is not an outcome column");
    }
    for (const auto& v : e.covariates) {
      if (!is_aux(v) && !is_outcome(v)) {
        throw Error(ErrorCode::UnknownVariable, "regression covariate '" + v + "' is not in the data");
      }
    }
  }
  if (c.variance == VarianceMethod::Jackknife && c.groups < 2) {
    bad_spec("the jackknife needs at least 2 groups");
  }
  if (c.nonrespondents && c.response_column) {
    bad_spec("give either a response column or a nonrespondent file, not both");
  }
  if (c.nonrespondents && c.response_vars.empty()) {
    bad_spec("a nonrespondent file needs response_vars");
  }
  if (c.benchmark_source != BenchmarkSource::HtEstimated && !c.benchmarks &&
      (c.scheme == Scheme::SC || c.scheme == Scheme::DC)) {
    bad_spec("benchmark source '" + std::string(benchmark_source_name(c.benchmark_source)) +
             "' needs a benchmarks file");
  }
  if (c.workers < 1) bad_spec("workers must be at least 1");
}

BlendData load_inputs(const RunConfig& c) {
  if (c.data.empty()) bad_spec("no data file given");
  ColumnRoles roles;
  roles.auxiliary = c.auxiliary;
  roles.outcomes = c.outcomes;
  roles.binary = c.binary;
  roles.response_column = c.response_column;
  BlendData in;
  in.data = load_dataset(c.data, roles);
  validate(c, in.data);
  if (c.nonrespondents) {
    const csv::Table t = csv::read(*c.nonrespondents);
    ResponseFrame frame;
    frame.variables = c.response_vars;
    frame.nonrespondents.resize(static_cast<Eigen::Index>(t.rows.size()),
                                static_cast<Eigen::Index>(c.response_vars.size()));
    for (std::size_t j = 0; j < c.response_vars.size(); ++j) {
      auto col = t.find(c.response_vars[j]);
      if (!col) {
        throw Error(ErrorCode::MissingColumn,
                    "'" + *c.nonrespondents + "' lacks column '" + c.response_vars[j] + "'");
      }
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& cell = t.rows[r][*col];
        auto v = csv::parse_double(cell);
        if (!v) {
          throw Error(csv::is_missing(cell) ? ErrorCode::MissingAuxiliary : ErrorCode::BadValue,
                      *c.nonrespondents + " row " + std::to_string(r + 2) + ": bad '" +
                          c.response_vars[j] + "'");
        }
        frame.nonrespondents(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = *v;
      }
    }
    in.frame = std::move(frame);
  }
  return in;
}

BlendOptions blend_options(const RunConfig& c) {
  BlendOptions o;
  o.scheme = c.scheme;
  o.kappa = c.kappa;
  o.propensity_vars = or_auxiliary(c.propensity_vars, c);
  o.calibration_vars = or_auxiliary(c.calibration_vars, c);
  o.benchmark_source = c.benchmark_source;
  if (c.benchmarks) o.benchmarks = read_benchmarks(*c.benchmarks);
  o.init = c.init;
  o.trim_pct = c.trim_pct;
  return o;
}

namespace {

// Flags shared by the data subcommands. Each one, when given, replaces the
// config value.
struct DataFlags {
  std::string config, data, scheme, kappa, variance, benchmark_source, benchmarks, out_dir, init;
  double trim = 0.0, alpha = 0.0;
  int groups = 0, workers = 0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;
  CLI::Option *o_data, *o_scheme, *o_kappa, *o_trim, *o_variance, *o_groups, *o_alpha, *o_seed,
      *o_source, *o_bench, *o_workers, *o_out, *o_init;

  void attach(CLI::App* sub) {
    sub->add_option("--config,-c", config, "JSON run config");
    o_data = sub->add_option("--data", data, "Blended sample file");
    o_scheme = sub->add_option("--scheme", scheme, "SPS, DPS, SC, DC or DesignOnly");
    o_kappa = sub->add_option("--kappa", kappa, "Mixing constant in [0,1] or 'auto'");
    o_trim = sub->add_option("--trim", trim, "Trimming fraction per tail");
    o_variance = sub->add_option("--variance", variance, "linearization or jackknife");
    o_groups = sub->add_option("--groups", groups, "Jackknife groups");
    o_alpha = sub->add_option("--alpha", alpha, "Test level");
    o_seed = sub->add_option("--seed", seed, "Seed for jackknife grouping");
    o_source = sub->add_option("--benchmark-source", benchmark_source, "file, ht or two_stage");
    o_bench = sub->add_option("--benchmarks", benchmarks, "Benchmark totals file");
    o_workers = sub->add_option("--workers", workers, "Worker threads");
    o_out = sub->add_option("--out-dir,-o", out_dir, "Output directory");
    o_init = sub->add_option("--calibration-init", init, "propensity or equal");
  }

  // The variance flag may list several methods; only the first is stored.
  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config(config);
    if (o_data->count()) c.data = data;
    if (o_scheme->count()) c.scheme = parse_scheme(scheme);
    if (o_kappa->count()) c.kappa = parse_kappa(kappa);
    if (o_trim->count()) c.trim_pct = trim;
    if (o_variance->count()) {
      auto methods = split_list(variance);
      if (methods.empty()) bad_spec("empty --variance");
      c.variance = parse_variance_method(methods.front());
    }
    if (o_groups->count()) c.groups = groups;
    if (o_alpha->count()) c.alpha = alpha;
    if (o_seed->count()) c.seed = seed;
    if (o_source->count()) c.benchmark_source = parse_benchmark_source(benchmark_source);
    if (o_bench->count()) c.benchmarks = benchmarks;
    if (o_workers->count()) c.workers = workers;
    if (o_out->count()) c.out_dir = out_dir;
    if (o_init->count()) c.init = parse_init(init);
    return c;
  }

  std::vector<VarianceMethod> variance_methods(const RunConfig& c) const {
    std::vector<VarianceMethod> out;
    if (o_variance->count()) {
      for (const auto& m : split_list(variance)) out.push_back(parse_variance_method(m));
    } else {
      out.push_back(c.variance);
    }
    return out;
  }
};

AnalysisOptions analysis_options(const RunConfig& c, VarianceMethod method) {
  AnalysisOptions a;
  a.variance = method;
  a.groups = c.groups;
  a.seed = c.seed;
  a.alpha = c.alpha;
  a.workers = c.workers;
  return a;
}

int cmd_weights(const RunConfig& c, std::ostream& out) {
  const BlendData in = load_inputs(c);
  const BlendOptions opt = blend_options(c);
  const BlendResult res = compute_weights(in, opt);
  const fs::path dir = prepare_out_dir(c.out_dir);
  const Dataset& ds = in.data;

  std::vector<std::string> ids;
  for (std::size_t i = 0; i < ds.size(); ++i) ids.push_back(ds.id(i));
  write_weights(join(dir, "weights.csv"), ids, res.weights);

  const auto& vars = opt.calibration_vars;
  BlendResult untrimmed = res;
  untrimmed.weights = res.untrimmed;
  const auto balance = balance_table(ds, res, vars);
  const auto balance_pre = balance_table(ds, untrimmed, vars);
  {
    std::ostringstream os;
    csv::write_row(os, {"variable", "benchmark_mean", "s1_design_mean", "s2_unweighted_mean",
                        "weighted_mean_untrimmed", "weighted_mean"});
    for (std::size_t k = 0; k < balance.size(); ++k) {
      csv::write_row(os, {balance[k].variable, fmt(balance[k].benchmark_mean),
                          fmt(balance[k].s1_mean), fmt(balance[k].s2_unweighted_mean),
                          fmt(balance_pre[k].weighted_mean), fmt(balance[k].weighted_mean)});
    }
    write_text(join(dir, "balance.csv"), os.str());
  }

  ojson r;
  r["scheme"] = std::string(scheme_name(res.weights.scheme));
  r["n1"] = ds.n1();
  r["n2"] = ds.n2();
  r["kappa"] = res.weights.kappa ? num(*res.weights.kappa) : ojson(nullptr);
  r["deff_kish"] = num(kish_deff(res.weights.weights));
  r["deff_kish_untrimmed"] = num(kish_deff(res.untrimmed.weights));
  r["weight_sum"] = res.weights.sum();
  r["response_model"] = res.response_model ? model_json(*res.response_model) : ojson(nullptr);
  if (res.gamma) {
    ojson g = model_json(res.gamma->model);
    g["separation_warning"] = res.gamma->separation_warning;
    g["clipped_low"] = res.gamma->clipped_low;
    g["clipped_high"] = res.gamma->clipped_high;
    r["propensity_model"] = g;
  } else {
    r["propensity_model"] = nullptr;
  }
  r["d_imputed"] = std::count(res.probs.d_imputed.begin(), res.probs.d_imputed.end(), true);

  ojson trim;
  trim["pct"] = c.trim_pct;
  trim["applied"] = res.weights.trimmed;
  if (res.weights.trim_bounds) {
    const auto [lo, hi] = *res.weights.trim_bounds;
    trim["lower"] = lo;
    trim["upper"] = hi;
    int below = 0, above = 0;
    for (Eigen::Index i = 0; i < res.untrimmed.weights.size(); ++i) {
      if (res.untrimmed.weights(i) < lo) ++below;
      if (res.untrimmed.weights(i) > hi) ++above;
    }
    trim["raised"] = below;
    trim["lowered"] = above;
  }
  trim["min_weight"] = res.weights.weights.minCoeff();
  trim["max_weight"] = res.weights.weights.maxCoeff();
  r["trimming"] = trim;

  if (res.benchmarks) {
    ojson b = ojson::array();
    for (std::size_t j = 0; j < res.benchmarks->size(); ++j) {
      b.push_back({{"name", res.benchmarks->names[j]},
                   {"total", res.benchmarks->totals(static_cast<Eigen::Index>(j))},
                   {"provenance", std::string(provenance_name(res.benchmarks->provenance[j]))}});
    }
    r["benchmarks"] = b;
  } else {
    r["benchmarks"] = nullptr;
  }
  ojson bal = ojson::array();
  for (std::size_t k = 0; k < balance.size(); ++k) {
    bal.push_back({{"variable", balance[k].variable},
                   {"benchmark_mean", num(balance[k].benchmark_mean)},
                   {"s1_design_mean", num(balance[k].s1_mean)},
                   {"s2_unweighted_mean", num(balance[k].s2_unweighted_mean)},
                   {"weighted_mean_untrimmed", num(balance_pre[k].weighted_mean)},
                   {"weighted_mean", num(balance[k].weighted_mean)}});
  }
  r["balance"] = bal;
  write_text(join(dir, "weights_report.json"), r.dump(2) + "\n");
  write_manifest(dir, "weights", c.seed, config_object(c),
                 {"weights.csv", "balance.csv", "weights_report.json"});

  out << scheme_name(res.weights.scheme) << " weights for " << ds.size() << " units (n1=" << ds.n1()
      << ", n2=" << ds.n2() << "), Kish deff " << csv::format(kish_deff(res.weights.weights))
      << "\n";
  return 0;
}

int cmd_estimate(const RunConfig& c, const std::vector<VarianceMethod>& methods, bool posthoc,
                 std::ostream& out) {
  if (c.estimands.empty()) bad_spec("no estimands given");
  const BlendData in = load_inputs(c);
  const BlendOptions opt = blend_options(c);
  std::vector<Estimand> estimands;
  for (const auto& text : c.estimands) estimands.push_back(parse_estimand(text));
  if (posthoc && !is_disjoint(c.scheme)) {
    throw Error(ErrorCode::WrongScheme, "post hoc blending needs a disjoint scheme (DPS or DC)");
  }
  const fs::path dir = prepare_out_dir(c.out_dir);

  std::ostringstream os;
  csv::write_row(os, {"estimand", "parameter", "scheme", "variance", "estimate", "se", "deff",
                      "ci_low", "ci_high", "alpha", "n_used", "n_excluded"});
  std::ostringstream ph;
  csv::write_row(ph, {"outcome", "variance", "estimate_s1", "se_s1", "estimate_s2", "se_s2",
                      "cov12", "kappa_bar", "kappa_outside_unit", "estimate", "se", "ci_low",
                      "ci_high"});
  std::size_t rows = 0;
  for (const VarianceMethod method : methods) {
    if (method == VarianceMethod::Jackknife && c.groups < 2) {
      bad_spec("the jackknife needs at least 2 groups");
    }
    const AnalysisOptions an = analysis_options(c, method);
    const Analysis result = analyze(in, opt, estimands, an);
    std::size_t k = 0;
    for (const auto& e : estimands) {
      for (std::size_t p = 0; p < e.parameter_names().size(); ++p, ++k) {
        const EstimateReport& r = result.reports[k];
        csv::write_row(os, {e.label(), r.estimand, std::string(scheme_name(c.scheme)),
                            std::string(variance_method_name(method)), fmt(r.estimate), fmt(r.se),
                            fmt(r.deff), fmt(r.ci_low), fmt(r.ci_high), fmt(r.alpha),
                            std::to_string(r.n_used), std::to_string(r.n_excluded)});
        ++rows;
      }
    }
    if (posthoc) {
      for (const auto& e : estimands) {
        if (e.regression) continue;
        const PosthocAnalysis pa = analyze_posthoc(in, opt, e.outcome, an);
        const EstimateReport& b = pa.blended.report;
        csv::write_row(ph, {e.outcome, std::string(variance_method_name(method)),
                            fmt(pa.s1.estimate), fmt(pa.s1.se), fmt(pa.s2.estimate), fmt(pa.s2.se),
                            fmt(pa.cov12), fmt(pa.blended.kappa_bar),
                            pa.blended.kappa_outside_unit ? "1" : "0", fmt(b.estimate), fmt(b.se),
                            fmt(b.ci_low), fmt(b.ci_high)});
      }
    }
  }
  std::vector<std::string> outputs{"estimates.csv"};
  write_text(join(dir, "estimates.csv"), os.str());
  if (posthoc) {
    write_text(join(dir, "posthoc.csv"), ph.str());
    outputs.push_back("posthoc.csv");
  }
  ojson cfg = config_object(c);
  ojson vm = ojson::array();
  for (auto m : methods) vm.push_back(std::string(variance_method_name(m)));
  cfg["variance_methods"] = vm;
  cfg["posthoc"] = posthoc;
  write_manifest(dir, "estimate", c.seed, cfg, outputs);
  out << rows << " estimate rows written to " << join(dir, "estimates.csv") << "\n";
  return 0;
}

int cmd_adequacy(const RunConfig& c, std::vector<std::string> outcomes, std::ostream& out) {
  if (!is_disjoint(c.scheme)) {
    throw Error(ErrorCode::WrongScheme,
                std::string(scheme_name(c.scheme)) +
                    " weights blend the samples jointly; the adequacy test needs disjoint (DPS "
                    "or DC) weights, under which each sample is separately representative");
  }
  const BlendData in = load_inputs(c);
  if (outcomes.empty()) outcomes = in.data.schema().outcomes;
  const BlendResult res = compute_weights(in, blend_options(c));
  const fs::path dir = prepare_out_dir(c.out_dir);
  std::ostringstream os;
  csv::write_row(os, {"outcome", "delta_hat", "se", "z", "p_value", "mean_s1", "mean_s2",
                      "n_used", "reject"});
  for (const auto& y : outcomes) {
    in.data.outcome_index(y);
    const AdequacyResult a = adequacy_test(in.data.outcome(y), res.weights, in.data.memberships());
    csv::write_row(os, {y, fmt(a.delta_hat), fmt(a.se_delta), fmt(a.z_star), fmt(a.p_value),
                        fmt(a.mean_s1), fmt(a.mean_s2), std::to_string(a.n_used),
                        a.p_value <= c.alpha ? "1" : "0"});
  }
  write_text(join(dir, "adequacy.csv"), os.str());
  ojson cfg = config_object(c);
  cfg["adequacy_outcomes"] = outcomes;
  write_manifest(dir, "adequacy", c.seed, cfg, {"adequacy.csv"});
  out << "adequacy tests for " << outcomes.size() << " outcome(s) written to "
      << join(dir, "adequacy.csv") << "\n";
  return 0;
}

int cmd_benchmarks(const RunConfig& c, std::ostream& out) {
  const BlendData in = load_inputs(c);
  BlendOptions opt = blend_options(c);
  // Benchmarks need only the probability-sample design weights.
  opt.scheme = Scheme::DesignOnly;
  opt.trim_pct = 0.0;
  const BlendResult res = compute_weights(in, opt);
  BenchmarkVector bv;
  switch (c.benchmark_source) {
    case BenchmarkSource::File:
      if (!opt.benchmarks) bad_spec("benchmark source 'file' needs a benchmarks file");
      bv = *opt.benchmarks;
      break;
    case BenchmarkSource::HtEstimated:
      bv = estimate_benchmarks(in.data, res.probs, opt.calibration_vars, true);
      break;
    case BenchmarkSource::TwoStage:
      if (!opt.benchmarks) bad_spec("two-stage benchmarks need a file of known totals");
      bv = two_stage_benchmarks(in.data, *opt.benchmarks, res.probs, opt.calibration_vars, true,
                                opt.rake);
      break;
  }
  const fs::path dir = prepare_out_dir(c.out_dir);
  write_benchmarks(join(dir, "benchmarks.csv"), bv);
  write_manifest(dir, "benchmarks", c.seed, config_object(c), {"benchmarks.csv"});
  out << bv.size() << " benchmark totals written to " << join(dir, "benchmarks.csv") << "\n";
  return 0;
}

struct SimFlags {
  std::string study;
  std::string spec;
  std::string settings = "1,2,3,4,5";
  std::string r2 = "0,0.25,0.5,0.75,0.9";
  int k = 0;
  std::uint64_t seed = 1;
  double tau = 0.5;
  int groups = 40;
  double alpha = 0.05;
  int workers = 1;
  bool no_posthoc = false;
  bool plot = false;
  double shift = 0.0;
  double aux_r2 = 0.14;
  int draw = 0;
  std::string out_dir = ".";
  CLI::Option *o_k, *o_seed, *o_tau, *o_settings;
};

void apply_spec(SimFlags& f, const nlohmann::json& j, sim::SimSetting* custom) {
  for (const auto& [key, v] : j.items()) {
    if (key == "study") f.study = string_value(v, key);
    else if (key == "k") f.k = int_value(v, key);
    else if (key == "seed") {
      if (!v.is_number_unsigned()) bad_spec("spec key 'seed' must be a non-negative integer");
      f.seed = v.get<std::uint64_t>();
    } else if (key == "tau") f.tau = number_value(v, key);
    else if (key == "groups") f.groups = int_value(v, key);
    else if (key == "alpha") f.alpha = number_value(v, key);
    else if (key == "posthoc") {
      if (!v.is_boolean()) bad_spec("spec key 'posthoc' must be true or false");
      f.no_posthoc = !v.get<bool>();
    }
    else if (key == "shift") f.shift = number_value(v, key);
    else if (key == "aux_r2") f.aux_r2 = number_value(v, key);
    else if (key == "r2") {
      std::string s;
      for (const auto& e : v) s += csv::format(number_value(e, key)) + ",";
      f.r2 = s;
    } else if (key == "setting") f.settings = std::to_string(int_value(v, key));
    else if (key == "label" || key == "intercept" || key == "selection" || key == "auxiliary") {
      if (!custom) bad_spec("spec key '" + key + "' applies to custom pseudo settings only");
      if (key == "label") custom->label = string_value(v, key);
      if (key == "intercept") custom->intercept = number_value(v, key);
      if (key == "auxiliary") custom->auxiliary = string_list(v, key);
      if (key == "selection") {
        if (!v.is_object()) bad_spec("spec key 'selection' must map variables to coefficients");
        custom->selection_covariates.clear();
        for (const auto& [name, b] : v.items()) {
          custom->selection_covariates.emplace_back(name, number_value(b, "selection." + name));
        }
      }
    } else bad_spec("unknown spec key '" + key + "'");
  }
}

int cmd_simulate(SimFlags f, std::ostream& out) {
  std::optional<sim::SimSetting> custom;
  ojson echo;
  if (!f.spec.empty()) {
    std::ifstream in(f.spec);
    if (!in) throw Error(ErrorCode::Io, "cannot open spec '" + f.spec + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      bad_spec(std::string("spec is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) bad_spec("spec must be a JSON object");
    const bool has_custom = j.contains("selection") || j.contains("auxiliary") ||
                            j.contains("intercept") || j.contains("label");
    const auto saved_k = f.k;
    const auto saved_seed = f.seed;
    const auto saved_tau = f.tau;
    if (has_custom) {
      const int base = j.contains("setting") ? int_value(j["setting"], "setting") : 1;
      custom = sim::pseudo_setting(base, j.contains("tau") ? number_value(j["tau"], "tau") : f.tau);
      custom->label = "custom";
    }
    apply_spec(f, j, custom ? &*custom : nullptr);
    // Flags win over the spec file.
    if (f.o_k->count()) f.k = saved_k;
    if (f.o_seed->count()) f.seed = saved_seed;
    if (f.o_tau->count()) f.tau = saved_tau;
    echo["spec"] = j;
  }
  if (f.study.empty()) bad_spec("name a study: pseudo, synthetic, adequacy or sample");
  if (f.draw < 0) bad_spec("--draw must be non-negative");
  if (f.workers < 1) bad_spec("workers must be at least 1");
  const std::string study = lower(f.study);
  const fs::path dir = prepare_out_dir(f.out_dir);
  std::vector<std::string> outputs;
  echo["study"] = study;
  echo["seed"] = f.seed;
  echo["alpha"] = f.alpha;
  echo["workers"] = f.workers;

  if (study == "pseudo") {
    const int K = f.k > 0 ? f.k : 1000;
    sim::PseudoStudyOptions opt;
    opt.posthoc = !f.no_posthoc;
    opt.jackknife_groups = f.groups;
    opt.alpha = f.alpha;
    opt.workers = f.workers;
    std::vector<sim::SimSetting> settings;
    if (custom) {
      settings.push_back(*custom);
      settings.back().tau = f.tau;
    } else {
      for (double s : split_numbers(f.settings, "--setting")) {
        if (s != std::floor(s)) bad_spec("settings are numbered 1 to 5");
        settings.push_back(sim::pseudo_setting(static_cast<int>(s), f.tau));
      }
    }
    std::vector<sim::SimMetrics> metrics;
    ojson echo_settings = ojson::array();
    for (auto& s : settings) {
      s.K = K;
      s.seed = f.seed;
      metrics.push_back(sim::run_pseudo_study(s, opt));
      ojson sel = ojson::object();
      for (const auto& [name, b] : s.selection_covariates) sel[name] = b;
      echo_settings.push_back({{"label", s.label}, {"intercept", s.intercept}, {"selection", sel},
                               {"tau", s.tau}, {"auxiliary", s.auxiliary}});
    }
    echo["K"] = K;
    echo["tau"] = f.tau;
    echo["jackknife_groups"] = f.groups;
    echo["posthoc"] = opt.posthoc;
    echo["settings"] = echo_settings;
    sim::write_pseudo_metrics(join(dir, "pseudo_metrics.csv"), metrics);
    outputs.push_back("pseudo_metrics.csv");
    if (f.plot) {
      sim::write_pseudo_plot(join(dir, "pseudo_plot.svg"), metrics);
      outputs.push_back("pseudo_plot.svg");
    }
    std::size_t failed = 0;
    for (const auto& m : metrics) {
      for (const auto& [e, s] : m.schemes) failed += s.failed;
    }
    out << metrics.size() << " setting(s), K=" << K << ", " << failed
        << " failed estimator fits; metrics in " << join(dir, "pseudo_metrics.csv") << "\n";
  } else if (study == "synthetic") {
    const int K = f.k > 0 ? f.k : 2000;
    const std::vector<double> grid = split_numbers(f.r2, "--r2");
    if (grid.empty()) bad_spec("--r2 needs at least one value");
    sim::SyntheticOptions opt;
    opt.jackknife_groups = f.groups;
    opt.alpha = f.alpha;
    opt.workers = f.workers;
    const auto metrics = sim::run_synthetic_study(grid, K, f.seed, opt);
    echo["K"] = K;
    echo["r2"] = grid;
    echo["jackknife_groups"] = f.groups;
    sim::write_synthetic_metrics(join(dir, "synthetic_metrics.csv"), metrics);
    outputs.push_back("synthetic_metrics.csv");
    if (f.plot) {
      sim::write_synthetic_plot(join(dir, "synthetic_plot.svg"), metrics);
      outputs.push_back("synthetic_plot.svg");
    }
    out << grid.size() << " R^2 value(s), K=" << K << "; metrics in "
        << join(dir, "synthetic_metrics.csv") << "\n";
  } else if (study == "adequacy") {
    const int K = f.k > 0 ? f.k : 2000;
    sim::AdequacyStudyOptions opt;
    opt.shift = f.shift;
    opt.aux_r2 = f.aux_r2;
    opt.alpha = f.alpha;
    opt.workers = f.workers;
    const auto r = sim::run_adequacy_study(K, f.seed, opt);
    echo["K"] = K;
    echo["shift"] = f.shift;
    echo["aux_r2"] = f.aux_r2;
    std::ostringstream os;
    csv::write_row(os, {"K", "seed", "shift", "aux_r2", "alpha", "rejection_rate", "mean_delta",
                        "completed", "failed"});
    csv::write_row(os, {std::to_string(K), std::to_string(f.seed), csv::format(f.shift),
                        csv::format(f.aux_r2), csv::format(f.alpha), fmt(r.rejection_rate),
                        fmt(r.mean_delta), std::to_string(r.completed), std::to_string(r.failed)});
    write_text(join(dir, "adequacy_metrics.csv"), os.str());
    outputs.push_back("adequacy_metrics.csv");
    out << "rejection rate " << csv::format(r.rejection_rate) << " over " << r.completed
        << " runs; metrics in " << join(dir, "adequacy_metrics.csv") << "\n";
  } else if (study == "sample") {
    // One draw of a pseudo setting written as analysis inputs plus a config.
    sim::SimSetting setting;
    if (custom) {
      setting = *custom;
      setting.tau = f.tau;
    } else {
      const auto s = split_numbers(f.settings, "--setting");
      if (s.size() != 1 || s[0] != std::floor(s[0])) bad_spec("sample needs a single --setting");
      setting = sim::pseudo_setting(static_cast<int>(s[0]), f.tau);
    }
    setting.seed = f.seed;
    const sim::Population pop = sim::build_pseudo_population(f.seed);
    const BlendData draw = sim::draw_pseudo_sample(pop, setting, static_cast<std::uint64_t>(f.draw));
    write_dataset(join(dir, "sample.csv"), draw.data);
    std::ostringstream os;
    csv::write_row(os, draw.frame->variables);
    for (Eigen::Index r = 0; r < draw.frame->nonrespondents.rows(); ++r) {
      std::vector<std::string> row;
      for (Eigen::Index j = 0; j < draw.frame->nonrespondents.cols(); ++j) {
        row.push_back(csv::format(draw.frame->nonrespondents(r, j)));
      }
      csv::write_row(os, row);
    }
    write_text(join(dir, "nonrespondents.csv"), os.str());
    RunConfig c;
    c.data = "sample.csv";
    c.auxiliary = draw.data.schema().auxiliary;
    for (const auto& a : c.auxiliary) {
      if (a != "age" && a != sim::kAnxiety) c.binary.push_back(a);
    }
    c.outcomes = draw.data.schema().outcomes;
    c.nonrespondents = "nonrespondents.csv";
    c.response_vars = draw.frame->variables;
    c.propensity_vars = setting.auxiliary;
    c.calibration_vars = setting.auxiliary;
    c.seed = f.seed;
    c.estimands = {sim::kDepression, std::string(sim::kDepression) + " ~ female + age"};
    write_text(join(dir, "config.json"), config_json(c) + "\n");
    outputs.insert(outputs.end(), {"sample.csv", "nonrespondents.csv", "config.json"});
    echo["setting"] = setting.label;
    echo["tau"] = setting.tau;
    echo["draw"] = f.draw;
    out << "sample with n1=" << draw.data.n1() << ", n2=" << draw.data.n2() << ", "
        << draw.frame->size() << " nonrespondents written to " << dir.string() << "\n";
  } else {
    bad_spec("unknown study '" + f.study + "' (pseudo, synthetic, adequacy or sample)");
  }
  write_manifest(dir, "simulate", f.seed, echo, outputs);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blending probability and convenience samples"};
  app.set_version_flag("--version", std::string("blend ") + kVersion);
  app.require_subcommand(1);

  DataFlags wflags, eflags, aflags, bflags;
  auto* weights = app.add_subcommand("weights", "Compute blending weights and diagnostics");
  wflags.attach(weights);

  auto* estimate = app.add_subcommand("estimate", "Estimate means and regression coefficients");
  eflags.attach(estimate);
  std::vector<std::string> estimand_flags;
  bool posthoc = false;
  estimate->add_option("--estimand,-e", estimand_flags, "Outcome or 'y ~ x1 + x2' (repeatable)");
  estimate->add_flag("--posthoc", posthoc, "Also report post hoc blends of per-sample means");

  auto* adequacy = app.add_subcommand("adequacy", "Test the adequacy of blending per outcome");
  aflags.attach(adequacy);
  std::vector<std::string> adequacy_outcomes;
  adequacy->add_option("--outcome", adequacy_outcomes, "Outcome to test (repeatable)");

  auto* benchmarks = app.add_subcommand("benchmarks", "Estimate benchmark totals");
  bflags.attach(benchmarks);

  SimFlags sflags;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation study");
  simulate->add_option("study", sflags.study, "pseudo, synthetic, adequacy or sample");
  simulate->add_option("--spec", sflags.spec, "JSON study spec (custom pseudo settings)");
  sflags.o_settings = simulate->add_option("--setting", sflags.settings, "Pseudo settings, e.g. 1,4,5");
  simulate->add_option("--r2", sflags.r2, "Synthetic R^2 grid, e.g. 0,0.5,0.9");
  sflags.o_k = simulate->add_option("--k", sflags.k, "Monte Carlo iterations");
  sflags.o_seed = simulate->add_option("--seed", sflags.seed, "Master seed");
  sflags.o_tau = simulate->add_option("--tau", sflags.tau, "Outcome coefficient in selection");
  simulate->add_option("--groups", sflags.groups, "Jackknife groups");
  simulate->add_option("--alpha", sflags.alpha, "Test level");
  simulate->add_option("--workers", sflags.workers, "Worker threads");
  simulate->add_option("--shift", sflags.shift, "Adequacy study: latent shift in S2 (SDs)");
  simulate->add_option("--aux-r2", sflags.aux_r2, "Adequacy study: R^2 of the auxiliary");
  simulate->add_option("--draw", sflags.draw, "Sample study: which draw to export");
  simulate->add_flag("--no-posthoc", sflags.no_posthoc, "Skip the post hoc estimators");
  simulate->add_flag("--plot", sflags.plot, "Write SVG plots");
  simulate->add_option("--out-dir,-o", sflags.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (weights->parsed()) return cmd_weights(wflags.resolve(), out);
    if (estimate->parsed()) {
      RunConfig c = eflags.resolve();
      if (!estimand_flags.empty()) c.estimands = estimand_flags;
      return cmd_estimate(c, eflags.variance_methods(c), posthoc, out);
    }
    if (adequacy->parsed()) return cmd_adequacy(aflags.resolve(), adequacy_outcomes, out);
    if (benchmarks->parsed()) return cmd_benchmarks(bflags.resolve(), out);
    if (simulate->parsed()) return cmd_simulate(sflags, out);
  } catch (const Error& e) {
    err << "blend: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "blend: unexpected failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace blend::cli
