#include "blend/simulation.hpp"

#include "blend/csv.hpp"
#include "blend/error.hpp"
#include "blend/estimation.hpp"
#include "blend/parallel.hpp"
#include "blend/pipeline.hpp"
#include "blend/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace blend::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logit(double p) { return std::log(p / (1.0 - p)); }

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  return os;
}

// Seed for per-iteration jackknife groups.
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t k, std::uint64_t salt) {
  Rng rng = make_rng(seed, k, salt);
  return rng();
}

Unit make_unit(const Population& pop, std::size_t i, Membership m, double d_star,
               const std::vector<std::size_t>& aux_cols, const std::vector<std::size_t>& out_cols) {
  Unit u;
  u.id = std::to_string(i);
  u.membership = m;
  u.d_star = d_star;
  for (auto c : aux_cols) u.x.push_back(pop.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
  for (auto c : out_cols) u.y.push_back(pop.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
  return u;
}

// Dataset of S1 respondents and S2 with the nonrespondents as response frame.
BlendData assemble(const Population& pop, const ProbabilitySample& s1,
                   const std::vector<std::size_t>& s2, double d_star,
                   const std::vector<std::string>& aux, const std::vector<std::string>& outcomes,
                   const std::vector<std::string>& response_vars) {
  std::vector<std::size_t> aux_cols, out_cols;
  for (const auto& a : aux) aux_cols.push_back(pop.index(a));
  for (const auto& o : outcomes) out_cols.push_back(pop.index(o));
  std::vector<Unit> units;
  units.reserve(s1.respondents.size() + s2.size());
  for (auto i : s1.respondents) units.push_back(make_unit(pop, i, Membership::Prob, d_star, aux_cols, out_cols));
  for (auto i : s2) units.push_back(make_unit(pop, i, Membership::Conv, d_star, aux_cols, out_cols));
  BlendData data;
  data.data = Dataset::from_units(Schema{aux, outcomes}, std::move(units));
  ResponseFrame frame;
  frame.variables = response_vars;
  frame.nonrespondents.resize(static_cast<Eigen::Index>(s1.nonrespondents.size()),
                              static_cast<Eigen::Index>(response_vars.size()));
  for (std::size_t k = 0; k < s1.nonrespondents.size(); ++k) {
    for (std::size_t j = 0; j < response_vars.size(); ++j) {
      frame.nonrespondents(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          pop.values(static_cast<Eigen::Index>(s1.nonrespondents[k]),
                     static_cast<Eigen::Index>(pop.index(response_vars[j])));
    }
  }
  data.frame = std::move(frame);
  return data;
}

}  // namespace

std::size_t Population::index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::UnknownVariable, "population lacks '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

Eigen::VectorXd Population::column(const std::string& name) const {
  return values.col(static_cast<Eigen::Index>(index(name)));
}

void Population::summarize() {
  const double n = static_cast<double>(values.rows());
  means = values.colwise().mean().transpose();
  sds.resize(values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    sds(j) = std::sqrt((values.col(j).array() - means(j)).square().sum() / (n - 1.0));
  }
}

const std::vector<std::string>& pseudo_auxiliary_names() {
  static const std::vector<std::string> names{"female",   "age",        "lives_with", "single",
                                              "deployed", "disability", "rating70",   "tbi"};
  return names;
}

Population build_pseudo_population(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x706f70);
  std::normal_distribution<double> normal;
  const auto N = static_cast<Eigen::Index>(kPseudoPopulationSize);

  Population pop;
  pop.names = pseudo_auxiliary_names();
  pop.names.emplace_back(kDepression);
  pop.names.emplace_back(kAnxiety);
  pop.values.resize(N, static_cast<Eigen::Index>(pop.names.size()));

  const double age_cdf[] = {0.15, 0.40, 0.65, 0.85, 1.0};
  Eigen::VectorXd signal(N), noise(N), unique(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    // Latent burden ties the veteran's disability, rating, TBI and deployment.
    const double burden = normal(rng);
    const double female = bernoulli(rng, 0.48) ? 1.0 : 0.0;
    const double u = uniform01(rng);
    double age = 1.0;
    while (age < 5.0 && u >= age_cdf[static_cast<int>(age) - 1]) age += 1.0;
    const double lives = bernoulli(rng, 0.45) ? 1.0 : 0.0;
    const double single = bernoulli(rng, 0.30) ? 1.0 : 0.0;
    const double deployed = bernoulli(rng, logistic(logit(0.58) + 0.5 * burden)) ? 1.0 : 0.0;
    const double disability = bernoulli(rng, logistic(logit(0.56) + burden)) ? 1.0 : 0.0;
    const double rating = disability == 1.0 && bernoulli(rng, logistic(burden)) ? 1.0 : 0.0;
    const double tbi = bernoulli(rng, logistic(logit(0.16) + 0.8 * burden)) ? 1.0 : 0.0;
    pop.values.row(i).head(8) << female, age, lives, single, deployed, disability, rating, tbi;
    signal(i) = female - 0.6 * (age - 3.0) + lives + 0.5 * single + 0.5 * deployed + disability +
                rating + 1.5 * tbi;
    noise(i) = normal(rng);
    unique(i) = normal(rng);
  }

  const double target_r2 = 0.14;
  const double var_signal = (signal.array() - signal.mean()).square().sum() / static_cast<double>(N - 1);
  const double sd_noise = std::sqrt(var_signal * (1.0 - target_r2) / target_r2);
  const Eigen::VectorXd dep = (8.0 + signal.array() + sd_noise * noise.array()).matrix();
  const double dep_mean = dep.mean();
  const double dep_sd = std::sqrt((dep.array() - dep_mean).square().sum() / static_cast<double>(N - 1));
  const double rho = 0.65;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double dz = (dep(i) - dep_mean) / dep_sd;
    pop.values(i, 8) = dep(i);
    pop.values(i, 9) = 40.0 + 10.0 * (rho * dz + std::sqrt(1.0 - rho * rho) * unique(i));
  }
  pop.summarize();
  return pop;
}

ResponseModel pseudo_response_model() {
  return ResponseModel{{"female", "age"}, 0.0, {1.0 / 3.0, -2.0 / 3.0}, true};
}

ProbabilitySample draw_probability_sample(const Population& pop, double d_star,
                                          const ResponseModel& response, Rng& rng) {
  std::vector<std::size_t> cols;
  for (const auto& v : response.variables) cols.push_back(pop.index(v));
  ProbabilitySample s;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (!bernoulli(rng, d_star)) continue;
    double eta = response.intercept;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto c = static_cast<Eigen::Index>(cols[j]);
      const double centre = response.centered ? pop.means(c) : 0.0;
      eta += response.coefficients[j] * (pop.values(static_cast<Eigen::Index>(i), c) - centre);
    }
    const double r = logistic(eta);
    s.selected.push_back(i);
    s.response_prob.push_back(r);
    (bernoulli(rng, r) ? s.respondents : s.nonrespondents).push_back(i);
  }
  return s;
}

SimSetting pseudo_setting(int number, double tau) {
  if (number < 1 || number > 5) throw Error(ErrorCode::BadSpec, "pseudo settings are numbered 1-5");
  SimSetting s;
  s.label = "setting" + std::to_string(number);
  s.intercept = -std::log(2.0);
  s.tau = tau;
  s.selection_covariates = {{"female", 4.0 / 3.0},  {"age", 0.0},        {"lives_with", 1.0 / 3.0},
                            {"single", 1.0 / 3.0},  {"deployed", 1.0 / 3.0}, {"disability", 1.0},
                            {"rating70", 1.0},      {"tbi", 1.0}};
  s.auxiliary = pseudo_auxiliary_names();
  if (number == 3) s.selection_covariates.emplace_back(kAnxiety, tau);
  if (number == 4 || number == 5) s.selection_covariates.emplace_back(kDepression, tau);
  if (number == 2 || number == 5) s.auxiliary.emplace_back(kAnxiety);
  return s;
}

Eigen::VectorXd convenience_probabilities(const Population& pop, const SimSetting& setting) {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(pop.size()), setting.intercept);
  for (const auto& [name, b] : setting.selection_covariates) {
    if (b == 0.0) continue;
    const auto c = static_cast<Eigen::Index>(pop.index(name));
    eta += b * ((pop.values.col(c).array() - pop.means(c)) / pop.sds(c)).matrix();
  }
  return eta.unaryExpr([](double e) { return logistic(e); });
}

std::vector<std::size_t> draw_convenience_sample(const Population& pop, const SimSetting& setting,
                                                 const std::vector<bool>& exclude, Rng& rng) {
  const Eigen::VectorXd rho = convenience_probabilities(pop, setting);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    // Drawn for every unit so the stream does not depend on the other sample.
    const bool pick = bernoulli(rng, rho(static_cast<Eigen::Index>(i)));
    if (pick && !(i < exclude.size() && exclude[i])) out.push_back(i);
  }
  return out;
}

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::KP: return "KP";
    case Estimator::Unweighted: return "unw";
    case Estimator::SPS: return "SPS";
    case Estimator::SC: return "SC";
    case Estimator::DPS: return "DPS";
    case Estimator::DC: return "DC";
    case Estimator::PosthocPS: return "kPS";
    case Estimator::PosthocC: return "kC";
  }
  return "?";
}

BlendData draw_pseudo_sample(const Population& pop, const SimSetting& setting, std::uint64_t k,
                             double d_star) {
  Rng rng1 = make_rng(setting.seed, k, 1);
  Rng rng2 = make_rng(setting.seed, k, 2);
  const ResponseModel response = pseudo_response_model();
  const ProbabilitySample s1 = draw_probability_sample(pop, d_star, response, rng1);
  std::vector<bool> in_s1(pop.size(), false);
  for (auto i : s1.selected) in_s1[i] = true;
  const std::vector<std::size_t> s2 = draw_convenience_sample(pop, setting, in_s1, rng2);
  std::vector<std::string> aux = pseudo_auxiliary_names();
  aux.emplace_back(kAnxiety);
  return assemble(pop, s1, s2, d_star, aux, {kDepression}, response.variables);
}

IterationResult run_pseudo_iteration(const Population& pop, const SimSetting& setting,
                                     std::uint64_t k, const PseudoStudyOptions& options) {
  IterationResult res;
  for (Estimator e : kAllEstimators) {
    res.failed[e] = true;
    res.estimate[e] = res.deff[e] = res.se[e] = res.p_value[e] = kNaN;
  }
  if (!options.posthoc) {
    res.failed.erase(Estimator::PosthocPS);
    res.failed.erase(Estimator::PosthocC);
  }

  BlendData data;
  try {
    data = draw_pseudo_sample(pop, setting, k, options.d_star);
  } catch (const Error&) {
    return res;  // an empty sample; every estimator fails this iteration
  }
  res.n1 = data.data.n1();
  res.n2 = data.data.n2();
  const Dataset& ds = data.data;
  const Eigen::VectorXd y = ds.outcome(kDepression);

  std::vector<Eigen::Index> s1_rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.is_conv(i)) s1_rows.push_back(static_cast<Eigen::Index>(i));
  }
  // The probability-only estimator uses S1 alone; the rest use the pooled
  // sample and carry an adequacy test.
  auto record = [&](Estimator e, const Eigen::VectorXd& w, bool pooled) {
    const EstimateReport r = pooled ? mean_report(kDepression, y, w, options.alpha)
                                    : mean_report(kDepression, y(s1_rows), w(s1_rows), options.alpha);
    res.estimate[e] = r.estimate;
    res.se[e] = r.se;
    res.deff[e] = r.deff;
    if (pooled) res.p_value[e] = adequacy_statistic(y, w, ds.memberships()).p_value;
    res.failed[e] = false;
  };

  BlendOptions base;
  base.propensity_vars = setting.auxiliary;
  base.calibration_vars = setting.auxiliary;
  base.benchmark_source = BenchmarkSource::HtEstimated;
  base.init = CalibrationInit::Equal;

  const std::pair<Estimator, Scheme> schemes[] = {{Estimator::KP, Scheme::DesignOnly},
                                                  {Estimator::SPS, Scheme::SPS},
                                                  {Estimator::SC, Scheme::SC},
                                                  {Estimator::DPS, Scheme::DPS},
                                                  {Estimator::DC, Scheme::DC}};
  for (const auto& [e, scheme] : schemes) {
    try {
      BlendOptions opt = base;
      opt.scheme = scheme;
      record(e, compute_weights(data, opt).weights.weights, e != Estimator::KP);
    } catch (const Error&) {
    }
  }
  try {
    record(Estimator::Unweighted, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(ds.size())), true);
  } catch (const Error&) {
  }

  if (options.posthoc) {
    AnalysisOptions an;
    an.variance = VarianceMethod::Jackknife;
    an.groups = options.jackknife_groups;
    an.seed = derived_seed(setting.seed, k, 3);
    an.alpha = options.alpha;
    const std::pair<Estimator, Scheme> posthoc[] = {{Estimator::PosthocPS, Scheme::DPS},
                                                    {Estimator::PosthocC, Scheme::DC}};
    for (const auto& [e, scheme] : posthoc) {
      try {
        BlendOptions opt = base;
        opt.scheme = scheme;
        const PosthocAnalysis ph = analyze_posthoc(data, opt, kDepression, an);
        res.estimate[e] = ph.blended.report.estimate;
        res.se[e] = ph.blended.report.se;
        res.failed[e] = false;
      } catch (const std::exception&) {
      }
    }
  }
  return res;
}

SimMetrics run_pseudo_study(const Population& pop, const SimSetting& setting,
                            const PseudoStudyOptions& options) {
  if (setting.K < 1) throw Error(ErrorCode::BadSpec, "K must be at least 1");
  const auto K = static_cast<std::size_t>(setting.K);
  std::vector<IterationResult> runs(K);
  parallel_for(K, options.workers,
               [&](std::size_t k) { runs[k] = run_pseudo_iteration(pop, setting, k, options); });

  SimMetrics m;
  m.label = setting.label;
  m.benchmark = pop.column(kDepression).mean();
  m.K = setting.K;
  m.seed = setting.seed;
  m.tau = setting.tau;
  for (const auto& r : runs) {
    m.mean_n1 += static_cast<double>(r.n1) / static_cast<double>(K);
    m.mean_n2 += static_cast<double>(r.n2) / static_cast<double>(K);
  }
  for (Estimator e : kAllEstimators) {
    if (!options.posthoc && (e == Estimator::PosthocPS || e == Estimator::PosthocC)) continue;
    SchemeMetrics sm;
    double sum_e = 0.0, sum_e2 = 0.0, rejections = 0.0, tests = 0.0, deff = 0.0, se = 0.0;
    for (const auto& r : runs) {
      if (r.failed.at(e)) {
        ++sm.failed;
        continue;
      }
      ++sm.completed;
      const double err = 100.0 * (r.estimate.at(e) - m.benchmark) / m.benchmark;
      sum_e += err;
      sum_e2 += err * err;
      deff += r.deff.at(e);
      se += r.se.at(e);
      if (!std::isnan(r.p_value.at(e))) {
        ++tests;
        if (r.p_value.at(e) <= options.alpha) ++rejections;
      }
    }
    const double c = static_cast<double>(sm.completed);
    sm.bias = sm.completed ? sum_e / c : kNaN;
    sm.rmse = sm.completed ? std::sqrt(sum_e2 / c) : kNaN;
    sm.mean_deff = sm.completed ? deff / c : kNaN;
    sm.mean_se = sm.completed ? se / c : kNaN;
    sm.rejection_rate = tests > 0 ? rejections / tests : kNaN;
    m.schemes[e] = sm;
  }
  return m;
}

SimMetrics run_pseudo_study(const SimSetting& setting, const PseudoStudyOptions& options) {
  return run_pseudo_study(build_pseudo_population(setting.seed), setting, options);
}

void write_pseudo_metrics(const std::string& path, const std::vector<SimMetrics>& metrics) {
  std::ofstream os = open_out(path);
  std::vector<std::string> header{"setting", "tau", "K", "seed", "metric"};
  for (Estimator e : kAllEstimators) header.push_back(estimator_name(e));
  csv::write_row(os, header);
  auto value = [](const SimMetrics& m, Estimator e, auto field) {
    auto it = m.schemes.find(e);
    return it == m.schemes.end() ? std::string("NA") : csv::format(field(it->second));
  };
  for (const auto& m : metrics) {
    const std::pair<const char*, double (*)(const SchemeMetrics&)> rows[] = {
        {"deff", [](const SchemeMetrics& s) { return s.mean_deff; }},
        {"bias", [](const SchemeMetrics& s) { return s.bias; }},
        {"rmse", [](const SchemeMetrics& s) { return s.rmse; }},
        {"rejection_rate", [](const SchemeMetrics& s) { return s.rejection_rate; }},
        {"mean_se", [](const SchemeMetrics& s) { return s.mean_se; }},
        {"failed", [](const SchemeMetrics& s) { return static_cast<double>(s.failed); }}};
    for (const auto& [name, field] : rows) {
      std::vector<std::string> row{m.label, csv::format(m.tau), std::to_string(m.K),
                                   std::to_string(m.seed), name};
      for (Estimator e : kAllEstimators) row.push_back(value(m, e, field));
      csv::write_row(os, row);
    }
  }
}

std::string se_method_name(SeMethod m) {
  switch (m) {
    case SeMethod::ProbabilityOnly: return "probability_only";
    case SeMethod::Linearization: return "linearization";
    case SeMethod::Jackknife: return "jackknife";
  }
  return "?";
}

std::pair<double, double> synthetic_coefficients(double r2) {
  if (!(r2 >= 0.0 && r2 < 1.0)) throw Error(ErrorCode::BadSpec, "R^2 must lie in [0, 1)");
  return {std::sqrt(r2 / 2.0), 1.0 - r2};
}

namespace {

// Covariates and unit-variance noise of a synthetic population; the outcome
// for a given R^2 is formed from these, so all R^2 values share draws.
struct SyntheticDraw {
  Eigen::MatrixXd X;  // N x 3
  Eigen::VectorXd noise;
};

SyntheticDraw draw_synthetic(std::size_t size, Rng& rng) {
  std::normal_distribution<double> normal;
  SyntheticDraw d;
  const auto N = static_cast<Eigen::Index>(size);
  d.X.resize(N, 3);
  d.noise.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    d.X(i, 0) = normal(rng);
    d.X(i, 1) = normal(rng);
    d.X(i, 2) = normal(rng);
    d.noise(i) = normal(rng);
  }
  return d;
}

Population synthetic_population(const SyntheticDraw& d, double r2) {
  const auto [beta, s2] = synthetic_coefficients(r2);
  Population pop;
  pop.names = {"x1", "x2", "x3", "y"};
  pop.values.resize(d.X.rows(), 4);
  pop.values.leftCols(3) = d.X;
  pop.values.col(3) = beta * (d.X.col(0) + d.X.col(1)) + std::sqrt(s2) * d.noise;
  pop.summarize();
  return pop;
}

}  // namespace

Population build_synthetic_population(double r2, std::size_t size, Rng& rng) {
  return synthetic_population(draw_synthetic(size, rng), r2);
}

std::vector<SyntheticMetrics> run_synthetic_study(const std::vector<double>& r2_grid, int K,
                                                  std::uint64_t seed,
                                                  const SyntheticOptions& options) {
  if (K < 1) throw Error(ErrorCode::BadSpec, "K must be at least 1");
  if (r2_grid.empty()) throw Error(ErrorCode::BadSpec, "empty R^2 grid");
  for (double r2 : r2_grid) synthetic_coefficients(r2);
  const std::size_t G = r2_grid.size();
  constexpr SeMethod methods[] = {SeMethod::ProbabilityOnly, SeMethod::Linearization,
                                  SeMethod::Jackknife};

  struct Cell {
    double estimate[3] = {kNaN, kNaN, kNaN};
    double se[3] = {kNaN, kNaN, kNaN};
    double target = 0.0;
    std::size_t n1 = 0, n2 = 0;
    double conv_rate = 0.0;
  };
  std::vector<std::vector<Cell>> cells(static_cast<std::size_t>(K), std::vector<Cell>(G));

  const double d_star = static_cast<double>(options.n1) / static_cast<double>(options.population_size);
  parallel_for(static_cast<std::size_t>(K), options.workers, [&](std::size_t k) {
    Rng rng = make_rng(seed, k, 10);
    const SyntheticDraw draw = draw_synthetic(options.population_size, rng);
    const auto N = options.population_size;

    // Simple random sample of n1 by partial Fisher-Yates.
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < options.n1; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (N - i));
      std::swap(order[i], order[j]);
    }
    ProbabilitySample s1;
    std::vector<bool> in_s1(N, false);
    for (std::size_t i = 0; i < options.n1; ++i) {
      const std::size_t u = order[i];
      in_s1[u] = true;
      s1.selected.push_back(u);
      const double r = logistic(options.response_slope * draw.X(static_cast<Eigen::Index>(u), 2));
      s1.response_prob.push_back(r);
      (bernoulli(rng, r) ? s1.respondents : s1.nonrespondents).push_back(u);
    }
    std::sort(s1.respondents.begin(), s1.respondents.end());
    std::sort(s1.nonrespondents.begin(), s1.nonrespondents.end());
    std::vector<std::size_t> s2;
    double rate = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double p = logistic(options.conv_intercept +
                                options.conv_slope * (draw.X(r, 0) + draw.X(r, 1)));
      rate += p / static_cast<double>(N);
      if (bernoulli(rng, p) && !in_s1[i]) s2.push_back(i);
    }

    for (std::size_t g = 0; g < G; ++g) {
      Cell& cell = cells[k][g];
      cell.n1 = s1.respondents.size();
      cell.n2 = s2.size();
      cell.conv_rate = rate;
      const Population pop = synthetic_population(draw, r2_grid[g]);
      cell.target = pop.means(3);
      try {
        const BlendData data = assemble(pop, s1, s2, d_star, {"x1", "x2", "x3"}, {"y"}, {"x3"});
        const Eigen::VectorXd y = data.data.outcome("y");
        BlendOptions opt;
        opt.propensity_vars = {"x1", "x2", "x3"};

        std::vector<Eigen::Index> s1_rows;
        for (std::size_t i = 0; i < data.data.size(); ++i) {
          if (!data.data.is_conv(i)) s1_rows.push_back(static_cast<Eigen::Index>(i));
        }
        opt.scheme = Scheme::DesignOnly;
        const Eigen::VectorXd w1 = compute_weights(data, opt).weights.weights;
        const EstimateReport kp = mean_report("y", y(s1_rows), w1(s1_rows), options.alpha);
        cell.estimate[0] = kp.estimate;
        cell.se[0] = kp.se;

        opt.scheme = Scheme::SPS;
        const EstimateReport lin = mean_report("y", y, compute_weights(data, opt).weights.weights, options.alpha);
        cell.estimate[1] = lin.estimate;
        cell.se[1] = lin.se;

        if (options.jackknife) {
          AnalysisOptions an;
          an.variance = VarianceMethod::Jackknife;
          an.groups = options.jackknife_groups;
          an.seed = derived_seed(seed, k, 20 + g);
          an.alpha = options.alpha;
          const Analysis a = analyze(data, opt, {Estimand{"y", {}, false}}, an);
          cell.estimate[2] = a.reports[0].estimate;
          cell.se[2] = a.reports[0].se;
        }
      } catch (const std::exception&) {
        // Failed cells are tallied below.
      }
    }
  });

  const double z = normal_critical(options.alpha);
  std::vector<SyntheticMetrics> out;
  for (std::size_t g = 0; g < G; ++g) {
    SyntheticMetrics m;
    m.r2 = r2_grid[g];
    std::tie(m.beta, m.sigma2_e) = synthetic_coefficients(m.r2);
    m.K = K;
    m.seed = seed;
    for (int k = 0; k < K; ++k) {
      const Cell& c = cells[static_cast<std::size_t>(k)][g];
      m.mean_n1 += static_cast<double>(c.n1) / K;
      m.mean_n2 += static_cast<double>(c.n2) / K;
      m.mean_conv_rate += c.conv_rate / K;
    }
    for (int mi = 0; mi < 3; ++mi) {
      if (methods[mi] == SeMethod::Jackknife && !options.jackknife) continue;
      CoverageMetrics cm;
      double covered = 0.0, se = 0.0, sum = 0.0, sum2 = 0.0;
      for (int k = 0; k < K; ++k) {
        const Cell& c = cells[static_cast<std::size_t>(k)][g];
        if (std::isnan(c.estimate[mi]) || std::isnan(c.se[mi])) {
          ++cm.failed;
          continue;
        }
        ++cm.completed;
        if (std::abs(c.estimate[mi] - c.target) <= z * c.se[mi]) ++covered;
        se += c.se[mi];
        const double err = c.estimate[mi] - c.target;
        sum += c.estimate[mi];
        sum2 += err * err;
      }
      const double n = static_cast<double>(cm.completed);
      cm.coverage = cm.completed ? covered / n : kNaN;
      cm.mean_se = cm.completed ? se / n : kNaN;
      cm.mean_estimate = cm.completed ? sum / n : kNaN;
      cm.empirical_sd = cm.completed ? std::sqrt(sum2 / n) : kNaN;
      m.methods[methods[mi]] = cm;
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_synthetic_metrics(const std::string& path, const std::vector<SyntheticMetrics>& metrics) {
  std::ofstream os = open_out(path);
  // One row per R^2; each method contributes a block of columns.
  std::vector<SeMethod> methods;
  for (const auto& m : metrics) {
    for (const auto& [method, c] : m.methods) {
      if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
    }
  }
  std::sort(methods.begin(), methods.end());
  std::vector<std::string> header{"r2", "beta", "sigma2_e", "K", "seed", "mean_n1", "mean_n2",
                                  "mean_conv_rate"};
  for (SeMethod method : methods) {
    const std::string p = se_method_name(method) + "_";
    for (const char* f : {"coverage", "mean_se", "empirical_sd", "mean_estimate", "completed", "failed"}) {
      header.push_back(p + f);
    }
  }
  csv::write_row(os, header);
  for (const auto& m : metrics) {
    std::vector<std::string> row{csv::format(m.r2),      csv::format(m.beta),
                                 csv::format(m.sigma2_e), std::to_string(m.K),
                                 std::to_string(m.seed),  csv::format(m.mean_n1),
                                 csv::format(m.mean_n2),  csv::format(m.mean_conv_rate)};
    for (SeMethod method : methods) {
      auto it = m.methods.find(method);
      if (it == m.methods.end()) {
        row.insert(row.end(), 6, "NA");
        continue;
      }
      const CoverageMetrics& c = it->second;
      row.insert(row.end(), {csv::format(c.coverage), csv::format(c.mean_se),
                             csv::format(c.empirical_sd), csv::format(c.mean_estimate),
                             std::to_string(c.completed), std::to_string(c.failed)});
    }
    csv::write_row(os, row);
  }
}

namespace {

struct Panel {
  double x0, y0, w, h;
  double xmin, xmax, ymin, ymax;
  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

const char* const kColors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                               "#66a61e", "#e6ab02", "#a6761d", "#666666"};

void axes(std::ostream& os, const Panel& p, const std::string& title, const std::string& xlabel) {
  os << "<rect x='" << p.x0 << "' y='" << p.y0 << "' width='" << p.w << "' height='" << p.h
     << "' fill='none' stroke='black'/>\n";
  os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 - 8
     << "' text-anchor='middle' font-size='13'>" << title << "</text>\n";
  os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 + p.h + 32
     << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = p.ymin + (p.ymax - p.ymin) * t / 4.0;
    os << "<text x='" << p.x0 - 6 << "' y='" << p.py(v) + 4
       << "' text-anchor='end' font-size='10'>" << std::setprecision(3) << v << "</text>\n";
  }
}

}  // namespace

void write_synthetic_plot(const std::string& path, const std::vector<SyntheticMetrics>& metrics) {
  std::ofstream os = open_out(path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='380'>\n";
  if (metrics.empty()) {
    os << "</svg>\n";
    return;
  }
  double se_max = 0.0;
  for (const auto& m : metrics) {
    for (const auto& [_, c] : m.methods) {
      if (std::isfinite(c.mean_se)) se_max = std::max(se_max, c.mean_se);
    }
  }
  const double xmin = metrics.front().r2;
  const double xmax = std::max(metrics.back().r2, xmin + 1e-9);
  const Panel cov{70, 40, 340, 260, xmin, xmax, 0.8, 1.0};
  const Panel se{520, 40, 340, 260, xmin, xmax, 0.0, se_max > 0 ? se_max * 1.15 : 1.0};
  axes(os, cov, "Coverage of 95% intervals", "R^2");
  axes(os, se, "Mean standard error", "R^2");
  os << "<line x1='" << cov.x0 << "' x2='" << cov.x0 + cov.w << "' y1='" << cov.py(0.95)
     << "' y2='" << cov.py(0.95) << "' stroke='gray' stroke-dasharray='4'/>\n";
  int color = 0;
  for (SeMethod method : {SeMethod::ProbabilityOnly, SeMethod::Linearization, SeMethod::Jackknife}) {
    if (!metrics.front().methods.count(method)) continue;
    for (const Panel* p : {&cov, &se}) {
      os << "<polyline fill='none' stroke='" << kColors[color] << "' stroke-width='2' points='";
      for (const auto& m : metrics) {
        const auto& c = m.methods.at(method);
        const double v = p == &cov ? std::clamp(c.coverage, cov.ymin, cov.ymax) : c.mean_se;
        if (std::isfinite(v)) os << p->px(m.r2) << "," << p->py(v) << " ";
      }
      os << "'/>\n";
    }
    os << "<text x='" << 80 << "' y='" << 330 + 14 * color << "' font-size='12' fill='"
       << kColors[color] << "'>" << se_method_name(method) << "</text>\n";
    ++color;
  }
  os << "</svg>\n";
}

void write_pseudo_plot(const std::string& path, const std::vector<SimMetrics>& metrics) {
  std::ofstream os = open_out(path);
  const double width = 120.0 + 260.0 * static_cast<double>(std::max<std::size_t>(metrics.size(), 1));
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='420'>\n";
  double lo = 0.0, hi = 1.0;
  for (const auto& m : metrics) {
    for (const auto& [_, s] : m.schemes) {
      if (std::isfinite(s.bias)) lo = std::min(lo, s.bias);
      if (std::isfinite(s.rmse)) hi = std::max(hi, s.rmse);
    }
  }
  const Panel p{70, 40, width - 100, 280, 0, 1, lo, hi * 1.1};
  axes(os, p, "Bias (bars) and rMSE (ticks), percent of benchmark", "");
  os << "<line x1='" << p.x0 << "' x2='" << p.x0 + p.w << "' y1='" << p.py(0) << "' y2='"
     << p.py(0) << "' stroke='black'/>\n";
  const double group = p.w / static_cast<double>(std::max<std::size_t>(metrics.size(), 1));
  for (std::size_t g = 0; g < metrics.size(); ++g) {
    const auto& m = metrics[g];
    const double bar = group / (static_cast<double>(std::size(kAllEstimators)) + 1.0);
    int idx = 0;
    for (Estimator e : kAllEstimators) {
      auto it = m.schemes.find(e);
      const double x = p.x0 + group * static_cast<double>(g) + bar * (0.5 + idx);
      if (it != m.schemes.end() && std::isfinite(it->second.bias)) {
        const double b = it->second.bias;
        os << "<rect x='" << x << "' y='" << std::min(p.py(b), p.py(0)) << "' width='" << bar * 0.9
           << "' height='" << std::abs(p.py(b) - p.py(0)) << "' fill='" << kColors[idx] << "'/>\n";
        os << "<line x1='" << x << "' x2='" << x + bar * 0.9 << "' y1='" << p.py(it->second.rmse)
           << "' y2='" << p.py(it->second.rmse) << "' stroke='black' stroke-width='2'/>\n";
      }
      ++idx;
    }
    os << "<text x='" << p.x0 + group * (static_cast<double>(g) + 0.5) << "' y='" << p.y0 + p.h + 18
       << "' text-anchor='middle' font-size='12'>" << m.label << "</text>\n";
  }
  int idx = 0;
  for (Estimator e : kAllEstimators) {
    os << "<text x='" << 80 + 70 * idx << "' y='395' font-size='12' fill='" << kColors[idx] << "'>"
       << estimator_name(e) << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
}

AdequacyStudyResult run_adequacy_study(int K, std::uint64_t seed,
                                       const AdequacyStudyOptions& options) {
  if (K < 1) throw Error(ErrorCode::BadSpec, "K must be at least 1");
  struct Run {
    bool ok = false;
    bool reject = false;
    double delta = 0.0;
  };
  std::vector<Run> runs(static_cast<std::size_t>(K));
  parallel_for(runs.size(), options.workers, [&](std::size_t k) {
    Rng rng = make_rng(seed, k, 30);
    std::normal_distribution<double> normal;
    const double d_star = static_cast<double>(options.n1) / options.population_size;
    std::vector<Unit> units;
    auto add = [&](std::size_t count, Membership m, double shift, const char* prefix) {
      for (std::size_t i = 0; i < count; ++i) {
        Unit u;
        u.id = std::string(prefix) + std::to_string(i);
        u.membership = m;
        if (m == Membership::Prob) u.d_star = d_star;
        const double x = normal(rng);
        const double latent = normal(rng) + shift;
        u.x = {x};
        u.y = {std::sqrt(options.aux_r2) * x +
               std::sqrt((1.0 - options.aux_r2) / 2.0) * (latent + normal(rng))};
        units.push_back(std::move(u));
      }
    };
    add(options.n1, Membership::Prob, 0.0, "p");
    add(options.n2, Membership::Conv, options.shift, "c");
    try {
      BlendData data;
      data.data = Dataset::from_units(Schema{{"x"}, {"y"}}, std::move(units));
      BlendOptions opt;
      opt.scheme = Scheme::DPS;
      opt.propensity_vars = {"x"};
      const BlendResult br = compute_weights(data, opt);
      const AdequacyResult a = adequacy_test(data.data.outcome("y"), br.weights, data.data.memberships());
      runs[k] = Run{true, a.p_value <= options.alpha, a.delta_hat};
    } catch (const Error&) {
    }
  });
  AdequacyStudyResult res;
  double rejections = 0.0;
  for (const auto& r : runs) {
    if (!r.ok) {
      ++res.failed;
      continue;
    }
    ++res.completed;
    rejections += r.reject ? 1.0 : 0.0;
    res.mean_delta += r.delta;
  }
  if (res.completed) {
    res.rejection_rate = rejections / static_cast<double>(res.completed);
    res.mean_delta /= static_cast<double>(res.completed);
  }
  return res;
}

}  // namespace blend::sim
