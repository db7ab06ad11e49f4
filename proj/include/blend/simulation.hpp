#pragma once

#include "blend/blending.hpp"
#include "blend/pipeline.hpp"
#include "blend/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace blend::sim {

// A finite population stored by named columns.
struct Population {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
  // Population means and standard deviations of each column.
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t index(const std::string& name) const;
  Eigen::VectorXd column(const std::string& name) const;
  // Fills means and sds.
  void summarize();
};

inline constexpr std::size_t kPseudoPopulationSize = 940;

// Column names of the pseudo-population, outcomes last.
const std::vector<std::string>& pseudo_auxiliary_names();
inline const char* const kDepression = "depression";
inline const char* const kAnxiety = "anxiety";

// Synthetic stand-in for the caregiver population: binary descriptors tied
// by a latent burden factor, a 5-point age scale, and a depression/anxiety
// pair with correlation about 0.65. Depression noise is scaled so the
// descriptors explain about 14% of its variance.
Population build_pseudo_population(std::uint64_t seed);

// logit r_i = intercept + sum_j coef_j (x_ij - centre_j), where centre is the
// population mean when `centered` is set.
struct ResponseModel {
  std::vector<std::string> variables;
  double intercept = 0.0;
  std::vector<double> coefficients;
  bool centered = true;
};

ResponseModel pseudo_response_model();

struct ProbabilitySample {
  // All selected units, then the split by response.
  std::vector<std::size_t> selected;
  std::vector<std::size_t> respondents;
  std::vector<std::size_t> nonrespondents;
  std::vector<double> response_prob;  // per selected unit
};

// Bernoulli(d_star) selection, then Bernoulli(r_i) response.
ProbabilitySample draw_probability_sample(const Population& pop, double d_star,
                                          const ResponseModel& response, Rng& rng);

// Convenience-selection model over standardized covariates
// logit rho_i = intercept + sum_j b_j z_ij.
struct SimSetting {
  std::string label;
  double intercept = 0.0;
  std::vector<std::pair<std::string, double>> selection_covariates;
  double tau = 0.5;
  // Auxiliary variables used for blending.
  std::vector<std::string> auxiliary;
  int K = 1000;
  std::uint64_t seed = 1;
};

// Settings 1-5 of the pseudo-population study. Throws BadSpec.
SimSetting pseudo_setting(int number, double tau = 0.5);

// Selection probabilities rho_i for every population unit.
Eigen::VectorXd convenience_probabilities(const Population& pop, const SimSetting& setting);

// Bernoulli(rho_i) selection; units flagged in `exclude` (already selected
// into the probability sample) are dropped.
std::vector<std::size_t> draw_convenience_sample(const Population& pop, const SimSetting& setting,
                                                 const std::vector<bool>& exclude, Rng& rng);

// Estimators compared in the pseudo-population study.
enum class Estimator { KP, Unweighted, SPS, SC, DPS, DC, PosthocPS, PosthocC };
inline constexpr Estimator kAllEstimators[] = {Estimator::KP,  Estimator::Unweighted,
                                               Estimator::SPS, Estimator::SC,
                                               Estimator::DPS, Estimator::DC,
                                               Estimator::PosthocPS, Estimator::PosthocC};
std::string estimator_name(Estimator e);

struct SchemeMetrics {
  // Percent relative to the population benchmark.
  double bias = 0.0;
  double rmse = 0.0;
  // NaN where the estimator carries no test or design effect.
  double rejection_rate = 0.0;
  double mean_deff = 0.0;
  double mean_se = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct PseudoStudyOptions {
  bool posthoc = true;
  int jackknife_groups = 40;
  double d_star = 0.16;
  double alpha = 0.05;
  int workers = 1;
};

struct SimMetrics {
  std::string label;
  double benchmark = 0.0;
  int K = 0;
  std::uint64_t seed = 0;
  double tau = 0.0;
  double mean_n1 = 0.0;
  double mean_n2 = 0.0;
  std::map<Estimator, SchemeMetrics> schemes;
};

// One iteration's raw results, exposed for tests.
struct IterationResult {
  std::map<Estimator, double> estimate;
  std::map<Estimator, double> deff;
  std::map<Estimator, double> se;
  std::map<Estimator, double> p_value;
  std::map<Estimator, bool> failed;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

// Draw k of a setting: S1 respondents and S2 as a dataset (the eight
// descriptors and anxiety as auxiliaries, depression as outcome) with the S1
// nonrespondents as response frame over female and age.
BlendData draw_pseudo_sample(const Population& pop, const SimSetting& setting, std::uint64_t k,
                             double d_star = 0.16);

IterationResult run_pseudo_iteration(const Population& pop, const SimSetting& setting,
                                     std::uint64_t k, const PseudoStudyOptions& options);

// The population is built once from the setting seed; iteration k draws from
// its own stream.
SimMetrics run_pseudo_study(const Population& pop, const SimSetting& setting,
                            const PseudoStudyOptions& options = {});
SimMetrics run_pseudo_study(const SimSetting& setting, const PseudoStudyOptions& options = {});

void write_pseudo_metrics(const std::string& path, const std::vector<SimMetrics>& metrics);

// Synthetic coverage study.
struct SyntheticOptions {
  std::size_t population_size = 10000;
  std::size_t n1 = 200;
  double response_slope = 0.15;
  double conv_intercept = -4.2;
  double conv_slope = 0.5;
  int jackknife_groups = 40;
  double alpha = 0.05;
  bool jackknife = true;
  int workers = 1;
};

enum class SeMethod { ProbabilityOnly, Linearization, Jackknife };
std::string se_method_name(SeMethod m);

struct CoverageMetrics {
  double coverage = 0.0;
  double mean_se = 0.0;
  double empirical_sd = 0.0;
  double mean_estimate = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct SyntheticMetrics {
  double r2 = 0.0;
  double beta = 0.0;
  double sigma2_e = 0.0;
  int K = 0;
  std::uint64_t seed = 0;
  double mean_n1 = 0.0;
  double mean_n2 = 0.0;
  double mean_conv_rate = 0.0;
  std::map<SeMethod, CoverageMetrics> methods;
};

// beta = sqrt(R^2 / 2), sigma_e^2 = 1 - R^2. Throws BadSpec outside [0, 1).
std::pair<double, double> synthetic_coefficients(double r2);

// X ~ N(0, I_3), Y = beta (X1 + X2) + e. Columns x1, x2, x3, y.
Population build_synthetic_population(double r2, std::size_t size, Rng& rng);

std::vector<SyntheticMetrics> run_synthetic_study(const std::vector<double>& r2_grid, int K,
                                                  std::uint64_t seed,
                                                  const SyntheticOptions& options = {});

void write_synthetic_metrics(const std::string& path, const std::vector<SyntheticMetrics>& metrics);

// SVG with coverage and mean standard error against R^2 per method.
void write_synthetic_plot(const std::string& path, const std::vector<SyntheticMetrics>& metrics);
// Bias and rMSE per estimator, one group of bars per setting.
void write_pseudo_plot(const std::string& path, const std::vector<SimMetrics>& metrics);

// Adequacy-test calibration: S1 and S2 drawn from the same covariate law
// (shift = 0) or with S2's latent variable shifted by `shift` SDs. The
// outcome is y = sqrt(r2) x + sqrt((1 - r2) / 2) (L + e) with the blending
// auxiliary x, the latent L and noise e standard normal, so Var(y) = 1 and x
// explains r2 of it.
struct AdequacyStudyOptions {
  std::size_t n1 = 200;
  std::size_t n2 = 200;
  double population_size = 10000.0;
  double shift = 0.0;
  double aux_r2 = 0.14;
  double alpha = 0.05;
  int workers = 1;
};

struct AdequacyStudyResult {
  double rejection_rate = 0.0;
  double mean_delta = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

AdequacyStudyResult run_adequacy_study(int K, std::uint64_t seed,
                                       const AdequacyStudyOptions& options = {});

}  // namespace blend::sim
