#pragma once

#include "blend/blending.hpp"
#include "blend/calibration.hpp"
#include "blend/dataset.hpp"
#include "blend/estimation.hpp"
#include "blend/propensity.hpp"
#include "blend/variance.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace blend {

// Selected probability-sample units that did not respond. Together with the
// PROB units of a dataset (the respondents) they form the frame for the
// response model.
struct ResponseFrame {
  std::vector<std::string> variables;
  // One row per nonrespondent, columns follow `variables` (no intercept).
  Eigen::MatrixXd nonrespondents;

  std::size_t size() const { return static_cast<std::size_t>(nonrespondents.rows()); }
};

// Everything the weighting steps read. Jackknife groups are formed over the
// dataset units followed by the nonrespondents.
struct BlendData {
  Dataset data;
  std::optional<ResponseFrame> frame;

  std::size_t replicate_units() const { return data.size() + (frame ? frame->size() : 0); }
  BlendData subset(const std::vector<bool>& keep) const;
};

enum class BenchmarkSource { File, HtEstimated, TwoStage };

std::string_view benchmark_source_name(BenchmarkSource s);
BenchmarkSource parse_benchmark_source(std::string_view text);

struct BlendOptions {
  Scheme scheme = Scheme::SPS;
  Kappa kappa = kAutoKappa;
  // Covariates of the convenience-membership model (gamma).
  std::vector<std::string> propensity_vars;
  // Calibration variables; the intercept (population size) is always added
  // for estimated benchmarks.
  std::vector<std::string> calibration_vars;
  BenchmarkSource benchmark_source = BenchmarkSource::HtEstimated;
  // Full target for File; the known partial totals for TwoStage.
  std::optional<BenchmarkVector> benchmarks;
  CalibrationInit init = CalibrationInit::PropensityWeights;
  double trim_pct = 0.0;
  GammaClip clip;
  RakeOptions rake;
};

struct BlendResult {
  std::optional<LogisticModel> response_model;
  std::optional<GammaEstimate> gamma;
  InclusionProbs probs;
  std::optional<BenchmarkVector> benchmarks;
  WeightSet untrimmed;
  WeightSet weights;
};

// Response model, propensity model, inclusion probabilities, benchmarks,
// scheme weights and trimming, in that order. DesignOnly gives 1/d_hat on S1
// and zero on S2.
BlendResult compute_weights(const BlendData& in, const BlendOptions& options);

// A mean ("y") or a WLS regression ("y ~ a + b"); regressions always carry an
// intercept.
struct Estimand {
  std::string outcome;
  std::vector<std::string> covariates;
  bool regression = false;

  std::string label() const;
  // Names of the reported quantities: the outcome for a mean, one entry per
  // coefficient for a regression.
  std::vector<std::string> parameter_names() const;
};

// Parses "y" or "y ~ x1 + x2" (also "y ~ 1"). Throws BadSpec.
Estimand parse_estimand(const std::string& text);

// Point estimates of every estimand, stacked in order.
Eigen::VectorXd point_estimates(const Dataset& ds, const WeightSet& weights,
                                const std::vector<Estimand>& estimands);

struct AnalysisOptions {
  VarianceMethod variance = VarianceMethod::Linearization;
  int groups = 40;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  int workers = 1;
};

struct Analysis {
  BlendResult blend;
  std::vector<EstimateReport> reports;
  // Jackknife runs only.
  std::optional<ReplicateGroups> groups;
};

// Weights the full sample, estimates every estimand and attaches standard
// errors. Jackknife replicates rerun compute_weights on each reduced sample.
Analysis analyze(const BlendData& in, const BlendOptions& options,
                 const std::vector<Estimand>& estimands, const AnalysisOptions& analysis);

// Post hoc blending of the per-sample means under disjoint weights. The
// covariance of the two means comes from the jackknife over shared groups,
// or is zero under linearization (disjoint units, weights held fixed).
struct PosthocAnalysis {
  EstimateReport s1;
  EstimateReport s2;
  double cov12 = 0.0;
  PosthocResult blended;
};

PosthocAnalysis analyze_posthoc(const BlendData& in, const BlendOptions& options,
                                const std::string& outcome, const AnalysisOptions& analysis,
                                std::optional<double> cov12 = std::nullopt);

// Weighted auxiliary means next to the benchmark means (total / population
// size) and the S1 design-weighted means.
struct BalanceRow {
  std::string variable;
  double benchmark_mean = 0.0;
  double s1_mean = 0.0;
  double s2_unweighted_mean = 0.0;
  double weighted_mean = 0.0;
};

std::vector<BalanceRow> balance_table(const Dataset& ds, const BlendResult& blend,
                                      const std::vector<std::string>& vars);

}  // namespace blend
