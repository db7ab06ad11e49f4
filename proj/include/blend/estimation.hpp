#pragma once

#include "blend/blending.hpp"
#include "blend/dataset.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blend {

enum class VarianceMethod { Linearization, Jackknife };

std::string_view variance_method_name(VarianceMethod m);
VarianceMethod parse_variance_method(std::string_view text);

struct EstimateReport {
  std::string estimand;
  double estimate = 0.0;
  double se = 0.0;
  // Variance relative to simple random sampling of the same units (NaN when
  // the outcome has no spread).
  double deff = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  VarianceMethod variance_method = VarianceMethod::Linearization;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;
};

// Two-sided normal critical value z_{1 - alpha/2}.
double normal_critical(double alpha);
// Two-sided p-value of a standard normal statistic.
double normal_p_value(double z);

// Fills the interval estimate +/- z * se.
EstimateReport make_report(std::string estimand, double estimate, double se, double deff,
                           double alpha, VarianceMethod method, std::size_t n_used);

// sum(w y) / sum(w)
double weighted_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& w);

// Weighted mean with linearized standard error. Units with NaN outcome are
// dropped together with their weights and counted in n_excluded. Units of
// weight zero stay in (a calibrated weight may sit at the bound).
EstimateReport mean_report(const std::string& estimand, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double alpha = 0.05);

struct WlsResult {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p_value;
  std::size_t n_used = 0;
};

// Weighted least squares with the design-based sandwich covariance. Rows with
// NaN outcome are dropped. Throws RankDeficient.
WlsResult wls_regression(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& w, std::vector<std::string> names = {});

struct AdequacyResult {
  double delta_hat = 0.0;
  double se_delta = 0.0;
  double z_star = 0.0;
  double p_value = 1.0;
  double mean_s1 = 0.0;
  double mean_s2 = 0.0;
  std::size_t n_used = 0;
};

// Fits y = mu + delta 1{S2} + e by WLS and tests delta = 0 with the
// linearized variance. No scheme check.
AdequacyResult adequacy_statistic(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                  const std::vector<Membership>& membership);

// As above, but only disjoint weights are accepted. Throws WrongScheme.
AdequacyResult adequacy_test(const Eigen::VectorXd& y, const WeightSet& w_star,
                             const std::vector<Membership>& membership);

struct PosthocResult {
  double kappa_bar = 0.0;
  EstimateReport report;
  // kappa_bar is reported unclipped; this flags values outside [0,1].
  bool kappa_outside_unit = false;
};

// Minimum-variance combination of two estimates of the same quantity.
// Throws DegenerateVariance when V1 + V2 - 2 C <= 0.
PosthocResult posthoc_blend(const EstimateReport& theta1, const EstimateReport& theta2,
                            double cov12, double alpha = 0.05);

// Variance of kappa t1 + (1 - kappa) t2.
double combined_variance(double kappa, double v1, double v2, double cov12);

}  // namespace blend
