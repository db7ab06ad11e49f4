#include "blend/estimation.hpp"

#include "blend/error.hpp"
#include "blend/linalg.hpp"
#include "blend/variance.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace blend {

std::string_view variance_method_name(VarianceMethod m) {
  return m == VarianceMethod::Linearization ? "linearization" : "jackknife";
}

VarianceMethod parse_variance_method(std::string_view text) {
  std::string low(text);
  std::transform(low.begin(), low.end(), low.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (low == "linearization" || low == "taylor") return VarianceMethod::Linearization;
  if (low == "jackknife") return VarianceMethod::Jackknife;
  throw Error(ErrorCode::BadSpec, "unknown variance method '" + std::string(text) + "'");
}

double normal_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::BadSpec, "alpha must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

double normal_p_value(double z) {
  if (std::isnan(z)) return std::numeric_limits<double>::quiet_NaN();
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

EstimateReport make_report(std::string estimand, double estimate, double se, double deff,
                           double alpha, VarianceMethod method, std::size_t n_used) {
  EstimateReport r;
  r.estimand = std::move(estimand);
  r.estimate = estimate;
  r.se = se;
  r.deff = deff;
  r.alpha = alpha;
  r.variance_method = method;
  r.n_used = n_used;
  const double half = normal_critical(alpha) * se;
  r.ci_low = estimate - half;
  r.ci_high = estimate + half;
  return r;
}

double weighted_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  if (y.size() != w.size()) throw Error(ErrorCode::BadValue, "outcome and weight lengths differ");
  const double s = w.sum();
  if (!(s > 0.0)) throw Error(ErrorCode::BadValue, "weights must have a positive sum");
  return w.dot(y) / s;
}

namespace {

struct Observed {
  std::vector<Eigen::Index> rows;
  std::size_t excluded = 0;
};

Observed observed_rows(const Eigen::VectorXd& y) {
  Observed o;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (std::isnan(y(i))) {
      ++o.excluded;
    } else {
      o.rows.push_back(i);
    }
  }
  return o;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(rows[k]);
  return out;
}

}  // namespace

EstimateReport mean_report(const std::string& estimand, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double alpha) {
  if (y.size() != w.size()) throw Error(ErrorCode::BadValue, "outcome and weight lengths differ");
  const Observed obs = observed_rows(y);
  const Eigen::VectorXd yo = take(y, obs.rows);
  const Eigen::VectorXd wo = take(w, obs.rows);
  const double est = weighted_mean(yo, wo);
  const double se = linearized_se_mean(yo, wo);
  const double n = static_cast<double>(yo.size());
  const double s2 = (yo.array() - yo.mean()).square().sum() / (n - 1.0);
  const double deff = s2 > 0.0 ? se * se / (s2 / n) : std::numeric_limits<double>::quiet_NaN();
  EstimateReport r = make_report(estimand, est, se, deff, alpha, VarianceMethod::Linearization,
                                 obs.rows.size());
  r.n_excluded = obs.excluded;
  return r;
}

WlsResult wls_regression(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& w, std::vector<std::string> names) {
  if (y.size() != X.rows() || w.size() != X.rows()) {
    throw Error(ErrorCode::BadValue, "WLS input lengths differ");
  }
  const Observed obs = observed_rows(y);
  Eigen::MatrixXd Xo(static_cast<Eigen::Index>(obs.rows.size()), X.cols());
  for (std::size_t k = 0; k < obs.rows.size(); ++k) Xo.row(static_cast<Eigen::Index>(k)) = X.row(obs.rows[k]);
  const Eigen::VectorXd yo = take(y, obs.rows);
  const Eigen::VectorXd wo = take(w, obs.rows);
  linalg::require_full_column_rank(wo.cwiseSqrt().asDiagonal() * Xo, "regression design");

  WlsResult res;
  res.names = std::move(names);
  if (res.names.empty()) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) res.names.push_back("b" + std::to_string(j));
  }
  const Eigen::MatrixXd B = Xo.transpose() * wo.asDiagonal() * Xo;
  res.coefficients = linalg::solve_symmetric(B, Xo.transpose() * wo.cwiseProduct(yo));
  res.covariance = linearized_cov_wls(yo, Xo, wo);
  res.se = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.z.resize(X.cols());
  res.p_value.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    res.z(j) = res.se(j) > 0.0 ? res.coefficients(j) / res.se(j)
                               : std::numeric_limits<double>::quiet_NaN();
    res.p_value(j) = normal_p_value(res.z(j));
  }
  res.n_used = obs.rows.size();
  return res;
}

AdequacyResult adequacy_statistic(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                  const std::vector<Membership>& membership) {
  const Eigen::Index n = y.size();
  if (w.size() != n || membership.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::BadValue, "adequacy inputs have mismatched lengths");
  }
  Eigen::MatrixXd X(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = membership[static_cast<std::size_t>(i)] == Membership::Conv ? 1.0 : 0.0;
  }
  const WlsResult fit = wls_regression(y, X, w, {"mu", "delta"});
  AdequacyResult res;
  res.mean_s1 = fit.coefficients(0);
  res.mean_s2 = fit.coefficients(0) + fit.coefficients(1);
  res.delta_hat = fit.coefficients(1);
  res.se_delta = fit.se(1);
  res.z_star = res.se_delta > 0.0 ? res.delta_hat / res.se_delta : 0.0;
  res.p_value = res.se_delta > 0.0 ? normal_p_value(res.z_star) : (res.delta_hat == 0.0 ? 1.0 : 0.0);
  res.n_used = fit.n_used;
  return res;
}

AdequacyResult adequacy_test(const Eigen::VectorXd& y, const WeightSet& w_star,
                             const std::vector<Membership>& membership) {
  if (!is_disjoint(w_star.scheme)) {
    throw Error(ErrorCode::WrongScheme,
                std::string(scheme_name(w_star.scheme)) +
                    " weights blend the samples jointly; the adequacy test needs disjoint (DPS "
                    "or DC) weights, under which each sample is separately representative");
  }
  return adequacy_statistic(y, w_star.weights, membership);
}

double combined_variance(double kappa, double v1, double v2, double cov12) {
  return kappa * kappa * v1 + (1.0 - kappa) * (1.0 - kappa) * v2 + 2.0 * kappa * (1.0 - kappa) * cov12;
}

PosthocResult posthoc_blend(const EstimateReport& theta1, const EstimateReport& theta2,
                            double cov12, double alpha) {
  const double v1 = theta1.se * theta1.se;
  const double v2 = theta2.se * theta2.se;
  const double denom = v1 + v2 - 2.0 * cov12;
  if (!(denom > 0.0)) {
    throw Error(ErrorCode::DegenerateVariance, "Var1 + Var2 - 2 Cov must be positive");
  }
  PosthocResult res;
  res.kappa_bar = (v2 - cov12) / denom;
  res.kappa_outside_unit = res.kappa_bar < 0.0 || res.kappa_bar > 1.0;
  const double k = res.kappa_bar;
  const double est = k * theta1.estimate + (1.0 - k) * theta2.estimate;
  const double var = std::max(0.0, combined_variance(k, v1, v2, cov12));
  res.report = make_report("posthoc(" + theta1.estimand + "," + theta2.estimand + ")", est,
                           std::sqrt(var), std::numeric_limits<double>::quiet_NaN(), alpha,
                           theta1.variance_method, theta1.n_used + theta2.n_used);
  return res;
}

}  // namespace blend
