#pragma once

#include "blend/dataset.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace blend {

struct LogisticOptions {
  // Convergence on max-abs score, scaled by max(1, mean positive weight).
  double tolerance = 1e-10;
  int max_iterations = 100;
  int max_halvings = 20;
  // |linear predictor| above this at the end of the fit flags separation.
  double separation_threshold = 15.0;
};

struct LogisticModel {
  Eigen::VectorXd coefficients;
  std::vector<std::string> names;
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
  double tolerance = 0.0;
  bool separation = false;

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

double logistic(double eta);

// Maximum-likelihood logistic regression by iteratively reweighted least
// squares with step halving. X must contain any intercept column explicitly.
// Throws RankDeficient, AllSameClass, BadValue.
LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const std::optional<Eigen::VectorXd>& base_weights = std::nullopt,
                           const LogisticOptions& options = {});

// Bounds applied to fitted propensities before they enter q_i and p_i.
struct GammaClip {
  bool enabled = true;
  double lo = 1e-6;
  double hi = 0.999;
};

struct GammaEstimate {
  Eigen::VectorXd gamma;
  LogisticModel model;
  bool separation_warning = false;
  int clipped_low = 0;
  int clipped_high = 0;
};

// Propensity of convenience-sample membership among pooled units.
GammaEstimate estimate_gamma(const Eigen::MatrixXd& X, const std::vector<Membership>& membership,
                             const GammaClip& clip = {});
GammaEstimate estimate_gamma(const Dataset& ds, const std::vector<std::string>& vars,
                             const GammaClip& clip = {});

struct ResponseEstimate {
  Eigen::VectorXd r_hat;
  std::optional<LogisticModel> model;
  // True when every frame unit responded and r_hat is identically one.
  bool identity = false;
};

// Fits the response model on the selected probability frame (respondents and
// nonrespondents) and predicts r_hat for the rows of `X_predict`.
ResponseEstimate estimate_response(const Eigen::MatrixXd& X_frame,
                                   const std::vector<int>& respondent_flag,
                                   const Eigen::MatrixXd& X_predict);

// Dataset form: the model is fit on PROB units with their flags and
// predicted for every unit. `respondent_flag` is indexed like the dataset.
ResponseEstimate estimate_response(const Dataset& ds, const std::vector<std::string>& vars,
                                   const std::vector<int>& respondent_flag);

// Data mode: the user-supplied response column, or one where absent.
Eigen::VectorXd response_from_column(const Dataset& ds);

struct InclusionProbs {
  Eigen::VectorXd d_hat;
  Eigen::VectorXd gamma_hat;
  Eigen::VectorXd q_hat;
  Eigen::VectorXd p_hat;
  Eigen::VectorXd r_hat;
  std::vector<Membership> membership;
  // Units whose d_hat was imputed as n1 / sum_{S1} 1/d_hat.
  std::vector<bool> d_imputed;

  std::size_t size() const { return static_cast<std::size_t>(d_hat.size()); }
};

// d_hat = d_star * r_hat; CONV units without d_star get the equal-probability
// imputation; q_hat = d_hat gamma / (1 - gamma); p_hat = d_hat + q_hat.
// `d_star` holds NaN where absent. Throws GammaAtOne, BadProbability.
InclusionProbs assemble_inclusion(const std::vector<Membership>& membership,
                                  const Eigen::VectorXd& d_star, const Eigen::VectorXd& r_hat,
                                  const Eigen::VectorXd& gamma_hat);
InclusionProbs assemble_inclusion(const Dataset& ds, const Eigen::VectorXd& r_hat,
                                  const Eigen::VectorXd& gamma_hat);

}  // namespace blend
