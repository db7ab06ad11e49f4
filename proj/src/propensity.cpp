#include "blend/propensity.hpp"

#include "blend/error.hpp"
#include "blend/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace blend {

namespace {

// log(1 + exp(eta)) without overflow.
double softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& w) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (w(i) == 0.0) continue;
    ll += w(i) * (y(i) * eta(i) - softplus(eta(i)));
  }
  return ll;
}

}  // namespace

double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

Eigen::VectorXd LogisticModel::linear_predictor(const Eigen::MatrixXd& X) const {
  return X * coefficients;
}

Eigen::VectorXd LogisticModel::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd eta = linear_predictor(X);
  return eta.unaryExpr([](double v) { return logistic(v); });
}

LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const std::optional<Eigen::VectorXd>& base_weights,
                           const LogisticOptions& options) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n) throw Error(ErrorCode::BadValue, "response length does not match design");
  Eigen::VectorXd w = base_weights ? *base_weights : Eigen::VectorXd::Ones(n);
  if (w.size() != n) throw Error(ErrorCode::BadValue, "weight length does not match design");

  Eigen::Index support = 0;
  double wsum = 0.0;
  double ysum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(w(i) >= 0.0) || !std::isfinite(w(i))) {
      throw Error(ErrorCode::BadValue, "logistic base weights must be finite and nonnegative");
    }
    if (y(i) != 0.0 && y(i) != 1.0) throw Error(ErrorCode::BadValue, "logistic response not 0/1");
    if (w(i) > 0.0) {
      ++support;
      wsum += w(i);
      ysum += w(i) * y(i);
    }
  }
  if (support == 0 || ysum <= 0.0 || ysum >= wsum) {
    throw Error(ErrorCode::AllSameClass, "logistic response is constant on the weighted support");
  }

  {
    Eigen::MatrixXd Xs(support, p);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w(i) > 0.0) Xs.row(k++) = std::sqrt(w(i)) * X.row(i);
    }
    linalg::require_full_column_rank(Xs, "logistic design matrix");
  }

  LogisticModel model;
  model.tolerance = options.tolerance * std::max(1.0, wsum / static_cast<double>(support));
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double ll = log_likelihood(eta, y, w);
  Eigen::VectorXd mu(n);
  Eigen::VectorXd resid(n);
  Eigen::VectorXd hw(n);

  auto score_at = [&](const Eigen::VectorXd& lp) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = logistic(lp(i));
      resid(i) = w(i) * (y(i) - mu(i));
      hw(i) = w(i) * mu(i) * (1.0 - mu(i));
    }
    return Eigen::VectorXd(X.transpose() * resid);
  };

  Eigen::VectorXd score = score_at(eta);
  model.max_abs_score = score.cwiseAbs().maxCoeff();
  int iter = 0;
  while (model.max_abs_score > model.tolerance && iter < options.max_iterations) {
    ++iter;
    const Eigen::MatrixXd H = X.transpose() * hw.asDiagonal() * X;
    const Eigen::VectorXd step = linalg::solve_symmetric(H, score);
    double t = 1.0;
    Eigen::VectorXd beta_new = beta + step;
    Eigen::VectorXd eta_new = X * beta_new;
    double ll_new = log_likelihood(eta_new, y, w);
    int halvings = 0;
    while (!(ll_new >= ll - 1e-12 * std::abs(ll)) && halvings < options.max_halvings) {
      t *= 0.5;
      beta_new = beta + t * step;
      eta_new = X * beta_new;
      ll_new = log_likelihood(eta_new, y, w);
      ++halvings;
    }
    const bool stalled = (beta_new - beta).cwiseAbs().maxCoeff() <=
                         1e-15 * (1.0 + beta.cwiseAbs().maxCoeff());
    beta = beta_new;
    eta = eta_new;
    ll = ll_new;
    score = score_at(eta);
    model.max_abs_score = score.cwiseAbs().maxCoeff();
    if (stalled) break;
  }
  model.coefficients = beta;
  model.iterations = iter;
  model.converged = model.max_abs_score <= model.tolerance;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w(i) > 0.0 && std::abs(eta(i)) > options.separation_threshold) {
      model.separation = true;
      break;
    }
  }
  return model;
}

GammaEstimate estimate_gamma(const Eigen::MatrixXd& X, const std::vector<Membership>& membership,
                             const GammaClip& clip) {
  const Eigen::Index n = X.rows();
  if (static_cast<std::size_t>(n) != membership.size()) {
    throw Error(ErrorCode::BadValue, "membership length does not match design");
  }
  Eigen::VectorXd y(n);
  bool any_prob = false;
  bool any_conv = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool conv = membership[static_cast<std::size_t>(i)] == Membership::Conv;
    y(i) = conv ? 1.0 : 0.0;
    any_conv |= conv;
    any_prob |= !conv;
  }
  if (!any_prob || !any_conv) throw Error(ErrorCode::EmptySample, "propensity model needs both samples");

  GammaEstimate est;
  est.model = fit_logistic(X, y);
  est.gamma = est.model.predict(X);
  est.separation_warning = est.model.separation;
  if (clip.enabled) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (est.gamma(i) < clip.lo) {
        est.gamma(i) = clip.lo;
        ++est.clipped_low;
      } else if (est.gamma(i) > clip.hi) {
        est.gamma(i) = clip.hi;
        ++est.clipped_high;
      }
    }
  }
  return est;
}

GammaEstimate estimate_gamma(const Dataset& ds, const std::vector<std::string>& vars,
                             const GammaClip& clip) {
  const DesignMatrix dm = design_matrix(ds, vars, true);
  GammaEstimate est = estimate_gamma(dm.X, ds.memberships(), clip);
  est.model.names = dm.columns;
  return est;
}

ResponseEstimate estimate_response(const Eigen::MatrixXd& X_frame,
                                   const std::vector<int>& respondent_flag,
                                   const Eigen::MatrixXd& X_predict) {
  const Eigen::Index n = X_frame.rows();
  if (static_cast<std::size_t>(n) != respondent_flag.size()) {
    throw Error(ErrorCode::BadValue, "respondent flags do not match frame rows");
  }
  Eigen::VectorXd y(n);
  bool all_respond = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = respondent_flag[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;
    all_respond &= y(i) == 1.0;
  }
  ResponseEstimate est;
  if (all_respond) {
    est.r_hat = Eigen::VectorXd::Ones(X_predict.rows());
    est.identity = true;
    return est;
  }
  est.model = fit_logistic(X_frame, y);
  est.r_hat = est.model->predict(X_predict).cwiseMax(1e-12);
  return est;
}

ResponseEstimate estimate_response(const Dataset& ds, const std::vector<std::string>& vars,
                                   const std::vector<int>& respondent_flag) {
  if (respondent_flag.size() != ds.size()) {
    throw Error(ErrorCode::BadValue, "respondent flags do not match dataset size");
  }
  const DesignMatrix dm = design_matrix(ds, vars, true);
  std::vector<Eigen::Index> frame;
  std::vector<int> flags;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.membership(i) == Membership::Prob) {
      frame.push_back(static_cast<Eigen::Index>(i));
      flags.push_back(respondent_flag[i]);
    }
  }
  Eigen::MatrixXd Xf(static_cast<Eigen::Index>(frame.size()), dm.X.cols());
  for (std::size_t k = 0; k < frame.size(); ++k) Xf.row(static_cast<Eigen::Index>(k)) = dm.X.row(frame[k]);
  ResponseEstimate est = estimate_response(Xf, flags, dm.X);
  if (est.model) est.model->names = dm.columns;
  return est;
}

Eigen::VectorXd response_from_column(const Dataset& ds) {
  Eigen::VectorXd r = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (auto v = ds.r_hat(i)) r(static_cast<Eigen::Index>(i)) = *v;
  }
  return r;
}

InclusionProbs assemble_inclusion(const std::vector<Membership>& membership,
                                  const Eigen::VectorXd& d_star, const Eigen::VectorXd& r_hat,
                                  const Eigen::VectorXd& gamma_hat) {
  const auto n = static_cast<Eigen::Index>(membership.size());
  if (d_star.size() != n || r_hat.size() != n || gamma_hat.size() != n) {
    throw Error(ErrorCode::BadValue, "inclusion inputs have mismatched lengths");
  }
  InclusionProbs probs;
  probs.membership = membership;
  probs.r_hat = r_hat;
  probs.gamma_hat = gamma_hat;
  probs.d_hat.resize(n);
  probs.q_hat.resize(n);
  probs.p_hat.resize(n);
  probs.d_imputed.assign(membership.size(), false);

  double inv_sum = 0.0;
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool prob = membership[static_cast<std::size_t>(i)] == Membership::Prob;
    if (std::isnan(d_star(i))) {
      if (prob) throw Error(ErrorCode::BadProbability, "probability-sample unit lacks d_star");
      probs.d_imputed[static_cast<std::size_t>(i)] = true;
      continue;
    }
    if (!(r_hat(i) > 0.0 && r_hat(i) <= 1.0)) {
      throw Error(ErrorCode::BadProbability, "response probability outside (0,1]");
    }
    probs.d_hat(i) = d_star(i) * r_hat(i);
    if (prob) {
      inv_sum += 1.0 / probs.d_hat(i);
      ++n1;
    }
  }
  if (n1 == 0) throw Error(ErrorCode::EmptySample, "no probability-sample units");
  const double imputed = static_cast<double>(n1) / inv_sum;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (probs.d_imputed[static_cast<std::size_t>(i)]) probs.d_hat(i) = imputed;
    const double g = gamma_hat(i);
    if (g >= 1.0) throw Error(ErrorCode::GammaAtOne, "propensity reached 1; enable clipping");
    if (!(g >= 0.0)) throw Error(ErrorCode::BadProbability, "propensity below 0");
    probs.q_hat(i) = probs.d_hat(i) * g / (1.0 - g);
    probs.p_hat(i) = probs.d_hat(i) + probs.q_hat(i);
  }
  return probs;
}

InclusionProbs assemble_inclusion(const Dataset& ds, const Eigen::VectorXd& r_hat,
                                  const Eigen::VectorXd& gamma_hat) {
  Eigen::VectorXd d_star(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    d_star(static_cast<Eigen::Index>(i)) =
        ds.d_star(i).value_or(std::numeric_limits<double>::quiet_NaN());
  }
  return assemble_inclusion(ds.memberships(), d_star, r_hat, gamma_hat);
}

}  // namespace blend
