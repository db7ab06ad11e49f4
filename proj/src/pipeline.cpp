#include "blend/pipeline.hpp"

#include "blend/error.hpp"
#include "blend/linalg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

namespace blend {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Column `name` from the auxiliaries, falling back to the outcomes.
Eigen::VectorXd column(const Dataset& ds, const std::string& name) {
  const auto& aux = ds.schema().auxiliary;
  if (std::find(aux.begin(), aux.end(), name) != aux.end()) {
    return ds.aux().col(static_cast<Eigen::Index>(ds.aux_index(name)));
  }
  return ds.outcome(name);
}

// Rows with a usable outcome and covariates. With `s1_only` the convenience
// sample is left out (the probability-only estimator).
struct Rows {
  std::vector<Eigen::Index> idx;
  std::size_t missing = 0;
};

Rows usable_rows(const Dataset& ds, const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                 bool s1_only) {
  Rows r;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (s1_only && ds.is_conv(static_cast<std::size_t>(i))) continue;
    bool ok = !std::isnan(y(i));
    for (Eigen::Index j = 0; ok && j < X.cols(); ++j) ok = !std::isnan(X(i, j));
    if (ok) {
      r.idx.push_back(i);
    } else {
      ++r.missing;
    }
  }
  return r;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(idx[k]);
  return out;
}

// Outcome, design (intercept first) and weights of one estimand, restricted
// to usable rows.
struct EstimandData {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  Eigen::VectorXd w;
  std::size_t missing = 0;
};

EstimandData estimand_data(const Dataset& ds, const WeightSet& ws, const Estimand& e) {
  const Eigen::VectorXd& weights = ws.weights;
  const Eigen::VectorXd y = ds.outcome(e.outcome);
  const auto n = static_cast<Eigen::Index>(ds.size());
  Eigen::MatrixXd X(n, 1 + static_cast<Eigen::Index>(e.covariates.size()));
  X.col(0).setOnes();
  for (std::size_t j = 0; j < e.covariates.size(); ++j) {
    X.col(1 + static_cast<Eigen::Index>(j)) = column(ds, e.covariates[j]);
  }
  const Rows rows = usable_rows(ds, y, X, ws.scheme == Scheme::DesignOnly);
  EstimandData d;
  d.y = take(y, rows.idx);
  d.X = take_rows(X, rows.idx);
  d.w = take(weights, rows.idx);
  d.missing = rows.missing;
  return d;
}

Eigen::VectorXd estimand_values(const EstimandData& d, const Estimand& e) {
  if (!e.regression) return Eigen::VectorXd::Constant(1, weighted_mean(d.y, d.w));
  linalg::require_full_column_rank(d.w.cwiseSqrt().asDiagonal() * d.X, "regression design");
  const Eigen::MatrixXd B = d.X.transpose() * d.w.asDiagonal() * d.X;
  return linalg::solve_symmetric(B, d.X.transpose() * d.w.cwiseProduct(d.y));
}

// Variance of each parameter under simple random sampling of the same units:
// s^2/n for a mean, the unweighted sandwich for coefficients.
Eigen::VectorXd srs_variances(const EstimandData& d, const Estimand& e) {
  const double n = static_cast<double>(d.y.size());
  if (!e.regression) {
    const double s2 = (d.y.array() - d.y.mean()).square().sum() / (n - 1.0);
    return Eigen::VectorXd::Constant(1, s2 / n);
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d.y.size());
  return linearized_cov_wls(d.y, d.X, ones).diagonal();
}

Eigen::VectorXd linearized_variances(const EstimandData& d, const Estimand& e) {
  if (!e.regression) {
    const double se = linearized_se_mean(d.y, d.w);
    return Eigen::VectorXd::Constant(1, se * se);
  }
  return linearized_cov_wls(d.y, d.X, d.w).diagonal();
}

double ratio_or_nan(double num, double den) { return den > 0.0 ? num / den : kNaN; }

BenchmarkVector resolve_benchmarks(const Dataset& ds, const InclusionProbs& probs,
                                   const BlendOptions& opt) {
  switch (opt.benchmark_source) {
    case BenchmarkSource::File:
      if (!opt.benchmarks) throw Error(ErrorCode::BadSpec, "benchmark source 'file' needs totals");
      return *opt.benchmarks;
    case BenchmarkSource::HtEstimated:
      return estimate_benchmarks(ds, probs, opt.calibration_vars, true);
    case BenchmarkSource::TwoStage:
      if (!opt.benchmarks) {
        throw Error(ErrorCode::BadSpec, "benchmark source 'two_stage' needs known totals");
      }
      return two_stage_benchmarks(ds, *opt.benchmarks, probs, opt.calibration_vars, true, opt.rake);
  }
  throw Error(ErrorCode::BadSpec, "unknown benchmark source");
}

}  // namespace

BlendData BlendData::subset(const std::vector<bool>& keep) const {
  if (keep.size() != replicate_units()) {
    throw Error(ErrorCode::BadValue, "keep mask does not match the replicate units");
  }
  BlendData out;
  out.data = data.subset(std::vector<bool>(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(data.size())));
  if (frame) {
    ResponseFrame f;
    f.variables = frame->variables;
    std::vector<Eigen::Index> rows;
    for (std::size_t k = 0; k < frame->size(); ++k) {
      if (keep[data.size() + k]) rows.push_back(static_cast<Eigen::Index>(k));
    }
    f.nonrespondents = take_rows(frame->nonrespondents, rows);
    out.frame = std::move(f);
  }
  return out;
}

std::string_view benchmark_source_name(BenchmarkSource s) {
  switch (s) {
    case BenchmarkSource::File: return "file";
    case BenchmarkSource::HtEstimated: return "ht";
    case BenchmarkSource::TwoStage: return "two_stage";
  }
  return "?";
}

BenchmarkSource parse_benchmark_source(std::string_view text) {
  const std::string t = lower(text);
  if (t == "file") return BenchmarkSource::File;
  if (t == "ht" || t == "ht_estimated") return BenchmarkSource::HtEstimated;
  if (t == "two_stage" || t == "two-stage" || t == "twostage") return BenchmarkSource::TwoStage;
  throw Error(ErrorCode::BadSpec, "unknown benchmark source '" + std::string(text) + "'");
}

BlendResult compute_weights(const BlendData& in, const BlendOptions& opt) {
  const Dataset& ds = in.data;
  if (ds.n1() == 0) throw Error(ErrorCode::EmptySample, "probability sample is empty");
  if (opt.scheme != Scheme::DesignOnly && ds.n2() == 0) {
    throw Error(ErrorCode::EmptySample, "convenience sample is empty");
  }
  BlendResult res;
  const auto n = static_cast<Eigen::Index>(ds.size());

  Eigen::VectorXd r_hat;
  if (in.frame) {
    const DesignMatrix dm = design_matrix(ds, in.frame->variables, true);
    const auto m = static_cast<Eigen::Index>(in.frame->size());
    Eigen::MatrixXd Xf(static_cast<Eigen::Index>(ds.n1()) + m, dm.X.cols());
    std::vector<int> flags;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.is_conv(i)) continue;
      Xf.row(row++) = dm.X.row(static_cast<Eigen::Index>(i));
      flags.push_back(1);
    }
    for (Eigen::Index k = 0; k < m; ++k) {
      Xf(row, 0) = 1.0;
      Xf.row(row).tail(dm.X.cols() - 1) = in.frame->nonrespondents.row(k);
      ++row;
      flags.push_back(0);
    }
    ResponseEstimate est = estimate_response(Xf, flags, dm.X);
    if (est.model) {
      est.model->names = dm.columns;
      res.response_model = est.model;
    }
    r_hat = std::move(est.r_hat);
  } else {
    r_hat = response_from_column(ds);
  }

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(n);
  if (opt.scheme != Scheme::DesignOnly) {
    res.gamma = estimate_gamma(ds, opt.propensity_vars, opt.clip);
    gamma = res.gamma->gamma;
  }
  res.probs = assemble_inclusion(ds, r_hat, gamma);

  switch (opt.scheme) {
    case Scheme::SPS:
      res.untrimmed = sps_weights(res.probs);
      break;
    case Scheme::DPS:
      res.untrimmed = dps_weights(res.probs, opt.kappa);
      break;
    case Scheme::SC:
      res.benchmarks = resolve_benchmarks(ds, res.probs, opt);
      res.untrimmed = sc_weights(ds, res.probs, *res.benchmarks, opt.init, opt.rake);
      break;
    case Scheme::DC:
      res.benchmarks = resolve_benchmarks(ds, res.probs, opt);
      res.untrimmed = dc_weights(ds, res.probs, *res.benchmarks, opt.kappa, opt.init, opt.rake);
      break;
    case Scheme::DesignOnly: {
      WeightSet ws;
      ws.scheme = Scheme::DesignOnly;
      ws.weights = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!ds.is_conv(static_cast<std::size_t>(i))) ws.weights(i) = 1.0 / res.probs.d_hat(i);
      }
      res.untrimmed = std::move(ws);
      break;
    }
  }
  if (!res.benchmarks && opt.benchmarks && opt.benchmark_source == BenchmarkSource::File) {
    res.benchmarks = opt.benchmarks;
  }
  res.weights = (opt.trim_pct > 0.0 && opt.scheme != Scheme::DesignOnly)
                    ? trim_weights(res.untrimmed, opt.trim_pct)
                    : res.untrimmed;
  return res;
}

std::string Estimand::label() const {
  if (!regression) return outcome;
  std::string s = outcome + " ~ ";
  if (covariates.empty()) return s + "1";
  for (std::size_t j = 0; j < covariates.size(); ++j) s += (j ? " + " : "") + covariates[j];
  return s;
}

std::vector<std::string> Estimand::parameter_names() const {
  if (!regression) return {outcome};
  std::vector<std::string> names{outcome + ":" + kInterceptName};
  for (const auto& c : covariates) names.push_back(outcome + ":" + c);
  return names;
}

Estimand parse_estimand(const std::string& text) {
  Estimand e;
  const auto tilde = text.find('~');
  e.outcome = trim(text.substr(0, tilde));
  if (e.outcome.empty()) throw Error(ErrorCode::BadSpec, "estimand '" + text + "' has no outcome");
  if (tilde == std::string::npos) return e;
  e.regression = true;
  if (trim(text.substr(tilde + 1)).empty()) {
    throw Error(ErrorCode::BadSpec, "estimand '" + text + "' has no right-hand side");
  }
  std::stringstream rhs(text.substr(tilde + 1));
  std::string term;
  while (std::getline(rhs, term, '+')) {
    term = trim(term);
    if (term.empty()) throw Error(ErrorCode::BadSpec, "estimand '" + text + "' has an empty term");
    if (term == "1") continue;
    e.covariates.push_back(term);
  }
  return e;
}

Eigen::VectorXd point_estimates(const Dataset& ds, const WeightSet& weights,
                                const std::vector<Estimand>& estimands) {
  std::vector<Eigen::VectorXd> parts;
  Eigen::Index total = 0;
  for (const auto& e : estimands) {
    parts.push_back(estimand_values(estimand_data(ds, weights, e), e));
    total += parts.back().size();
  }
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

Analysis analyze(const BlendData& in, const BlendOptions& options,
                 const std::vector<Estimand>& estimands, const AnalysisOptions& analysis) {
  Analysis out;
  out.blend = compute_weights(in, options);
  const Dataset& ds = in.data;

  std::vector<EstimandData> data;
  std::vector<Eigen::VectorXd> theta, srs, lin;
  for (const auto& e : estimands) {
    data.push_back(estimand_data(ds, out.blend.weights, e));
    if (data.back().y.size() < 2) {
      throw Error(ErrorCode::NotEnoughUnits, "estimand '" + e.label() + "' has fewer than 2 units");
    }
    theta.push_back(estimand_values(data.back(), e));
    srs.push_back(srs_variances(data.back(), e));
    if (analysis.variance == VarianceMethod::Linearization) {
      lin.push_back(linearized_variances(data.back(), e));
    }
  }

  Eigen::VectorXd jk_var;
  if (analysis.variance == VarianceMethod::Jackknife) {
    if (analysis.groups < 2) throw Error(ErrorCode::BadSpec, "jackknife needs G >= 2");
    out.groups = make_groups(in.replicate_units(), analysis.groups, analysis.seed);
    const JackknifeResult jk = jackknife(
        *out.groups,
        [&](const std::vector<bool>& keep, int) {
          const BlendData sub = in.subset(keep);
          const BlendResult br = compute_weights(sub, options);
          return point_estimates(sub.data, br.weights, estimands);
        },
        analysis.workers);
    jk_var = jk.covariance.diagonal();
  }

  Eigen::Index at = 0;
  for (std::size_t k = 0; k < estimands.size(); ++k) {
    const auto names = estimands[k].parameter_names();
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double var = analysis.variance == VarianceMethod::Jackknife ? jk_var(at) : lin[k](jj);
      const double se = std::sqrt(std::max(0.0, var));
      EstimateReport r = make_report(names[j], theta[k](jj), se, ratio_or_nan(var, srs[k](jj)),
                                     analysis.alpha, analysis.variance,
                                     static_cast<std::size_t>(data[k].y.size()));
      r.n_excluded = data[k].missing;
      out.reports.push_back(std::move(r));
      ++at;
    }
  }
  return out;
}

PosthocAnalysis analyze_posthoc(const BlendData& in, const BlendOptions& options,
                                const std::string& outcome, const AnalysisOptions& analysis,
                                std::optional<double> cov12) {
  if (!is_disjoint(options.scheme)) {
    throw Error(ErrorCode::WrongScheme, "post hoc blending needs disjoint (DPS or DC) weights");
  }
  // Outcome and weights of one sample.
  auto sample = [&](const Dataset& ds, const WeightSet& ws, Membership m) {
    const Eigen::VectorXd y = ds.outcome(outcome);
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.membership(i) == m) idx.push_back(static_cast<Eigen::Index>(i));
    }
    return std::pair{take(y, idx), take(ws.weights, idx)};
  };
  auto sample_mean = [&](const Dataset& ds, const WeightSet& ws, Membership m) {
    const auto [y, w] = sample(ds, ws, m);
    const Rows rows = usable_rows(ds, y, Eigen::MatrixXd(y.size(), 0), false);
    return weighted_mean(take(y, rows.idx), take(w, rows.idx));
  };

  const BlendResult full = compute_weights(in, options);
  PosthocAnalysis out;
  {
    const auto [y1, w1] = sample(in.data, full.weights, Membership::Prob);
    const auto [y2, w2] = sample(in.data, full.weights, Membership::Conv);
    out.s1 = mean_report(outcome + "|S1", y1, w1, analysis.alpha);
    out.s2 = mean_report(outcome + "|S2", y2, w2, analysis.alpha);
  }

  if (analysis.variance == VarianceMethod::Jackknife) {
    const ReplicateGroups groups = make_groups(in.replicate_units(), analysis.groups, analysis.seed);
    const JackknifeResult jk = jackknife(
        groups,
        [&](const std::vector<bool>& keep, int) {
          const BlendData sub = in.subset(keep);
          const BlendResult br = compute_weights(sub, options);
          Eigen::VectorXd v(2);
          v(0) = sample_mean(sub.data, br.weights, Membership::Prob);
          v(1) = sample_mean(sub.data, br.weights, Membership::Conv);
          return v;
        },
        analysis.workers);
    auto redo = [&](EstimateReport& r, double se) {
      const double srs_var = r.deff > 0.0 ? r.se * r.se / r.deff : kNaN;
      r = make_report(r.estimand, r.estimate, se, ratio_or_nan(se * se, srs_var), analysis.alpha,
                      VarianceMethod::Jackknife, r.n_used);
    };
    const std::size_t ex1 = out.s1.n_excluded, ex2 = out.s2.n_excluded;
    redo(out.s1, jk.se(0));
    redo(out.s2, jk.se(1));
    out.s1.n_excluded = ex1;
    out.s2.n_excluded = ex2;
    out.cov12 = jk.covariance(0, 1);
  }
  if (cov12) out.cov12 = *cov12;
  out.blended = posthoc_blend(out.s1, out.s2, out.cov12, analysis.alpha);
  out.blended.report.estimand = "posthoc:" + outcome;
  return out;
}

std::vector<BalanceRow> balance_table(const Dataset& ds, const BlendResult& blend,
                                      const std::vector<std::string>& vars) {
  std::vector<BalanceRow> rows;
  double pop = kNaN;
  if (blend.benchmarks) {
    if (auto n = blend.benchmarks->total(kInterceptName)) pop = *n;
  }
  Eigen::VectorXd w1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.size()));
  Eigen::VectorXd u2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (ds.is_conv(i)) {
      u2(r) = 1.0;
    } else {
      w1(r) = 1.0 / blend.probs.d_hat(r);
    }
  }
  for (const auto& v : vars) {
    const Eigen::VectorXd x = ds.aux().col(static_cast<Eigen::Index>(ds.aux_index(v)));
    BalanceRow row;
    row.variable = v;
    row.s1_mean = weighted_mean(x, w1);
    row.s2_unweighted_mean = weighted_mean(x, u2);
    row.weighted_mean = weighted_mean(x, blend.weights.weights);
    row.benchmark_mean = row.s1_mean;
    if (blend.benchmarks && std::isfinite(pop) && pop > 0.0) {
      if (auto t = blend.benchmarks->total(v)) row.benchmark_mean = *t / pop;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace blend
