#include "blend/calibration.hpp"

#include "blend/csv.hpp"
#include "blend/error.hpp"
#include "blend/linalg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace blend {

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Known: return "known";
    case Provenance::HtEstimated: return "ht_estimated";
    case Provenance::TwoStage: return "two_stage";
  }
  return "?";
}

Provenance parse_provenance(std::string_view text) {
  std::string low(text);
  std::transform(low.begin(), low.end(), low.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Provenance p : {Provenance::Known, Provenance::HtEstimated, Provenance::TwoStage}) {
    if (low == provenance_name(p)) return p;
  }
  throw Error(ErrorCode::BadSpec, "unknown benchmark provenance '" + std::string(text) + "'");
}

std::optional<double> BenchmarkVector::total(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return totals(static_cast<Eigen::Index>(j));
  }
  return std::nullopt;
}

std::vector<std::string> BenchmarkVector::variables() const {
  std::vector<std::string> out;
  for (const auto& n : names) {
    if (n != kInterceptName) out.push_back(n);
  }
  return out;
}

bool BenchmarkVector::has_intercept() const {
  return std::find(names.begin(), names.end(), kInterceptName) != names.end();
}

BenchmarkVector read_benchmarks(const std::string& path) {
  const csv::Table t = csv::read(path);
  auto col = [&](const char* name) {
    auto pos = t.find(name);
    if (!pos) throw Error(ErrorCode::MissingColumn, "'" + path + "' lacks column '" + name + "'");
    return *pos;
  };
  const std::size_t name_col = col("name");
  const std::size_t total_col = col("total");
  const std::size_t prov_col = col("provenance");
  BenchmarkVector bv;
  bv.totals.resize(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto v = csv::parse_double(t.rows[r][total_col]);
    if (!v) throw Error(ErrorCode::BadValue, "benchmark '" + t.rows[r][name_col] + "' has no total");
    bv.names.push_back(t.rows[r][name_col]);
    bv.totals(static_cast<Eigen::Index>(r)) = *v;
    bv.provenance.push_back(parse_provenance(t.rows[r][prov_col]));
  }
  return bv;
}

void write_benchmarks(const std::string& path, const BenchmarkVector& bv) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  csv::write_row(out, {"name", "total", "provenance"});
  for (std::size_t j = 0; j < bv.size(); ++j) {
    csv::write_row(out, {bv.names[j], csv::format(bv.totals(static_cast<Eigen::Index>(j))),
                         std::string(provenance_name(bv.provenance[j]))});
  }
}

namespace {

double clamp_ratio(double u, const RakeBounds& b) { return std::clamp(1.0 + u, b.low, b.high); }

}  // namespace

RakingSolution rake(const Eigen::VectorXd& initial, const Eigen::MatrixXd& X,
                    const Eigen::VectorXd& target, const RakeOptions& options) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (initial.size() != n) throw Error(ErrorCode::BadValue, "initial weights do not match design rows");
  if (target.size() != p) throw Error(ErrorCode::BadValue, "benchmark length does not match design columns");
  if (!(options.bounds.low >= 0.0 && options.bounds.low < options.bounds.high)) {
    throw Error(ErrorCode::BadSpec, "raking bounds must satisfy 0 <= low < high");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(initial(i) >= 0.0) || !std::isfinite(initial(i))) {
      throw Error(ErrorCode::BadValue, "initial weights must be finite and nonnegative");
    }
  }
  linalg::require_full_column_rank(initial.cwiseSqrt().asDiagonal() * X, "calibration design");

  const Eigen::VectorXd scale = target.cwiseAbs().cwiseMax(1.0);
  const RakeBounds& bounds = options.bounds;

  Eigen::VectorXd xi = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v(n);
  auto weights_at = [&](const Eigen::VectorXd& lp, Eigen::VectorXd& out) {
    for (Eigen::Index i = 0; i < n; ++i) out(i) = initial(i) * clamp_ratio(lp(i), bounds);
  };
  auto scaled_residual = [&](const Eigen::VectorXd& w) {
    return Eigen::VectorXd((X.transpose() * w - target).cwiseQuotient(scale));
  };

  weights_at(u, v);
  Eigen::VectorXd r = scaled_residual(v);
  double merit = r.squaredNorm();

  RakingSolution sol;
  int iter = 0;
  while (r.cwiseAbs().maxCoeff() > options.tolerance && iter < options.max_iterations) {
    ++iter;
    // Units pinned at a bound do not respond to xi locally.
    Eigen::VectorXd active(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ratio = 1.0 + u(i);
      active(i) = (ratio > bounds.low && ratio < bounds.high) ? initial(i) : 0.0;
    }
    if (active.maxCoeff() <= 0.0) break;
    const Eigen::MatrixXd J = X.transpose() * active.asDiagonal() * X;
    const Eigen::VectorXd rhs = -(X.transpose() * v - target);
    const Eigen::VectorXd step = linalg::solve_symmetric(J, rhs);
    if (!step.allFinite()) break;

    double t = 1.0;
    bool improved = false;
    Eigen::VectorXd xi_new(p);
    Eigen::VectorXd u_new(n);
    Eigen::VectorXd v_new(n);
    Eigen::VectorXd r_new(p);
    for (int h = 0; h <= options.max_halvings; ++h) {
      xi_new = xi + t * step;
      u_new = X * xi_new;
      weights_at(u_new, v_new);
      r_new = scaled_residual(v_new);
      const double merit_new = r_new.squaredNorm();
      if (merit_new < merit) {
        merit = merit_new;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
    xi = xi_new;
    u = u_new;
    v = v_new;
    r = r_new;
  }
  sol.weights = v;
  sol.multipliers = xi;
  sol.iterations = iter;
  sol.residual = r.cwiseAbs().maxCoeff();
  sol.converged = sol.residual <= options.tolerance;
  return sol;
}

BenchmarkVector estimate_benchmarks(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                                    const std::vector<Membership>& membership,
                                    const Eigen::VectorXd& d_hat) {
  if (static_cast<std::size_t>(X.cols()) != names.size()) {
    throw Error(ErrorCode::BadValue, "benchmark names do not match design columns");
  }
  BenchmarkVector bv;
  bv.names = names;
  bv.totals = Eigen::VectorXd::Zero(X.cols());
  bv.provenance.assign(names.size(), Provenance::HtEstimated);
  for (std::size_t i = 0; i < membership.size(); ++i) {
    if (membership[i] != Membership::Prob) continue;
    const auto r = static_cast<Eigen::Index>(i);
    if (!(d_hat(r) > 0.0)) throw Error(ErrorCode::BadProbability, "d_hat must be positive on S1");
    bv.totals += X.row(r).transpose() / d_hat(r);
  }
  return bv;
}

BenchmarkVector estimate_benchmarks(const Dataset& ds, const InclusionProbs& probs,
                                    const std::vector<std::string>& vars, bool with_intercept) {
  const DesignMatrix dm = design_matrix(ds, vars, with_intercept);
  return estimate_benchmarks(dm.X, dm.columns, ds.memberships(), probs.d_hat);
}

namespace {

struct SampleRows {
  std::vector<Eigen::Index> s1;
  std::vector<Eigen::Index> s2;
};

SampleRows split(const std::vector<Membership>& membership) {
  SampleRows rows;
  for (std::size_t i = 0; i < membership.size(); ++i) {
    (membership[i] == Membership::Prob ? rows.s1 : rows.s2).push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(rows[k]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(rows[k]);
  return out;
}

void require_converged(const RakingSolution& sol, const std::string& what) {
  if (!sol.converged) {
    throw Error(ErrorCode::RakingNonconvergence,
                what + ": residual " + csv::format(sol.residual) + " after " +
                    std::to_string(sol.iterations) + " iterations");
  }
}

}  // namespace

BenchmarkVector two_stage_benchmarks(const Eigen::MatrixXd& X,
                                     const std::vector<std::string>& names,
                                     const std::vector<Membership>& membership,
                                     const Eigen::VectorXd& d_hat, const BenchmarkVector& known,
                                     const RakeOptions& options) {
  if (known.size() == 0) throw Error(ErrorCode::BadSpec, "two-stage benchmarks need known totals");
  std::vector<Eigen::Index> known_cols;
  for (const auto& name : known.names) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      throw Error(ErrorCode::UnknownVariable, "known benchmark '" + name + "' is not auxiliary");
    }
    known_cols.push_back(static_cast<Eigen::Index>(it - names.begin()));
  }
  const SampleRows rows = split(membership);
  const Eigen::MatrixXd X1 = take_rows(X, rows.s1);
  Eigen::MatrixXd X1_known(X1.rows(), static_cast<Eigen::Index>(known_cols.size()));
  for (std::size_t k = 0; k < known_cols.size(); ++k) {
    X1_known.col(static_cast<Eigen::Index>(k)) = X1.col(known_cols[k]);
  }
  const Eigen::VectorXd init = take(d_hat, rows.s1).cwiseInverse();
  const RakingSolution sol = rake(init, X1_known, known.totals, options);
  require_converged(sol, "first-stage calibration of the probability sample");

  BenchmarkVector bv;
  bv.names = names;
  bv.totals = X1.transpose() * sol.weights;
  bv.provenance.assign(names.size(), Provenance::TwoStage);
  for (std::size_t k = 0; k < known_cols.size(); ++k) {
    bv.totals(known_cols[k]) = known.totals(static_cast<Eigen::Index>(k));
    bv.provenance[static_cast<std::size_t>(known_cols[k])] = Provenance::Known;
  }
  return bv;
}

BenchmarkVector two_stage_benchmarks(const Dataset& ds, const BenchmarkVector& known,
                                     const InclusionProbs& probs,
                                     const std::vector<std::string>& vars, bool with_intercept,
                                     const RakeOptions& options) {
  const DesignMatrix dm = design_matrix(ds, vars, with_intercept);
  return two_stage_benchmarks(dm.X, dm.columns, ds.memberships(), probs.d_hat, known, options);
}

WeightSet sc_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& initial,
                     const Eigen::VectorXd& target, const RakeOptions& options) {
  const RakingSolution sol = rake(initial, X, target, options);
  require_converged(sol, "simultaneous calibration");
  WeightSet ws;
  ws.scheme = Scheme::SC;
  ws.weights = sol.weights;
  return ws;
}

WeightSet dc_weights(const Eigen::MatrixXd& X, const std::vector<Membership>& membership,
                     const Eigen::VectorXd& initial, const Eigen::VectorXd& target, Kappa kappa,
                     const RakeOptions& options) {
  const SampleRows rows = split(membership);
  auto rake_sample = [&](const std::vector<Eigen::Index>& idx, const char* label) {
    if (idx.empty()) throw Error(ErrorCode::EmptySample, std::string(label) + " is empty");
    RakingSolution sol;
    try {
      sol = rake(take(initial, idx), take_rows(X, idx), target, options);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RankDeficient) throw;
      throw Error(ErrorCode::RakingNonconvergence,
                  std::string("disjoint calibration of the ") + label +
                      " is infeasible: " + e.what());
    }
    require_converged(sol, std::string("disjoint calibration of the ") + label);
    return sol.weights;
  };
  const Eigen::VectorXd v1 = rake_sample(rows.s1, "probability sample");
  const Eigen::VectorXd v2 = rake_sample(rows.s2, "convenience sample");
  return mix_disjoint(Scheme::DC, membership, v1, v2, kappa);
}

Eigen::MatrixXd benchmark_design(const Dataset& ds, const BenchmarkVector& target) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(target.size()));
  for (std::size_t j = 0; j < target.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    if (target.names[j] == kInterceptName) {
      X.col(c).setOnes();
    } else {
      X.col(c) = ds.aux().col(static_cast<Eigen::Index>(ds.aux_index(target.names[j])));
    }
  }
  return X;
}

namespace {

double population_size(const BenchmarkVector& target, std::size_t fallback) {
  if (auto n = target.total(kInterceptName)) return *n;
  return static_cast<double>(fallback);
}

}  // namespace

WeightSet sc_weights(const Dataset& ds, const InclusionProbs& probs, const BenchmarkVector& target,
                     CalibrationInit init, const RakeOptions& options) {
  const Eigen::MatrixXd X = benchmark_design(ds, target);
  Eigen::VectorXd initial;
  if (init == CalibrationInit::PropensityWeights) {
    initial = sps_weights(probs).weights;
  } else {
    const auto n = static_cast<Eigen::Index>(ds.size());
    initial = Eigen::VectorXd::Constant(n, population_size(target, ds.size()) / static_cast<double>(n));
  }
  return sc_weights(X, initial, target.totals, options);
}

WeightSet dc_weights(const Dataset& ds, const InclusionProbs& probs, const BenchmarkVector& target,
                     Kappa kappa, CalibrationInit init, const RakeOptions& options) {
  const Eigen::MatrixXd X = benchmark_design(ds, target);
  const auto n = static_cast<Eigen::Index>(ds.size());
  Eigen::VectorXd initial(n);
  const double pop = population_size(target, ds.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool prob = !ds.is_conv(static_cast<std::size_t>(i));
    if (init == CalibrationInit::PropensityWeights) {
      initial(i) = prob ? 1.0 / probs.d_hat(i) : 1.0 / probs.q_hat(i);
    } else {
      initial(i) = pop / static_cast<double>(prob ? ds.n1() : ds.n2());
    }
  }
  if (init == CalibrationInit::PropensityWeights) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(initial(i))) {
        throw Error(ErrorCode::ZeroConvenienceProb, "q_hat is zero for a convenience unit");
      }
    }
  }
  return dc_weights(X, ds.memberships(), initial, target.totals, kappa, options);
}

}  // namespace blend
