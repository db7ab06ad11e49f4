#pragma once

#include "blend/blending.hpp"
#include "blend/dataset.hpp"
#include "blend/propensity.hpp"

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blend {

enum class Provenance { Known, HtEstimated, TwoStage };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view text);

// Population totals t_x for named auxiliary columns. The intercept column is
// named kInterceptName and its total is the population size.
struct BenchmarkVector {
  std::vector<std::string> names;
  Eigen::VectorXd totals;
  std::vector<Provenance> provenance;

  std::size_t size() const { return names.size(); }
  std::optional<double> total(const std::string& name) const;
  // Auxiliary names, excluding the intercept.
  std::vector<std::string> variables() const;
  bool has_intercept() const;
};

BenchmarkVector read_benchmarks(const std::string& path);
void write_benchmarks(const std::string& path, const BenchmarkVector& bv);

// Bounds on the ratio v_i / omega_i.
struct RakeBounds {
  double low = 0.0;
  double high = std::numeric_limits<double>::infinity();
};

struct RakeOptions {
  // Max-abs constraint residual relative to max(1, |t_j|).
  double tolerance = 1e-8;
  int max_iterations = 50;
  int max_halvings = 20;
  RakeBounds bounds;
};

struct RakingSolution {
  Eigen::VectorXd weights;
  Eigen::VectorXd multipliers;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Generalized raking under the truncated linear distance: minimizes
// sum omega_i G(v_i / omega_i), G(x) = (x - 1)^2 / 2 inside the bounds,
// subject to X' v = target. Newton iteration on the multipliers with
// step halving; returns the best iterate with converged = false when the
// tolerance is not met. Throws RankDeficient.
RakingSolution rake(const Eigen::VectorXd& initial, const Eigen::MatrixXd& X,
                    const Eigen::VectorXd& target, const RakeOptions& options = {});

// Horvitz-Thompson totals sum_{S1} x_i / d_i over the columns of X.
BenchmarkVector estimate_benchmarks(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                                    const std::vector<Membership>& membership,
                                    const Eigen::VectorXd& d_hat);
BenchmarkVector estimate_benchmarks(const Dataset& ds, const InclusionProbs& probs,
                                    const std::vector<std::string>& vars, bool with_intercept = true);

// Rakes S1 (initialized at 1/d_hat) to the known partial totals and then
// evaluates totals of every column of X with the raked weights. Throws
// RakingNonconvergence.
BenchmarkVector two_stage_benchmarks(const Eigen::MatrixXd& X,
                                     const std::vector<std::string>& names,
                                     const std::vector<Membership>& membership,
                                     const Eigen::VectorXd& d_hat, const BenchmarkVector& known,
                                     const RakeOptions& options = {});
BenchmarkVector two_stage_benchmarks(const Dataset& ds, const BenchmarkVector& known,
                                     const InclusionProbs& probs,
                                     const std::vector<std::string>& vars, bool with_intercept = true,
                                     const RakeOptions& options = {});

// Simultaneous calibration of the pooled sample. Throws RakingNonconvergence.
WeightSet sc_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& initial,
                     const Eigen::VectorXd& target, const RakeOptions& options = {});

// Disjoint calibration: each sample raked to the same totals, then mixed.
// `initial` is indexed like `membership`. A sample whose calibration
// equations cannot be solved raises RakingNonconvergence.
WeightSet dc_weights(const Eigen::MatrixXd& X, const std::vector<Membership>& membership,
                     const Eigen::VectorXd& initial, const Eigen::VectorXd& target,
                     Kappa kappa = kAutoKappa, const RakeOptions& options = {});

enum class CalibrationInit { PropensityWeights, Equal };

// Dataset forms. With PropensityWeights, SC starts from the SPS weights and
// DC from the unmixed disjoint weights (1/d_hat on S1, 1/q_hat on S2). Equal
// starts every unit at (population total) / n.
WeightSet sc_weights(const Dataset& ds, const InclusionProbs& probs, const BenchmarkVector& target,
                     CalibrationInit init = CalibrationInit::PropensityWeights,
                     const RakeOptions& options = {});
WeightSet dc_weights(const Dataset& ds, const InclusionProbs& probs, const BenchmarkVector& target,
                     Kappa kappa = kAutoKappa,
                     CalibrationInit init = CalibrationInit::PropensityWeights,
                     const RakeOptions& options = {});

// Design matrix whose columns follow the benchmark names.
Eigen::MatrixXd benchmark_design(const Dataset& ds, const BenchmarkVector& target);

}  // namespace blend
