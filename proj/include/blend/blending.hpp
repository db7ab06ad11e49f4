#pragma once

#include "blend/propensity.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace blend {

enum class Scheme { SPS, DPS, SC, DC, DesignOnly };

std::string_view scheme_name(Scheme s);
// Accepts the names above, case-insensitive. Throws BadSpec.
Scheme parse_scheme(std::string_view text);
inline bool is_disjoint(Scheme s) { return s == Scheme::DPS || s == Scheme::DC; }

struct WeightSet {
  Scheme scheme = Scheme::DesignOnly;
  Eigen::VectorXd weights;
  std::optional<double> kappa;
  bool trimmed = false;
  std::optional<std::pair<double, double>> trim_bounds;

  double sum() const { return weights.sum(); }
  std::size_t size() const { return static_cast<std::size_t>(weights.size()); }
};

// nullopt selects the Kish-optimal mixing constant.
using Kappa = std::optional<double>;
inline constexpr Kappa kAutoKappa = std::nullopt;

// w_i = 1 / p_i on the pooled sample.
WeightSet sps_weights(const InclusionProbs& probs);

// kappa / d_i on S1 and (1 - kappa) / q_i on S2. Throws ZeroConvenienceProb.
WeightSet dps_weights(const InclusionProbs& probs, Kappa kappa = kAutoKappa);

// Mixing constant minimizing the Kish design effect of the concatenation of
// kappa * a (S1 weights) and (1 - kappa) * b (S2 weights).
double kish_kappa(const Eigen::VectorXd& s1_weights, const Eigen::VectorXd& s2_weights);

// n sum(w^2) / (sum w)^2
double kish_deff(const Eigen::VectorXd& weights);

// Concatenates per-sample weights with a mixing constant (AUTO resolves via
// kish_kappa). Used by both disjoint schemes.
WeightSet mix_disjoint(Scheme scheme, const std::vector<Membership>& membership,
                       const Eigen::VectorXd& s1_weights, const Eigen::VectorXd& s2_weights,
                       Kappa kappa);

// Linear interpolation between closest ranks (R type 7).
double quantile(std::vector<double> values, double prob);

// Clamps weights outside the [pct, 1 - pct] pooled quantiles and rescales the
// remaining weights so the total is unchanged.
WeightSet trim_weights(const WeightSet& ws, double pct);

void write_weights(const std::string& path, const std::vector<std::string>& ids,
                   const WeightSet& ws);

}  // namespace blend
