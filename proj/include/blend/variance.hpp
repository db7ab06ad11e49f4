#pragma once

#include "blend/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace blend {

// With-replacement linearization of the ratio mean sum(w y) / sum(w):
// se^2 = n/(n-1) * sum[w_i (y_i - mu)]^2 / (sum w)^2. Throws NotEnoughUnits
// for n < 2.
double linearized_se_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& w);

// Sandwich covariance B^-1 M B^-1 of the WLS coefficients with B = X'WX and
// M the n/(n-1)-scaled covariance of the score contributions w_i x_i e_i.
Eigen::MatrixXd linearized_cov_wls(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& w);

// Delete-a-group jackknife groups: 0-based group index per unit.
struct ReplicateGroups {
  int G = 0;
  std::vector<int> assignment;
  std::uint64_t seed = 0;

  std::size_t size() const { return assignment.size(); }
  // true for units retained when group g is deleted.
  std::vector<bool> keep_mask(int g) const;
  std::vector<std::size_t> group_sizes() const;
};

// Seeded shuffle, then units are dealt round-robin into G groups. Throws
// TooFewUnits when n < G.
ReplicateGroups make_groups(std::size_t n, int G, std::uint64_t seed);
ReplicateGroups make_groups(const Dataset& ds, int G, std::uint64_t seed);

struct JackknifeResult {
  // One row per deleted group, one column per estimand.
  Eigen::MatrixXd replicates;
  Eigen::VectorXd replicate_mean;
  Eigen::VectorXd se;
  // (G-1)/G * sum_g (theta_g - mean)(theta_g - mean)'
  Eigen::MatrixXd covariance;
};

// Recomputes the full estimation pipeline with each group deleted. The
// pipeline receives the keep mask and the deleted group index (for deriving a
// per-replicate RNG stream). Any replicate failure raises ReplicateError.
using ReplicatePipeline = std::function<Eigen::VectorXd(const std::vector<bool>& keep, int group)>;

JackknifeResult jackknife(const ReplicateGroups& groups, const ReplicatePipeline& pipeline,
                          int workers = 1);

// Dataset form: the pipeline sees the dataset with group g removed.
JackknifeResult jackknife(const Dataset& ds,
                          const std::function<Eigen::VectorXd(const Dataset&)>& pipeline,
                          const ReplicateGroups& groups, int workers = 1);

// Jackknife summary from a precomputed replicate matrix.
JackknifeResult summarize_replicates(Eigen::MatrixXd replicates);

}  // namespace blend
