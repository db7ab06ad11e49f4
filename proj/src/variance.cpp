#include "blend/variance.hpp"

#include "blend/error.hpp"
#include "blend/linalg.hpp"
#include "blend/parallel.hpp"
#include "blend/rng.hpp"

#include <numeric>

namespace blend {

double linearized_se_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::Index n = y.size();
  if (w.size() != n) throw Error(ErrorCode::BadValue, "outcome and weight lengths differ");
  if (n < 2) throw Error(ErrorCode::NotEnoughUnits, "linearized variance needs at least 2 units");
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw Error(ErrorCode::BadValue, "weights must have a positive sum");
  const double mu = w.dot(y) / wsum;
  const double ss = (w.array() * (y.array() - mu)).square().sum();
  const double nn = static_cast<double>(n);
  return std::sqrt(ss * nn / (nn - 1.0)) / wsum;
}

Eigen::MatrixXd linearized_cov_wls(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& w) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || w.size() != n) throw Error(ErrorCode::BadValue, "WLS input lengths differ");
  if (n < 2) throw Error(ErrorCode::NotEnoughUnits, "linearized variance needs at least 2 units");
  linalg::require_full_column_rank(w.cwiseSqrt().asDiagonal() * X, "regression design");
  const Eigen::MatrixXd B = X.transpose() * w.asDiagonal() * X;
  const Eigen::MatrixXd Binv = linalg::inverse_symmetric(B);
  const Eigen::VectorXd beta = Binv * (X.transpose() * w.cwiseProduct(y));
  const Eigen::VectorXd e = y - X * beta;
  // Score contributions u_i = w_i e_i x_i, one per row.
  const Eigen::MatrixXd U = (w.cwiseProduct(e)).asDiagonal() * X;
  const Eigen::RowVectorXd ubar = U.colwise().mean();
  const Eigen::MatrixXd Uc = U.rowwise() - ubar;
  const double nn = static_cast<double>(n);
  const Eigen::MatrixXd M = (nn / (nn - 1.0)) * (Uc.transpose() * Uc);
  return Binv * M * Binv;
}

std::vector<bool> ReplicateGroups::keep_mask(int g) const {
  std::vector<bool> keep(assignment.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) keep[i] = assignment[i] != g;
  return keep;
}

std::vector<std::size_t> ReplicateGroups::group_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(G), 0);
  for (int a : assignment) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

ReplicateGroups make_groups(std::size_t n, int G, std::uint64_t seed) {
  if (G < 2) throw Error(ErrorCode::BadSpec, "jackknife needs at least 2 groups");
  if (n < static_cast<std::size_t>(G)) {
    throw Error(ErrorCode::TooFewUnits, std::to_string(n) + " units cannot fill " +
                                            std::to_string(G) + " replicate groups");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x6a6b);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  ReplicateGroups groups;
  groups.G = G;
  groups.seed = seed;
  groups.assignment.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    groups.assignment[order[k]] = static_cast<int>(k % static_cast<std::size_t>(G));
  }
  return groups;
}

ReplicateGroups make_groups(const Dataset& ds, int G, std::uint64_t seed) {
  return make_groups(ds.size(), G, seed);
}

JackknifeResult summarize_replicates(Eigen::MatrixXd replicates) {
  JackknifeResult res;
  const double G = static_cast<double>(replicates.rows());
  res.replicate_mean = replicates.colwise().mean().transpose();
  const Eigen::MatrixXd centered = replicates.rowwise() - res.replicate_mean.transpose();
  res.covariance = ((G - 1.0) / G) * (centered.transpose() * centered);
  res.se = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.replicates = std::move(replicates);
  return res;
}

JackknifeResult jackknife(const ReplicateGroups& groups, const ReplicatePipeline& pipeline,
                          int workers) {
  const auto G = static_cast<std::size_t>(groups.G);
  std::vector<Eigen::VectorXd> out(G);
  parallel_for(G, workers, [&](std::size_t g) {
    try {
      out[g] = pipeline(groups.keep_mask(static_cast<int>(g)), static_cast<int>(g));
    } catch (const ReplicateError&) {
      throw;
    } catch (const std::exception& e) {
      throw ReplicateError(static_cast<int>(g), e.what());
    }
  });
  const Eigen::Index m = out.front().size();
  Eigen::MatrixXd reps(static_cast<Eigen::Index>(G), m);
  for (std::size_t g = 0; g < G; ++g) {
    if (out[g].size() != m) {
      throw ReplicateError(static_cast<int>(g), "pipeline returned a different number of estimands");
    }
    reps.row(static_cast<Eigen::Index>(g)) = out[g].transpose();
  }
  return summarize_replicates(std::move(reps));
}

JackknifeResult jackknife(const Dataset& ds,
                          const std::function<Eigen::VectorXd(const Dataset&)>& pipeline,
                          const ReplicateGroups& groups, int workers) {
  if (groups.size() != ds.size()) throw Error(ErrorCode::BadValue, "groups do not match dataset size");
  return jackknife(
      groups,
      [&](const std::vector<bool>& keep, int) { return pipeline(ds.subset(keep)); }, workers);
}

}  // namespace blend
