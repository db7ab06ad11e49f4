#include "blend/estimation.hpp"
#include "blend/rng.hpp"
#include "blend/variance.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace blend;
using support::code_of;

namespace {

Eigen::VectorXd subset(const Eigen::VectorXd& v, const std::vector<bool>& keep) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (keep[static_cast<std::size_t>(i)]) out.push_back(v(i));
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

Eigen::MatrixXd subset_rows(const Eigen::MatrixXd& X, const std::vector<bool>& keep) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (keep[static_cast<std::size_t>(i)]) rows.push_back(i);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(rows[k]);
  return out;
}

}  // namespace

TEST_SUITE("variance") {
  TEST_CASE("linearized se of a mean") {
    CHECK(linearized_se_mean(Eigen::VectorXd::Constant(6, 2.5), Eigen::VectorXd::LinSpaced(6, 1, 6)) == 0.0);

    // Equal weights: s / sqrt(n).
    Eigen::VectorXd y(5);
    y << 1, 4, 2, 8, 5;
    const double mean = y.mean();
    const double s2 = (y.array() - mean).square().sum() / 4.0;
    CHECK(linearized_se_mean(y, Eigen::VectorXd::Constant(5, 3.0)) ==
          doctest::Approx(std::sqrt(s2 / 5.0)).epsilon(1e-14));

    CHECK(code_of([] { linearized_se_mean(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)); }) ==
          ErrorCode::NotEnoughUnits);
  }

  TEST_CASE("linearized se equals the influence of each weight") {
    // se^2 = n/(n-1) sum (w_i d theta / d w_i)^2, with the derivative taken
    // by central differences.
    blend::Rng rng = make_rng(51, 0);
    const int n = 30;
    Eigen::VectorXd y(n), w(n);
    for (int i = 0; i < n; ++i) {
      y(i) = 10.0 * uniform01(rng);
      w(i) = 1.0 + 5.0 * uniform01(rng);
    }
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double h = 1e-6 * w(i);
      Eigen::VectorXd up = w, down = w;
      up(i) += h;
      down(i) -= h;
      const double deriv = (weighted_mean(y, up) - weighted_mean(y, down)) / (2.0 * h);
      ss += std::pow(w(i) * deriv, 2);
    }
    const double oracle = std::sqrt(ss * n / (n - 1.0));
    CHECK(linearized_se_mean(y, w) == doctest::Approx(oracle).epsilon(1e-6));
  }

  TEST_CASE("sandwich covariance") {
    // Intercept-only WLS reduces to the mean's linearized variance.
    Eigen::VectorXd y(6), w(6);
    y << 1, 3, 2, 7, 4, 0;
    w << 1, 2, 1, 4, 1, 3;
    const Eigen::MatrixXd v = linearized_cov_wls(y, Eigen::MatrixXd::Ones(6, 1), w);
    CHECK(std::sqrt(v(0, 0)) == doctest::Approx(linearized_se_mean(y, w)).epsilon(1e-12));

    // Zero residuals give zero covariance.
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 1, 1, 2, 1, 4;
    const Eigen::VectorXd exact = X * Eigen::Vector2d(1.0, -2.0);
    CHECK(linearized_cov_wls(exact, X, Eigen::VectorXd::Ones(4)).cwiseAbs().maxCoeff() <= 1e-20);
  }

  TEST_CASE("sandwich and delete-one jackknife agree on a large sample") {
    blend::Rng rng = make_rng(52, 0);
    std::normal_distribution<double> z;
    const int n = 400;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n), w(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      X(i, 1) = z(rng);
      y(i) = 1.0 + 0.5 * X(i, 1) + (1.0 + 0.5 * std::abs(X(i, 1))) * z(rng);
      w(i) = 1.0 + 2.0 * uniform01(rng);
    }
    const Eigen::MatrixXd sandwich = linearized_cov_wls(y, X, w);
    const ReplicateGroups groups = make_groups(n, n, 9);
    const JackknifeResult jk = jackknife(groups, [&](const std::vector<bool>& keep, int) {
      return wls_regression(subset(y, keep), subset_rows(X, keep), subset(w, keep)).coefficients;
    });
    for (int j = 0; j < 2; ++j) {
      const double ratio = jk.se(j) / std::sqrt(sandwich(j, j));
      CHECK(ratio > 0.9);
      CHECK(ratio < 1.1);
    }
  }

  TEST_CASE("replicate groups") {
    const ReplicateGroups g = make_groups(103, 10, 7);
    CHECK(g.G == 10);
    CHECK(g.size() == 103);
    const auto sizes = g.group_sizes();
    for (std::size_t s : sizes) CHECK((s == 10 || s == 11));
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    CHECK(total == 103);
    for (int a : g.assignment) CHECK((a >= 0 && a < 10));

    const auto keep = g.keep_mask(3);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) {
        ++dropped;
        CHECK(g.assignment[i] == 3);
      }
    }
    CHECK(dropped == sizes[3]);

    CHECK(make_groups(103, 10, 7).assignment == g.assignment);
    CHECK(make_groups(103, 10, 8).assignment != g.assignment);
    CHECK(code_of([] { make_groups(5, 10, 1); }) == ErrorCode::TooFewUnits);
  }

  TEST_CASE("leave-one-out jackknife of a mean is s / sqrt(n)") {
    Eigen::VectorXd y(7);
    y << 2, 9, 4, 4, 1, 7, 3;
    const ReplicateGroups g = make_groups(7, 7, 3);
    const JackknifeResult jk = jackknife(g, [&](const std::vector<bool>& keep, int) {
      return Eigen::VectorXd::Constant(1, subset(y, keep).mean());
    });
    const double s2 = (y.array() - y.mean()).square().sum() / 6.0;
    CHECK(jk.se(0) == doctest::Approx(std::sqrt(s2 / 7.0)).epsilon(1e-12));
    CHECK(jk.replicates.rows() == 7);
  }

  TEST_CASE("a constant pipeline has zero jackknife se") {
    const ReplicateGroups g = make_groups(50, 10, 1);
    const JackknifeResult jk =
        jackknife(g, [](const std::vector<bool>&, int) { return Eigen::Vector2d(3.0, -1.0).eval(); });
    CHECK(jk.se.cwiseAbs().maxCoeff() == 0.0);
    CHECK(jk.replicate_mean(0) == 3.0);
  }

  TEST_CASE("jackknife se does not depend on group labels") {
    Eigen::MatrixXd reps(4, 1);
    reps << 1.0, 2.0, 4.0, 3.5;
    Eigen::MatrixXd perm(4, 1);
    perm << 3.5, 1.0, 4.0, 2.0;
    const JackknifeResult a = summarize_replicates(reps);
    const JackknifeResult b = summarize_replicates(perm);
    CHECK(a.se(0) == doctest::Approx(b.se(0)).epsilon(1e-15));
    const double mean = 2.625;
    const double ss = std::pow(1 - mean, 2) + std::pow(2 - mean, 2) + std::pow(4 - mean, 2) +
                      std::pow(3.5 - mean, 2);
    CHECK(a.se(0) == doctest::Approx(std::sqrt(0.75 * ss)).epsilon(1e-14));
  }

  TEST_CASE("with weights held fixed the jackknife tracks linearization") {
    blend::Rng rng = make_rng(53, 0);
    const int n = 600;
    Eigen::VectorXd y(n), w(n);
    for (int i = 0; i < n; ++i) {
      y(i) = uniform01(rng) < 0.3 ? 1.0 : 0.0;
      w(i) = 1.0 + 9.0 * uniform01(rng);
    }
    const ReplicateGroups g = make_groups(n, 60, 4);
    const JackknifeResult jk = jackknife(g, [&](const std::vector<bool>& keep, int) {
      return Eigen::VectorXd::Constant(1, weighted_mean(subset(y, keep), subset(w, keep)));
    });
    const double lin = linearized_se_mean(y, w);
    CHECK(jk.se(0) / lin > 0.75);
    CHECK(jk.se(0) / lin < 1.25);
  }

  TEST_CASE("a failing replicate names its group") {
    const ReplicateGroups g = make_groups(20, 5, 1);
    bool caught = false;
    try {
      jackknife(g, [](const std::vector<bool>&, int group) -> Eigen::VectorXd {
        if (group == 3) throw Error(ErrorCode::RankDeficient, "singular");
        return Eigen::VectorXd::Ones(1);
      });
    } catch (const ReplicateError& e) {
      caught = true;
      CHECK(e.group() == 3);
      CHECK(e.code() == ErrorCode::ReplicateFailure);
    }
    CHECK(caught);
  }

  TEST_CASE("worker count does not change the result") {
    blend::Rng rng = make_rng(54, 0);
    Eigen::VectorXd y(90), w(90);
    for (int i = 0; i < 90; ++i) {
      y(i) = uniform01(rng);
      w(i) = 1.0 + uniform01(rng);
    }
    const ReplicateGroups g = make_groups(90, 15, 2);
    auto pipe = [&](const std::vector<bool>& keep, int) {
      return Eigen::VectorXd::Constant(1, weighted_mean(subset(y, keep), subset(w, keep)));
    };
    const JackknifeResult one = jackknife(g, pipe, 1);
    const JackknifeResult four = jackknife(g, pipe, 4);
    CHECK(one.replicates == four.replicates);
    CHECK(one.se == four.se);
  }
}
