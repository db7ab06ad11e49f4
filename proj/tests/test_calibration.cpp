#include "blend/calibration.hpp"
#include "blend/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace blend;
using support::code_of;

namespace {

const Membership P = Membership::Prob;
const Membership C = Membership::Conv;

double max_rel_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& v, const Eigen::VectorXd& t) {
  const Eigen::VectorXd r = X.transpose() * v - t;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < t.size(); ++j) worst = std::max(worst, std::abs(r(j)) / std::max(1.0, std::abs(t(j))));
  return worst;
}

}  // namespace

TEST_SUITE("calibration") {
  TEST_CASE("HT benchmark totals") {
    Eigen::MatrixXd X(3, 2);
    X << 1, 1, 1, 2, 1, 3;
    const std::vector<Membership> m{P, P, P};
    const BenchmarkVector b = estimate_benchmarks(X, {kInterceptName, "x"}, m, Eigen::VectorXd::Constant(3, 0.5));
    CHECK(b.total("x").value() == doctest::Approx(12.0));
    CHECK(b.total(kInterceptName).value() == doctest::Approx(6.0));
    CHECK(b.provenance[1] == Provenance::HtEstimated);

    const BenchmarkVector census = estimate_benchmarks(X, {kInterceptName, "x"}, m, Eigen::VectorXd::Ones(3));
    CHECK(census.total("x").value() == doctest::Approx(6.0));

    // Convenience rows do not contribute.
    const BenchmarkVector s1 = estimate_benchmarks(X, {kInterceptName, "x"}, {P, C, P}, Eigen::VectorXd::Constant(3, 0.5));
    CHECK(s1.total("x").value() == doctest::Approx(8.0));
  }

  TEST_CASE("rake: intercept only gives N / n") {
    const RakingSolution s = rake(Eigen::VectorXd::Ones(5), Eigen::MatrixXd::Ones(5, 1), Eigen::VectorXd::Constant(1, 40.0));
    CHECK(s.converged);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(s.weights(i) == doctest::Approx(8.0).epsilon(1e-12));
  }

  TEST_CASE("rake: a satisfied target leaves the weights alone") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 1, 1, 2, 1, 5;
    const Eigen::VectorXd w = (Eigen::VectorXd(4) << 2, 3, 1, 4).finished();
    const RakingSolution s = rake(w, X, X.transpose() * w);
    CHECK(s.converged);
    CHECK((s.weights - w).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(s.multipliers.cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("rake: two constraints on six units match the closed form") {
    Eigen::MatrixXd X(6, 2);
    X << 1, 0.5, 1, 1.0, 1, 1.5, 1, 2.0, 1, 2.5, 1, 3.0;
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(6, 2.0);
    const Eigen::VectorXd t = (Eigen::VectorXd(2) << 13.0, 24.0).finished();
    // 2x2 normal equations by Cramer's rule.
    const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd rhs = t - X.transpose() * w;
    const double det = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
    const double xi0 = (rhs(0) * A(1, 1) - A(0, 1) * rhs(1)) / det;
    const double xi1 = (A(0, 0) * rhs(1) - A(1, 0) * rhs(0)) / det;
    const RakingSolution s = rake(w, X, t);
    REQUIRE(s.converged);
    for (Eigen::Index i = 0; i < 6; ++i) {
      const double v = w(i) * (1.0 + xi0 * X(i, 0) + xi1 * X(i, 1));
      CHECK(std::abs(s.weights(i) - v) <= 1e-10);
    }
    CHECK(s.multipliers(0) == doctest::Approx(xi0).epsilon(1e-10));
    CHECK(s.multipliers(1) == doctest::Approx(xi1).epsilon(1e-10));
  }

  TEST_CASE("rake: random feasible problems satisfy the constraints") {
    Rng rng = make_rng(31, 0);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 25; ++rep) {
      const int n = 30 + rep * 5;
      const int p = 2 + rep % 4;
      Eigen::MatrixXd X(n, p);
      Eigen::VectorXd w(n), y(n);
      for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (int j = 1; j < p; ++j) X(i, j) = j % 2 ? (bernoulli(rng, 0.4) ? 1.0 : 0.0) : z(rng);
        w(i) = 1.0 + 4.0 * uniform01(rng);
      }
      // Targets from a perturbed positive weighting are always feasible.
      Eigen::VectorXd v0(n);
      for (int i = 0; i < n; ++i) v0(i) = w(i) * (0.7 + 0.6 * uniform01(rng));
      const Eigen::VectorXd t = X.transpose() * v0;
      const RakingSolution s = rake(w, X, t);
      REQUIRE(s.converged);
      CHECK(max_rel_residual(X, s.weights, t) <= 1e-8);
      CHECK(s.weights.minCoeff() >= 0.0);

      // Where no bound is active the solution is omega (1 + X xi).
      if (s.weights.minCoeff() > 0.0) {
        const Eigen::VectorXd closed = w.cwiseProduct(Eigen::VectorXd::Ones(n) + X * s.multipliers);
        CHECK((closed - s.weights).cwiseAbs().maxCoeff() <= 1e-9 * w.maxCoeff());
        const Eigen::VectorXd oracle_v = oracle::linear_calibration(w, X, t);
        CHECK((oracle_v - s.weights).cwiseAbs().maxCoeff() <= 1e-9 * w.maxCoeff());
      }

      // Linear model exactness: y = b0 + b'x gives calibrated total b0 N + b't.
      Eigen::VectorXd beta(p);
      for (int j = 0; j < p; ++j) beta(j) = z(rng);
      y = X * beta;
      CHECK(std::abs(s.weights.dot(y) - beta.dot(t)) <= 1e-8 * std::max(1.0, std::abs(beta.dot(t))) * 10);
    }
  }

  TEST_CASE("rake: bounds bind and the zero bound is respected") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 0, 1, 1, 1, 1;
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(4);
    // Total 4 with x-total 3.9: the x = 0 units must nearly vanish.
    const Eigen::VectorXd t = (Eigen::VectorXd(2) << 4.0, 3.9).finished();
    const RakingSolution s = rake(w, X, t);
    REQUIRE(s.converged);
    CHECK(s.weights.minCoeff() >= 0.0);
    CHECK(max_rel_residual(X, s.weights, t) <= 1e-8);
  }

  TEST_CASE("rake: infeasible targets report non-convergence") {
    Eigen::MatrixXd X(3, 2);
    X << 1, 0, 1, 0, 1, 0.0;
    X(2, 1) = 1.0;
    // x-total above the intercept total cannot be reached with v >= 0.
    const Eigen::VectorXd t = (Eigen::VectorXd(2) << 3.0, 5.0).finished();
    const RakingSolution s = rake(Eigen::VectorXd::Ones(3), X, t);
    CHECK_FALSE(s.converged);
    CHECK(s.residual > 1e-8);

    Eigen::MatrixXd dup(3, 2);
    dup << 1, 1, 1, 1, 1, 1;
    CHECK(code_of([&] { rake(Eigen::VectorXd::Ones(3), dup, Eigen::VectorXd::Ones(2)); }) ==
          ErrorCode::RankDeficient);
  }

  TEST_CASE("two-stage benchmarks") {
    Eigen::MatrixXd X(5, 3);
    X << 1, 1, 2.0, 1, 0, 3.5, 1, 1, 1.0, 1, 0, 4.0, 1, 1, 0.5;
    const std::vector<std::string> names{kInterceptName, "a", "b"};
    const std::vector<Membership> m{P, P, P, P, C};
    const Eigen::VectorXd d = (Eigen::VectorXd(5) << 0.2, 0.25, 0.5, 0.4, 0.3).finished();

    BenchmarkVector full;
    full.names = names;
    full.totals = (Eigen::VectorXd(3) << 20.0, 9.0, 50.0).finished();
    full.provenance.assign(3, Provenance::Known);
    const BenchmarkVector same = two_stage_benchmarks(X, names, m, d, full);
    CHECK((same.totals - full.totals).cwiseAbs().maxCoeff() <= 1e-8 * 50.0);

    // Intercept-only known total: a ratio adjustment of the HT totals.
    BenchmarkVector n_only;
    n_only.names = {kInterceptName};
    n_only.totals = Eigen::VectorXd::Constant(1, 20.0);
    n_only.provenance = {Provenance::Known};
    const BenchmarkVector ratio = two_stage_benchmarks(X, names, m, d, n_only);
    const BenchmarkVector ht = estimate_benchmarks(X, names, m, d);
    const double scale = 20.0 / ht.total(kInterceptName).value();
    CHECK(ratio.total("a").value() == doctest::Approx(scale * ht.total("a").value()).epsilon(1e-10));
    CHECK(ratio.total("b").value() == doctest::Approx(scale * ht.total("b").value()).epsilon(1e-10));
    CHECK(ratio.provenance[0] == Provenance::Known);
    CHECK(ratio.provenance[2] == Provenance::TwoStage);

    // Two known totals, one derived: constrained least squares by hand.
    BenchmarkVector two;
    two.names = {kInterceptName, "a"};
    two.totals = (Eigen::VectorXd(2) << 16.0, 8.0).finished();
    two.provenance.assign(2, Provenance::Known);
    const BenchmarkVector derived = two_stage_benchmarks(X, names, m, d, two);
    Eigen::MatrixXd X1 = X.topRows(4).leftCols(2);
    const Eigen::VectorXd omega = d.head(4).cwiseInverse();
    const Eigen::VectorXd v = oracle::linear_calibration(omega, X1, two.totals);
    CHECK(derived.total("b").value() == doctest::Approx(v.dot(X.topRows(4).col(2))).epsilon(1e-10));
  }

  TEST_CASE("simultaneous calibration") {
    support::Toy t;
    t.aux = {"a", "b"};
    Rng rng = make_rng(32, 0);
    for (int i = 0; i < 40; ++i) t.prob({bernoulli(rng, 0.5) ? 1.0 : 0.0, 2.0 * uniform01(rng)}, 0, 0.2);
    for (int i = 0; i < 60; ++i) t.conv({bernoulli(rng, 0.6) ? 1.0 : 0.0, 2.0 * uniform01(rng)}, 0, 0.2);
    const Dataset ds = t.build();
    const GammaEstimate g = estimate_gamma(ds, {"a", "b"});
    const InclusionProbs probs = assemble_inclusion(ds, Eigen::VectorXd::Ones(100), g.gamma);
    const BenchmarkVector target = estimate_benchmarks(ds, probs, {"a", "b"}, true);

    const WeightSet sc = sc_weights(ds, probs, target);
    CHECK(sc.scheme == Scheme::SC);
    const Eigen::MatrixXd X = benchmark_design(ds, target);
    CHECK(max_rel_residual(X, sc.weights, target.totals) <= 1e-8);
    const double N = target.total(kInterceptName).value();
    for (const char* v : {"a", "b"}) {
      const Eigen::VectorXd x = ds.aux().col(static_cast<Eigen::Index>(ds.aux_index(v)));
      const double mean = sc.weights.dot(x) / sc.sum();
      CHECK(mean == doctest::Approx(target.total(v).value() / N).epsilon(1e-8));
      // Trimming moves the means off the benchmarks a little.
      const WeightSet tr = trim_weights(sc, 0.05);
      const double trimmed = tr.weights.dot(x) / tr.sum();
      CHECK(trimmed != doctest::Approx(mean).epsilon(1e-12));
    }

    // Intercept-only target: a uniform rescale of the starting weights.
    BenchmarkVector n_only;
    n_only.names = {kInterceptName};
    n_only.totals = Eigen::VectorXd::Constant(1, 500.0);
    n_only.provenance = {Provenance::Known};
    const WeightSet scaled = sc_weights(ds, probs, n_only);
    const WeightSet start = sps_weights(probs);
    const Eigen::ArrayXd ratio = scaled.weights.array() / start.weights.array();
    CHECK(ratio.maxCoeff() - ratio.minCoeff() <= 1e-12 * ratio.maxCoeff());
  }

  TEST_CASE("disjoint calibration") {
    support::Toy t;
    for (int i = 0; i < 6; ++i) t.prob({double(i % 3)}, 0, 0.5);
    for (int i = 0; i < 6; ++i) t.conv({double(i % 3)}, 0, 0.5);
    const Dataset ds = t.build();
    const InclusionProbs probs =
        assemble_inclusion(ds, Eigen::VectorXd::Ones(12), Eigen::VectorXd::Constant(12, 0.5));
    BenchmarkVector target;
    target.names = {kInterceptName, "x"};
    target.totals = (Eigen::VectorXd(2) << 30.0, 33.0).finished();
    target.provenance.assign(2, Provenance::Known);
    const WeightSet dc = dc_weights(ds, probs, target);
    CHECK(dc.scheme == Scheme::DC);
    CHECK(dc.kappa.value() == doctest::Approx(0.5).epsilon(1e-12));
    for (int i = 0; i < 6; ++i) CHECK(dc.weights(i) == doctest::Approx(dc.weights(i + 6)).epsilon(1e-12));
    // Each sample on its own hits the totals.
    const Eigen::MatrixXd X = benchmark_design(ds, target);
    CHECK(max_rel_residual(X.topRows(6), dc.weights.head(6) / dc.kappa.value(), target.totals) <= 1e-8);

    CHECK(kish_kappa(Eigen::VectorXd::Constant(2, 2.0), Eigen::VectorXd::Constant(2, 4.0)) ==
          doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("disjoint calibration fails when S2 cannot reach the totals") {
    support::Toy t;
    for (int i = 0; i < 6; ++i) t.prob({double(i % 2)}, 0, 0.5);
    for (int i = 0; i < 6; ++i) t.conv({0.0}, 0, 0.5);
    const Dataset ds = t.build();
    const InclusionProbs probs =
        assemble_inclusion(ds, Eigen::VectorXd::Ones(12), Eigen::VectorXd::Constant(12, 0.5));
    const BenchmarkVector target = estimate_benchmarks(ds, probs, {"x"}, true);
    CHECK(code_of([&] { dc_weights(ds, probs, target); }) == ErrorCode::RakingNonconvergence);
  }

  TEST_CASE("benchmark file round trip") {
    BenchmarkVector b;
    b.names = {kInterceptName, "a", "b"};
    b.totals = (Eigen::VectorXd(3) << 940.0, 1.0 / 3.0, 12.5).finished();
    b.provenance = {Provenance::Known, Provenance::HtEstimated, Provenance::TwoStage};
    auto dir = support::temp_dir("cal_bench");
    write_benchmarks((dir / "b.csv").string(), b);
    const BenchmarkVector back = read_benchmarks((dir / "b.csv").string());
    CHECK(back.names == b.names);
    CHECK(back.totals == b.totals);
    CHECK(back.provenance == b.provenance);
    CHECK(back.variables() == std::vector<std::string>{"a", "b"});
    CHECK(back.has_intercept());
  }
}
