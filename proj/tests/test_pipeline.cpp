#include "blend/pipeline.hpp"
#include "blend/rng.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace blend;
using support::code_of;

namespace {

// S1 of 60 at d = 0.2 and S2 of 80 tilted towards a = 1 and large b.
BlendData toy_data(std::uint64_t seed, bool with_frame = false) {
  support::Toy t;
  t.aux = {"a", "b"};
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> z;
  for (int i = 0; i < 60; ++i) {
    const double a = bernoulli(rng, 0.4) ? 1.0 : 0.0;
    const double b = z(rng);
    t.prob({a, b}, 1.0 + a + 0.5 * b + z(rng), 0.2);
  }
  for (int i = 0; i < 80; ++i) {
    const double a = bernoulli(rng, 0.6) ? 1.0 : 0.0;
    const double b = 0.4 + z(rng);
    t.conv({a, b}, 1.0 + a + 0.5 * b + z(rng), 0.2);
  }
  BlendData in{t.build(), std::nullopt};
  if (with_frame) {
    ResponseFrame f;
    f.variables = {"a"};
    f.nonrespondents.resize(30, 1);
    for (int k = 0; k < 30; ++k) f.nonrespondents(k, 0) = k % 3 == 0 ? 1.0 : 0.0;
    in.frame = f;
  }
  return in;
}

BlendOptions options(Scheme s) {
  BlendOptions o;
  o.scheme = s;
  o.propensity_vars = {"a", "b"};
  o.calibration_vars = {"a", "b"};
  return o;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("estimand parsing") {
    const Estimand m = parse_estimand("depression");
    CHECK_FALSE(m.regression);
    CHECK(m.outcome == "depression");
    CHECK(m.parameter_names() == std::vector<std::string>{"depression"});

    const Estimand r = parse_estimand(" y ~ a +b ");
    CHECK(r.regression);
    CHECK(r.covariates == std::vector<std::string>{"a", "b"});
    CHECK(r.parameter_names() == std::vector<std::string>{std::string("y:") + kInterceptName, "y:a", "y:b"});
    CHECK(r.label() == "y ~ a + b");

    const Estimand one = parse_estimand("y ~ 1");
    CHECK(one.regression);
    CHECK(one.covariates.empty());

    CHECK(code_of([] { parse_estimand("y ~"); }) == ErrorCode::BadSpec);
    CHECK(code_of([] { parse_estimand(""); }) == ErrorCode::BadSpec);
  }

  TEST_CASE("design-only weights use S1 alone") {
    const BlendData in = toy_data(61);
    const BlendResult r = compute_weights(in, options(Scheme::DesignOnly));
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      CHECK(r.weights.weights(static_cast<Eigen::Index>(i)) == (in.data.is_conv(i) ? 0.0 : 5.0));
    }
    CHECK_FALSE(r.gamma.has_value());
  }

  TEST_CASE("every scheme yields positive totals and a usable mean") {
    const BlendData in = toy_data(62);
    for (Scheme s : {Scheme::SPS, Scheme::DPS, Scheme::SC, Scheme::DC}) {
      CAPTURE(scheme_name(s));
      const BlendResult r = compute_weights(in, options(s));
      CHECK(r.weights.size() == in.data.size());
      CHECK(r.weights.weights.minCoeff() >= 0.0);
      CHECK(r.weights.sum() > 0.0);
      CHECK(r.benchmarks.has_value() == (s == Scheme::SC || s == Scheme::DC));
      CHECK(r.weights.kappa.has_value() == is_disjoint(s));
    }
  }

  TEST_CASE("a nonrespondent frame lowers r_hat on S1") {
    const BlendData in = toy_data(63, true);
    const BlendResult r = compute_weights(in, options(Scheme::SPS));
    REQUIRE(r.response_model.has_value());
    CHECK(r.probs.r_hat.maxCoeff() < 1.0);
    CHECK(r.probs.r_hat.minCoeff() > 0.0);
    // 90 frame units, 60 responded.
    double mean_r = 0.0;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      if (in.data.is_conv(i)) continue;
      mean_r += r.probs.r_hat(static_cast<Eigen::Index>(i));
      ++n1;
    }
    CHECK(mean_r / n1 > 0.5);
  }

  TEST_CASE("an empty convenience sample is rejected") {
    support::Toy t;
    t.prob({1.0}, 1.0, 0.5).prob({2.0}, 2.0, 0.5);
    support::Toy both = t;
    both.conv({1.0}, 1.0);
    BlendData in{both.build(), std::nullopt};
    std::vector<bool> keep{true, true, false};
    const BlendData sub = in.subset(keep);
    BlendOptions o = options(Scheme::SPS);
    o.propensity_vars = {"x"};
    CHECK(code_of([&] { compute_weights(sub, o); }) == ErrorCode::EmptySample);
  }

  TEST_CASE("analysis with both variance methods") {
    const BlendData in = toy_data(64);
    const std::vector<Estimand> est{parse_estimand("y"), parse_estimand("y ~ a + b"),
                                    parse_estimand("y ~ 1")};
    AnalysisOptions lin;
    const Analysis a = analyze(in, options(Scheme::DPS), est, lin);
    REQUIRE(a.reports.size() == 5);
    CHECK(a.reports[0].se > 0.0);
    // The intercept-only regression reproduces the mean.
    CHECK(a.reports[4].estimate == doctest::Approx(a.reports[0].estimate).epsilon(1e-12));
    CHECK(a.reports[4].se == doctest::Approx(a.reports[0].se).epsilon(1e-10));
    CHECK_FALSE(a.groups.has_value());

    AnalysisOptions jk;
    jk.variance = VarianceMethod::Jackknife;
    jk.groups = 10;
    const Analysis b = analyze(in, options(Scheme::DPS), est, jk);
    REQUIRE(b.groups.has_value());
    CHECK(b.reports[0].estimate == a.reports[0].estimate);
    CHECK(b.reports[0].variance_method == VarianceMethod::Jackknife);
    CHECK(b.reports[0].se > 0.5 * a.reports[0].se);
    CHECK(b.reports[0].se < 2.0 * a.reports[0].se);

    jk.workers = 3;
    const Analysis c = analyze(in, options(Scheme::DPS), est, jk);
    for (std::size_t k = 0; k < b.reports.size(); ++k) CHECK(c.reports[k].se == b.reports[k].se);
  }

  TEST_CASE("post hoc analysis needs disjoint weights") {
    const BlendData in = toy_data(65);
    AnalysisOptions lin;
    CHECK(code_of([&] { analyze_posthoc(in, options(Scheme::SPS), "y", lin); }) ==
          ErrorCode::WrongScheme);
    const PosthocAnalysis p = analyze_posthoc(in, options(Scheme::DPS), "y", lin);
    CHECK(p.cov12 == 0.0);
    const double lo = std::min(p.s1.estimate, p.s2.estimate);
    const double hi = std::max(p.s1.estimate, p.s2.estimate);
    CHECK(p.blended.report.estimate >= lo - 1e-12);
    CHECK(p.blended.report.estimate <= hi + 1e-12);
  }

  TEST_CASE("calibrated balance table hits the benchmarks") {
    const BlendData in = toy_data(66);
    const BlendResult r = compute_weights(in, options(Scheme::SC));
    const auto rows = balance_table(in.data, r, {"a", "b"});
    REQUIRE(rows.size() == 2);
    for (const BalanceRow& row : rows) {
      CHECK(row.weighted_mean == doctest::Approx(row.benchmark_mean).epsilon(1e-8));
    }
  }
}
