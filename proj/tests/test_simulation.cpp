#include "blend/simulation.hpp"
#include "blend/csv.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace blend;
using namespace blend::sim;
using support::code_of;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

// R^2 of an OLS fit of y on the columns of X plus an intercept.
double r_squared(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Eigen::MatrixXd D(X.rows(), X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;
  const Eigen::VectorXd b = D.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd e = y - D * b;
  return 1.0 - e.squaredNorm() / (y.array() - y.mean()).square().sum();
}

// E[logistic(a + b Z)] for Z ~ N(0, s^2), midpoint rule on +/- 10 s.
double logistic_normal_mean(double a, double b, double s) {
  const int m = 20000;
  const double lo = -10.0 * s, h = 20.0 * s / m;
  double acc = 0.0;
  for (int k = 0; k < m; ++k) {
    const double z = lo + (k + 0.5) * h;
    const double dens = std::exp(-0.5 * z * z / (s * s)) / (s * std::sqrt(2.0 * M_PI));
    acc += dens * h / (1.0 + std::exp(-(a + b * z)));
  }
  return acc;
}

}  // namespace

TEST_SUITE("simulation") {
  TEST_CASE("pseudo population shape") {
    const Population pop = build_pseudo_population(1);
    CHECK(pop.size() == kPseudoPopulationSize);
    CHECK(pop.names.size() == pseudo_auxiliary_names().size() + 2);
    const Population again = build_pseudo_population(1);
    CHECK(pop.values == again.values);
    CHECK(build_pseudo_population(2).values != pop.values);

    const double r = corr(pop.column(kDepression), pop.column(kAnxiety));
    CHECK(r >= 0.55);
    CHECK(r <= 0.75);

    Eigen::MatrixXd X(pop.size(), 8);
    for (int j = 0; j < 8; ++j) X.col(j) = pop.column(pseudo_auxiliary_names()[j]);
    const double r2 = r_squared(X, pop.column(kDepression));
    CHECK(r2 > 0.09);
    CHECK(r2 < 0.19);

    for (const auto& name : pseudo_auxiliary_names()) {
      if (name == "age") continue;
      const Eigen::VectorXd c = pop.column(name);
      for (Eigen::Index i = 0; i < c.size(); ++i) CHECK((c(i) == 0.0 || c(i) == 1.0));
    }
  }

  TEST_CASE("probability sample response") {
    const Population pop = build_pseudo_population(3);
    // Constant response probability: respondents are a Bernoulli(d r) draw.
    ResponseModel flat{{}, std::log(0.5 / 0.5), {}, true};
    double total = 0.0;
    for (int k = 0; k < 50; ++k) {
      Rng rng = make_rng(3, k);
      const ProbabilitySample s = draw_probability_sample(pop, 0.16, flat, rng);
      total += static_cast<double>(s.respondents.size());
      CHECK(s.respondents.size() + s.nonrespondents.size() == s.selected.size());
      for (double p : s.response_prob) CHECK(p == doctest::Approx(0.5));
    }
    const double expected = 0.16 * 0.5 * pop.size();
    const double sd = std::sqrt(expected * (1 - 0.08) / 50.0);
    CHECK(std::abs(total / 50.0 - expected) < 4.0 * sd);

    // The default model averages to about 1/2 on the centred covariates.
    const ResponseModel m = pseudo_response_model();
    CHECK(m.variables == std::vector<std::string>{"female", "age"});
    CHECK(m.coefficients[0] == doctest::Approx(1.0 / 3.0));
    CHECK(m.coefficients[1] == doctest::Approx(-2.0 / 3.0));
  }

  TEST_CASE("settings") {
    const SimSetting s1 = pseudo_setting(1);
    CHECK(s1.intercept == doctest::Approx(-std::log(2.0)));
    CHECK(s1.auxiliary == pseudo_auxiliary_names());
    CHECK(pseudo_setting(2).auxiliary.back() == kAnxiety);
    CHECK(pseudo_setting(4, 0.9).selection_covariates.back().first == kDepression);
    CHECK(pseudo_setting(4, 0.9).selection_covariates.back().second == doctest::Approx(0.9));
    CHECK(code_of([] { pseudo_setting(6); }) == ErrorCode::BadSpec);

    // Intercept-only selection: rho = logistic(-log 2) = 1/3.
    const Population pop = build_pseudo_population(1);
    SimSetting flat = s1;
    flat.selection_covariates.clear();
    const Eigen::VectorXd rho = convenience_probabilities(pop, flat);
    CHECK(rho.minCoeff() == doctest::Approx(1.0 / 3.0));
    CHECK(rho.maxCoeff() == doctest::Approx(1.0 / 3.0));

    // Selection on depression raises the selected units' mean depression.
    const Eigen::VectorXd rho4 = convenience_probabilities(pop, pseudo_setting(4));
    const Eigen::VectorXd y = pop.column(kDepression);
    CHECK(rho4.dot(y) / rho4.sum() > y.mean());
  }

  TEST_CASE("drawn samples do not overlap") {
    const Population pop = build_pseudo_population(1);
    const SimSetting s = pseudo_setting(1);
    const BlendData in = draw_pseudo_sample(pop, s, 0);
    CHECK(in.data.n1() > 0);
    CHECK(in.data.n2() > 0);
    REQUIRE(in.frame.has_value());
    CHECK(in.frame->variables == std::vector<std::string>{"female", "age"});
    std::set<std::string> ids;
    for (std::size_t i = 0; i < in.data.size(); ++i) ids.insert(in.data.id(i));
    CHECK(ids.size() == in.data.size());

    const BlendData again = draw_pseudo_sample(pop, s, 0);
    CHECK(again.data.aux() == in.data.aux());
    CHECK(draw_pseudo_sample(pop, s, 1).data.size() != in.data.size());
  }

  TEST_CASE("pseudo study smoke and determinism") {
    SimSetting s = pseudo_setting(4);
    s.K = 3;
    s.seed = 5;
    PseudoStudyOptions o;
    o.jackknife_groups = 10;
    const SimMetrics a = run_pseudo_study(s, o);
    const SimMetrics b = run_pseudo_study(s, o);
    CHECK(a.K == 3);
    CHECK(a.schemes.size() == std::size(kAllEstimators));
    for (const auto& [e, m] : a.schemes) {
      CAPTURE(estimator_name(e));
      CHECK(m.completed + m.failed == 3);
      if (m.completed > 0) {
        CHECK(m.rmse >= std::abs(m.bias) - 1e-9);
      }
      CHECK(m.bias == b.schemes.at(e).bias);
    }

    auto dir = support::temp_dir("sim_pseudo");
    write_pseudo_metrics((dir / "m.csv").string(), {a});
    const csv::Table t = csv::read((dir / "m.csv").string());
    CHECK(t.header.size() == 5 + std::size(kAllEstimators));
    CHECK(t.header[5] == "KP");
  }

  TEST_CASE("synthetic coefficients") {
    const auto [beta, s2] = synthetic_coefficients(0.5);
    CHECK(beta == doctest::Approx(0.5));
    CHECK(s2 == doctest::Approx(0.5));
    CHECK(synthetic_coefficients(0.0).first == 0.0);
    CHECK(code_of([] { synthetic_coefficients(1.0); }) == ErrorCode::BadSpec);
    CHECK(code_of([] { synthetic_coefficients(-0.1); }) == ErrorCode::BadSpec);

    // Var(Y) = 2 beta^2 + sigma^2 = 1 and X1 + X2 explains R^2.
    Rng rng = make_rng(7, 0);
    const Population pop = build_synthetic_population(0.75, 200000, rng);
    const Eigen::VectorXd y = pop.column("y");
    const double var = (y.array() - y.mean()).square().sum() / (y.size() - 1.0);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
    Eigen::MatrixXd X(pop.size(), 3);
    X << pop.column("x1"), pop.column("x2"), pop.column("x3");
    CHECK(r_squared(X, y) == doctest::Approx(0.75).epsilon(0.01));
  }

  TEST_CASE("synthetic study small run") {
    SyntheticOptions o;
    o.jackknife_groups = 10;
    const auto m = run_synthetic_study({0.0, 0.5}, 20, 3, o);
    REQUIRE(m.size() == 2);
    const double oracle = logistic_normal_mean(o.conv_intercept, o.conv_slope, std::sqrt(2.0));
    CHECK(std::abs(m[0].mean_conv_rate - oracle) < 0.002);
    CHECK(m[0].mean_n1 == doctest::Approx(200.0 * 0.5).epsilon(0.3));
    for (const auto& row : m) {
      CHECK(row.methods.size() == 3);
      for (const auto& [method, c] : row.methods) {
        CAPTURE(se_method_name(method));
        CHECK(c.completed + c.failed == 20);
        CHECK(c.coverage >= 0.0);
        CHECK(c.coverage <= 1.0);
      }
    }
    CHECK(run_synthetic_study({0.5}, 5, 3, o)[0].methods.at(SeMethod::Jackknife).mean_se ==
          run_synthetic_study({0.5}, 5, 3, o)[0].methods.at(SeMethod::Jackknife).mean_se);

    auto dir = support::temp_dir("sim_synth");
    write_synthetic_metrics((dir / "s.csv").string(), m);
    const csv::Table t = csv::read((dir / "s.csv").string());
    CHECK(t.rows.size() == 2);
  }

  TEST_CASE("adequacy study small run") {
    AdequacyStudyOptions o;
    const AdequacyStudyResult null = run_adequacy_study(100, 11, o);
    CHECK(null.completed + null.failed == 100);
    CHECK(null.rejection_rate < 0.15);
    o.shift = 1.0;
    const AdequacyStudyResult alt = run_adequacy_study(100, 11, o);
    CHECK(alt.rejection_rate > 0.8);
  }
}
