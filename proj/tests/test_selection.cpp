#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "glfm/selection.hpp"
#include "glfm/simulate.hpp"

using namespace glfm;

TEST_CASE("penalty term") {
  SECTION("fully observed reference value") {
    SimConfig cfg;
    cfg.J = 100;
    cfg.N = 500;
    cfg.T = 4;
    cfg.K_star = 1;
    SimTruth truth = generate(cfg, 0);
    truth.dataset.observed.setOnes();
    REQUIRE_THAT(penalty_lambda(truth.spec, truth.dataset),
                 Catch::Matchers::WithinRel(500.0 * std::log(400.0), 1e-12));
    REQUIRE_THAT(penalty_lambda(truth.spec, truth.dataset),
                 Catch::Matchers::WithinAbs(2995.73, 0.01));
  }

  SECTION("N = J with everything observed simplifies to N log(TN)") {
    SimConfig cfg;
    cfg.J = 20;
    cfg.N = 20;
    cfg.T = 3;
    cfg.K_star = 1;
    SimTruth truth = generate(cfg, 0);
    truth.dataset.observed.setOnes();
    REQUIRE_THAT(penalty_lambda(truth.spec, truth.dataset),
                 Catch::Matchers::WithinRel(20.0 * std::log(3.0 * 20.0), 1e-12));
  }

  SECTION("time-varying loadings switch the leading factor to max(N, TJ)") {
    SimConfig cfg;
    cfg.J = 50;
    cfg.N = 100;
    cfg.T = 4;
    cfg.K_star = 1;
    cfg.variant.time_varying_loadings = true;
    cfg.variant.time_varying_coefficients = true;
    SimTruth truth = generate(cfg, 0);
    truth.dataset.observed.setOnes();
    const double waves = 100.0 * 4.0;
    REQUIRE_THAT(penalty_lambda(truth.spec, truth.dataset),
                 Catch::Matchers::WithinRel(200.0 * std::log(50.0 * waves / 200.0), 1e-12));
  }
}

TEST_CASE("argmin over the criterion breaks ties toward the smaller K") {
  REQUIRE(argmin_ic({{1, 5.0}, {2, 3.0}, {3, 4.0}}) == 2);
  REQUIRE(argmin_ic({{1, 3.0}, {2, 3.0}, {3, 4.0}}) == 1);
  REQUIRE(argmin_ic({{4, 7.0}}) == 4);
}

TEST_CASE("select_k") {
  SimConfig cfg;
  cfg.J = 40;
  cfg.N = 200;
  cfg.T = 4;
  cfg.K_star = 2;
  cfg.seed = 31;
  const SimTruth truth = generate(cfg, 0);

  SECTION("recovers the true dimension on simulated data") {
    SelectionOptions opts;
    opts.threads = 2;
    const SelectionResult sel = select_k(truth.spec, truth.dataset, {1, 2, 3, 4}, opts);
    REQUIRE(sel.k_hat == 2);
    REQUIRE(sel.ic_values.size() == 4);
    REQUIRE(sel.warnings.empty());

    // stored criterion matches a recomputation from the stored parameters
    const double lambda = penalty_lambda(truth.spec, truth.dataset);
    for (const auto& [K, ic] : sel.ic_values) {
      ModelSpec spec = truth.spec;
      spec.n_factors = K;
      const double recomputed =
          -2.0 * joint_loglik(spec, truth.dataset, sel.fits.at(K).params) + K * lambda;
      REQUIRE_THAT(ic, Catch::Matchers::WithinRel(recomputed, 1e-9));
    }
  }

  SECTION("singleton candidate set returns that K") {
    SelectionOptions opts;
    const SelectionResult sel = select_k(truth.spec, truth.dataset, {4}, opts);
    REQUIRE(sel.k_hat == 4);
    REQUIRE(sel.ic_values.size() == 1);
  }

  SECTION("duplicates are collapsed and order is irrelevant") {
    SelectionOptions opts;
    const SelectionResult sel = select_k(truth.spec, truth.dataset, {3, 1, 3, 1}, opts);
    REQUIRE(sel.ic_values.size() == 2);
  }

  SECTION("empty candidate set is rejected") {
    REQUIRE_THROWS_AS(select_k(truth.spec, truth.dataset, {}, {}), ConfigError);
  }

  SECTION("thread count does not change the result") {
    SelectionOptions seq, par;
    seq.threads = 1;
    par.threads = 2;
    const SelectionResult a = select_k(truth.spec, truth.dataset, {1, 2}, seq);
    const SelectionResult b = select_k(truth.spec, truth.dataset, {1, 2}, par);
    REQUIRE(a.k_hat == b.k_hat);
    REQUIRE(a.ic_values.at(1) == b.ic_values.at(1));
    REQUIRE(a.ic_values.at(2) == b.ic_values.at(2));
    REQUIRE(a.fits.at(2).params.theta == b.fits.at(2).params.theta);
  }
}
