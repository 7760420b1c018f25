#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "glfm/model.hpp"
#include "glfm/normalize.hpp"

using namespace glfm;

namespace {

Dataset shell(int N, int J, int T, int p, int pz = 0) {
  Dataset data;
  data.n_persons = N;
  data.n_items = J;
  data.n_times = T;
  data.responses = Eigen::MatrixXd::Zero(N, static_cast<long>(J) * T);
  data.observed = Eigen::MatrixXd::Ones(N, T);
  data.covariates = Eigen::MatrixXd::Zero(N, p);
  if (pz > 0)
    data.time_covariates.assign(static_cast<std::size_t>(T), Eigen::MatrixXd::Zero(N, pz));
  data.families.assign(static_cast<std::size_t>(J), Family::Bernoulli);
  return data;
}

void fill_random(const ModelSpec& spec, Dataset& data, ParameterSet& params, Rng& rng) {
  for (int i = 0; i < data.n_persons; ++i)
    for (int l = 0; l < data.covariates.cols(); ++l) data.covariates(i, l) = rng.normal();
  for (auto& z : data.time_covariates)
    for (int i = 0; i < z.rows(); ++i)
      for (int l = 0; l < z.cols(); ++l) z(i, l) = rng.normal();
  params = zero_params(spec, data);
  for (int i = 0; i < params.theta.rows(); ++i)
    for (int k = 0; k < params.theta.cols(); ++k) params.theta(i, k) = rng.normal();
  for (int j = 0; j < params.item_params.rows(); ++j)
    for (int c = 0; c < params.item_params.cols(); ++c) params.item_params(j, c) = rng.normal();
}

double max_eta_drift(const ModelSpec& spec, const Dataset& data, const ParameterSet& before,
                     const ParameterSet& after) {
  double worst = 0.0;
  for (int t = 0; t < data.n_times; ++t) {
    const Eigen::MatrixXd a = predict_natural_params(spec, data, before, t);
    const Eigen::MatrixXd b = predict_natural_params(spec, data, after, t);
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < a.cols(); ++j)
        worst = std::max(worst,
                         std::abs(a(i, j) - b(i, j)) / (1.0 + std::abs(a(i, j))));
  }
  return worst;
}

struct VariantDef {
  const char* name;
  bool tvl, tvc, lin, z;
};
constexpr VariantDef kVariants[] = {{"base", false, false, false, false},
                                    {"timecov", false, false, false, true},
                                    {"tvload", true, true, false, false},
                                    {"lineargamma", false, false, true, false},
                                    {"tvload+lineargamma", true, true, true, false}};

ModelSpec make_spec(const VariantDef& v, int K) {
  ModelSpec spec;
  spec.n_factors = K;
  spec.time_varying_loadings = v.tvl;
  spec.time_varying_coefficients = v.tvc;
  spec.linear_intercept = v.lin;
  spec.use_time_covariates = v.z;
  return spec;
}

}  // namespace

TEST_CASE("beta-only normalization") {
  SECTION("hand-computed two-person example") {
    Dataset data = shell(2, 1, 1, 1);
    data.covariates << 1.0, 1.0;
    ModelSpec spec;
    spec.n_factors = 1;
    ParameterSet params = zero_params(spec, data);
    params.theta << 1.0, 3.0;
    params.item_params(0, 2) = 2.0;  // loading
    params.item_params(0, 1) = 0.5;  // beta
    const ParameterSet before = params;
    const ParameterSet after = normalize_beta_only(spec, data, params);
    Eigen::VectorXd expect_theta(2);
    expect_theta << -1.0, 1.0;
    REQUIRE(after.theta.col(0).isApprox(expect_theta, 1e-12));
    REQUIRE_THAT(after.item_params(0, 1), Catch::Matchers::WithinAbs(4.5, 1e-12));
    REQUIRE(max_eta_drift(spec, data, before, after) < 1e-12);
    REQUIRE(std::abs((after.theta.transpose() * data.covariates)(0, 0)) < 1e-10 * 2);
  }

  SECTION("projection fixed point when theta is already orthogonal to X") {
    Dataset data = shell(4, 2, 1, 1);
    data.covariates << 1.0, 1.0, 1.0, 1.0;
    ModelSpec spec;
    spec.n_factors = 1;
    ParameterSet params = zero_params(spec, data);
    params.theta << 1.0, -1.0, 2.0, -2.0;  // orthogonal to the constant covariate
    params.item_params.col(2).setConstant(0.7);
    const ParameterSet after = normalize_beta_only(spec, data, params);
    REQUIRE(after.theta == params.theta);
    REQUIRE(after.item_params == params.item_params);
  }

  SECTION("p = 0 is the identity") {
    Dataset data = shell(3, 2, 1, 0);
    ModelSpec spec;
    spec.n_factors = 1;
    ParameterSet params = zero_params(spec, data);
    params.theta << 1.0, 2.0, 3.0;
    const ParameterSet after = normalize_beta_only(spec, data, params);
    REQUIRE(after.theta == params.theta);
  }

  SECTION("rank-deficient X names the dependent column") {
    Dataset data = shell(3, 1, 1, 2);
    data.covariates << 1.0, 2.0, 1.0, 2.0, 1.0, 2.0;  // second column = 2x first
    ModelSpec spec;
    spec.n_factors = 1;
    ParameterSet params = zero_params(spec, data);
    params.theta << 0.5, -0.5, 1.0;
    REQUIRE_THROWS_WITH(normalize_beta_only(spec, data, params),
                        Catch::Matchers::ContainsSubstring("rank deficient"));
  }
}

TEST_CASE("full normalization") {
  SECTION("hand-traced K=1, J=1, N=2 example without covariates") {
    Dataset data = shell(2, 1, 1, 0);
    ModelSpec spec;
    spec.n_factors = 1;
    ParameterSet params = zero_params(spec, data);
    params.theta << 1.0, 3.0;
    params.item_params(0, 0) = 0.4;  // gamma
    params.item_params(0, 1) = 2.0;  // loading
    const ParameterSet before = params;
    const NormalizeResult out = normalize_full(spec, data, params);
    Eigen::VectorXd expect_theta(2);
    expect_theta << -2.0, 2.0;
    REQUIRE(out.params.theta.col(0).isApprox(expect_theta, 1e-10));
    REQUIRE_THAT(out.params.item_params(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-10));
    REQUIRE_THAT(out.params.item_params(0, 0), Catch::Matchers::WithinAbs(4.4, 1e-10));
    REQUIRE(max_eta_drift(spec, data, before, out.params) < 1e-10);
  }

  SECTION("criteria hold and eta is preserved on random sets, all variants") {
    Rng rng(19);
    for (const auto& v : kVariants) {
      DYNAMIC_SECTION("variant " << v.name) {
        for (int trial = 0; trial < 20; ++trial) {
          const int N = 12, J = 6, T = 3, p = 2, K = 2;
          Dataset data = shell(N, J, T, p, v.z ? 2 : 0);
          ModelSpec spec = make_spec(v, K);
          ParameterSet params;
          fill_random(spec, data, params, rng);
          const ParameterSet before = params;
          const NormalizeResult out = normalize_full(spec, data, params);

          REQUIRE(max_eta_drift(spec, data, before, out.params) < 1e-8);

          const ParamLayout lay = ParamLayout::make(spec, data);
          const Eigen::MatrixXd A1 = out.params.item_params.middleCols(lay.a_block(0), K);
          const Eigen::MatrixXd gram = A1.transpose() * A1 / double(J);
          REQUIRE((gram - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff() < 1e-8);

          const Eigen::MatrixXd tcross = out.params.theta.transpose() * out.params.theta / N;
          for (int a = 0; a < K; ++a)
            for (int b = 0; b < K; ++b)
              if (a != b) REQUIRE(std::abs(tcross(a, b)) < 1e-8);
          for (int k = 0; k + 1 < K; ++k) REQUIRE(tcross(k, k) >= tcross(k + 1, k + 1) - 1e-10);

          const Eigen::MatrixXd xt = out.params.theta.transpose() * data.covariates;
          REQUIRE(xt.cwiseAbs().maxCoeff() < 1e-8 * N);
          if (!v.lin) {
            const Eigen::VectorXd ones_t =
                out.params.theta.transpose() * Eigen::VectorXd::Ones(N);
            REQUIRE(ones_t.cwiseAbs().maxCoeff() < 1e-8 * N);
          }
        }
      }
    }
  }

  SECTION("idempotent up to column sign flips") {
    Rng rng(77);
    Dataset data = shell(15, 8, 2, 2);
    ModelSpec spec;
    spec.n_factors = 3;
    ParameterSet params;
    fill_random(spec, data, params, rng);
    const NormalizeResult once = normalize_full(spec, data, params);
    const NormalizeResult twice = normalize_full(spec, data, once.params);
    for (int k = 0; k < 3; ++k) {
      const double plus = (twice.params.theta.col(k) - once.params.theta.col(k)).norm();
      const double minus = (twice.params.theta.col(k) + once.params.theta.col(k)).norm();
      REQUIRE(std::min(plus, minus) < 1e-8 * (1.0 + once.params.theta.col(k).norm()));
    }
  }

  SECTION("returned rotation reproduces the loading transform") {
    Rng rng(5);
    Dataset data = shell(10, 5, 2, 1);
    ModelSpec spec;
    spec.n_factors = 2;
    ParameterSet params;
    fill_random(spec, data, params, rng);
    const ParamLayout lay = ParamLayout::make(spec, data);
    const Eigen::MatrixXd A_before = params.item_params.middleCols(lay.a_off, 2);
    const NormalizeResult out = normalize_full(spec, data, params);
    const Eigen::MatrixXd A_after = out.params.item_params.middleCols(lay.a_off, 2);
    REQUIRE((A_before * out.rotation.transpose() - A_after).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("sign convention: largest loading in each column is positive") {
    Rng rng(6);
    Dataset data = shell(14, 7, 2, 1);
    ModelSpec spec;
    spec.n_factors = 2;
    ParameterSet params;
    fill_random(spec, data, params, rng);
    const NormalizeResult out = normalize_full(spec, data, params);
    const ParamLayout lay = ParamLayout::make(spec, data);
    const Eigen::MatrixXd A = out.params.item_params.middleCols(lay.a_off, 2);
    for (int k = 0; k < 2; ++k) {
      int arg = 0;
      A.col(k).cwiseAbs().maxCoeff(&arg);
      REQUIRE(A(arg, k) > 0.0);
    }
  }

  SECTION("K = 0 passes through") {
    Dataset data = shell(4, 2, 2, 1);
    ModelSpec spec;
    ParameterSet params = zero_params(spec, data);
    params.item_params.setRandom();
    const NormalizeResult out = normalize_full(spec, data, params);
    REQUIRE(out.params.item_params == params.item_params);
    REQUIRE(out.rotation.size() == 0);
  }

  SECTION("near-equal factor scales raise the eigengap warning") {
    Dataset data = shell(8, 4, 1, 0);
    ModelSpec spec;
    spec.n_factors = 2;
    ParameterSet params = zero_params(spec, data);
    // theta columns with identical scale, orthogonal loading columns of
    // identical norm: the rotated scales collide
    params.theta << 1, 1, -1, 1, 1, -1, -1, -1, 1, 1, -1, 1, 1, -1, -1, -1;
    params.item_params(0, 1) = 1.0;
    params.item_params(1, 2) = 1.0;
    params.item_params(2, 1) = -1.0;
    params.item_params(3, 2) = -1.0;
    const NormalizeResult out = normalize_full(spec, data, params);
    REQUIRE(out.eigengap_warning);
  }

  SECTION("static coefficients with time-varying loadings and p > 0 are rejected") {
    Dataset data = shell(6, 3, 2, 1);
    ModelSpec spec;
    spec.n_factors = 1;
    spec.time_varying_loadings = true;
    ParameterSet params = zero_params(spec, data);
    REQUIRE_THROWS_AS(normalize_full(spec, data, params), ConfigError);
  }
}
