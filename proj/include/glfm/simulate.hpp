#pragma once

#include <Eigen/Dense>
#include <array>
#include <chrono>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "glfm/inference.hpp"
#include "glfm/model.hpp"
#include "glfm/normalize.hpp"
#include "glfm/selection.hpp"

namespace glfm {

struct SimConfig {
  int J = 100;
  int N = 500;
  int T = 4;
  int K_star = 3;
  int n_reps = 1;
  std::uint64_t seed = 0;
  ModelSpec variant;  // flags and radii; n_factors is replaced by K_star

  void validate() const {
    if (J <= 0 || N <= 0 || T <= 0 || n_reps <= 0) throw ConfigError("sizes must be positive");
    if (K_star < 0 || K_star > std::min(N, J)) throw ConfigError("K_star must lie in [0, min(N,J)]");
    if (variant.use_time_covariates)
      throw ConfigError("the simulation design has no time-dependent covariates");
  }
};

struct SimTruth {
  ModelSpec spec;  // variant with n_factors = K_star
  Dataset dataset;
  ParameterSet params_true;  // normalized, then sparsified
};

// One synthetic replication: intercepts U[-1,1] (U[-0.25,0.25] per unit time
// under the linear-intercept restriction), coefficients U[0.5,1], factors and
// loadings truncated standard normal on [-3,3], two Bin(2,0.5) dummy pairs
// plus a U[-1,1] covariate. Parameters are normalized for identifiability,
// then half of each coefficient group is zeroed, wave patterns are drawn
// uniformly from the nonzero binary vectors, and responses follow the
// logistic model at observed waves.
inline SimTruth generate(const SimConfig& config, int rep) {
  config.validate();
  SimTruth truth;
  truth.spec = config.variant;
  truth.spec.n_factors = config.K_star;

  const int N = config.N, J = config.J, T = config.T, K = config.K_star;
  const int p = 5;
  Dataset& data = truth.dataset;
  data.n_persons = N;
  data.n_items = J;
  data.n_times = T;
  data.responses = Eigen::MatrixXd::Zero(N, static_cast<long>(J) * T);
  data.observed = Eigen::MatrixXd::Ones(N, T);
  data.covariates = Eigen::MatrixXd::Zero(N, p);
  data.families.assign(static_cast<std::size_t>(J), Family::Bernoulli);

  const ParamLayout lay = ParamLayout::make(truth.spec, data);
  ParameterSet params = zero_params(truth.spec, data);
  Rng rng(detail::derive_seed(config.seed, static_cast<std::uint64_t>(rep)));

  for (int j = 0; j < J; ++j)
    for (int c = 0; c < lay.gamma_len; ++c)
      params.item_params(j, lay.gamma_off + c) =
          lay.lin_gamma ? rng.uniform(-0.25, 0.25) : rng.uniform(-1.0, 1.0);
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < lay.beta_len; ++c)
      params.item_params(j, lay.beta_off + c) = rng.uniform(0.5, 1.0);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k) params.theta(i, k) = rng.truncated_normal(-3.0, 3.0);
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < lay.a_len; ++c)
      params.item_params(j, lay.a_off + c) = rng.truncated_normal(-3.0, 3.0);

  for (int i = 0; i < N; ++i) {
    const int ca = (rng.bernoulli(0.5) ? 1 : 0) + (rng.bernoulli(0.5) ? 1 : 0);
    const int cb = (rng.bernoulli(0.5) ? 1 : 0) + (rng.bernoulli(0.5) ? 1 : 0);
    data.covariates(i, 0) = ca == 1 ? 1.0 : 0.0;
    data.covariates(i, 1) = ca == 2 ? 1.0 : 0.0;
    data.covariates(i, 2) = cb == 1 ? 1.0 : 0.0;
    data.covariates(i, 3) = cb == 2 ? 1.0 : 0.0;
    data.covariates(i, 4) = rng.uniform(-1.0, 1.0);
  }

  params = normalize_full(truth.spec, lay, std::move(params), data.covariates).params;

  // zero half of each coefficient group, groups drawn independently
  const int n_zero = (J + 1) / 2;
  const std::array<std::vector<int>, 3> groups = {
      std::vector<int>{0, 1}, std::vector<int>{2, 3}, std::vector<int>{4}};
  for (const auto& group : groups) {
    const std::vector<int> perm = rng.permutation(J);
    for (int s = 0; s < n_zero; ++s) {
      const int j = perm[static_cast<std::size_t>(s)];
      for (const int l : group)
        for (int t = 0; t < (lay.tvc ? T : 1); ++t)
          params.item_params(j, lay.beta_off + (lay.tvc ? t * p : 0) + l) = 0.0;
    }
  }

  // wave patterns uniform over the nonzero binary vectors
  const std::uint64_t n_patterns = (1ull << T) - 1ull;
  for (int i = 0; i < N; ++i) {
    const std::uint64_t pattern = 1ull + rng.next_u64() % n_patterns;
    for (int t = 0; t < T; ++t) data.observed(i, t) = (pattern >> t) & 1ull ? 1.0 : 0.0;
  }

  detail::DesignCache cache;
  cache.build(truth.spec, data, params.theta);
  Eigen::MatrixXd eta;
  for (int t = 0; t < T; ++t) {
    cache.eta_all(params.item_params, t, eta);
    for (int i = 0; i < N; ++i) {
      if (!data.obs(i, t)) continue;
      for (int j = 0; j < J; ++j)
        data.y_ref(i, j, t) = rng.bernoulli(sigmoid(eta(i, j))) ? 1.0 : 0.0;
    }
  }

  truth.params_true = std::move(params);
  return truth;
}

// The three hypothesis families of the simulation design: both dummies of
// each pair jointly zero, and the continuous coefficient zero. Under
// time-varying coefficients the indices repeat across the per-time blocks.
inline std::vector<Hypothesis> sim_hypotheses(const ParamLayout& lay) {
  std::vector<Hypothesis> hyps = {{"x1x2", {0, 1}}, {"x3x4", {2, 3}}, {"x5", {4}}};
  if (lay.tvc) {
    for (auto& hyp : hyps) {
      std::vector<int> expanded;
      for (int t = 0; t < lay.T; ++t)
        for (const int l : hyp.beta_indices) expanded.push_back(t * lay.p + l);
      hyp.beta_indices = std::move(expanded);
    }
  }
  return hyps;
}

// Per-replication evaluation against the generating truth.
struct MetricReport {
  double loss = 0.0, bloss = 0.0, aloss = 0.0, tloss = 0.0;
  bool k_correct = false;
  std::array<double, 3> fdr{{0.0, 0.0, 0.0}};
  std::array<double, 3> fnr{{0.0, 0.0, 0.0}};
  long cover_hits = 0, cover_total = 0;
  long acover_hits = 0, acover_total = 0;
  long tcover_hits = 0, tcover_total = 0;
  Eigen::MatrixXd beta_sqerr;   // J x beta_len
  Eigen::MatrixXd a_sqerr;      // J x a_len, sign-corrected
  Eigen::MatrixXd theta_sqerr;  // N x K, sign-corrected
  double bloss_baseline = std::numeric_limits<double>::quiet_NaN();
};

// fitted must be normalized (same criteria as the truth) and estimated at
// K = K_star so the parameter matrices are comparable.
inline MetricReport compute_metrics(const SimTruth& truth, const ParameterSet& fitted,
                                    const InferenceReport& inference, int k_hat,
                                    bool latent_coverage = false) {
  const ModelSpec& spec = truth.spec;
  const Dataset& data = truth.dataset;
  const ParamLayout lay = ParamLayout::make(spec, data);
  fitted.validate(spec, data);
  const int N = data.n_persons, J = data.n_items, K = lay.K;

  MetricReport m;
  m.k_correct = k_hat == spec.n_factors;

  // Frobenius loss of the natural-parameter surface, worst time point
  double worst = 0.0;
  for (int t = 0; t < data.n_times; ++t) {
    const Eigen::MatrixXd diff = predict_natural_params(spec, data, fitted, t) -
                                 predict_natural_params(spec, data, truth.params_true, t);
    worst = std::max(worst, diff.norm());
  }
  m.loss = worst / std::sqrt(static_cast<double>(N) * J);

  const Eigen::MatrixXd bhat = fitted.item_params.middleCols(lay.beta_off, lay.beta_len);
  const Eigen::MatrixXd btrue =
      truth.params_true.item_params.middleCols(lay.beta_off, lay.beta_len);
  if (lay.tvc) {
    double worst_b = 0.0;
    for (int t = 0; t < lay.T; ++t)
      worst_b = std::max(worst_b,
                         (bhat.middleCols(t * lay.p, lay.p) - btrue.middleCols(t * lay.p, lay.p))
                             .norm());
    m.bloss = worst_b / std::sqrt(static_cast<double>(J));
  } else {
    m.bloss = (bhat - btrue).norm() / std::sqrt(static_cast<double>(J));
  }
  m.beta_sqerr = (bhat - btrue).array().square();

  // sign indeterminacy correction from the first loading block
  Eigen::VectorXd signA = Eigen::VectorXd::Ones(std::max(K, 1));
  if (K > 0) {
    const Eigen::MatrixXd ahat1 = fitted.item_params.middleCols(lay.a_block(0), K);
    const Eigen::MatrixXd atrue1 = truth.params_true.item_params.middleCols(lay.a_block(0), K);
    const Eigen::MatrixXd cross = ahat1.transpose() * atrue1 / static_cast<double>(J);
    for (int k = 0; k < K; ++k) signA(k) = cross(k, k) < 0.0 ? -1.0 : 1.0;

    Eigen::MatrixXd ahat = fitted.item_params.middleCols(lay.a_off, lay.a_len);
    Eigen::MatrixXd atrue = truth.params_true.item_params.middleCols(lay.a_off, lay.a_len);
    const int n_blocks = lay.tvl ? lay.T : 1;
    for (int b = 0; b < n_blocks; ++b)
      for (int k = 0; k < K; ++k) atrue.col(b * K + k) *= signA(k);
    m.aloss = (ahat - atrue).norm() / std::sqrt(static_cast<double>(J));
    m.a_sqerr = (ahat - atrue).array().square();

    Eigen::MatrixXd ttrue = truth.params_true.theta;
    for (int k = 0; k < K; ++k) ttrue.col(k) *= signA(k);
    m.tloss = (fitted.theta - ttrue).norm() / std::sqrt(static_cast<double>(N));
    m.theta_sqerr = (fitted.theta - ttrue).array().square();
  } else {
    m.a_sqerr.resize(J, 0);
    m.theta_sqerr.resize(N, 0);
  }

  // coverage of the 95% intervals for the regression coefficients
  if (static_cast<int>(inference.per_item.size()) == J) {
    for (int j = 0; j < J; ++j) {
      const auto& item = inference.per_item[static_cast<std::size_t>(j)];
      for (int c = 0; c < lay.beta_len; ++c) {
        const double half = 1.96 * item.beta_se(c);
        m.cover_total += 1;
        if (std::abs(bhat(j, c) - btrue(j, c)) <= half) m.cover_hits += 1;
      }
    }

    // BY rejections at level 0.05 versus the generating zero pattern
    const std::vector<Hypothesis> hyps = sim_hypotheses(lay);
    for (std::size_t f = 0; f < hyps.size(); ++f) {
      long rejections = 0, false_rejections = 0, missed_alts = 0, kept = 0;
      for (int j = 0; j < J; ++j) {
        bool is_null = true;
        for (const int c : hyps[f].beta_indices) is_null = is_null && btrue(j, c) == 0.0;
        const bool reject =
            inference.per_item[static_cast<std::size_t>(j)].adj_p_values.at(hyps[f].name) <=
            0.05;
        if (reject) {
          ++rejections;
          if (is_null) ++false_rejections;
        } else {
          ++kept;
          if (!is_null) ++missed_alts;
        }
      }
      m.fdr[f] = rejections > 0 ? static_cast<double>(false_rejections) / rejections : 0.0;
      m.fnr[f] = kept > 0 ? static_cast<double>(missed_alts) / kept : 0.0;
    }
  }

  // optional coverage for loadings and factor scores
  if (latent_coverage && K > 0) {
    Eigen::MatrixXd atrue_s = truth.params_true.item_params.middleCols(lay.a_off, lay.a_len);
    const int n_blocks = lay.tvl ? lay.T : 1;
    for (int b = 0; b < n_blocks; ++b)
      for (int k = 0; k < K; ++k) atrue_s.col(b * K + k) *= signA(k);
    for (int j = 0; j < J; ++j) {
      const Eigen::MatrixXd phi = phi_hat(spec, data, fitted, j);
      const Eigen::MatrixXd cov = (-phi).ldlt().solve(
          Eigen::MatrixXd::Identity(lay.P, lay.P));
      for (int c = 0; c < lay.a_len; ++c) {
        const double se = std::sqrt(std::max(cov(lay.a_off + c, lay.a_off + c), 0.0) /
                                    static_cast<double>(N));
        m.acover_total += 1;
        if (std::abs(fitted.item_params(j, lay.a_off + c) - atrue_s(j, c)) <= 1.96 * se)
          m.acover_hits += 1;
      }
    }
    Eigen::MatrixXd ttrue_s = truth.params_true.theta;
    for (int k = 0; k < K; ++k) ttrue_s.col(k) *= signA(k);
    for (int i = 0; i < N; ++i) {
      const Eigen::MatrixXd psi = psi_hat(spec, data, fitted, i);
      const Eigen::MatrixXd cov =
          (-psi).ldlt().solve(Eigen::MatrixXd::Identity(K, K));
      for (int k = 0; k < K; ++k) {
        const double se = std::sqrt(std::max(cov(k, k), 0.0) / static_cast<double>(J));
        m.tcover_total += 1;
        if (std::abs(fitted.theta(i, k) - ttrue_s(i, k)) <= 1.96 * se) m.tcover_hits += 1;
      }
    }
  }
  return m;
}

struct StudyOptions {
  std::vector<int> candidates;  // empty: no selection, every rep fits at K_star
  FitOptions fit;
  InitOptions init;
  bool use_svd_init = true;
  bool baseline_lr = false;     // also fit K = 0 and record its Bloss
  bool latent_coverage = false;
  int threads = 1;
  bool verbose = false;
};

struct RepRow {
  int rep = 0;
  bool failed = false;
  std::string error;
  int k_hat = -1;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int sweeps = 0;
  bool converged = false;
  MetricReport metrics;
};

struct StudyReport {
  SimConfig config;
  std::vector<RepRow> rows;
  int n_failed = 0;
  // aggregates over successful replications
  double p_correct_k = 0.0;
  double mean_loss = 0.0, mean_bloss = 0.0, mean_aloss = 0.0, mean_tloss = 0.0;
  double ecp = 0.0, mmfdr = 0.0, mmfnr = 0.0;
  double mmse = 0.0, mamse = 0.0, mtmse = 0.0;
  double aecp = 0.0, tecp = 0.0;
  double mean_bloss_baseline = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void aggregate_study(StudyReport& report) {
  int done = 0;
  long k_ok = 0;
  double loss = 0, bloss = 0, aloss = 0, tloss = 0, bl0 = 0;
  int bl0_count = 0;
  long cov_h = 0, cov_t = 0, acov_h = 0, acov_t = 0, tcov_h = 0, tcov_t = 0;
  std::array<double, 3> fdr{{0, 0, 0}}, fnr{{0, 0, 0}};
  Eigen::MatrixXd beta_mse, a_mse, theta_mse;
  for (const auto& row : report.rows) {
    if (row.failed) continue;
    const MetricReport& m = row.metrics;
    ++done;
    k_ok += m.k_correct ? 1 : 0;
    loss += m.loss;
    bloss += m.bloss;
    aloss += m.aloss;
    tloss += m.tloss;
    for (int f = 0; f < 3; ++f) {
      fdr[static_cast<std::size_t>(f)] += m.fdr[static_cast<std::size_t>(f)];
      fnr[static_cast<std::size_t>(f)] += m.fnr[static_cast<std::size_t>(f)];
    }
    cov_h += m.cover_hits;
    cov_t += m.cover_total;
    acov_h += m.acover_hits;
    acov_t += m.acover_total;
    tcov_h += m.tcover_hits;
    tcov_t += m.tcover_total;
    if (beta_mse.size() == 0) {
      beta_mse = m.beta_sqerr;
      a_mse = m.a_sqerr;
      theta_mse = m.theta_sqerr;
    } else {
      beta_mse += m.beta_sqerr;
      a_mse += m.a_sqerr;
      theta_mse += m.theta_sqerr;
    }
    if (std::isfinite(m.bloss_baseline)) {
      bl0 += m.bloss_baseline;
      ++bl0_count;
    }
  }
  if (done == 0) return;
  report.p_correct_k = static_cast<double>(k_ok) / done;
  report.mean_loss = loss / done;
  report.mean_bloss = bloss / done;
  report.mean_aloss = aloss / done;
  report.mean_tloss = tloss / done;
  report.ecp = cov_t > 0 ? static_cast<double>(cov_h) / cov_t : 0.0;
  report.aecp = acov_t > 0 ? static_cast<double>(acov_h) / acov_t : 0.0;
  report.tecp = tcov_t > 0 ? static_cast<double>(tcov_h) / tcov_t : 0.0;
  report.mmfdr = 0.0;
  report.mmfnr = 0.0;
  for (int f = 0; f < 3; ++f) {
    report.mmfdr = std::max(report.mmfdr, fdr[static_cast<std::size_t>(f)] / done);
    report.mmfnr = std::max(report.mmfnr, fnr[static_cast<std::size_t>(f)] / done);
  }
  report.mmse = beta_mse.size() > 0 ? (beta_mse / done).maxCoeff() : 0.0;
  report.mamse = a_mse.size() > 0 ? (a_mse / done).maxCoeff() : 0.0;
  report.mtmse = theta_mse.size() > 0 ? (theta_mse / done).maxCoeff() : 0.0;
  if (bl0_count > 0) report.mean_bloss_baseline = bl0 / bl0_count;
}

}  // namespace detail

// Full study pipeline: generate, select K, fit at K_star, normalize, test,
// score. Replications are independent and may run in parallel; results are
// identical for any thread count.
inline StudyReport run_study(const SimConfig& config, const StudyOptions& opts) {
  config.validate();
  opts.fit.validate();
  StudyReport report;
  report.config = config;
  report.rows.resize(static_cast<std::size_t>(config.n_reps));

  parallel_for(config.n_reps, opts.threads, [&](int rep) {
    RepRow& row = report.rows[static_cast<std::size_t>(rep)];
    row.rep = rep;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SimTruth truth = generate(config, rep);
      const ParamLayout lay = ParamLayout::make(truth.spec, truth.dataset);

      SelectionOptions sel_opts;
      sel_opts.fit = opts.fit;
      sel_opts.init = opts.init;
      sel_opts.use_svd_init = opts.use_svd_init;
      sel_opts.threads = 1;

      FitResult fit_at_kstar;
      if (!opts.candidates.empty()) {
        SelectionResult sel = select_k(truth.spec, truth.dataset, opts.candidates, sel_opts);
        row.k_hat = sel.k_hat;
        const auto it = sel.fits.find(config.K_star);
        if (it != sel.fits.end()) {
          fit_at_kstar = std::move(it->second);
        } else {
          fit_at_kstar = fit(truth.spec, truth.dataset,
                             starting_point(truth.spec, truth.dataset, sel_opts), opts.fit);
        }
      } else {
        row.k_hat = config.K_star;
        fit_at_kstar = fit(truth.spec, truth.dataset,
                           starting_point(truth.spec, truth.dataset, sel_opts), opts.fit);
      }
      row.loglik = fit_at_kstar.loglik;
      row.sweeps = fit_at_kstar.sweeps_used;
      row.converged = fit_at_kstar.converged;

      const NormalizeResult norm = normalize_full(truth.spec, truth.dataset, fit_at_kstar.params);
      const InferenceReport inference =
          make_inference_report(truth.spec, truth.dataset, norm.params, sim_hypotheses(lay));
      row.metrics =
          compute_metrics(truth, norm.params, inference, row.k_hat, opts.latent_coverage);

      if (opts.baseline_lr) {
        ModelSpec spec0 = truth.spec;
        spec0.n_factors = 0;
        const FitResult fit0 =
            fit(spec0, truth.dataset, zero_params(spec0, truth.dataset), opts.fit);
        const ParamLayout lay0 = ParamLayout::make(spec0, truth.dataset);
        const Eigen::MatrixXd b0 =
            fit0.params.item_params.middleCols(lay0.beta_off, lay0.beta_len);
        const Eigen::MatrixXd btrue =
            truth.params_true.item_params.middleCols(lay.beta_off, lay.beta_len);
        if (lay.tvc) {
          double worst = 0.0;
          for (int t = 0; t < lay.T; ++t)
            worst = std::max(worst, (b0.middleCols(t * lay.p, lay.p) -
                                     btrue.middleCols(t * lay.p, lay.p))
                                        .norm());
          row.metrics.bloss_baseline = worst / std::sqrt(static_cast<double>(config.J));
        } else {
          row.metrics.bloss_baseline =
              (b0 - btrue).norm() / std::sqrt(static_cast<double>(config.J));
        }
      }
    } catch (const std::exception& err) {
      row.failed = true;
      row.error = err.what();
    }
    if (opts.verbose) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "rep " << rep << ": " << (row.failed ? "failed" : "ok") << ", k_hat "
                << row.k_hat << ", " << secs << " s\n";
    }
  });

  for (const auto& row : report.rows) report.n_failed += row.failed ? 1 : 0;
  if (report.n_failed * 10 >= config.n_reps && report.n_failed > 0) {
    std::string first;
    for (const auto& row : report.rows)
      if (row.failed) {
        first = row.error;
        break;
      }
    throw NumericError("more than 10% of replications failed; first error: " + first);
  }
  detail::aggregate_study(report);
  return report;
}

}  // namespace glfm
