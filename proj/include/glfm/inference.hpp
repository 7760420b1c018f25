#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "glfm/estimator.hpp"
#include "glfm/model.hpp"
#include "glfm/normalize.hpp"
#include "glfm/selection.hpp"

namespace glfm {

namespace detail {

// Regularized incomplete gamma functions, series/continued-fraction split at
// x = a + 1 (Lentz's method for the fraction).
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int n = 1; n <= 1000; ++n) {
    const double an = -n * (n - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Upper regularized incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw ConfigError("gamma_q requires a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_contfrac(a, x);
}

// Survival function of the chi-square distribution with df degrees of freedom.
inline double chisq_sf(double x, int df) {
  if (df < 1) throw ConfigError("chi-square degrees of freedom must be >= 1");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

// Observed information average: Phi_j = N^{-1} sum_{i,t} -phi_j^{-1} r_it
// b''(u_j' e_it) e_it e_it'. Negative semidefinite by construction.
inline Eigen::MatrixXd phi_hat(const ModelSpec& spec, const Dataset& data,
                               const ParameterSet& params, int j) {
  params.validate(spec, data);
  if (j < 0 || j >= data.n_items) throw ConfigError("item index out of range");
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  const ParamLayout& lay = cache.lay;
  const int N = data.n_persons, T = data.n_times, Q = cache.Q();
  const Family fam = data.families[j];
  const double invphi = 1.0 / params.scale(j);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(lay.P, lay.P);
  Eigen::VectorXd eta, w(N);
  const Eigen::VectorXd u = params.item_params.row(j).transpose();
  Eigen::MatrixXd M(Q, Q);
  for (int t = 0; t < T; ++t) {
    cache.eta_item(u, t, eta);
    for (int i = 0; i < N; ++i)
      w(i) = data.obs(i, t) ? std::sqrt(invphi * family_b(fam, 2, eta(i))) : 0.0;
    // exact symmetry: accumulate S'S with S the sqrt-weighted design
    const Eigen::MatrixXd S = cache.F[t].array().colwise() * w.array();
    M.setZero();
    M.selfadjointView<Eigen::Lower>().rankUpdate(S.transpose());
    M.triangularView<Eigen::StrictlyUpper>() = M.transpose();
    const auto& idx = cache.scatter[t];
    for (int q = 0; q < Q; ++q)
      for (int r = 0; r < Q; ++r) phi(idx[q], idx[r]) -= M(q, r);
  }
  phi /= static_cast<double>(N);
  return phi;
}

// Symmetric analogue over items: Psi_i = J^{-1} sum_{j,t} -phi_j^{-1} r_it
// b'' a_jt a_jt'. Used for factor-score uncertainty.
inline Eigen::MatrixXd psi_hat(const ModelSpec& spec, const Dataset& data,
                               const ParameterSet& params, int i) {
  params.validate(spec, data);
  if (i < 0 || i >= data.n_persons) throw ConfigError("person index out of range");
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  const ParamLayout& lay = cache.lay;
  const int J = data.n_items, T = data.n_times, K = lay.K;
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(K, K);
  Eigen::MatrixXd eta;
  for (int t = 0; t < T; ++t) {
    if (!data.obs(i, t)) continue;
    cache.eta_all(params.item_params, t, eta);
    for (int j = 0; j < J; ++j) {
      const double w = family_b(data.families[j], 2, eta(i, j)) / params.scale(j);
      const auto a = params.item_params.row(j).segment(lay.a_block(t), K);
      psi.noalias() -= w * a.transpose() * a;
    }
  }
  psi /= static_cast<double>(J);
  return psi;
}

// Asymptotic covariance of sqrt(N) (beta_hat_j - beta_j): the regression
// block of (-Phi_j)^{-1}, extracted without forming the full inverse.
inline Eigen::MatrixXd sigma_E(const Eigen::MatrixXd& phi, const ParamLayout& lay) {
  const int P = static_cast<int>(phi.rows());
  if (phi.cols() != P || P != lay.P) throw ConfigError("phi must be P x P for the layout");
  Eigen::MatrixXd neg = -phi;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(neg);
  const double smallest = eig.eigenvalues().minCoeff();
  if (smallest <= 1e-12 * std::max(1.0, eig.eigenvalues().maxCoeff()))
    throw NumericError("-Phi_j is numerically singular; smallest eigenvalue " +
                       std::to_string(smallest));
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(P, lay.beta_len);
  for (int c = 0; c < lay.beta_len; ++c) rhs(lay.beta_off + c, c) = 1.0;
  const Eigen::MatrixXd cols = Eigen::LDLT<Eigen::MatrixXd>(neg).solve(rhs);
  return cols.middleRows(lay.beta_off, lay.beta_len);
}

// Wald statistic n beta' Sigma^{-1} beta and its chi-square p-value.
inline std::pair<double, double> wald_test(const Eigen::VectorXd& beta_sub,
                                           const Eigen::MatrixXd& sigma_sub, long n) {
  const int q = static_cast<int>(beta_sub.size());
  if (q < 1 || sigma_sub.rows() != q || sigma_sub.cols() != q)
    throw ConfigError("wald_test dimensions do not match");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_sub);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw NumericError("wald_test requires a positive definite covariance block");
  const double stat =
      static_cast<double>(n) * beta_sub.dot(Eigen::LDLT<Eigen::MatrixXd>(sigma_sub).solve(beta_sub));
  return {stat, chisq_sf(stat, q)};
}

// Benjamini-Yekutieli step-up adjustment, valid under arbitrary dependence:
// adj_(i) = min(1, min_{k >= i} m c(m) p_(k) / k) with c(m) the harmonic sum.
inline Eigen::VectorXd by_adjust(const Eigen::VectorXd& p_values) {
  const int m = static_cast<int>(p_values.size());
  if (m == 0) return p_values;
  for (int i = 0; i < m; ++i)
    if (!(p_values(i) >= 0.0 && p_values(i) <= 1.0))
      throw ConfigError("p-values must lie in [0, 1]");
  double cm = 0.0;
  for (int i = 1; i <= m; ++i) cm += 1.0 / i;
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return p_values(a) < p_values(b); });
  Eigen::VectorXd adj(m);
  double running = 1.0;
  for (int k = m - 1; k >= 0; --k) {
    const double value = std::min(1.0, m * cm * p_values(order[static_cast<std::size_t>(k)]) /
                                           static_cast<double>(k + 1));
    running = std::min(running, value);
    adj(order[static_cast<std::size_t>(k)]) = running;
  }
  return adj;
}

// A joint null hypothesis on a subset of each item's regression coefficients;
// indices address coordinates inside the beta block.
struct Hypothesis {
  std::string name;
  std::vector<int> beta_indices;
};

struct ItemInference {
  Eigen::MatrixXd sigma_E;   // beta-block covariance of sqrt(N) beta_hat
  Eigen::VectorXd beta_se;   // sqrt(diag(sigma_E) / N)
  std::map<std::string, double> wald_stats;
  std::map<std::string, double> p_values;
  std::map<std::string, double> adj_p_values;
};

struct InferenceReport {
  std::vector<ItemInference> per_item;
};

// Per-item Wald tests with BY adjustment applied separately within each
// hypothesis family. The parameters must already satisfy Theta'X = 0.
inline InferenceReport make_inference_report(const ModelSpec& spec, const Dataset& data,
                                             const ParameterSet& params,
                                             const std::vector<Hypothesis>& hypotheses) {
  const ParamLayout lay = ParamLayout::make(spec, data);
  const int J = data.n_items;
  InferenceReport report;
  report.per_item.resize(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    auto& item = report.per_item[static_cast<std::size_t>(j)];
    item.sigma_E = sigma_E(phi_hat(spec, data, params, j), lay);
    item.beta_se = (item.sigma_E.diagonal() / static_cast<double>(data.n_persons)).cwiseSqrt();
    for (const auto& hyp : hypotheses) {
      Eigen::VectorXd beta_sub(hyp.beta_indices.size());
      Eigen::MatrixXd sigma_sub(hyp.beta_indices.size(), hyp.beta_indices.size());
      for (std::size_t a = 0; a < hyp.beta_indices.size(); ++a) {
        beta_sub(static_cast<long>(a)) =
            params.item_params(j, lay.beta_off + hyp.beta_indices[a]);
        for (std::size_t b = 0; b < hyp.beta_indices.size(); ++b)
          sigma_sub(static_cast<long>(a), static_cast<long>(b)) =
              item.sigma_E(hyp.beta_indices[a], hyp.beta_indices[b]);
      }
      const auto [stat, p] = wald_test(beta_sub, sigma_sub, data.n_persons);
      item.wald_stats[hyp.name] = stat;
      item.p_values[hyp.name] = p;
    }
  }
  for (const auto& hyp : hypotheses) {
    Eigen::VectorXd raw(J);
    for (int j = 0; j < J; ++j) raw(j) = report.per_item[static_cast<std::size_t>(j)].p_values[hyp.name];
    const Eigen::VectorXd adj = by_adjust(raw);
    for (int j = 0; j < J; ++j)
      report.per_item[static_cast<std::size_t>(j)].adj_p_values[hyp.name] = adj(j);
  }
  return report;
}

// Finite-sample-valid permutation p-value with the add-one rule.
inline double perm_pvalue(double observed, const Eigen::VectorXd& null_stats) {
  long count = 0;
  for (int l = 0; l < null_stats.size(); ++l)
    if (null_stats(l) >= observed) ++count;
  return static_cast<double>(1 + count) / static_cast<double>(1 + null_stats.size());
}

struct PermutationResult {
  double stat = 0.0;
  double p_value = 1.0;
  Eigen::VectorXd null_stats;
  int dropped = 0;
};

namespace detail {

inline double b_norm_after_fit(const ModelSpec& spec, const Dataset& data,
                               const SelectionOptions& opts) {
  const ParameterSet start = starting_point(spec, data, opts);
  const FitResult fr = fit(spec, data, start, opts.fit);
  const ParamLayout lay = ParamLayout::make(spec, data);
  const ParameterSet normalized = normalize_beta_only(spec, lay, fr.params, data.covariates);
  return normalized.item_params.middleCols(lay.beta_off, lay.beta_len).norm();
}

}  // namespace detail

// Global test of B = 0: refits under row-shuffled covariates and compares
// ||B_hat||_F against the permutation distribution.
inline PermutationResult permutation_test_B(const ModelSpec& spec, const Dataset& data,
                                            const SelectionOptions& opts, int n_perm,
                                            std::uint64_t seed, int threads = 1) {
  if (n_perm < 1) throw ConfigError("n_perm must be >= 1");
  if (data.n_covariates() == 0) throw ConfigError("permutation test requires covariates");

  PermutationResult out;
  out.stat = detail::b_norm_after_fit(spec, data, opts);

  std::vector<double> stats(static_cast<std::size_t>(n_perm),
                            std::numeric_limits<double>::quiet_NaN());
  parallel_for(n_perm, threads, [&](int l) {
    Rng rng(detail::derive_seed(seed, static_cast<std::uint64_t>(l)));
    const std::vector<int> perm = rng.permutation(data.n_persons);
    Dataset shuffled = data;
    for (int i = 0; i < data.n_persons; ++i) {
      shuffled.covariates.row(i) = data.covariates.row(perm[static_cast<std::size_t>(i)]);
      for (std::size_t t = 0; t < data.time_covariates.size(); ++t)
        shuffled.time_covariates[t].row(i) =
            data.time_covariates[t].row(perm[static_cast<std::size_t>(i)]);
    }
    try {
      stats[static_cast<std::size_t>(l)] = detail::b_norm_after_fit(spec, shuffled, opts);
    } catch (const std::exception&) {
      // dropped below
    }
  });

  std::vector<double> kept;
  for (double s : stats)
    if (std::isfinite(s)) kept.push_back(s);
  out.dropped = n_perm - static_cast<int>(kept.size());
  if (out.dropped * 10 >= n_perm)
    throw NumericError("more than 10% of permutation refits failed (" +
                       std::to_string(out.dropped) + "/" + std::to_string(n_perm) + ")");
  out.null_stats = Eigen::Map<Eigen::VectorXd>(kept.data(), static_cast<long>(kept.size()));
  out.p_value = perm_pvalue(out.stat, out.null_stats);
  return out;
}

}  // namespace glfm
