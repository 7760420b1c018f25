#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <vector>

#include "glfm/estimator.hpp"
#include "glfm/model.hpp"

namespace glfm {

struct InitOptions {
  double epsilon = 0.01;  // clipping tolerance for the inverse link

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
  }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Starting values with theta and loading entries i.i.d. uniform on
// [-0.5, 0.5]; intercepts and regression coefficients start at zero.
inline ParameterSet random_init(const ModelSpec& spec, const Dataset& data, std::uint64_t seed) {
  const ParamLayout lay = ParamLayout::make(spec, data);
  ParameterSet params = zero_params(spec, data);
  Rng rng(detail::derive_seed(seed, 0x696e6974ull));
  for (int i = 0; i < data.n_persons; ++i)
    for (int k = 0; k < lay.K; ++k) params.theta(i, k) = rng.uniform(-0.5, 0.5);
  for (int j = 0; j < data.n_items; ++j)
    for (int k = 0; k < lay.a_len; ++k)
      params.item_params(j, lay.a_off + k) = rng.uniform(-0.5, 0.5);
  return params;
}

inline bool svd_init_supported(const Dataset& data) {
  for (const Family f : data.families)
    if (f != Family::Bernoulli) return false;
  return true;
}

namespace detail {

// Truncation rank: the larger of K+1 and the number of singular values at or
// above the noise threshold 2 sqrt(max dim) * observation rate.
inline int truncation_rank(const Eigen::VectorXd& sv, int K, double threshold) {
  int above = 0;
  while (above < sv.size() && sv(above) >= threshold) ++above;
  int k = std::max(K + 1, above);
  return std::min<int>(k, static_cast<int>(sv.size()));
}

// Entrywise inverse link with clipping: values are mapped from [-1, 1] to
// probabilities and clamped into [eps, 1-eps] before the logit.
inline double clipped_logit(double l, double eps) {
  double v = 0.5 * (l + 1.0);
  v = std::min(std::max(v, eps), 1.0 - eps);
  return logit(v);
}

// Newton fit of the coordinates listed in free_idx of u_j, everything else
// held fixed. Used to start B and V from per-item GLM fits.
inline void fit_item_coordinates(const DesignCache& cache, const Dataset& data,
                                 ParameterSet& params, int j, const std::vector<int>& free_idx) {
  if (free_idx.empty()) return;
  const double invphi = 1.0 / params.scale(j);
  const int m = static_cast<int>(free_idx.size());
  FitOptions ls;
  Eigen::VectorXd u = params.item_params.row(j).transpose();
  Eigen::VectorXd g_full;
  Eigen::MatrixXd H_full;
  for (int iter = 0; iter < 50; ++iter) {
    item_derivs(cache, data, u, j, invphi, g_full, H_full);
    Eigen::VectorXd g(m);
    Eigen::MatrixXd H(m, m);
    for (int a = 0; a < m; ++a) {
      g(a) = g_full(free_idx[a]);
      for (int b = 0; b < m; ++b) H(a, b) = H_full(free_idx[a], free_idx[b]);
    }
    const Eigen::VectorXd d = newton_direction(H, g, 1e-8);
    const double f0 = item_objective(cache, data, u, j, invphi);
    double alpha = 1.0;
    bool moved = false;
    for (int h = 0; h < 30; ++h) {
      Eigen::VectorXd trial = u;
      for (int a = 0; a < m; ++a) trial(free_idx[a]) += alpha * d(a);
      const double f = item_objective(cache, data, trial, j, invphi);
      if (std::isfinite(f) && f > f0) {
        u = trial;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved || g.norm() <= 1e-8 * (1.0 + u.norm())) break;
  }
  params.item_params.row(j) = u.transpose();
}

}  // namespace detail

// SVD-based starting values for binary data. Builds sign matrices from the
// observed responses, denoises them by rank truncation, passes them through
// the clipped inverse link, and reads intercepts, factors and loadings off
// the resulting matrix; regression coefficients then come from per-item GLM
// fits with the factor part held fixed.
inline ParameterSet svd_init(const ModelSpec& spec, const Dataset& data,
                             const InitOptions& opts = {}) {
  opts.validate();
  data.validate();
  if (!svd_init_supported(data))
    throw ConfigError("svd initialization requires all items to be Bernoulli");
  const ParamLayout lay = ParamLayout::make(spec, data);
  const int N = data.n_persons, J = data.n_items, T = data.n_times, K = lay.K;
  const double eps = opts.epsilon;

  // observation rates per time point
  Eigen::VectorXd phat(T);
  for (int t = 0; t < T; ++t) phat(t) = data.observed.col(t).sum() / static_cast<double>(N);

  // sign matrices: +1 observed purchase, -1 observed absence, 0 missing
  std::vector<Eigen::MatrixXd> L(T, Eigen::MatrixXd::Zero(N, J));
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < J; ++j)
      for (int i = 0; i < N; ++i)
        if (data.obs(i, t)) L[t](i, j) = 2.0 * data.y(i, j, t) - 1.0;

  // denoised link-scale matrices M_t
  std::vector<Eigen::MatrixXd> M(T);
  if (!lay.tvl) {
    for (int t = 0; t < T; ++t) {
      Eigen::BDCSVD<Eigen::MatrixXd> svd(L[t], Eigen::ComputeThinU | Eigen::ComputeThinV);
      const double threshold = 2.0 * std::sqrt(static_cast<double>(std::max(N, J))) * phat(t);
      const int rank = detail::truncation_rank(svd.singularValues(), K, threshold);
      Eigen::MatrixXd Lt = svd.matrixU().leftCols(rank) *
                           svd.singularValues().head(rank).asDiagonal() *
                           svd.matrixV().leftCols(rank).transpose();
      M[t] = Lt.unaryExpr([eps](double v) { return detail::clipped_logit(v, eps); });
    }
  } else {
    // stacked variant: one truncation across (L_1, ..., L_T)
    Eigen::MatrixXd stacked(N, static_cast<long>(T) * J);
    for (int t = 0; t < T; ++t) stacked.middleCols(static_cast<long>(t) * J, J) = L[t];
    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double threshold =
        2.0 * std::sqrt(static_cast<double>(std::max<long>(N, static_cast<long>(T) * J))) *
        phat.mean();
    const int rank = detail::truncation_rank(svd.singularValues(), K, threshold);
    Eigen::MatrixXd denoised = svd.matrixU().leftCols(rank) *
                               svd.singularValues().head(rank).asDiagonal() *
                               svd.matrixV().leftCols(rank).transpose();
    for (int t = 0; t < T; ++t)
      M[t] = denoised.middleCols(static_cast<long>(t) * J, J)
                 .unaryExpr([eps](double v) { return detail::clipped_logit(v, eps); });
  }

  ParameterSet params = zero_params(spec, data);

  // intercept starts
  Eigen::MatrixXd gamma(J, lay.gamma_len);
  if (!lay.lin_gamma) {
    for (int t = 0; t < T; ++t) gamma.col(t) = M[t].colwise().mean().transpose();
  } else {
    double tsq = 0.0;
    for (int t = 0; t < T; ++t) tsq += static_cast<double>((t + 1) * (t + 1));
    Eigen::VectorXd num = Eigen::VectorXd::Zero(J);
    for (int t = 0; t < T; ++t)
      num += static_cast<double>(t + 1) * M[t].colwise().sum().transpose();
    gamma.col(0) = num / (static_cast<double>(N) * tsq);
  }
  params.item_params.middleCols(lay.gamma_off, lay.gamma_len) = gamma;

  // centered matrix for the factor part
  if (K > 0) {
    Eigen::MatrixXd centered;
    if (!lay.tvl) {
      centered = Eigen::MatrixXd::Zero(N, J);
      for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd g =
            lay.lin_gamma ? (static_cast<double>(t + 1) * gamma.col(0)).eval()
                          : gamma.col(t).eval();
        centered += M[t] - Eigen::VectorXd::Ones(N) * g.transpose();
      }
      centered /= static_cast<double>(T);
    } else {
      centered.resize(N, static_cast<long>(T) * J);
      for (int t = 0; t < T; ++t) {
        const Eigen::VectorXd g =
            lay.lin_gamma ? (static_cast<double>(t + 1) * gamma.col(0)).eval()
                          : gamma.col(t).eval();
        centered.middleCols(static_cast<long>(t) * J, J) =
            M[t] - Eigen::VectorXd::Ones(N) * g.transpose();
      }
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const int rank = std::min<int>(K, static_cast<int>(svd.singularValues().size()));
    const double rootN = std::sqrt(static_cast<double>(N));
    for (int k = 0; k < rank; ++k) {
      params.theta.col(k) = rootN * svd.matrixU().col(k);
      const Eigen::VectorXd a = svd.singularValues()(k) / rootN * svd.matrixV().col(k);
      if (!lay.tvl) {
        params.item_params.col(lay.a_off + k) = a;
      } else {
        for (int t = 0; t < T; ++t)
          params.item_params.col(lay.a_block(t) + k) = a.segment(static_cast<long>(t) * J, J);
      }
    }
  }

  // regression coefficient starts from per-item GLM fits
  if (lay.beta_len + lay.v_len > 0) {
    detail::DesignCache cache;
    cache.build(spec, data, params.theta);
    std::vector<int> free_idx;
    for (int c = 0; c < lay.beta_len; ++c) free_idx.push_back(lay.beta_off + c);
    for (int c = 0; c < lay.v_len; ++c) free_idx.push_back(lay.v_off + c);
    for (int j = 0; j < J; ++j) detail::fit_item_coordinates(cache, data, params, j, free_idx);
  }

  // keep the starting point feasible for the constrained fit
  const double item_radius = spec.c2 * std::sqrt(static_cast<double>(lay.P));
  for (int j = 0; j < J; ++j)
    params.item_params.row(j) = prox(params.item_params.row(j).transpose(), item_radius);
  if (K > 0) {
    const double person_radius = spec.c1 * std::sqrt(static_cast<double>(K));
    for (int i = 0; i < N; ++i)
      params.theta.row(i) = prox(params.theta.row(i).transpose(), person_radius);
  }
  return params;
}

}  // namespace glfm
