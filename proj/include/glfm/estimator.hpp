#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "glfm/model.hpp"

namespace glfm {

struct FitOptions {
  int max_sweeps = 500;
  double rel_tol = 1e-7;
  double line_search_shrink = 0.5;
  int max_halvings = 30;
  double ridge = 1e-8;
  std::uint64_t seed = 0;
  bool update_scale = true;  // closed-form phi update for Gaussian items

  void validate() const {
    if (max_sweeps < 1) throw ConfigError("max_sweeps must be >= 1");
    if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be positive");
    if (!(line_search_shrink > 0.0 && line_search_shrink < 1.0))
      throw ConfigError("line_search_shrink must lie in (0,1)");
    if (max_halvings < 1) throw ConfigError("max_halvings must be >= 1");
    if (ridge < 0.0) throw ConfigError("ridge must be nonnegative");
  }
};

struct FitResult {
  ParameterSet params;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int sweeps_used = 0;
  bool converged = false;
  std::vector<double> loglik_trace;
};

// Euclidean projection onto the ball of radius c.
inline Eigen::VectorXd prox(const Eigen::VectorXd& v, double c) {
  if (!(c > 0.0)) throw ConfigError("projection radius must be positive");
  const double n = v.norm();
  if (n <= c) return v;
  return (c / n) * v;
}

namespace detail {

inline double loglik_cached(const DesignCache& cache, const Dataset& data,
                            const ParameterSet& params) {
  const int N = data.n_persons, J = data.n_items, T = data.n_times;
  double total = 0.0;
  Eigen::MatrixXd eta;
  for (int t = 0; t < T; ++t) {
    cache.eta_all(params.item_params, t, eta);
    for (int j = 0; j < J; ++j) {
      const Family fam = data.families[j];
      double acc = 0.0;
      for (int i = 0; i < N; ++i) {
        if (!data.obs(i, t)) continue;
        const double e = eta(i, j);
        if (!std::isfinite(e))
          throw NumericError("non-finite natural parameter at (i,j,t) = (" +
                             std::to_string(i + 1) + "," + std::to_string(j + 1) + "," +
                             std::to_string(t + 1) + ")");
        acc += data.y(i, j, t) * e - family_b(fam, 0, e);
      }
      total += acc / params.scale(j);
    }
  }
  return total;
}

// Contribution of item j to the joint log-likelihood, theta held fixed.
inline double item_objective(const DesignCache& cache, const Dataset& data,
                             const Eigen::VectorXd& u, int j, double invphi) {
  const Family fam = data.families[j];
  const int N = data.n_persons, T = data.n_times, J = data.n_items;
  double acc = 0.0;
  Eigen::VectorXd eta;
  for (int t = 0; t < T; ++t) {
    cache.eta_item(u, t, eta);
    const auto y = data.responses.col(t * J + j);
    for (int i = 0; i < N; ++i) {
      if (!data.obs(i, t)) continue;
      acc += y(i) * eta(i) - family_b(fam, 0, eta(i));
    }
  }
  return invphi * acc;
}

// Gradient and negative Hessian of item j's block objective with respect to
// u_j: g = sum r phi^{-1} (y - b') e, Hneg = sum r phi^{-1} b'' e e'.
inline void item_derivs(const DesignCache& cache, const Dataset& data,
                        const Eigen::VectorXd& u, int j, double invphi, Eigen::VectorXd& g,
                        Eigen::MatrixXd& Hneg) {
  const Family fam = data.families[j];
  const int N = data.n_persons, T = data.n_times, J = data.n_items;
  const int P = cache.lay.P, Q = cache.Q();
  g.setZero(P);
  Hneg.setZero(P, P);
  Eigen::VectorXd eta, w1(N), w2(N);
  Eigen::MatrixXd scaled(N, Q), M(Q, Q);
  Eigen::VectorXd gc(Q);
  for (int t = 0; t < T; ++t) {
    cache.eta_item(u, t, eta);
    const auto y = data.responses.col(t * J + j);
    for (int i = 0; i < N; ++i) {
      if (!data.obs(i, t)) {
        w1(i) = 0.0;
        w2(i) = 0.0;
        continue;
      }
      const double e = eta(i);
      w1(i) = invphi * (y(i) - family_b(fam, 1, e));
      w2(i) = invphi * family_b(fam, 2, e);
    }
    const auto& Ft = cache.F[t];
    gc.noalias() = Ft.transpose() * w1;
    scaled = Ft.array().colwise() * w2.array();
    M.noalias() = Ft.transpose() * scaled;
    const auto& idx = cache.scatter[t];
    for (int q = 0; q < Q; ++q) {
      g(idx[q]) += gc(q);
      for (int r = 0; r < Q; ++r) Hneg(idx[q], idx[r]) += M(q, r);
    }
  }
}

// Loading matrices and eta offsets for a person sweep, built once per sweep
// against the current item parameters.
struct PersonSweepCtx {
  std::vector<Eigen::MatrixXd> offsets;  // per t: N x J, non-factor part of eta
  std::vector<Eigen::MatrixXd> loadings; // per t: J x K
  Eigen::VectorXd invphi;                // per item

  void build(const DesignCache& cache, const Dataset& data, const ParameterSet& params) {
    const ParamLayout& lay = cache.lay;
    const int T = data.n_times, J = data.n_items;
    const int Qn = 1 + lay.p + lay.pz;  // non-factor columns of the compressed design
    offsets.assign(T, Eigen::MatrixXd());
    loadings.assign(T, Eigen::MatrixXd());
    for (int t = 0; t < T; ++t) {
      Eigen::MatrixXd Uc(J, Qn);
      for (int q = 0; q < Qn; ++q) Uc.col(q) = params.item_params.col(cache.scatter[t][q]);
      offsets[t].noalias() = cache.F[t].leftCols(Qn) * Uc.transpose();
      loadings[t] = params.item_params.middleCols(lay.a_block(t), lay.K);
    }
    invphi = params.scale.cwiseInverse();
  }
};

inline double person_objective(const PersonSweepCtx& ctx, const Dataset& data,
                               const Eigen::VectorXd& theta_i, int i) {
  const int T = data.n_times, J = data.n_items;
  double acc = 0.0;
  Eigen::VectorXd eta;
  for (int t = 0; t < T; ++t) {
    if (!data.obs(i, t)) continue;
    eta.noalias() = ctx.loadings[t] * theta_i;
    eta += ctx.offsets[t].row(i).transpose();
    const auto y = data.responses.row(i).segment(t * J, J);
    for (int j = 0; j < J; ++j)
      acc += ctx.invphi(j) * (y(j) * eta(j) - family_b(data.families[j], 0, eta(j)));
  }
  return acc;
}

inline void person_derivs(const PersonSweepCtx& ctx, const Dataset& data,
                          const Eigen::VectorXd& theta_i, int i, Eigen::VectorXd& g,
                          Eigen::MatrixXd& Hneg) {
  const int T = data.n_times, J = data.n_items;
  const int K = static_cast<int>(theta_i.size());
  g.setZero(K);
  Hneg.setZero(K, K);
  Eigen::VectorXd eta, w1(J), w2(J);
  for (int t = 0; t < T; ++t) {
    if (!data.obs(i, t)) continue;
    eta.noalias() = ctx.loadings[t] * theta_i;
    eta += ctx.offsets[t].row(i).transpose();
    const auto y = data.responses.row(i).segment(t * J, J);
    for (int j = 0; j < J; ++j) {
      w1(j) = ctx.invphi(j) * (y(j) - family_b(data.families[j], 1, eta(j)));
      w2(j) = ctx.invphi(j) * family_b(data.families[j], 2, eta(j));
    }
    g.noalias() += ctx.loadings[t].transpose() * w1;
    Hneg.noalias() +=
        ctx.loadings[t].transpose() * (ctx.loadings[t].array().colwise() * w2.array()).matrix();
  }
}

// Damped Newton direction from (Hneg + ridge I) d = g, with ridge escalation
// and a gradient fallback.
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& Hneg, const Eigen::VectorXd& g,
                                        double ridge) {
  if (!g.allFinite() || !Hneg.allFinite())
    throw NumericError("non-finite block gradient or Hessian");
  const int n = static_cast<int>(g.size());
  double r = std::max(ridge, 0.0);
  for (;;) {
    Eigen::MatrixXd H = Hneg;
    H.diagonal().array() += r;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() == Eigen::Success) {
      Eigen::VectorXd d = ldlt.solve(g);
      if (d.allFinite()) return d;
    }
    if (r >= 1e-2) break;
    r = (r == 0.0) ? 1e-8 : r * 10.0;
    if (r > 1e-2) r = 1e-2;
  }
  Eigen::VectorXd d = g;  // plain ascent direction
  (void)n;
  return d;
}

// Backtracking step accepting the first candidate that strictly improves the
// block objective. Returns true on improvement; x is left unchanged when no
// trial step improves.
template <class Objective>
inline bool line_search(const Objective& objective, const Eigen::VectorXd& d, double radius,
                        const FitOptions& opts, Eigen::VectorXd& x) {
  const double f0 = objective(x);
  if (!std::isfinite(f0)) throw NumericError("block objective is non-finite at current point");
  double alpha = 1.0;
  for (int h = 0; h < opts.max_halvings; ++h) {
    Eigen::VectorXd trial = prox(x + alpha * d, radius);
    const double f = objective(trial);
    if (std::isfinite(f)) {
      if (f > f0) {
        x = std::move(trial);
        return true;
      }
      if (f == f0) return false;  // stationary along this direction
    }
    alpha *= opts.line_search_shrink;
  }
  return false;
}

// Newton direction first. On the constraint boundary the projected Newton
// direction need not be an ascent direction, so a failed line search there
// retries with a Newton step restricted to the sphere's tangent space, and
// as a last resort the plain gradient, whose projected step improves
// whenever the point is not constrained-stationary.
template <class Objective>
inline bool ascend_block(const Objective& objective, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& Hneg, double radius, const FitOptions& opts,
                         Eigen::VectorXd& x) {
  const Eigen::VectorXd d = newton_direction(Hneg, g, opts.ridge);
  if (line_search(objective, d, radius, opts, x)) return true;
  const double norm = x.norm();
  if (norm < radius * (1.0 - 1e-12)) return false;

  const Eigen::VectorXd n = x / norm;
  const Eigen::VectorXd gt = g - n * n.dot(g);
  const Eigen::VectorXd Hn = Hneg * n;
  Eigen::MatrixXd Ht = Hneg;
  Ht.noalias() -= n * Hn.transpose();
  Ht.noalias() -= Hn * n.transpose();
  Ht.noalias() += (n.dot(Hn)) * (n * n.transpose());
  const Eigen::VectorXd dt = newton_direction(Ht, gt, std::max(opts.ridge, 1e-10));
  if (line_search(objective, dt, radius, opts, x)) return true;
  return line_search(objective, g, radius, opts, x);
}

inline bool item_update_inplace(const DesignCache& cache, const Dataset& data,
                                ParameterSet& params, int j, double radius,
                                const FitOptions& opts) {
  const double invphi = 1.0 / params.scale(j);
  Eigen::VectorXd u = params.item_params.row(j).transpose();
  Eigen::VectorXd g;
  Eigen::MatrixXd Hneg;
  item_derivs(cache, data, u, j, invphi, g, Hneg);
  const bool improved = ascend_block(
      [&](const Eigen::VectorXd& v) { return item_objective(cache, data, v, j, invphi); }, g,
      Hneg, radius, opts, u);
  if (improved) params.item_params.row(j) = u.transpose();
  return improved;
}

inline bool person_update_inplace(const PersonSweepCtx& ctx, const Dataset& data,
                                  ParameterSet& params, int i, double radius,
                                  const FitOptions& opts) {
  Eigen::VectorXd th = params.theta.row(i).transpose();
  Eigen::VectorXd g;
  Eigen::MatrixXd Hneg;
  person_derivs(ctx, data, th, i, g, Hneg);
  const bool improved = ascend_block(
      [&](const Eigen::VectorXd& v) { return person_objective(ctx, data, v, i); }, g, Hneg,
      radius, opts, th);
  if (improved) params.theta.row(i) = th.transpose();
  return improved;
}

inline void update_gaussian_scale(const DesignCache& cache, const Dataset& data,
                                  ParameterSet& params) {
  const int N = data.n_persons, J = data.n_items, T = data.n_times;
  Eigen::VectorXd ssr = Eigen::VectorXd::Zero(J);
  Eigen::VectorXd cnt = Eigen::VectorXd::Zero(J);
  Eigen::MatrixXd eta;
  for (int t = 0; t < T; ++t) {
    cache.eta_all(params.item_params, t, eta);
    for (int j = 0; j < J; ++j) {
      if (data.families[j] != Family::Gaussian) continue;
      for (int i = 0; i < N; ++i) {
        if (!data.obs(i, t)) continue;
        const double r = data.y(i, j, t) - eta(i, j);
        ssr(j) += r * r;
        cnt(j) += 1.0;
      }
    }
  }
  for (int j = 0; j < J; ++j)
    if (data.families[j] == Family::Gaussian && cnt(j) > 0.0)
      params.scale(j) = std::max(ssr(j) / cnt(j), 1e-12);
}

}  // namespace detail

// Analytic gradient of item j's block objective; equals the partial gradient
// of joint_loglik with respect to u_j.
inline Eigen::VectorXd item_block_gradient(const ModelSpec& spec, const Dataset& data,
                                           const ParameterSet& params, int j) {
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  Eigen::VectorXd g;
  Eigen::MatrixXd Hneg;
  detail::item_derivs(cache, data, params.item_params.row(j).transpose(), j,
                      1.0 / params.scale(j), g, Hneg);
  return g;
}

inline Eigen::VectorXd person_block_gradient(const ModelSpec& spec, const Dataset& data,
                                             const ParameterSet& params, int i) {
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  detail::PersonSweepCtx ctx;
  ctx.build(cache, data, params);
  Eigen::VectorXd g;
  Eigen::MatrixXd Hneg;
  detail::person_derivs(ctx, data, params.theta.row(i).transpose(), i, g, Hneg);
  return g;
}

// One projected-Newton update of u_j with theta fixed.
inline std::pair<Eigen::VectorXd, bool> item_block_update(const ModelSpec& spec,
                                                          const Dataset& data,
                                                          const ParameterSet& params, int j,
                                                          const FitOptions& opts = {}) {
  opts.validate();
  params.validate(spec, data);
  if (j < 0 || j >= data.n_items) throw ConfigError("item index out of range");
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  ParameterSet work = params;
  const double radius = spec.c2 * std::sqrt(static_cast<double>(cache.lay.P));
  const bool improved = detail::item_update_inplace(cache, data, work, j, radius, opts);
  return {work.item_params.row(j).transpose(), improved};
}

// One projected-Newton update of theta_i with item parameters fixed.
inline std::pair<Eigen::VectorXd, bool> person_block_update(const ModelSpec& spec,
                                                            const Dataset& data,
                                                            const ParameterSet& params, int i,
                                                            const FitOptions& opts = {}) {
  opts.validate();
  params.validate(spec, data);
  if (i < 0 || i >= data.n_persons) throw ConfigError("person index out of range");
  if (spec.n_factors == 0) return {Eigen::VectorXd(0), false};
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  detail::PersonSweepCtx ctx;
  ctx.build(cache, data, params);
  ParameterSet work = params;
  const double radius = spec.c1 * std::sqrt(static_cast<double>(spec.n_factors));
  const bool improved = detail::person_update_inplace(ctx, data, work, i, radius, opts);
  return {work.theta.row(i).transpose(), improved};
}

// Maximizes the joint log-likelihood under the norm constraints by
// alternating full item and person sweeps. Item blocks are updated against
// the previous sweep's theta, person blocks against the fresh item
// parameters. Every accepted step is non-decreasing, so the trace is
// monotone.
inline FitResult fit(const ModelSpec& spec, const Dataset& data, const ParameterSet& init,
                     const FitOptions& opts = {}) {
  opts.validate();
  data.validate();
  init.validate(spec, data);

  FitResult result;
  result.params = init;
  ParameterSet& params = result.params;
  const ParamLayout lay = ParamLayout::make(spec, data);
  const double item_radius = spec.c2 * std::sqrt(static_cast<double>(lay.P));
  const double person_radius = spec.c1 * std::sqrt(static_cast<double>(std::max(lay.K, 1)));

  for (int j = 0; j < data.n_items; ++j)
    params.item_params.row(j) = prox(params.item_params.row(j).transpose(), item_radius);
  if (lay.K > 0)
    for (int i = 0; i < data.n_persons; ++i)
      params.theta.row(i) = prox(params.theta.row(i).transpose(), person_radius);

  bool any_gaussian = false;
  for (const Family f : data.families) any_gaussian = any_gaussian || f == Family::Gaussian;

  detail::DesignCache cache;
  cache.build(spec, data, params.theta);

  double l_prev = detail::loglik_cached(cache, data, params);
  result.loglik_trace.push_back(l_prev);

  detail::PersonSweepCtx ctx;
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    try {
      for (int j = 0; j < data.n_items; ++j)
        detail::item_update_inplace(cache, data, params, j, item_radius, opts);
      if (lay.K > 0) {
        ctx.build(cache, data, params);
        for (int i = 0; i < data.n_persons; ++i)
          detail::person_update_inplace(ctx, data, params, i, person_radius, opts);
        cache.refresh_theta(params.theta);
      }
      if (any_gaussian && opts.update_scale) detail::update_gaussian_scale(cache, data, params);
      const double l = detail::loglik_cached(cache, data, params);
      result.loglik_trace.push_back(l);
      result.sweeps_used = sweep;
      if (std::abs(l - l_prev) <= opts.rel_tol * (1.0 + std::abs(l_prev))) {
        result.converged = true;
        l_prev = l;
        break;
      }
      l_prev = l;
    } catch (const NumericError& err) {
      throw NumericError("sweep " + std::to_string(sweep) + ": " + err.what());
    }
  }
  result.loglik = l_prev;
  return result;
}

}  // namespace glfm
