#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "glfm/common.hpp"

namespace glfm {

enum class Family { Bernoulli, Poisson, Gaussian };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::Bernoulli: return "bernoulli";
    case Family::Poisson: return "poisson";
    case Family::Gaussian: return "gaussian";
  }
  return "unknown";
}

// Multivariate longitudinal responses y_ijt with whole-wave missingness r_it,
// static covariates x_i and optional time-dependent covariates z_it.
//
// responses is stored N x (J*T): column t*J + j holds item j at time t, so a
// person's wave is contiguous per (j, t) pair. Entries at unobserved (i, t)
// are carried but ignored everywhere.
struct Dataset {
  int n_persons = 0;  // N
  int n_items = 0;    // J
  int n_times = 0;    // T

  Eigen::MatrixXd responses;                     // N x (J*T)
  Eigen::MatrixXd observed;                      // N x T, entries in {0, 1}
  Eigen::MatrixXd covariates;                    // N x p
  std::vector<Eigen::MatrixXd> time_covariates;  // T matrices N x p_z, or empty
  std::vector<Family> families;                  // per item

  int n_covariates() const { return static_cast<int>(covariates.cols()); }
  int n_time_covariates() const {
    return time_covariates.empty() ? 0 : static_cast<int>(time_covariates.front().cols());
  }

  double y(int i, int j, int t) const { return responses(i, t * n_items + j); }
  double& y_ref(int i, int j, int t) { return responses(i, t * n_items + j); }
  bool obs(int i, int t) const { return observed(i, t) != 0.0; }

  // Total number of observed person-waves, sum_{i,t} r_it.
  double observed_waves() const { return observed.sum(); }

  void validate() const {
    const int N = n_persons, J = n_items, T = n_times;
    if (N <= 0 || J <= 0 || T <= 0)
      throw ConfigError("dataset dimensions must be positive");
    if (responses.rows() != N || responses.cols() != static_cast<long>(J) * T)
      throw ConfigError("responses must be N x (J*T)");
    if (observed.rows() != N || observed.cols() != T)
      throw ConfigError("missing indicator must be N x T");
    if (covariates.rows() != N && covariates.cols() > 0)
      throw ConfigError("covariates must have N rows");
    if (!time_covariates.empty()) {
      if (static_cast<int>(time_covariates.size()) != T)
        throw ConfigError("time covariates must provide one matrix per time point");
      for (const auto& z : time_covariates)
        if (z.rows() != N || z.cols() != time_covariates.front().cols())
          throw ConfigError("time covariate matrices must all be N x p_z");
    }
    if (static_cast<int>(families.size()) != J)
      throw ConfigError("family tags must have one entry per item");
    for (int i = 0; i < N; ++i) {
      bool any = false;
      for (int t = 0; t < T; ++t) {
        const double r = observed(i, t);
        if (r != 0.0 && r != 1.0)
          throw ConfigError("missing indicator entries must be 0 or 1");
        any = any || r == 1.0;
      }
      if (!any)
        throw ConfigError("person " + std::to_string(i + 1) + " has no observed time point");
    }
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < covariates.cols(); ++l)
        if (!std::isfinite(covariates(i, l)))
          throw ConfigError("non-finite covariate at person " + std::to_string(i + 1));
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < J; ++j)
        for (int i = 0; i < N; ++i) {
          if (!obs(i, t)) continue;
          const double v = y(i, j, t);
          if (!std::isfinite(v)) throw ConfigError("non-finite response");
          if (families[j] == Family::Bernoulli && v != 0.0 && v != 1.0)
            throw ConfigError("bernoulli response outside {0,1} at (" + std::to_string(i + 1) +
                              "," + std::to_string(j + 1) + "," + std::to_string(t + 1) + ")");
          if (families[j] == Family::Poisson && (v < 0.0 || std::floor(v) != v))
            throw ConfigError("poisson response must be a nonnegative integer at (" +
                              std::to_string(i + 1) + "," + std::to_string(j + 1) + "," +
                              std::to_string(t + 1) + ")");
        }
  }
};

// Model structure: latent dimension, extension switches and constraint radii.
struct ModelSpec {
  int n_factors = 0;                    // K
  bool time_varying_loadings = false;   // a_jt
  bool time_varying_coefficients = false;  // beta_jt (requires a_jt layout too)
  bool linear_intercept = false;        // gamma_jt = t * gamma_j
  bool use_time_covariates = false;     // v_j' z_it term
  double c1 = 5.0;
  double c2 = 5.0;

  void validate() const {
    if (n_factors < 0) throw ConfigError("n_factors must be >= 0");
    if (c1 <= 0.0 || c2 <= 0.0) throw ConfigError("constraint radii must be positive");
  }
};

// Layout of the per-item parameter vector u_j and the matching design row
// e_it, so that eta_ijt = u_j' e_it for every variant:
//
//   u_j  = (gamma block, beta block(s), [v_j], a block(s))
//   e_it = (time dummies or t, x_i [per-time], [z_it], theta_i [per-time])
struct ParamLayout {
  int T = 0, p = 0, pz = 0, K = 0;
  bool tvl = false, tvc = false, lin_gamma = false, use_z = false;

  int gamma_len = 0, beta_len = 0, v_len = 0, a_len = 0;
  int gamma_off = 0, beta_off = 0, v_off = 0, a_off = 0;
  int P = 0;

  static ParamLayout make(const ModelSpec& spec, const Dataset& data) {
    spec.validate();
    ParamLayout lay;
    lay.T = data.n_times;
    lay.p = data.n_covariates();
    lay.pz = spec.use_time_covariates ? data.n_time_covariates() : 0;
    lay.K = spec.n_factors;
    lay.tvl = spec.time_varying_loadings;
    lay.tvc = spec.time_varying_coefficients;
    lay.lin_gamma = spec.linear_intercept;
    lay.use_z = spec.use_time_covariates;
    if (lay.tvc && !lay.tvl)
      throw ConfigError("time-varying coefficients require time-varying loadings");
    if (lay.use_z && data.n_time_covariates() == 0)
      throw ConfigError("model uses time covariates but the dataset has none");
    lay.gamma_len = lay.lin_gamma ? 1 : lay.T;
    lay.beta_len = (lay.tvc ? lay.T : 1) * lay.p;
    lay.v_len = lay.pz;
    lay.a_len = (lay.tvl ? lay.T : 1) * lay.K;
    lay.gamma_off = 0;
    lay.beta_off = lay.gamma_len;
    lay.v_off = lay.beta_off + lay.beta_len;
    lay.a_off = lay.v_off + lay.v_len;
    lay.P = lay.a_off + lay.a_len;
    return lay;
  }

  // 0-based coordinate of the intercept active at time t.
  int gamma_slot(int t) const { return lin_gamma ? 0 : t; }
  // value the design row carries in that slot (t is 0-based, the model's
  // time index is t+1)
  double gamma_design(int t) const { return lin_gamma ? static_cast<double>(t + 1) : 1.0; }
  int beta_block(int t) const { return beta_off + (tvc ? t * p : 0); }
  int a_block(int t) const { return a_off + (tvl ? t * K : 0); }

  // Index range of the regression coefficients used for inference at time t.
  int beta_block_len() const { return beta_len; }
};

// e_it for person i at time t given that person's factor score.
inline Eigen::VectorXd build_design_row(const ModelSpec& spec, const Dataset& data,
                                        const Eigen::VectorXd& theta_i, int i, int t) {
  const ParamLayout lay = ParamLayout::make(spec, data);
  if (t < 0 || t >= data.n_times) throw ConfigError("time index out of range");
  if (i < 0 || i >= data.n_persons) throw ConfigError("person index out of range");
  if (theta_i.size() != lay.K) throw ConfigError("factor score has wrong length");
  for (int k = 0; k < lay.K; ++k)
    if (!std::isfinite(theta_i(k))) throw ConfigError("non-finite factor score");

  Eigen::VectorXd e = Eigen::VectorXd::Zero(lay.P);
  e(lay.gamma_slot(t)) = lay.gamma_design(t);
  if (lay.p > 0) e.segment(lay.beta_block(t), lay.p) = data.covariates.row(i).transpose();
  if (lay.pz > 0) e.segment(lay.v_off, lay.pz) = data.time_covariates[t].row(i).transpose();
  if (lay.K > 0) e.segment(lay.a_block(t), lay.K) = theta_i;
  return e;
}

namespace detail {

inline std::atomic<long>& poisson_clamp_counter() {
  static std::atomic<long> count{0};
  return count;
}

constexpr double kPoissonEtaMax = 30.0;

}  // namespace detail

// Number of times a Poisson natural parameter was clamped before exp().
inline long poisson_clamp_count() { return detail::poisson_clamp_counter().load(); }
inline void reset_poisson_clamp_count() { detail::poisson_clamp_counter().store(0); }

inline double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// b_j and its first three derivatives, overflow-safe.
inline double family_b(Family family, int order, double eta) {
  switch (family) {
    case Family::Bernoulli: {
      if (order == 0) return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
      const double s = sigmoid(eta);
      if (order == 1) return s;
      const double sm = sigmoid(-eta);  // 1 - s without cancellation
      if (order == 2) return s * sm;
      return s * sm * (sm - s);
    }
    case Family::Poisson: {
      double e = eta;
      if (e > detail::kPoissonEtaMax) {
        e = detail::kPoissonEtaMax;
        detail::poisson_clamp_counter().fetch_add(1, std::memory_order_relaxed);
      }
      return std::exp(e);
    }
    case Family::Gaussian: {
      if (order == 0) return 0.5 * eta * eta;
      if (order == 1) return eta;
      if (order == 2) return 1.0;
      return 0.0;
    }
  }
  return 0.0;
}

namespace detail {

// Per-time compressed design used by the likelihood and the estimator.
// Column layout: [gamma value, x_i, z_it, theta_i]; scatter[q] maps column q
// of F_t to a coordinate of u_j. Distinct times never share a (gamma, beta,
// loading) slot unless the layout says so, which the scatter map encodes.
struct DesignCache {
  ParamLayout lay;
  std::vector<Eigen::MatrixXd> F;        // per t: N x Q
  std::vector<std::vector<int>> scatter; // per t: Q indices into u

  int Q() const { return 1 + lay.p + lay.pz + lay.K; }

  void build(const ModelSpec& spec, const Dataset& data, const Eigen::MatrixXd& theta) {
    lay = ParamLayout::make(spec, data);
    const int N = data.n_persons, T = data.n_times, Q = this->Q();
    if (theta.rows() != N || theta.cols() != lay.K)
      throw ConfigError("theta must be N x K");
    F.assign(T, Eigen::MatrixXd(N, Q));
    scatter.assign(T, std::vector<int>(Q));
    for (int t = 0; t < T; ++t) {
      F[t].col(0).setConstant(lay.gamma_design(t));
      if (lay.p > 0) F[t].middleCols(1, lay.p) = data.covariates;
      if (lay.pz > 0) F[t].middleCols(1 + lay.p, lay.pz) = data.time_covariates[t];
      if (lay.K > 0) F[t].rightCols(lay.K) = theta;
      auto& idx = scatter[t];
      idx[0] = lay.gamma_slot(t);
      for (int l = 0; l < lay.p; ++l) idx[1 + l] = lay.beta_block(t) + l;
      for (int l = 0; l < lay.pz; ++l) idx[1 + lay.p + l] = lay.v_off + l;
      for (int k = 0; k < lay.K; ++k) idx[1 + lay.p + lay.pz + k] = lay.a_block(t) + k;
    }
  }

  void refresh_theta(const Eigen::MatrixXd& theta) {
    if (lay.K == 0) return;
    for (auto& Ft : F) Ft.rightCols(lay.K) = theta;
  }

  // Gather of u over the coordinates active at time t.
  Eigen::VectorXd gather(const Eigen::VectorXd& u, int t) const {
    const auto& idx = scatter[t];
    Eigen::VectorXd out(idx.size());
    for (std::size_t q = 0; q < idx.size(); ++q) out(static_cast<long>(q)) = u(idx[q]);
    return out;
  }

  // eta for one item at time t across all persons.
  void eta_item(const Eigen::VectorXd& u, int t, Eigen::VectorXd& out) const {
    out.noalias() = F[t] * gather(u, t);
  }

  // eta for all items at time t: N x J.
  void eta_all(const Eigen::MatrixXd& item_params, int t, Eigen::MatrixXd& out) const {
    const auto& idx = scatter[t];
    Eigen::MatrixXd Uc(item_params.rows(), static_cast<long>(idx.size()));
    for (std::size_t q = 0; q < idx.size(); ++q)
      Uc.col(static_cast<long>(q)) = item_params.col(idx[q]);
    out.noalias() = F[t] * Uc.transpose();
  }
};

}  // namespace detail

// Fitted/true parameter values: factor scores, stacked item parameter rows
// laid out per ParamLayout, and per-item scale parameters.
struct ParameterSet {
  Eigen::MatrixXd theta;        // N x K
  Eigen::MatrixXd item_params;  // J x P
  Eigen::VectorXd scale;        // J, phi_j (1 for Bernoulli/Poisson)

  void validate(const ModelSpec& spec, const Dataset& data) const {
    const ParamLayout lay = ParamLayout::make(spec, data);
    if (theta.rows() != data.n_persons || theta.cols() != lay.K)
      throw ConfigError("theta must be N x K");
    if (item_params.rows() != data.n_items || item_params.cols() != lay.P)
      throw ConfigError("item_params must be J x P with P matching the model layout");
    if (scale.size() != data.n_items) throw ConfigError("scale must have J entries");
    for (int j = 0; j < data.n_items; ++j)
      if (!(scale(j) > 0.0)) throw ConfigError("scale parameters must be positive");
  }
};

inline ParameterSet zero_params(const ModelSpec& spec, const Dataset& data) {
  const ParamLayout lay = ParamLayout::make(spec, data);
  ParameterSet params;
  params.theta = Eigen::MatrixXd::Zero(data.n_persons, lay.K);
  params.item_params = Eigen::MatrixXd::Zero(data.n_items, lay.P);
  params.scale = Eigen::VectorXd::Ones(data.n_items);
  return params;
}

// eta_ijt for all (i, j) at a fixed time.
inline Eigen::MatrixXd predict_natural_params(const ModelSpec& spec, const Dataset& data,
                                              const ParameterSet& params, int t) {
  if (t < 0 || t >= data.n_times) throw ConfigError("time index out of range");
  params.validate(spec, data);
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  Eigen::MatrixXd eta;
  cache.eta_all(params.item_params, t, eta);
  return eta;
}

// Joint log-likelihood, sum over observed waves of phi_j^{-1} (y eta - b(eta)).
// The normalizing term c_j(y, phi) is not part of the objective.
inline double joint_loglik(const ModelSpec& spec, const Dataset& data,
                           const ParameterSet& params) {
  params.validate(spec, data);
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  const int N = data.n_persons, J = data.n_items, T = data.n_times;
  double total = 0.0;
  Eigen::MatrixXd eta;
  for (int t = 0; t < T; ++t) {
    cache.eta_all(params.item_params, t, eta);
    for (int j = 0; j < J; ++j) {
      const Family fam = data.families[j];
      const double invphi = 1.0 / params.scale(j);
      double acc = 0.0;
      for (int i = 0; i < N; ++i) {
        if (!data.obs(i, t)) continue;
        const double e = eta(i, j);
        if (!std::isfinite(e)) {
          std::ostringstream msg;
          msg << "non-finite natural parameter at (i,j,t) = (" << i + 1 << "," << j + 1 << ","
              << t + 1 << ")";
          throw NumericError(msg.str());
        }
        acc += data.y(i, j, t) * e - family_b(fam, 0, e);
      }
      total += invphi * acc;
    }
  }
  return total;
}

}  // namespace glfm
