#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <vector>

#include "glfm/model.hpp"

namespace glfm {

// Predicted success probabilities (Bernoulli) or means (Poisson/Gaussian)
// for time T+1. The unknown period-(T+1) quantities are substituted by their
// period-T counterparts: gamma_{j,T} for the intercept (or (T+1) gamma_j
// under the linear-intercept restriction), the t = T blocks of time-varying
// coefficients and loadings, and z_{i,T} for time-dependent covariates.
inline Eigen::MatrixXd predict_proba_next(const ModelSpec& spec, const Dataset& data,
                                          const ParameterSet& params) {
  params.validate(spec, data);
  detail::DesignCache cache;
  cache.build(spec, data, params.theta);
  const ParamLayout& lay = cache.lay;
  const int last = data.n_times - 1;
  Eigen::MatrixXd eta;
  cache.eta_all(params.item_params, last, eta);
  if (lay.lin_gamma) {
    // move the intercept term from T gamma_j to (T+1) gamma_j
    eta.rowwise() += params.item_params.col(lay.gamma_off).transpose();
  }
  Eigen::MatrixXd out(data.n_persons, data.n_items);
  for (int j = 0; j < data.n_items; ++j) {
    const Family fam = data.families[j];
    for (int i = 0; i < data.n_persons; ++i)
      out(i, j) = fam == Family::Bernoulli ? sigmoid(eta(i, j)) : family_b(fam, 1, eta(i, j));
  }
  return out;
}

// Residual deviance at time t: D_jt = sum_i -2 r_it { y log p + (1-y) log(1-p) }.
// Probabilities exactly 0 or 1 are clipped at 1e-12 with a warning.
inline std::pair<Eigen::VectorXd, double> residual_deviance(const ModelSpec& spec,
                                                            const Dataset& data,
                                                            const Eigen::MatrixXd& probs, int t) {
  (void)spec;
  if (t < 0 || t >= data.n_times) throw ConfigError("time index out of range");
  if (probs.rows() != data.n_persons || probs.cols() != data.n_items)
    throw ConfigError("probability matrix must be N x J");
  long clipped = 0;
  Eigen::VectorXd per_item = Eigen::VectorXd::Zero(data.n_items);
  for (int j = 0; j < data.n_items; ++j) {
    double acc = 0.0;
    for (int i = 0; i < data.n_persons; ++i) {
      if (!data.obs(i, t)) continue;
      double p = probs(i, j);
      if (!(p > 0.0 && p < 1.0)) {
        p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
        ++clipped;
      }
      const double y = data.y(i, j, t);
      acc += -2.0 * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    per_item(j) = acc;
  }
  if (clipped > 0)
    std::cerr << "residual_deviance: clipped " << clipped << " degenerate probabilities\n";
  return {per_item, per_item.sum()};
}

enum class Strategy { Hist, Prop, HistHist, HistProp };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Hist: return "hist";
    case Strategy::Prop: return "prop";
    case Strategy::HistHist: return "hist-hist";
    case Strategy::HistProp: return "hist-prop";
  }
  return "unknown";
}

struct RecommendationConfig {
  Strategy strategy = Strategy::Prop;
  int top_k = 1;
  std::uint64_t tie_seed = 0;
};

// Top-k recommendations per person; entries are 1-based item ids.
//   Prop:      descending predicted probability.
//   Hist:      descending personal purchase count, ties broken at random.
//   HistHist:  as Hist, ties broken by overall item popularity.
//   HistProp:  as Hist, ties broken by predicted probability.
inline Eigen::MatrixXi recommend(const RecommendationConfig& config,
                                 const Eigen::MatrixXi& history_counts,
                                 const Eigen::MatrixXd& probs) {
  const int N = static_cast<int>(history_counts.rows());
  const int J = static_cast<int>(history_counts.cols());
  if (config.top_k < 1 || config.top_k > J) throw ConfigError("top_k must lie in [1, J]");
  if (probs.rows() != N || probs.cols() != J)
    throw ConfigError("probability matrix must match history counts");

  const Eigen::VectorXi popularity = history_counts.colwise().sum();
  Eigen::MatrixXi out(N, config.top_k);
  std::vector<int> order(static_cast<std::size_t>(J));
  for (int i = 0; i < N; ++i) {
    std::iota(order.begin(), order.end(), 0);
    switch (config.strategy) {
      case Strategy::Prop:
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          if (probs(i, a) != probs(i, b)) return probs(i, a) > probs(i, b);
          return a < b;
        });
        break;
      case Strategy::Hist: {
        Rng rng(detail::derive_seed(config.tie_seed, static_cast<std::uint64_t>(i)));
        const std::vector<int> rho = rng.permutation(J);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          if (history_counts(i, a) != history_counts(i, b))
            return history_counts(i, a) > history_counts(i, b);
          return rho[static_cast<std::size_t>(a)] < rho[static_cast<std::size_t>(b)];
        });
        break;
      }
      case Strategy::HistHist:
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          if (history_counts(i, a) != history_counts(i, b))
            return history_counts(i, a) > history_counts(i, b);
          if (popularity(a) != popularity(b)) return popularity(a) > popularity(b);
          return a < b;
        });
        break;
      case Strategy::HistProp:
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          if (history_counts(i, a) != history_counts(i, b))
            return history_counts(i, a) > history_counts(i, b);
          if (probs(i, a) != probs(i, b)) return probs(i, a) > probs(i, b);
          return a < b;
        });
        break;
    }
    for (int k = 0; k < config.top_k; ++k) out(i, k) = order[static_cast<std::size_t>(k)] + 1;
  }
  return out;
}

// Fraction of actual purchases captured by the recommended sets.
inline double sensitivity(const Eigen::MatrixXi& recommendations,
                          const Eigen::MatrixXd& actual) {
  const int N = static_cast<int>(actual.rows());
  const int J = static_cast<int>(actual.cols());
  if (recommendations.rows() != N) throw ConfigError("recommendations must have N rows");
  long hits = 0, total = 0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < J; ++j)
      if (actual(i, j) != 0.0) ++total;
    for (int k = 0; k < recommendations.cols(); ++k) {
      const int item = recommendations(i, k) - 1;
      if (item < 0 || item >= J) throw ConfigError("recommended item id out of range");
      if (actual(i, item) != 0.0) ++hits;
    }
  }
  if (total == 0) throw NumericError("sensitivity is undefined without any actual purchase");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Cumulative purchase counts over the observed training waves.
inline Eigen::MatrixXi history_counts(const Dataset& data) {
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(data.n_persons, data.n_items);
  for (int t = 0; t < data.n_times; ++t)
    for (int j = 0; j < data.n_items; ++j)
      for (int i = 0; i < data.n_persons; ++i)
        if (data.obs(i, t) && data.y(i, j, t) != 0.0) counts(i, j) += 1;
  return counts;
}

}  // namespace glfm
