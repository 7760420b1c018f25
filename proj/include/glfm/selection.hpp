#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "glfm/estimator.hpp"
#include "glfm/init.hpp"
#include "glfm/model.hpp"

namespace glfm {

// Penalty per latent dimension. Time-varying loadings add T*J parameters per
// dimension instead of J, which moves the leading factor to max(N, T*J).
inline double penalty_lambda(const ModelSpec& spec, const Dataset& data) {
  const double N = data.n_persons;
  const double J = data.n_items;
  const double waves = data.observed_waves();
  if (waves <= 0.0) throw ConfigError("penalty requires at least one observed wave");
  const double lead = spec.time_varying_loadings
                          ? std::max(N, static_cast<double>(data.n_times) * J)
                          : std::max(N, J);
  return lead * std::log(J * waves / lead);
}

struct SelectionOptions {
  FitOptions fit;
  InitOptions init;
  bool use_svd_init = true;  // falls back to random_init when unsupported
  int threads = 1;
};

struct SelectionResult {
  int k_hat = -1;
  std::map<int, double> ic_values;
  std::map<int, FitResult> fits;
  std::vector<std::string> warnings;
};

// Ties resolve toward the smaller K: the map iterates in ascending K and
// only a strictly smaller criterion replaces the incumbent.
inline int argmin_ic(const std::map<int, double>& ic_values) {
  int k_hat = -1;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [K, ic] : ic_values) {
    if (ic < best) {
      best = ic;
      k_hat = K;
    }
  }
  return k_hat;
}

inline ParameterSet starting_point(const ModelSpec& spec, const Dataset& data,
                                   const SelectionOptions& opts) {
  if (opts.use_svd_init && svd_init_supported(data)) return svd_init(spec, data, opts.init);
  return random_init(spec, data, opts.fit.seed);
}

// Fits every candidate K and picks the minimizer of
// IC(K) = -2 l(Xi_K) + K Lambda_NJ; ties resolve toward the smaller K.
inline SelectionResult select_k(const ModelSpec& spec_template, const Dataset& data,
                                std::vector<int> candidates, const SelectionOptions& opts = {}) {
  if (candidates.empty()) throw ConfigError("candidate set must be nonempty");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.front() < 0) throw ConfigError("candidate K must be >= 0");

  const double lambda = penalty_lambda(spec_template, data);
  const int n = static_cast<int>(candidates.size());
  std::vector<FitResult> results(n);
  std::vector<std::string> failures(n);

  parallel_for(n, opts.threads, [&](int c) {
    ModelSpec spec = spec_template;
    spec.n_factors = candidates[static_cast<std::size_t>(c)];
    try {
      const ParameterSet start = starting_point(spec, data, opts);
      results[static_cast<std::size_t>(c)] = fit(spec, data, start, opts.fit);
    } catch (const std::exception& err) {
      failures[static_cast<std::size_t>(c)] = err.what();
    }
  });

  SelectionResult out;
  for (int c = 0; c < n; ++c) {
    const int K = candidates[static_cast<std::size_t>(c)];
    if (!failures[static_cast<std::size_t>(c)].empty()) {
      out.warnings.push_back("K=" + std::to_string(K) + " failed: " +
                             failures[static_cast<std::size_t>(c)]);
      continue;
    }
    FitResult& fr = results[static_cast<std::size_t>(c)];
    const double ic = -2.0 * fr.loglik + K * lambda;
    out.ic_values[K] = ic;
    out.fits[K] = std::move(fr);
  }
  if (out.ic_values.empty()) throw NumericError("all candidate fits failed");
  out.k_hat = argmin_ic(out.ic_values);
  return out;
}

}  // namespace glfm
