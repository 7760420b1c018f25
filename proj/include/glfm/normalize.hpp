#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "glfm/model.hpp"

namespace glfm {

struct NormalizeResult {
  ParameterSet params;
  Eigen::MatrixXd rotation;      // H with the sign convention folded in
  bool eigengap_warning = false; // adjacent factor scales nearly equal
};

namespace detail {

inline void check_normalize_variant(const ParamLayout& lay) {
  if (lay.tvl && !lay.tvc && lay.p > 0)
    throw ConfigError(
        "time-varying loadings with static coefficients cannot be normalized exactly; "
        "enable time-varying coefficients");
}

// Names covariate columns that make X'X (or [1 X]'[1 X]) rank deficient.
inline void require_full_rank(const Eigen::MatrixXd& X, const std::string& what) {
  if (X.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  if (rank >= X.cols()) return;
  std::string cols;
  const auto perm = qr.colsPermutation().indices();
  for (int k = rank; k < X.cols(); ++k) {
    if (!cols.empty()) cols += ", ";
    cols += std::to_string(perm(k) + 1);
  }
  throw ConfigError(what + " is rank deficient; dependent column(s): " + cols);
}

// Symmetric PSD square root (and inverse root) with an eigenvalue floor.
inline void psd_sqrt(const Eigen::MatrixXd& S, Eigen::MatrixXd& half, Eigen::MatrixXd& inv_half) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  Eigen::ArrayXd vals = eig.eigenvalues().array().max(1e-12);
  const Eigen::MatrixXd& V = eig.eigenvectors();
  half = V * vals.sqrt().matrix().asDiagonal() * V.transpose();
  inv_half = V * vals.rsqrt().matrix().asDiagonal() * V.transpose();
}

}  // namespace detail

// Absorbs the covariate projection of Theta into B (per time point when the
// coefficients are time-varying), leaving every natural parameter unchanged
// and making Theta'X = 0.
inline ParameterSet normalize_beta_only(const ModelSpec& spec, const ParamLayout& lay,
                                        ParameterSet params, const Eigen::MatrixXd& X) {
  (void)spec;
  detail::check_normalize_variant(lay);
  if (lay.K == 0 || lay.p == 0) return params;
  if (X.rows() != params.theta.rows() || X.cols() != lay.p)
    throw ConfigError("covariate matrix does not match the parameter set");
  detail::require_full_rank(X, "X'X");

  const Eigen::MatrixXd XtX = X.transpose() * X;
  const Eigen::LDLT<Eigen::MatrixXd> solver(XtX);
  const Eigen::MatrixXd C = solver.solve(X.transpose() * params.theta);  // p x K
  const int n_beta_blocks = lay.tvc ? lay.T : 1;
  for (int t = 0; t < n_beta_blocks; ++t) {
    const Eigen::MatrixXd At = params.item_params.middleCols(lay.a_block(t), lay.K);
    const Eigen::MatrixXd Lt = C * At.transpose();  // p x J
    params.item_params.middleCols(lay.beta_off + t * lay.p, lay.p) += Lt.transpose();
  }
  params.theta -= X * C;
  return params;
}

// Full identifiability transform: absorbs intercept/covariate projections of
// Theta into Gamma and B, then rotates so that A'A/J = I_K and Theta'Theta/N
// is diagonal with non-increasing entries. Under the linear-intercept
// restriction the centering column is dropped and Gamma is left alone.
// Natural parameters are preserved throughout. Column signs are fixed so the
// largest-magnitude loading in each column of A is positive.
inline NormalizeResult normalize_full(const ModelSpec& spec, const ParamLayout& lay,
                                      ParameterSet params, const Eigen::MatrixXd& X) {
  (void)spec;
  detail::check_normalize_variant(lay);
  NormalizeResult out;
  const int K = lay.K;
  if (K == 0) {
    out.params = std::move(params);
    out.rotation.resize(0, 0);
    return out;
  }
  const int N = static_cast<int>(params.theta.rows());
  const int J = static_cast<int>(params.item_params.rows());
  if (lay.p > 0 && (X.rows() != N || X.cols() != lay.p))
    throw ConfigError("covariate matrix does not match the parameter set");

  // IX = [1 X], or just X when gamma_jt = t gamma_j (no centering condition)
  const int q = (lay.lin_gamma ? 0 : 1) + lay.p;
  Eigen::MatrixXd IX(N, q);
  if (!lay.lin_gamma) IX.col(0).setOnes();
  if (lay.p > 0) IX.rightCols(lay.p) = X;

  Eigen::MatrixXd theta_tilde = params.theta;
  if (q > 0) {
    detail::require_full_rank(IX, lay.lin_gamma ? "X'X" : "[1 X]'[1 X]");
    const Eigen::LDLT<Eigen::MatrixXd> solver(IX.transpose() * IX);
    const Eigen::MatrixXd C = solver.solve(IX.transpose() * params.theta);  // q x K
    theta_tilde -= IX * C;
    const int n_blocks = lay.tvl ? lay.T : 1;
    for (int t = 0; t < n_blocks; ++t) {
      const Eigen::MatrixXd At = params.item_params.middleCols(lay.a_block(t), K);
      const Eigen::MatrixXd Lt = C * At.transpose();  // q x J
      if (!lay.lin_gamma) {
        if (n_blocks == 1) {
          // one loading block: the same centering shift applies at every t
          for (int s = 0; s < lay.gamma_len; ++s)
            params.item_params.col(lay.gamma_off + s) += Lt.row(0).transpose();
        } else {
          params.item_params.col(lay.gamma_off + t) += Lt.row(0).transpose();
        }
      }
      if (lay.p > 0)
        params.item_params.middleCols(lay.beta_block(t), lay.p) +=
            Lt.bottomRows(lay.p).transpose();
    }
  }

  const Eigen::MatrixXd A1 = params.item_params.middleCols(lay.a_block(0), K);
  Eigen::MatrixXd Sja_half, Sja_invhalf;
  detail::psd_sqrt(A1.transpose() * A1 / static_cast<double>(J), Sja_half, Sja_invhalf);
  const Eigen::MatrixXd Snt = theta_tilde.transpose() * theta_tilde / static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Sja_half * Snt * Sja_half);

  // descending factor scales
  Eigen::VectorXd D(K);
  Eigen::MatrixXd V(K, K);
  for (int k = 0; k < K; ++k) {
    D(k) = eig.eigenvalues()(K - 1 - k);
    V.col(k) = eig.eigenvectors().col(K - 1 - k);
  }
  for (int k = 0; k + 1 < K; ++k)
    if (std::abs(D(k) - D(k + 1)) < 1e-10) out.eigengap_warning = true;

  Eigen::MatrixXd H = V.transpose() * Sja_invhalf;       // H = (Sja^{-1/2} V)'
  const Eigen::MatrixXd Hinv = Sja_half * V;             // H^{-1}
  params.theta = theta_tilde * Hinv;
  const int n_a_blocks = lay.tvl ? lay.T : 1;
  for (int t = 0; t < n_a_blocks; ++t) {
    auto At = params.item_params.middleCols(lay.a_block(t), K);
    At = (At * H.transpose()).eval();
  }

  // sign convention based on the first loading block
  Eigen::VectorXd signs = Eigen::VectorXd::Ones(K);
  const Eigen::MatrixXd Anew = params.item_params.middleCols(lay.a_block(0), K);
  for (int k = 0; k < K; ++k) {
    int argmax = 0;
    Anew.col(k).cwiseAbs().maxCoeff(&argmax);
    if (Anew(argmax, k) < 0.0) signs(k) = -1.0;
  }
  for (int t = 0; t < n_a_blocks; ++t)
    for (int k = 0; k < K; ++k)
      params.item_params.col(lay.a_block(t) + k) *= signs(k);
  for (int k = 0; k < K; ++k) params.theta.col(k) *= signs(k);
  H = signs.asDiagonal() * H;

  out.params = std::move(params);
  out.rotation = H;
  return out;
}

// Convenience overloads taking the dataset the parameters were fitted to.
inline ParameterSet normalize_beta_only(const ModelSpec& spec, const Dataset& data,
                                        const ParameterSet& params) {
  return normalize_beta_only(spec, ParamLayout::make(spec, data), params, data.covariates);
}

inline NormalizeResult normalize_full(const ModelSpec& spec, const Dataset& data,
                                      const ParameterSet& params) {
  return normalize_full(spec, ParamLayout::make(spec, data), params, data.covariates);
}

}  // namespace glfm
