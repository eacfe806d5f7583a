#ifndef CERTKIT_GPPHS_HPP_
#define CERTKIT_GPPHS_HPP_

#include <vector>

#include <json.hpp>

#include "certkit/types.hpp"

namespace certkit::gpphs {

/**
 * Hyperparameters of the structured kernel
 *
 *   k(x, x') = sigma_f^2 J_R Pi(x, x') J_R'   with J_R = J - R constant,
 *
 * J skew from its strict upper triangle phi_J (row-major), R = L L' with L
 * lower triangular from phi_R (row-major) and a constant input map G.
 */
struct PhsKernelParams
{
  double sigma_f{1.0};
  Vector lengthscales;
  Vector phi_J;
  Vector phi_R;
  Matrix G;

  Eigen::Index dim() const { return lengthscales.size(); }
  Matrix J() const;
  Matrix R() const;
  Matrix JR() const { return J() - R(); }
  void validate() const;

  /// Parameters with the given J, R (Cholesky-factored, semidefinite allowed)
  /// and G.
  static PhsKernelParams from_matrices(double sigma_f, Vector lengthscales, const Matrix & J, const Matrix & R,
    Matrix G);

  nlohmann::json to_json() const;
  static PhsKernelParams from_json(const nlohmann::json & j);
};

struct GpPhsDataset
{
  Matrix X;     // N x d states
  Matrix Xdot;  // N x d derivatives
  Matrix U;     // N x m inputs (m may be 0)
  double noise_var{0.0};

  Eigen::Index size() const { return X.rows(); }
  void validate() const;
};

/// d^2 / dz_i dz'_j of exp(-sum_k (z_k - z'_k)^2 / lambda_k) at (x, x').
Matrix pi_hessian(const Vector & x, const Vector & x2, const Vector & lambda);

/// d x d kernel block k(x, x').
Matrix kernel_block(const PhsKernelParams & p, const Vector & x, const Vector & x2);

inline constexpr double kJitter = 1e-10;

/// Nd x Nd Gram with noise_var and jitter on the diagonal. Throws CholeskyFail
/// when it is not numerically positive definite.
Matrix gram(const PhsKernelParams & p, const Matrix & X, double noise_var);

/// Rows of Xdot - U G' stacked into one vector.
Vector mean_adjusted_targets(const PhsKernelParams & p, const GpPhsDataset & data);

/// 1/2 y' K^-1 y + 1/2 log|K| + Nd/2 log(2 pi) via Cholesky.
double nlml(const PhsKernelParams & p, const GpPhsDataset & data);

struct FitResult
{
  PhsKernelParams params;
  double nlml{0.0};
  int evaluations{0};
  /// False when the evaluation budget ran out before the simplex collapsed.
  bool converged{false};
};

/// Nelder-Mead over log sigma_f, log lengthscales and the raw structure
/// parameters (phi_J, phi_R, G). Returns the best point found.
FitResult fit(const GpPhsDataset & data, const PhsKernelParams & init, int budget);

struct Posterior
{
  std::vector<Vector> mean;   // predicted derivative per query point
  std::vector<Matrix> cov;    // d x d covariance per query point
};

/// GP conditioning at the query states; `U_star` (rows per query, may be
/// empty) adds G u to the mean.
Posterior posterior(const PhsKernelParams & p, const GpPhsDataset & data, const std::vector<Vector> & x_star,
  const Matrix & U_star = Matrix());

/// Derivatives of sampled states: central differences inside, one-sided at
/// both ends. `t` must be strictly increasing with at least two entries.
Matrix derivative_filter(const Vector & t, const Matrix & X);

}  // namespace certkit::gpphs

#endif  // CERTKIT_GPPHS_HPP_
