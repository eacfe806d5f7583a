#ifndef CERTKIT_CERTIFY_HPP_
#define CERTKIT_CERTIFY_HPP_

#include <complex>
#include <functional>
#include <vector>

#include "certkit/dyn.hpp"
#include "certkit/geom.hpp"
#include "certkit/nn.hpp"
#include "certkit/report.hpp"
#include "certkit/types.hpp"

namespace certkit::certify {

using ScalarField = std::function<double(const Vector &)>;
using VectorField = std::function<Vector(const Vector &)>;

/// Eigenvalues by Hessenberg reduction and shifted QR (Eigen's real Schur
/// solver). Throws NoConvergence when the iteration cap is hit.
Eigen::VectorXcd eigenvalues(const Matrix & K);
double spectral_radius(const Matrix & K);
/// Max eigenvalue modulus below 1 - 1e-12.
bool is_schur(const Matrix & K);

struct SvdClampSpec
{
  Vector raw;
  double lambda_min{0.0};
  double lambda_max{1.0};
};

/// Diagonal of Sigma: lambda_max - (lambda_max - lambda_min) * sigmoid(raw).
Vector clamped_singular_values(const SvdClampSpec & spec);
/// U * Sigma * V.
Matrix svd_clamp(const SvdClampSpec & spec, const Matrix & U, const Matrix & V);

enum class DefectNorm { Spectral, Frobenius };

/// ||I - M M'|| + ||I - M'M||.
double orthogonality_defect(const Matrix & M, DefectNorm norm = DefectNorm::Spectral);

/// Structure and energy checks of a port-Hamiltonian system along a
/// trajectory produced by dyn::simulate_ode. `step_tol` bounds the per-step
/// excess of dH over the trapezoid estimate of the supplied energy.
Report phs_checks(const dyn::PhsSystem & sys, const Trajectory & traj, double step_tol = 1e-8);

inline constexpr double kConservationTol = 1e-8;

/// Max over samples of |sum_i f_i(x)| for an ODE (zero input) or
/// |sum_i (f(x) - x)_i| for a map.
Report conservation_check(const dyn::DiscreteMap & model, const geom::PointSet & samples);
Report conservation_check(const dyn::ContinuousModel & model, const geom::PointSet & samples);

/// e(x) = x' Q(x, x) on the samples plus the algebraic defect: the largest
/// fully symmetrized coefficient sum over index triples.
Report quadratic_energy_check(const dyn::Quadratic & poly, const geom::PointSet & samples);
Report quadratic_energy_check(const dyn::PolynomialMap & model, const geom::PointSet & samples);

/// sum over trajectories and transitions of max(0, V(x_{k+1}) - V(x_k))^2.
double lyapunov_decrease_loss(const ScalarField & V, const std::vector<std::vector<Vector>> & trajectories);
double lyapunov_decrease_loss(const nn::LyapunovCandidate & V, const std::vector<std::vector<Vector>> & trajectories);
double lyapunov_decrease_loss(const nn::Mlp & V, const std::vector<std::vector<Vector>> & trajectories);

/// Zubov PDE data. `grad_W` may be left empty, in which case central
/// differences with step 1e-5 are used.
struct ZubovSpec
{
  ScalarField W;
  VectorField grad_W;
  ScalarField psi;
  VectorField f;

  ZubovSpec() = default;
  ZubovSpec(ScalarField w, VectorField grad_w, VectorField dynamics, ScalarField psi_fn = {});
  /// Network W (scalar output) with finite-difference gradient.
  static ZubovSpec from_network(const nn::Mlp & W, VectorField dynamics, ScalarField psi_fn = {});
};

/// Residual grad W . f + psi (1 - W) over the samples. Checks max |residual|
/// against `tol`, W(0) = 0 and W in (0, 1) at every nonzero sample.
Report zubov_residual(const ZubovSpec & spec, const geom::PointSet & samples, double tol = 1e-6);

/// Central-difference gradient.
Vector numeric_gradient(const ScalarField & f, const Vector & x, double h = 1e-5);

}  // namespace certkit::certify

#endif  // CERTKIT_CERTIFY_HPP_
