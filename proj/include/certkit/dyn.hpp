#ifndef CERTKIT_DYN_HPP_
#define CERTKIT_DYN_HPP_

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "certkit/geom.hpp"
#include "certkit/nn.hpp"
#include "certkit/types.hpp"

namespace certkit::dyn {

/// x -> L x + Q(x, x) with Q(x, x)_i = x' Q[i] x and every Q[i] symmetric.
struct Quadratic
{
  Matrix L;
  std::vector<Matrix> Q;

  Quadratic() = default;
  Quadratic(Matrix lin, std::vector<Matrix> quad);

  Eigen::Index dim() const { return L.rows(); }
  Vector eval(const Vector & x) const;
  Matrix jacobian(const Vector & x) const;
};

struct LinearMap
{
  Matrix A;
  Matrix B;  // n x m, m may be zero
};

struct PolynomialMap
{
  Quadratic poly;
};

/// Network map x+ = net([x; u]); the network output has the state dimension.
struct NetworkMap
{
  nn::Mlp net;
  Eigen::Index state_dim{0};
};

struct KoopmanLatent
{
  Matrix K;
};

struct ClosedLoopMap;

using DiscreteMap = std::variant<LinearMap, PolynomialMap, NetworkMap, KoopmanLatent, ClosedLoopMap>;

/**
 * Port-Hamiltonian system x' = (J - R) dH/dx + G u, y = G' dH/dx with
 * H = x'Px/2, J = S - S' and R = L L'.
 */
struct PhsSystem
{
  Matrix S;
  Matrix Lr;
  Matrix G;
  Matrix P;

  PhsSystem() = default;
  PhsSystem(Matrix s, Matrix l, Matrix g, Matrix p);

  Eigen::Index dim() const { return P.rows(); }
  Matrix J() const { return S - S.transpose(); }
  Matrix R() const { return Lr * Lr.transpose(); }
  double hamiltonian(const Vector & x) const { return 0.5 * x.dot(P * x); }
  Vector grad_h(const Vector & x) const { return P * x; }
  Vector output(const Vector & x) const { return G.transpose() * (P * x); }
};

struct LinearDrift
{
  Matrix A;
};

using Drift = std::variant<LinearDrift, Quadratic, PhsSystem>;

/// x' = f(x) + B u with the drift from a closed library and a constant input
/// map. Inputs are clamped to [u_lower, u_upper] before integration.
struct ControlAffineODE
{
  Drift drift;
  Matrix B;
  Vector u_lower;
  Vector u_upper;
  std::optional<geom::Box> domain;

  ControlAffineODE() = default;
  ControlAffineODE(Drift f, Matrix input_map);
  /// PHS drift with its port matrix as the input map.
  static ControlAffineODE from_phs(const PhsSystem & phs);

  Eigen::Index state_dim() const;
  Eigen::Index input_dim() const { return B.cols(); }
  Vector f(const Vector & x) const;
  Matrix g(const Vector & x) const;
  Vector clamp_input(const Vector & u) const;
};

/// Kinematic bicycle: state (x, y, heading, speed), input (steering, accel).
struct BicycleModel
{
  double wheelbase{2.5};
  double steer_limit{0.5};
  double accel_limit{3.0};

  BicycleModel() = default;
  BicycleModel(double l, double steer, double accel);

  Vector clamp_input(const Vector & u) const;
  Vector f(const Vector & x, const Vector & u) const;
};

using ContinuousModel = std::variant<ControlAffineODE, BicycleModel>;

Eigen::Index state_dim(const ContinuousModel & m);
Eigen::Index input_dim(const ContinuousModel & m);
/// Vector field with the input clamped first.
Vector vector_field(const ContinuousModel & m, const Vector & x, const Vector & u);

/// Autonomous map x -> f(x, policy(x)). For a continuous open loop the input
/// is held over one period dt integrated with `substeps` RK4 steps.
struct ClosedLoopMap
{
  std::shared_ptr<const DiscreteMap> open_map;
  std::shared_ptr<const ContinuousModel> open_ode;
  nn::Mlp policy;
  double dt{0.0};
  int substeps{1};
};

Eigen::Index state_dim(const DiscreteMap & m);
Eigen::Index input_dim(const DiscreteMap & m);
const char * kind(const DiscreteMap & m);

/// One evaluation of the map; pass an empty `u` for autonomous maps.
Vector step(const DiscreteMap & model, const Vector & x, const Vector & u = Vector());

/// Classical RK4 with zero-order-hold inputs, `substeps` steps per input
/// period. Returns every substep state; inputs[k] is the clamped input used
/// on [times[k], times[k+1]).
Trajectory simulate_ode(const ContinuousModel & sys, const Vector & x0, const std::vector<Vector> & u_seq,
  double dt, int substeps = 1);

/// One RK4 step of length h under constant (already clamped) input u.
Vector rk4_step(const ContinuousModel & sys, const Vector & x, const Vector & u, double h);

DiscreteMap closed_loop(const DiscreteMap & model, const nn::Mlp & policy);
DiscreteMap closed_loop(const ContinuousModel & model, const nn::Mlp & policy, double dt, int substeps = 1);

/// Policy u = K x as a one-layer identity network.
nn::Mlp linear_policy(const Matrix & K);

/// Central finite-difference Jacobians (A = df/dx, B = df/du); stored matrices
/// for the linear variant. `h <= 0` selects 1e-5 (1 + |x|_inf).
std::pair<Matrix, Matrix> linearize(const DiscreteMap & model, const Vector & x, const Vector & u = Vector(),
  double h = 0.0);

nlohmann::json to_json(const DiscreteMap & m);
nlohmann::json to_json(const ContinuousModel & m);
DiscreteMap discrete_map_from_json(const nlohmann::json & j);
ContinuousModel continuous_model_from_json(const nlohmann::json & j);
/// True when the JSON describes a continuous model ("ode" or "bicycle").
bool is_continuous_json(const nlohmann::json & j);

/// CSV with header t,x0..,u0..; the final row has empty input fields.
std::string trajectory_csv(const Trajectory & traj);

}  // namespace certkit::dyn

#endif  // CERTKIT_DYN_HPP_
