#ifndef CERTKIT_NN_HPP_
#define CERTKIT_NN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "certkit/geom.hpp"
#include "certkit/report.hpp"
#include "certkit/types.hpp"

namespace certkit::nn {

enum class Activation { Relu, Sigmoid, Softplus, Identity };

const char * to_string(Activation a);
Activation activation_from_string(const std::string & s);
double activate(Activation a, double s);
/// Global Lipschitz constant of the scalar activation.
double activation_lipschitz(Activation a);

struct Layer
{
  Matrix W;
  Vector b;
  Activation act{Activation::Relu};
};

/// Feedforward network x -> act_L(W_L(... act_1(W_1 x + b_1) ...) + b_L).
struct Mlp
{
  std::vector<Layer> layers;

  Mlp() = default;
  explicit Mlp(std::vector<Layer> ls);

  Eigen::Index input_dim() const { return layers.front().W.cols(); }
  Eigen::Index output_dim() const { return layers.back().W.rows(); }
};

/**
 * Input-convex network
 *
 *   z_1     = act_0(W_0 x + b_0)
 *   z_{i+1} = act_i(U_i z_i + W_i x + b_i),   i = 1..L-1
 *   g(x)    = z_L
 *
 * U has one entry fewer than W (U[i-1] multiplies z_i). Convexity needs U >= 0
 * elementwise, act_0 convex and act_i convex nondecreasing for i >= 1.
 */
struct Icnn
{
  std::vector<Matrix> W;
  std::vector<Matrix> U;
  std::vector<Vector> b;
  std::vector<Activation> act;

  Icnn() = default;
  Icnn(std::vector<Matrix> w, std::vector<Matrix> u, std::vector<Vector> bias, std::vector<Activation> acts);

  Eigen::Index input_dim() const { return W.front().cols(); }
  Eigen::Index output_dim() const { return W.back().rows(); }
};

enum class Outer { Softplus, Relu, SmoothRelu };

const char * to_string(Outer o);
Outer outer_from_string(const std::string & s);

/**
 * V(x) = s(g(x) - g(0)) - s(0) + eps_quad |x|^2 with g a scalar ICNN.
 *
 * Subtracting s(0) keeps V(0) = 0 for softplus. SmoothRelu is the quadratic
 * smoothing of relu with transition width `smooth_width`; with relu or
 * SmoothRelu the lower bound V >= eps_quad |x|^2 holds for every g, with
 * softplus only where g(x) >= g(0).
 */
struct LyapunovCandidate
{
  Icnn core;
  double eps_quad{1e-3};
  Outer outer{Outer::Softplus};
  double smooth_width{0.1};

  LyapunovCandidate() = default;
  LyapunovCandidate(Icnn g, double eps, Outer o = Outer::Softplus, double width = 0.1);
};

Vector forward(const Mlp & net, const Vector & x);
Vector forward(const Icnn & net, const Vector & x);
double lyapunov_eval(const LyapunovCandidate & V, const Vector & x);
double outer_activate(const LyapunovCandidate & V, double s);

/// Structural check plus `trials` randomized midpoint-convexity tests on
/// pairs drawn uniformly from `domain`.
Report check_icnn(const Icnn & net, const geom::Box & domain, int trials, std::uint64_t seed);

/// Upper bound on the 2-norm Lipschitz constant: product over layers of a
/// certified upper bound on ||W||_2 times the activation constant.
double lipschitz_bound(const Mlp & net);

/// Certified upper bound on ||W||_2. Power iteration on W'W to relative
/// tolerance 1e-8, then the estimate is raised until s^2 I - W'W admits a
/// Cholesky factorization.
double spectral_norm_bound(const Matrix & W);

/// Interval bounds of one layer: pre-activation and post-activation boxes.
struct LayerBounds
{
  Vector pre_lo, pre_hi;
  Vector post_lo, post_hi;
};

/// Interval bound propagation through every layer. Affine images are taken in
/// center/radius form with an outward margin covering floating-point error,
/// so the result is sound for the computed forward pass.
std::vector<LayerBounds> interval_bounds(const Mlp & net, const Vector & lo, const Vector & hi);

/// Interval image of x -> W x + b with the same outward margin.
void affine_interval(const Matrix & W, const Vector & b, const Vector & lo, const Vector & hi, Vector & out_lo,
  Vector & out_hi);

nlohmann::json to_json(const Mlp & net);
nlohmann::json to_json(const Icnn & net);
nlohmann::json to_json(const LyapunovCandidate & V);
Mlp mlp_from_json(const nlohmann::json & j);
Icnn icnn_from_json(const nlohmann::json & j);
LyapunovCandidate lyapunov_from_json(const nlohmann::json & j);

}  // namespace certkit::nn

#endif  // CERTKIT_NN_HPP_
