#ifndef CERTKIT_FILTER_HPP_
#define CERTKIT_FILTER_HPP_

#include <optional>
#include <string>

#include <json.hpp>

#include "certkit/dyn.hpp"
#include "certkit/geom.hpp"
#include "certkit/nn.hpp"
#include "certkit/qp.hpp"
#include "certkit/report.hpp"

namespace certkit::filter {

/**
 * Barrier h with its exact gradient and linear class-K gain alpha(s) = kappa s.
 *
 *   affine:        h(x) = a'x + c
 *   quadratic:     h(x) = x'Qx + a'x + c
 *   box distance:  h(x) = min_i min(x_i - lo_i, hi_i - x_i)
 */
struct BarrierSpec
{
  enum class Kind { Affine, Quadratic, BoxDistance };

  Kind kind{Kind::Affine};
  Matrix Q;
  Vector a;
  double c{0.0};
  geom::Box box;
  double kappa{1.0};

  static BarrierSpec affine(Vector a, double c, double kappa);
  static BarrierSpec quadratic(Matrix Q, Vector a, double c, double kappa);
  static BarrierSpec box_distance(geom::Box box, double kappa);

  Eigen::Index dim() const;
  double h(const Vector & x) const;
  Vector grad(const Vector & x) const;
};

/// CLF V(x) = x'Px or a Lyapunov candidate, with gain kappa_v and the
/// sandwich bounds c1 |x|^2 <= V(x) <= c2 |x|^2.
struct ClfSpec
{
  std::optional<Matrix> P;
  std::optional<nn::LyapunovCandidate> candidate;
  double kappa_v{1.0};
  double c1{1.0};
  double c2{1.0};

  static ClfSpec quadratic(Matrix P, double kappa_v, double c1, double c2);
  static ClfSpec network(nn::LyapunovCandidate V, double kappa_v, double c1, double c2);

  double V(const Vector & x) const;
  /// Analytic for the quadratic form, central differences otherwise.
  Vector grad(const Vector & x) const;
};

/// Minimum-deviation CBF filter with a private, warm-started QP solver.
class CbfFilter
{
public:
  CbfFilter() = default;

  /// argmin |u - u_nom|^2 s.t. grad h' (f + g u) >= -kappa h, u in u_box.
  /// Returns u_nom itself when it already satisfies both constraints; throws
  /// InfeasibleFilterError when the half-space misses the box.
  Vector filter(const dyn::ControlAffineODE & sys, const Vector & x, const Vector & u_nom, const BarrierSpec & barrier,
    const geom::Box & u_box);

private:
  qp::Solver solver_;
};

Vector cbf_filter(const dyn::ControlAffineODE & sys, const Vector & x, const Vector & u_nom,
  const BarrierSpec & barrier, const geom::Box & u_box);

/// Minimizes the Lie derivative of V over u_box by LP and checks
/// inf_u dV/dx (f + g u) <= -kappa_v V(x) and the sandwich bounds.
Report clf_check(const dyn::ControlAffineODE & sys, const Vector & x, const ClfSpec & clf, const geom::Box & u_box);

struct PsfConfig
{
  int horizon{1};
  geom::SetRegion state_set;      // Box or HPolytope
  geom::Box input_set;
  std::optional<geom::SetRegion> terminal_set;  // defaults to state_set
  double slack_weight{0.0};       // 0 = hard constraints

  void validate(Eigen::Index n, Eigen::Index m) const;
};

struct PsfDiagnostics
{
  std::string mode;               // "linear" or "sqp"
  int active_constraints{0};
  double max_slack{0.0};
  double slack_norm{0.0};
  int sqp_iterations{0};
  int qp_iterations{0};
  bool terminal_default{false};   // terminal set defaulted to the state set (not certified)
  bool modified{false};           // u0 differs from u_nom

  nlohmann::json to_json() const;
};

struct PsfResult
{
  Vector u0;
  PsfDiagnostics diagnostics;
  /// Planned inputs u_0..u_{N-1} and predicted states x_1..x_N.
  std::vector<Vector> inputs;
  std::vector<Vector> states;
};

/// N-step predictive safety filter
///
///   min |u_0 - u_nom|^2 + w |s|^2
///   s.t. x_{i+1} = f(x_i, u_i), x_i in X (i < N), x_N in E, u_i in U
///
/// exact for linear maps and solved by successive linearization (at most 10
/// iterations, trust region 10% of the input range) otherwise.
class PredictiveSafetyFilter
{
public:
  explicit PredictiveSafetyFilter(PsfConfig cfg) : cfg_(std::move(cfg)) {}

  PsfResult filter(const dyn::DiscreteMap & model, const Vector & x, const Vector & u_nom);
  const PsfConfig & config() const { return cfg_; }

private:
  PsfConfig cfg_;
  qp::Solver solver_;
};

PsfResult predictive_safety_filter(const dyn::DiscreteMap & model, const Vector & x, const Vector & u_nom,
  const PsfConfig & cfg);

}  // namespace certkit::filter

#endif  // CERTKIT_FILTER_HPP_
