#ifndef CERTKIT_MILP_HPP_
#define CERTKIT_MILP_HPP_

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "certkit/dyn.hpp"
#include "certkit/geom.hpp"
#include "certkit/nn.hpp"

namespace certkit::milp {

/// lo <= sum coeff * var <= hi.
struct Constraint
{
  std::vector<std::pair<int, double>> terms;
  double lo{-kInf};
  double hi{kInf};
  std::string name;
};

/// Bounds and big-M constant of one encoded neuron. `binary` is -1 for
/// stable neurons, which are encoded as fixed affine pieces.
struct NeuronEncoding
{
  int layer{0};
  int index{0};
  double lb{0.0};
  double ub{0.0};
  double M{0.0};
  int z_var{-1};
  int binary{-1};
};

/**
 * Mixed-integer model of u = net(x) over a region. Variables are the inputs,
 * one post-activation variable per neuron and one binary per unstable ReLU.
 * Each unstable neuron with pre-activation p gets
 *
 *   z >= 0,  z >= p,  z - p <= M (1 - b),  p - z <= M (1 - b),  z <= M b.
 *
 * The objective is maximized.
 */
struct MilpModel
{
  std::vector<std::string> names;
  Vector lower;
  Vector upper;
  std::vector<bool> is_binary;
  std::vector<Constraint> rows;
  Vector objective;

  std::vector<int> input_vars;
  std::vector<int> output_vars;
  std::vector<int> binaries;
  std::vector<NeuronEncoding> neurons;

  int num_vars() const { return static_cast<int>(names.size()); }
  int add_var(std::string name, double lo, double hi, bool binary = false);

  /// Rows and bounds satisfied within tol; binaries must be 0 or 1 within tol.
  bool is_feasible(const Vector & v, double tol = 1e-8) const;
  /// Full assignment read off a forward pass at x (binaries from the sign of
  /// each pre-activation).
  Vector assignment(const nn::Mlp & net, const Vector & x) const;
  /// CPLEX LP text; ranged rows are split into _lo and _hi rows.
  std::string to_lp() const;
  nlohmann::json stats() const;
};

using Region = std::variant<geom::Box, geom::HPolytope>;

/// Big-M encoding with per-neuron M = max(|lb|, |ub|) from interval bounds.
/// Throws UnsupportedActivation for anything but ReLU and identity layers and
/// UnboundedRegion for unbounded polytopes.
MilpModel encode_network(const nn::Mlp & net, const Region & region);

enum class VerifyStatus { Certified, Falsified, BoundOnly };

const char * to_string(VerifyStatus s);

struct VerifyOutcome
{
  VerifyStatus status{VerifyStatus::BoundOnly};
  /// Proven bound: an upper bound for maximize_output, a lower bound on the
  /// minimum for verify_positivity.
  double bound{0.0};
  /// Objective at the incumbent (evaluated by nn::forward).
  double value{0.0};
  std::optional<Vector> counterexample;
  int nodes_explored{0};
  double gap{0.0};

  nlohmann::json to_json() const;
};

/// Global maximum of a scalar-output network over the region by best-first
/// branch and bound on the activation binaries with LP relaxations. Certified
/// when bound - value <= tol, BoundOnly when the node budget runs out.
VerifyOutcome maximize_output(const nn::Mlp & net, const Region & region, double tol = 1e-6, int node_budget = 10000);

/// Boxes covering the closure of region minus exclude (at most 2n).
std::vector<geom::Box> cover_complement(const geom::Box & region, const std::optional<geom::Box> & exclude);

/// Decides min f >= 0 on region minus exclude. Certified when the proven lower
/// bound is >= 0, Falsified with a witness x where f(x) < 0, BoundOnly otherwise.
VerifyOutcome verify_positivity(const nn::Mlp & f, const geom::Box & region, const std::optional<geom::Box> & exclude,
  double tol = 1e-6, int node_budget = 10000);

/// Network computing V(x) - V(A x) for a network V and a linear map A.
nn::Mlp decrease_network(const nn::Mlp & V, const Matrix & A);

/// Positivity of V(x) - V(f(x)) for autonomous linear or Koopman maps; any
/// other model raises UnsupportedModel.
VerifyOutcome verify_lyapunov_decrease(const nn::Mlp & V, const dyn::DiscreteMap & model, const geom::Box & region,
  const std::optional<geom::Box> & exclude, double tol = 1e-6, int node_budget = 10000);

}  // namespace certkit::milp

#endif  // CERTKIT_MILP_HPP_
