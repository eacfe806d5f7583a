#ifndef CERTKIT_QP_HPP_
#define CERTKIT_QP_HPP_

#include <string>

#include "certkit/types.hpp"

namespace certkit::qp {

/**
 * Dense convex quadratic program
 *
 *   min 1/2 z'Pz + q'z   s.t.   l <= Az <= u
 *
 * Infinite entries of l and u denote one-sided or free rows; l == u denotes an
 * equality row.
 */
struct QProblem
{
  Matrix P;
  Vector q;
  Matrix A;
  Vector l;
  Vector u;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_constraints() const { return A.rows(); }

  /// Throws DimensionMismatch / InvalidArgument when the invariants do not hold
  /// (P square and symmetric within 1e-10, l <= u, consistent sizes).
  void validate() const;

  double objective(const Vector & z) const { return 0.5 * z.dot(P * z) + q.dot(z); }
};

enum class Status { Optimal, PrimalInfeasible, DualInfeasible, MaxIter };

const char * to_string(Status s);

struct QpSolution
{
  Vector z;
  Vector dual;
  Status status{Status::MaxIter};
  double primal_residual{kInf};
  double dual_residual{kInf};
  double objective{kInf};
  int iterations{0};
  bool polished{false};
  /// Ray certificate: dual ray for PrimalInfeasible, primal ray for DualInfeasible.
  Vector certificate;
};

struct Settings
{
  double eps_abs{1e-6};
  double eps_rel{1e-6};
  double eps_prim_inf{1e-6};
  double eps_dual_inf{1e-6};
  int max_iter{20000};
  double rho{0.1};
  double sigma{1e-6};
  double alpha{1.6};
  bool adaptive_rho{true};
  int adaptive_rho_interval{25};
  double adaptive_rho_tolerance{5.0};
  double rho_min{1e-6};
  double rho_max{1e6};
  int scaling_iters{10};
  bool polish{true};
  int polish_refine_iter{5};
  double polish_delta{1e-9};
  int check_interval{5};
};

/**
 * @brief Operator-splitting (ADMM) solver for dense convex QPs.
 *
 * Holds the iterate of the last solve so that repeated solves of problems with the
 * same dimensions start from it. Single-threaded; use one instance per thread.
 */
class Solver
{
public:
  explicit Solver(Settings settings = {}) : settings_(settings) {}

  QpSolution solve(const QProblem & p);

  void reset_warm_start() { warm_ = false; }
  const Settings & settings() const { return settings_; }
  Settings & settings() { return settings_; }

private:
  Settings settings_;
  bool warm_{false};
  Vector x_, z_, y_;
};

/// One-shot solve with tolerance `tol` used for both the absolute and relative
/// termination criteria.
QpSolution solve(const QProblem & p, double tol = 1e-6, int max_iter = 20000);

/// LP: min c'z s.t. l <= Az <= u.
QpSolution solve_lp(const Vector & c, const Matrix & A, const Vector & l, const Vector & u,
  double tol = 1e-6, int max_iter = 20000);

/// Primal objective minus dual objective at a solution (zero at an exact optimum).
double duality_gap(const QProblem & p, const QpSolution & s);

}  // namespace certkit::qp

#endif  // CERTKIT_QP_HPP_
