#include "certkit/qp.hpp"

#include <algorithm>
#include <cmath>

#include "certkit/error.hpp"

namespace certkit::qp {

namespace {

constexpr double kEqualityTol = 1e-4;
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;
constexpr double kDivisionTol = 1e-30;

double inf_norm(const Vector & v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

double clamp_scale(double n)
{
  if (n < kScaleMin) { return 1.0; }
  return std::min(n, kScaleMax);
}

/// Ruiz equilibration of the KKT matrix followed by cost scaling. The scaled
/// problem is (cDPD, cDq, EAD, El, Eu); primal x = D xs, y = E ys / c.
struct Scaling
{
  Vector D;
  Vector E;
  double c{1.0};
};

Scaling equilibrate(QProblem & s, int iters)
{
  const Eigen::Index n = s.num_vars();
  const Eigen::Index m = s.num_constraints();
  Scaling sc{Vector::Ones(n), Vector::Ones(m), 1.0};

  for (int it = 0; it < iters; ++it) {
    Vector dcol(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double cn = s.P.col(j).cwiseAbs().maxCoeff();
      if (m > 0) { cn = std::max(cn, s.A.col(j).cwiseAbs().maxCoeff()); }
      dcol(j) = 1.0 / std::sqrt(clamp_scale(cn));
    }
    Vector erow(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      erow(i) = 1.0 / std::sqrt(clamp_scale(n > 0 ? s.A.row(i).cwiseAbs().maxCoeff() : 0.0));
    }
    s.P = dcol.asDiagonal() * s.P * dcol.asDiagonal();
    s.q = dcol.cwiseProduct(s.q);
    s.A = erow.asDiagonal() * s.A * dcol.asDiagonal();
    s.l = erow.cwiseProduct(s.l);
    s.u = erow.cwiseProduct(s.u);
    sc.D = sc.D.cwiseProduct(dcol);
    sc.E = sc.E.cwiseProduct(erow);
  }

  if (iters > 0 && n > 0) {
    double pnorm = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) { pnorm += s.P.col(j).cwiseAbs().maxCoeff(); }
    pnorm /= static_cast<double>(n);
    const double c = 1.0 / clamp_scale(std::max(pnorm, inf_norm(s.q)));
    s.P *= c;
    s.q *= c;
    sc.c = c;
  }
  return sc;
}

struct Residuals
{
  double prim{kInf};
  double dual{kInf};
  double eps_prim{0};
  double eps_dual{0};

  bool converged() const { return prim <= eps_prim && dual <= eps_dual; }
  double ratio() const { return std::max(prim / eps_prim, dual / eps_dual); }
};

Residuals residuals(const QProblem & p, const Vector & x, const Vector & z, const Vector & y,
  const Settings & st)
{
  Residuals r;
  const Vector Ax = p.A * x;
  const Vector Px = p.P * x;
  const Vector Aty = p.A.transpose() * y;
  r.prim = inf_norm(Ax - z);
  r.dual = inf_norm(Px + p.q + Aty);
  r.eps_prim = st.eps_abs + st.eps_rel * std::max(inf_norm(Ax), inf_norm(z));
  r.eps_dual = st.eps_abs + st.eps_rel * std::max({inf_norm(Px), inf_norm(Aty), inf_norm(p.q)});
  return r;
}

bool primal_infeasible(const QProblem & p, const Vector & dy, double eps)
{
  const double ny = inf_norm(dy);
  if (ny < kDivisionTol) { return false; }
  if (inf_norm(p.A.transpose() * dy) > eps * ny) { return false; }
  double support = 0.0;
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    if (dy(i) > 0) {
      if (std::isinf(p.u(i))) {
        if (dy(i) > eps * ny) { return false; }
        continue;
      }
      support += p.u(i) * dy(i);
    } else if (dy(i) < 0) {
      if (std::isinf(p.l(i))) {
        if (-dy(i) > eps * ny) { return false; }
        continue;
      }
      support += p.l(i) * dy(i);
    }
  }
  return support < -eps * ny;
}

bool dual_infeasible(const QProblem & p, const Vector & dx, double eps)
{
  const double nx = inf_norm(dx);
  if (nx < kDivisionTol) { return false; }
  if (inf_norm(p.P * dx) > eps * nx) { return false; }
  if (p.q.dot(dx) > -eps * nx) { return false; }
  const Vector Adx = p.A * dx;
  for (Eigen::Index i = 0; i < Adx.size(); ++i) {
    if (!std::isinf(p.u(i)) && Adx(i) > eps * nx) { return false; }
    if (!std::isinf(p.l(i)) && Adx(i) < -eps * nx) { return false; }
  }
  return true;
}

struct Polished
{
  Vector x, z, y;
  Residuals res;
  bool ok{false};
};

struct ActiveRow
{
  Eigen::Index row;
  int side;  // -1 lower, +1 upper, 0 equality
};

bool is_equality(const QProblem & p, Eigen::Index i)
{
  return std::isfinite(p.l(i)) && std::isfinite(p.u(i)) && p.u(i) - p.l(i) <= 1e-12 * (1.0 + std::abs(p.l(i)));
}

/// Solves the equality-constrained KKT system on `active`; returns the primal
/// point and the raw (unclipped) multipliers.
bool solve_reduced_kkt(const QProblem & p, const std::vector<ActiveRow> & active, const Settings & st,
  Vector & x, Vector & y)
{
  const Eigen::Index n = p.num_vars();
  const auto na = static_cast<Eigen::Index>(active.size());
  Matrix K = Matrix::Zero(n + na, n + na);
  Vector b(n + na);
  K.topLeftCorner(n, n) = p.P;
  b.head(n) = -p.q;
  for (Eigen::Index k = 0; k < na; ++k) {
    const ActiveRow & a = active[static_cast<std::size_t>(k)];
    K.block(0, n + k, n, 1) = p.A.row(a.row).transpose();
    K.block(n + k, 0, 1, n) = p.A.row(a.row);
    b(n + k) = a.side > 0 ? p.u(a.row) : p.l(a.row);
  }
  Matrix Kreg = K;
  Kreg.topLeftCorner(n, n).diagonal().array() += st.polish_delta;
  Kreg.bottomRightCorner(na, na).diagonal().array() -= st.polish_delta;
  Eigen::PartialPivLU<Matrix> lu(Kreg);
  Vector sol = lu.solve(b);
  for (int it = 0; it < st.polish_refine_iter; ++it) {
    const Vector r = b - K * sol;
    sol += lu.solve(r);
  }
  if (!sol.allFinite()) { return false; }
  x = sol.head(n);
  y = Vector::Zero(p.num_constraints());
  for (Eigen::Index k = 0; k < na; ++k) { y(active[static_cast<std::size_t>(k)].row) = sol(n + k); }
  return true;
}

/// Guess the active set from (z, y), solve the equality-constrained KKT system
/// on it, then correct the guess a few times: rows with wrong-sign multipliers
/// leave, violated rows enter. Wrong-sign multipliers of the final candidate are
/// dropped, so a bad guess shows up in the dual residual.
Polished polish(const QProblem & p, const Vector & z, const Vector & y, const Settings & st)
{
  const Eigen::Index m = p.num_constraints();
  std::vector<ActiveRow> active;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (is_equality(p, i)) {
      active.push_back({i, 0});
    } else if (!std::isinf(p.l(i)) && z(i) - p.l(i) < -y(i)) {
      active.push_back({i, -1});
    } else if (!std::isinf(p.u(i)) && p.u(i) - z(i) < y(i)) {
      active.push_back({i, 1});
    }
  }

  Polished out;
  Vector x, yr;
  for (int round = 0; round < 6; ++round) {
    if (!solve_reduced_kkt(p, active, st, x, yr)) { return out; }
    const Vector Ax = p.A * x;
    const double scale = 1e-9 * (1.0 + (Ax.size() ? Ax.cwiseAbs().maxCoeff() : 0.0));
    std::vector<ActiveRow> next;
    std::vector<char> in_set(static_cast<std::size_t>(m), 0);
    for (const ActiveRow & a : active) {
      const double v = yr(a.row);
      if ((a.side < 0 && v > 0) || (a.side > 0 && v < 0)) { continue; }
      next.push_back(a);
      in_set[static_cast<std::size_t>(a.row)] = 1;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_set[static_cast<std::size_t>(i)]) { continue; }
      if (Ax(i) < p.l(i) - scale) {
        next.push_back({i, -1});
      } else if (Ax(i) > p.u(i) + scale) {
        next.push_back({i, 1});
      }
    }
    const bool same = next.size() == active.size()
      && std::equal(next.begin(), next.end(), active.begin(),
        [](const ActiveRow & a, const ActiveRow & b) { return a.row == b.row && a.side == b.side; });
    if (same) { break; }
    std::sort(next.begin(), next.end(), [](const ActiveRow & a, const ActiveRow & b) { return a.row < b.row; });
    active = std::move(next);
  }

  out.x = x;
  out.y = yr;
  for (const ActiveRow & a : active) {
    const double v = out.y(a.row);
    if ((a.side < 0 && v > 0) || (a.side > 0 && v < 0)) { out.y(a.row) = 0.0; }
  }
  out.z = (p.A * out.x).cwiseMax(p.l).cwiseMin(p.u);
  out.res = residuals(p, out.x, out.z, out.y, st);
  out.ok = true;
  return out;
}

}  // namespace

const char * to_string(Status s)
{
  switch (s) {
  case Status::Optimal: return "Optimal";
  case Status::PrimalInfeasible: return "PrimalInfeasible";
  case Status::DualInfeasible: return "DualInfeasible";
  case Status::MaxIter: return "MaxIter";
  }
  return "Unknown";
}

void QProblem::validate() const
{
  const Eigen::Index n = q.size();
  require_dim(P.rows(), n, "QProblem P rows");
  require_dim(P.cols(), n, "QProblem P cols");
  require_dim(A.cols(), n, "QProblem A cols");
  require_dim(l.size(), A.rows(), "QProblem l");
  require_dim(u.size(), A.rows(), "QProblem u");
  if (!P.allFinite() || !q.allFinite() || !A.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "QProblem data must be finite");
  }
  if (n > 0 && (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + P.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::InvalidArgument, "QProblem P is not symmetric");
  }
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (std::isnan(l(i)) || std::isnan(u(i)) || l(i) > u(i)) {
      throw Error(ErrorCode::InvalidArgument, "QProblem requires l <= u (row " + std::to_string(i) + ")");
    }
  }
}

QpSolution Solver::solve(const QProblem & p)
{
  p.validate();
  const Settings & st = settings_;
  const Eigen::Index n = p.num_vars();
  const Eigen::Index m = p.num_constraints();

  QProblem s = p;
  const Scaling sc = equilibrate(s, st.scaling_iters);

  // Per-row step sizes: stiff on equalities, loose on free rows.
  Vector rho_vec(m);
  auto set_rho = [&](double rho) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::isinf(p.l(i)) && std::isinf(p.u(i))) {
        rho_vec(i) = st.rho_min;
      } else if (p.u(i) - p.l(i) < kEqualityTol) {
        rho_vec(i) = 1e3 * rho;
      } else {
        rho_vec(i) = rho;
      }
    }
  };
  double rho = st.rho;
  set_rho(rho);

  auto factor = [&]() {
    Matrix K = s.P;
    K.diagonal().array() += st.sigma;
    K.noalias() += s.A.transpose() * rho_vec.asDiagonal() * s.A;
    return Eigen::LLT<Matrix>(K);
  };
  Eigen::LLT<Matrix> llt = factor();

  Vector x = Vector::Zero(n);
  Vector z = Vector::Zero(m);
  Vector y = Vector::Zero(m);
  if (warm_ && x_.size() == n && z_.size() == m) {
    x = sc.D.cwiseInverse().cwiseProduct(x_);
    z = sc.E.cwiseProduct(z_);
    y = sc.c * sc.E.cwiseInverse().cwiseProduct(y_);
  }

  Vector xu, zu, yu;
  auto unscale = [&]() {
    xu = sc.D.cwiseProduct(x);
    zu = sc.E.cwiseInverse().cwiseProduct(z);
    yu = sc.E.cwiseProduct(y) / sc.c;
  };

  auto finish = [&](QpSolution sol) {
    sol.objective = p.objective(sol.z);
    for (Eigen::Index i = 0; i < sol.dual.size(); ++i) {
      if ((sol.dual(i) > 0 && std::isinf(p.u(i))) || (sol.dual(i) < 0 && std::isinf(p.l(i)))) {
        sol.dual(i) = 0.0;
      }
    }
    if (sol.status == Status::Optimal || sol.status == Status::MaxIter) {
      x_ = sol.z;
      z_ = (p.A * sol.z).cwiseMax(p.l).cwiseMin(p.u);
      y_ = sol.dual;
      warm_ = true;
    } else {
      warm_ = false;
    }
    return sol;
  };

  // A polished point is accepted only when it satisfies the KKT conditions to
  // tolerance on its own.
  auto try_polish = [&](int iter, QpSolution & out) {
    const Polished pol = polish(p, zu, yu, st);
    if (!pol.ok || !pol.res.converged()) { return false; }
    out.z = pol.x;
    out.dual = pol.y;
    out.primal_residual = pol.res.prim;
    out.dual_residual = pol.res.dual;
    out.iterations = iter;
    out.polished = true;
    out.status = Status::Optimal;
    return true;
  };

  QpSolution best;
  double best_ratio = kInf;
  // Pure feasibility problems have no meaningful dual residual scale, so the
  // balancing rule would drive rho to its floor and stall.
  const bool adapt = st.adaptive_rho && m > 0 && (p.P.cwiseAbs().maxCoeff() > 0 || inf_norm(p.q) > 0);

  for (int k = 1; k <= st.max_iter; ++k) {
    const Vector x_prev = x;
    const Vector z_prev = z;
    const Vector y_prev = y;

    const Vector rhs = st.sigma * x - s.q + s.A.transpose() * (rho_vec.cwiseProduct(z) - y);
    const Vector xt = llt.solve(rhs);
    const Vector zt = s.A * xt;
    x = st.alpha * xt + (1.0 - st.alpha) * x_prev;
    const Vector zr = st.alpha * zt + (1.0 - st.alpha) * z_prev;
    z = (zr + y.cwiseQuotient(rho_vec)).cwiseMax(s.l).cwiseMin(s.u);
    y += rho_vec.cwiseProduct(zr - z);

    const bool check = k == 1 || k % st.check_interval == 0 || k == st.max_iter;
    if (!check) { continue; }

    unscale();
    if (!xu.allFinite() || !yu.allFinite()) { break; }
    const Residuals res = residuals(p, xu, zu, yu, st);

    if (res.converged()) {
      QpSolution pol;
      if (st.polish && try_polish(k, pol)) { return finish(pol); }
      QpSolution out;
      out.z = xu;
      out.dual = yu;
      out.primal_residual = res.prim;
      out.dual_residual = res.dual;
      out.iterations = k;
      out.status = Status::Optimal;
      return finish(out);
    }
    if (res.ratio() < best_ratio) {
      best_ratio = res.ratio();
      best.z = xu;
      best.dual = yu;
      best.primal_residual = res.prim;
      best.dual_residual = res.dual;
      best.iterations = k;
    }

    const Vector dy = sc.E.cwiseProduct(y - y_prev) / sc.c;
    if (primal_infeasible(p, dy, st.eps_prim_inf)) {
      QpSolution out;
      out.status = Status::PrimalInfeasible;
      out.z = xu;
      out.dual = yu;
      out.certificate = dy / inf_norm(dy);
      out.iterations = k;
      return finish(out);
    }
    const Vector dx = sc.D.cwiseProduct(x - x_prev);
    if (dual_infeasible(p, dx, st.eps_dual_inf)) {
      QpSolution out;
      out.status = Status::DualInfeasible;
      out.z = xu;
      out.dual = yu;
      out.certificate = dx / inf_norm(dx);
      out.iterations = k;
      return finish(out);
    }

    // Early exit once the active set is identified.
    if (st.polish && k % 100 == 0) {
      QpSolution pol;
      if (try_polish(k, pol)) { return finish(pol); }
    }

    if (adapt && k % st.adaptive_rho_interval == 0) {
      const Vector Ax = s.A * x;
      const Vector Px = s.P * x;
      const Vector Aty = s.A.transpose() * y;
      const double pn = inf_norm(Ax - z) / std::max({inf_norm(Ax), inf_norm(z), 1e-30});
      const double dn = inf_norm(Px + s.q + Aty)
        / std::max({inf_norm(Px), inf_norm(Aty), inf_norm(s.q), 1e-30});
      double rho_new = rho * std::sqrt(pn / std::max(dn, 1e-30));
      rho_new = std::clamp(rho_new, st.rho_min, st.rho_max);
      if (rho_new > rho * st.adaptive_rho_tolerance || rho_new < rho / st.adaptive_rho_tolerance) {
        set_rho(rho_new);
        Eigen::LLT<Matrix> next = factor();
        // A huge rho on equality rows can make K numerically indefinite; keep the old step then.
        if (next.info() == Eigen::Success && next.matrixLLT().allFinite()) {
          rho = rho_new;
          llt = std::move(next);
        } else {
          set_rho(rho);
        }
      }
    }
  }

  if (st.polish && xu.size() == n && xu.allFinite()) {
    QpSolution pol;
    if (try_polish(st.max_iter, pol)) { return finish(pol); }
  }
  if (best.z.size() == 0) {
    best.z = Vector::Zero(n);
    best.dual = Vector::Zero(m);
  }
  best.status = Status::MaxIter;
  return finish(best);
}

QpSolution solve(const QProblem & p, double tol, int max_iter)
{
  if (!(tol > 0)) { throw Error(ErrorCode::InvalidArgument, "tolerance must be positive"); }
  Settings st;
  st.eps_abs = tol;
  st.eps_rel = tol;
  st.max_iter = max_iter;
  Solver solver(st);
  return solver.solve(p);
}

QpSolution solve_lp(const Vector & c, const Matrix & A, const Vector & l, const Vector & u, double tol,
  int max_iter)
{
  QProblem p{Matrix::Zero(c.size(), c.size()), c, A, l, u};
  return solve(p, tol, max_iter);
}

double duality_gap(const QProblem & p, const QpSolution & s)
{
  double support = 0.0;
  for (Eigen::Index i = 0; i < s.dual.size(); ++i) {
    const double yi = s.dual(i);
    if (yi > 0) {
      support += std::isinf(p.u(i)) ? kInf : p.u(i) * yi;
    } else if (yi < 0) {
      support += std::isinf(p.l(i)) ? kInf : p.l(i) * yi;
    }
  }
  const double primal = p.objective(s.z);
  const double dual = -0.5 * s.z.dot(p.P * s.z) - support;
  return primal - dual;
}

}  // namespace certkit::qp
