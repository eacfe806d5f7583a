#include "certkit/filter.hpp"

#include <algorithm>
#include <cmath>

#include "certkit/error.hpp"

namespace certkit::filter {

namespace {

void check_gradient(const BarrierSpec & b)
{
  if (b.kind == BarrierSpec::Kind::BoxDistance) { return; }
  const Eigen::Index n = b.dim();
  Vector probe(n);
  for (Eigen::Index i = 0; i < n; ++i) { probe(i) = 0.1 * static_cast<double>(i + 1); }
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector p = probe, m = probe;
    p(i) += h;
    m(i) -= h;
    const double fd = (b.h(p) - b.h(m)) / (2.0 * h);
    if (std::abs(fd - b.grad(probe)(i)) > 1e-6 * (1.0 + std::abs(fd))) {
      throw Error(ErrorCode::InvalidArgument, "barrier gradient is inconsistent with h");
    }
  }
}

bool in_box(const geom::Box & b, const Vector & u)
{
  return ((u.array() >= b.lower.array()) && (u.array() <= b.upper.array())).all();
}

struct RowBlock
{
  std::vector<Vector> rows;  // coefficient rows on a state vector
  std::vector<double> lo, hi;
};

/// Constraint rows describing membership of a Box or HPolytope.
RowBlock set_rows(const geom::SetRegion & set, Eigen::Index n)
{
  RowBlock rb;
  if (const auto * b = std::get_if<geom::Box>(&set)) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isinf(b->lower(i)) && std::isinf(b->upper(i))) { continue; }
      rb.rows.push_back(Vector::Unit(n, i));
      rb.lo.push_back(b->lower(i));
      rb.hi.push_back(b->upper(i));
    }
    return rb;
  }
  if (const auto * p = std::get_if<geom::HPolytope>(&set)) {
    for (Eigen::Index i = 0; i < p->A.rows(); ++i) {
      rb.rows.push_back(p->A.row(i).transpose());
      rb.lo.push_back(-kInf);
      rb.hi.push_back(p->b(i));
    }
    return rb;
  }
  throw Error(ErrorCode::InvalidArgument, "PSF sets must be boxes or H-polytopes");
}

/// Affine prediction model x_{i+1} = A_i x_i + B_i u_i + c_i.
struct Prediction
{
  std::vector<Matrix> A, B;
  std::vector<Vector> c;
};

struct Assembled
{
  qp::QProblem p;
  Eigen::Index n_ineq_first{0};  // first inequality row
  Eigen::Index n_slack{0};
};

Assembled assemble(const PsfConfig & cfg, const Prediction & pred, const Vector & x0, const Vector & u_nom,
  const std::vector<Vector> & u_lo, const std::vector<Vector> & u_hi)
{
  const int N = cfg.horizon;
  const Eigen::Index n = x0.size();
  const Eigen::Index m = u_nom.size();
  const bool soft = cfg.slack_weight > 0;
  const RowBlock xs = set_rows(cfg.state_set, n);
  const RowBlock es = set_rows(cfg.terminal_set ? *cfg.terminal_set : cfg.state_set, n);

  const Eigen::Index nu = N * m;
  const Eigen::Index nx = N * n;
  Eigen::Index n_state_rows = 0;
  for (int i = 1; i <= N; ++i) { n_state_rows += static_cast<Eigen::Index>(i < N ? xs.rows.size() : es.rows.size()); }
  const Eigen::Index ns = soft ? n_state_rows : 0;
  const Eigen::Index nv = nu + nx + ns;
  auto ui = [&](int i) { return static_cast<Eigen::Index>(i) * m; };
  auto xi = [&](int i) { return nu + static_cast<Eigen::Index>(i - 1) * n; };

  // Soft box rows need two constraints per slack.
  Eigen::Index n_state_cons = 0;
  auto count_rows = [&](const RowBlock & rb) {
    Eigen::Index c = 0;
    for (std::size_t r = 0; r < rb.rows.size(); ++r) {
      c += soft ? (std::isfinite(rb.lo[r]) ? 1 : 0) + (std::isfinite(rb.hi[r]) ? 1 : 0) : 1;
    }
    return c;
  };
  for (int i = 1; i <= N; ++i) { n_state_cons += count_rows(i < N ? xs : es); }
  const Eigen::Index mrows = nx + nu + n_state_cons + ns;

  Assembled out;
  qp::QProblem & p = out.p;
  p.P = Matrix::Zero(nv, nv);
  p.q = Vector::Zero(nv);
  p.A = Matrix::Zero(mrows, nv);
  p.l = Vector::Zero(mrows);
  p.u = Vector::Zero(mrows);
  p.P.block(0, 0, m, m) = 2.0 * Matrix::Identity(m, m);
  p.q.head(m) = -2.0 * u_nom;
  if (soft) { p.P.bottomRightCorner(ns, ns) = 2.0 * cfg.slack_weight * Matrix::Identity(ns, ns); }

  Eigen::Index row = 0;
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    p.A.block(row, xi(i + 1), n, n) = Matrix::Identity(n, n);
    p.A.block(row, ui(i), n, m) = -pred.B[k];
    Vector rhs = pred.c[k];
    if (i == 0) {
      rhs += pred.A[k] * x0;
    } else {
      p.A.block(row, xi(i), n, n) = -pred.A[k];
    }
    p.l.segment(row, n) = rhs;
    p.u.segment(row, n) = rhs;
    row += n;
  }
  out.n_ineq_first = row;
  for (int i = 0; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i);
    p.A.block(row, ui(i), m, m) = Matrix::Identity(m, m);
    p.l.segment(row, m) = u_lo[k];
    p.u.segment(row, m) = u_hi[k];
    row += m;
  }
  Eigen::Index slack = nu + nx;
  for (int i = 1; i <= N; ++i) {
    const RowBlock & rb = i < N ? xs : es;
    for (std::size_t r = 0; r < rb.rows.size(); ++r) {
      if (!soft) {
        p.A.block(row, xi(i), 1, n) = rb.rows[r].transpose();
        p.l(row) = rb.lo[r];
        p.u(row) = rb.hi[r];
        ++row;
        continue;
      }
      if (std::isfinite(rb.hi[r])) {
        p.A.block(row, xi(i), 1, n) = rb.rows[r].transpose();
        p.A(row, slack) = -1.0;
        p.l(row) = -kInf;
        p.u(row) = rb.hi[r];
        ++row;
      }
      if (std::isfinite(rb.lo[r])) {
        p.A.block(row, xi(i), 1, n) = rb.rows[r].transpose();
        p.A(row, slack) = 1.0;
        p.l(row) = rb.lo[r];
        p.u(row) = kInf;
        ++row;
      }
      ++slack;
    }
  }
  for (Eigen::Index s = 0; s < ns; ++s) {
    p.A(row, nu + nx + s) = 1.0;
    p.l(row) = 0.0;
    p.u(row) = kInf;
    ++row;
  }
  out.n_slack = ns;
  return out;
}

int count_active(const qp::QProblem & p, const Vector & z, Eigen::Index first)
{
  const Vector Az = p.A * z;
  int active = 0;
  for (Eigen::Index r = first; r < Az.size(); ++r) {
    const double tl = 1e-7 * (1.0 + std::abs(p.l(r)));
    const double tu = 1e-7 * (1.0 + std::abs(p.u(r)));
    if ((std::isfinite(p.l(r)) && Az(r) - p.l(r) <= tl) || (std::isfinite(p.u(r)) && p.u(r) - Az(r) <= tu)) {
      ++active;
    }
  }
  return active;
}

}  // namespace

BarrierSpec BarrierSpec::affine(Vector a, double c, double kappa)
{
  BarrierSpec b;
  b.kind = Kind::Affine;
  b.a = std::move(a);
  b.c = c;
  b.kappa = kappa;
  if (!(kappa > 0)) { throw Error(ErrorCode::InvalidArgument, "barrier gain kappa must be > 0"); }
  check_gradient(b);
  return b;
}

BarrierSpec BarrierSpec::quadratic(Matrix Q, Vector a, double c, double kappa)
{
  require_dim(Q.rows(), a.size(), "quadratic barrier Q");
  require_dim(Q.cols(), a.size(), "quadratic barrier Q");
  BarrierSpec b;
  b.kind = Kind::Quadratic;
  b.Q = 0.5 * (Q + Q.transpose());
  b.a = std::move(a);
  b.c = c;
  b.kappa = kappa;
  if (!(kappa > 0)) { throw Error(ErrorCode::InvalidArgument, "barrier gain kappa must be > 0"); }
  check_gradient(b);
  return b;
}

BarrierSpec BarrierSpec::box_distance(geom::Box box, double kappa)
{
  BarrierSpec b;
  b.kind = Kind::BoxDistance;
  b.box = std::move(box);
  b.kappa = kappa;
  if (!(kappa > 0)) { throw Error(ErrorCode::InvalidArgument, "barrier gain kappa must be > 0"); }
  return b;
}

Eigen::Index BarrierSpec::dim() const { return kind == Kind::BoxDistance ? box.dim() : a.size(); }

double BarrierSpec::h(const Vector & x) const
{
  require_dim(x.size(), dim(), "barrier state");
  switch (kind) {
  case Kind::Affine: return a.dot(x) + c;
  case Kind::Quadratic: return x.dot(Q * x) + a.dot(x) + c;
  case Kind::BoxDistance: return std::min((x - box.lower).minCoeff(), (box.upper - x).minCoeff());
  }
  return 0.0;
}

Vector BarrierSpec::grad(const Vector & x) const
{
  require_dim(x.size(), dim(), "barrier state");
  switch (kind) {
  case Kind::Affine: return a;
  case Kind::Quadratic: return 2.0 * Q * x + a;
  case Kind::BoxDistance: {
    // Gradient of the active face; the smallest index wins ties.
    Eigen::Index il = 0, iu = 0;
    const double dl = (x - box.lower).minCoeff(&il);
    const double du = (box.upper - x).minCoeff(&iu);
    Vector g = Vector::Zero(x.size());
    if (dl <= du) {
      g(il) = 1.0;
    } else {
      g(iu) = -1.0;
    }
    return g;
  }
  }
  return Vector();
}

ClfSpec ClfSpec::quadratic(Matrix P, double kappa_v, double c1, double c2)
{
  require_dim(P.cols(), P.rows(), "CLF P");
  ClfSpec s;
  s.P = 0.5 * (P + P.transpose());
  s.kappa_v = kappa_v;
  s.c1 = c1;
  s.c2 = c2;
  if (!(kappa_v > 0 && c1 > 0 && c2 > 0 && c1 <= c2)) {
    throw Error(ErrorCode::InvalidArgument, "CLF requires kappa_v > 0 and 0 < c1 <= c2");
  }
  return s;
}

ClfSpec ClfSpec::network(nn::LyapunovCandidate V, double kappa_v, double c1, double c2)
{
  ClfSpec s;
  s.candidate = std::move(V);
  s.kappa_v = kappa_v;
  s.c1 = c1;
  s.c2 = c2;
  if (!(kappa_v > 0 && c1 > 0 && c2 > 0 && c1 <= c2)) {
    throw Error(ErrorCode::InvalidArgument, "CLF requires kappa_v > 0 and 0 < c1 <= c2");
  }
  return s;
}

double ClfSpec::V(const Vector & x) const
{
  if (P) { return x.dot(*P * x); }
  return nn::lyapunov_eval(*candidate, x);
}

Vector ClfSpec::grad(const Vector & x) const
{
  if (P) { return 2.0 * (*P * x); }
  Vector g(x.size());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (V(a) - V(b)) / (2.0 * h);
  }
  return g;
}

Vector CbfFilter::filter(const dyn::ControlAffineODE & sys, const Vector & x, const Vector & u_nom,
  const BarrierSpec & barrier, const geom::Box & u_box)
{
  const Eigen::Index m = sys.input_dim();
  require_dim(x.size(), sys.state_dim(), "CBF state");
  require_dim(u_nom.size(), m, "CBF nominal input");
  require_dim(u_box.dim(), m, "CBF input box");
  require_dim(barrier.dim(), x.size(), "CBF barrier");
  if (sys.domain && !geom::contains(*sys.domain, x)) {
    throw Error(ErrorCode::InvalidArgument, "CBF state is outside the model domain");
  }

  const Vector gh = barrier.grad(x);
  const Vector row = sys.g(x).transpose() * gh;
  const double rhs = -barrier.kappa * barrier.h(x) - gh.dot(sys.f(x));
  if (in_box(u_box, u_nom) && row.dot(u_nom) >= rhs) { return u_nom; }

  const bool trivial_row = row.lpNorm<Eigen::Infinity>() == 0.0;
  if (trivial_row && rhs > 0) {
    throw InfeasibleFilterError("barrier condition cannot be met by any input at this state");
  }

  qp::QProblem p;
  p.P = 2.0 * Matrix::Identity(m, m);
  p.q = -2.0 * u_nom;
  const Eigen::Index rows = trivial_row ? m : m + 1;
  p.A = Matrix::Zero(rows, m);
  p.l = Vector(rows);
  p.u = Vector(rows);
  p.A.topRows(m) = Matrix::Identity(m, m);
  p.l.head(m) = u_box.lower;
  p.u.head(m) = u_box.upper;
  if (!trivial_row) {
    p.A.row(m) = row.transpose();
    p.l(m) = rhs;
    p.u(m) = kInf;
  }
  const qp::QpSolution s = solver_.solve(p);
  if (s.status == qp::Status::PrimalInfeasible) {
    throw InfeasibleFilterError("CBF half-space and input box are disjoint", s.certificate);
  }
  if (s.status != qp::Status::Optimal) {
    throw Error(ErrorCode::NoConvergence, std::string("CBF QP ended with status ") + qp::to_string(s.status));
  }
  return s.z.cwiseMax(u_box.lower).cwiseMin(u_box.upper);
}

Vector cbf_filter(const dyn::ControlAffineODE & sys, const Vector & x, const Vector & u_nom,
  const BarrierSpec & barrier, const geom::Box & u_box)
{
  CbfFilter f;
  return f.filter(sys, x, u_nom, barrier, u_box);
}

Report clf_check(const dyn::ControlAffineODE & sys, const Vector & x, const ClfSpec & clf, const geom::Box & u_box)
{
  const Eigen::Index m = sys.input_dim();
  require_dim(x.size(), sys.state_dim(), "CLF state");
  require_dim(u_box.dim(), m, "CLF input box");
  Report rep;
  rep.task = "clf_check";

  const double V = clf.V(x);
  const Vector gV = clf.grad(x);
  const Vector c = sys.g(x).transpose() * gV;
  double inf_lie = gV.dot(sys.f(x));
  Vector u_star = Vector::Zero(m);
  if (m > 0) {
    const qp::QpSolution s = qp::solve_lp(c, Matrix::Identity(m, m), u_box.lower, u_box.upper, 1e-9, 20000);
    if (s.status == qp::Status::DualInfeasible) {
      inf_lie = -kInf;
    } else if (s.status == qp::Status::Optimal) {
      u_star = s.z.cwiseMax(u_box.lower).cwiseMin(u_box.upper);
      inf_lie += c.dot(u_star);
    } else {
      throw Error(ErrorCode::NoConvergence, std::string("CLF LP ended with status ") + qp::to_string(s.status));
    }
  }
  const double margin = inf_lie + clf.kappa_v * V;
  const double tol = 1e-12 * (1.0 + std::abs(V));
  rep.add_witness("clf_decrease", margin <= tol, margin, tol, u_star,
    "inf_u dV/dx (f + g u) + kappa_v V(x); witness is the minimizing input");
  const double x2 = x.squaredNorm();
  rep.add("sandwich_lower", clf.c1 * x2 - V <= tol, clf.c1 * x2 - V, tol, "c1 |x|^2 - V(x)");
  rep.add("sandwich_upper", V - clf.c2 * x2 <= tol, V - clf.c2 * x2, tol, "V(x) - c2 |x|^2");
  rep.data["V"] = V;
  rep.data["inf_lie_derivative"] = std::isfinite(inf_lie) ? nlohmann::json(inf_lie) : nlohmann::json("-inf");
  return rep;
}

void PsfConfig::validate(Eigen::Index n, Eigen::Index m) const
{
  if (horizon < 1) { throw Error(ErrorCode::InvalidArgument, "PSF horizon must be >= 1"); }
  if (!(slack_weight >= 0)) { throw Error(ErrorCode::InvalidArgument, "PSF slack weight must be >= 0"); }
  require_dim(geom::dim(state_set), n, "PSF state set");
  require_dim(input_set.dim(), m, "PSF input set");
  if (terminal_set) { require_dim(geom::dim(*terminal_set), n, "PSF terminal set"); }
  auto allowed = [](const geom::SetRegion & r) {
    return std::holds_alternative<geom::Box>(r) || std::holds_alternative<geom::HPolytope>(r);
  };
  if (!allowed(state_set) || (terminal_set && !allowed(*terminal_set))) {
    throw Error(ErrorCode::InvalidArgument, "PSF state and terminal sets must be boxes or H-polytopes");
  }
}

nlohmann::json PsfDiagnostics::to_json() const
{
  nlohmann::json j;
  j["mode"] = mode;
  j["active_constraints"] = active_constraints;
  j["max_slack"] = max_slack;
  j["slack_norm"] = slack_norm;
  j["sqp_iterations"] = sqp_iterations;
  j["qp_iterations"] = qp_iterations;
  j["terminal_default"] = terminal_default;
  j["modified"] = modified;
  if (terminal_default) { j["note"] = "terminal set defaulted to the state set; not a certified invariant set"; }
  return j;
}

PsfResult PredictiveSafetyFilter::filter(const dyn::DiscreteMap & model, const Vector & x, const Vector & u_nom)
{
  const Eigen::Index n = dyn::state_dim(model);
  const Eigen::Index m = dyn::input_dim(model);
  require_dim(x.size(), n, "PSF state");
  require_dim(u_nom.size(), m, "PSF nominal input");
  if (m == 0) { throw Error(ErrorCode::UnsupportedModel, "PSF needs a model with inputs"); }
  cfg_.validate(n, m);
  const bool soft = cfg_.slack_weight > 0;
  if (!soft && !geom::contains(cfg_.state_set, x)) {
    throw InfeasibleFilterError("current state lies outside the state set");
  }
  const int N = cfg_.horizon;
  const auto Ns = static_cast<std::size_t>(N);

  PsfResult res;
  res.diagnostics.terminal_default = !cfg_.terminal_set.has_value();
  const geom::Box & U = cfg_.input_set;

  auto solve_once = [&](const Prediction & pred, const std::vector<Vector> & lo, const std::vector<Vector> & hi) {
    Assembled a = assemble(cfg_, pred, x, u_nom, lo, hi);
    qp::QpSolution s = solver_.solve(a.p);
    if (s.status == qp::Status::PrimalInfeasible) {
      throw InfeasibleFilterError("no admissible input sequence keeps the prediction in the constraint sets",
        s.certificate);
    }
    if (s.status != qp::Status::Optimal) {
      throw Error(ErrorCode::NoConvergence, std::string("PSF QP ended with status ") + qp::to_string(s.status));
    }
    res.diagnostics.qp_iterations += s.iterations;
    res.diagnostics.active_constraints = count_active(a.p, s.z, a.n_ineq_first);
    if (a.n_slack > 0) {
      const Vector sl = s.z.tail(a.n_slack).cwiseMax(0.0);
      res.diagnostics.max_slack = sl.maxCoeff();
      res.diagnostics.slack_norm = sl.norm();
    }
    std::vector<Vector> us(Ns);
    for (std::size_t i = 0; i < Ns; ++i) {
      us[i] = s.z.segment(static_cast<Eigen::Index>(i) * m, m).cwiseMax(U.lower).cwiseMin(U.upper);
    }
    res.states.clear();
    for (std::size_t i = 0; i < Ns; ++i) {
      res.states.push_back(s.z.segment(N * m + static_cast<Eigen::Index>(i) * n, n));
    }
    return us;
  };

  std::vector<Vector> lo(Ns, U.lower), hi(Ns, U.upper);
  if (std::holds_alternative<dyn::LinearMap>(model)) {
    const auto & lin = std::get<dyn::LinearMap>(model);
    Prediction pred{std::vector<Matrix>(Ns, lin.A), std::vector<Matrix>(Ns, lin.B), std::vector<Vector>(Ns, Vector::Zero(n))};
    res.diagnostics.mode = "linear";
    res.inputs = solve_once(pred, lo, hi);
  } else {
    res.diagnostics.mode = "sqp";
    const Vector range = U.upper - U.lower;
    std::vector<Vector> ubar(Ns, u_nom.cwiseMax(U.lower).cwiseMin(U.upper));
    bool converged = false;
    for (int it = 1; it <= 10; ++it) {
      Prediction pred;
      std::vector<Vector> tlo(Ns), thi(Ns);
      Vector xbar = x;
      for (std::size_t i = 0; i < Ns; ++i) {
        auto [A, B] = dyn::linearize(model, xbar, ubar[i]);
        const Vector next = dyn::step(model, xbar, ubar[i]);
        pred.A.push_back(A);
        pred.B.push_back(B);
        pred.c.push_back(next - A * xbar - B * ubar[i]);
        tlo[i] = U.lower;
        thi[i] = U.upper;
        for (Eigen::Index j = 0; j < m; ++j) {
          if (std::isfinite(range(j))) {
            tlo[i](j) = std::max(U.lower(j), ubar[i](j) - 0.1 * range(j));
            thi[i](j) = std::min(U.upper(j), ubar[i](j) + 0.1 * range(j));
          }
        }
        xbar = next;
      }
      std::vector<Vector> us;
      try {
        us = solve_once(pred, tlo, thi);
      } catch (const InfeasibleFilterError &) {
        // The trust region may cut off every safe input; only the full input
        // box decides infeasibility.
        us = solve_once(pred, lo, hi);
      }
      double step = 0.0;
      for (std::size_t i = 0; i < Ns; ++i) { step = std::max(step, (us[i] - ubar[i]).lpNorm<Eigen::Infinity>()); }
      ubar = us;
      res.diagnostics.sqp_iterations = it;
      const double scale = 1.0 + (range.allFinite() ? range.lpNorm<Eigen::Infinity>() : u_nom.lpNorm<Eigen::Infinity>());
      if (step <= 1e-6 * scale) {
        converged = true;
        break;
      }
    }
    if (!converged) { throw Error(ErrorCode::SqpNoConverge, "successive linearization did not converge in 10 iterations"); }
    res.inputs = ubar;
    // Report the states of the true rollout rather than the last linear model.
    res.states.clear();
    Vector xr = x;
    for (std::size_t i = 0; i < Ns; ++i) {
      xr = dyn::step(model, xr, ubar[i]);
      res.states.push_back(xr);
    }
  }
  res.u0 = res.inputs.front();
  res.diagnostics.modified = (res.u0 - u_nom).lpNorm<Eigen::Infinity>() > 0.0;
  return res;
}

PsfResult predictive_safety_filter(const dyn::DiscreteMap & model, const Vector & x, const Vector & u_nom,
  const PsfConfig & cfg)
{
  PredictiveSafetyFilter f(cfg);
  return f.filter(model, x, u_nom);
}

}  // namespace certkit::filter
