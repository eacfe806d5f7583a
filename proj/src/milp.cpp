#include "certkit/milp.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

#include "certkit/error.hpp"
#include "certkit/qp.hpp"
#include "certkit/report.hpp"

namespace certkit::milp {

namespace {

constexpr double kLpTol = 1e-9;
constexpr int kLpMaxIter = 50000;

geom::Box region_box(const Region & region)
{
  if (const auto * b = std::get_if<geom::Box>(&region)) {
    if (!b->lower.allFinite() || !b->upper.allFinite()) {
      throw Error(ErrorCode::UnboundedRegion, "MILP region must be bounded");
    }
    return *b;
  }
  return geom::bounding_box(std::get<geom::HPolytope>(region));
}

/// Per binary (in model order): -1 free, 0 or 1 fixed.
using Fixing = std::vector<signed char>;

struct Node
{
  double bound;
  long id;
  Fixing fix;
};

struct NodeOrder
{
  bool operator()(const Node & a, const Node & b) const
  {
    if (a.bound != b.bound) { return a.bound < b.bound; }
    return a.id > b.id;
  }
};

/// Dense LP data of a model: rows followed by one identity row per variable.
struct DenseLp
{
  Matrix A;
  Vector l, u;
  Eigen::Index var_row0{0};
};

DenseLp dense(const MilpModel & m)
{
  const auto nv = static_cast<Eigen::Index>(m.num_vars());
  const auto nr = static_cast<Eigen::Index>(m.rows.size());
  DenseLp d;
  d.A = Matrix::Zero(nr + nv, nv);
  d.l = Vector(nr + nv);
  d.u = Vector(nr + nv);
  for (Eigen::Index r = 0; r < nr; ++r) {
    const Constraint & c = m.rows[static_cast<std::size_t>(r)];
    for (const auto & [v, a] : c.terms) { d.A(r, v) += a; }
    d.l(r) = c.lo;
    d.u(r) = c.hi;
  }
  d.A.bottomRows(nv) = Matrix::Identity(nv, nv);
  d.l.tail(nv) = m.lower;
  d.u.tail(nv) = m.upper;
  d.var_row0 = nr;
  return d;
}

nn::Mlp negate(const nn::Mlp & net)
{
  nn::Mlp out = net;
  if (out.layers.back().act == nn::Activation::Identity) {
    out.layers.back().W = -out.layers.back().W;
    out.layers.back().b = -out.layers.back().b;
  } else {
    const Eigen::Index k = out.layers.back().W.rows();
    out.layers.push_back(nn::Layer{-Matrix::Identity(k, k), Vector::Zero(k), nn::Activation::Identity});
  }
  return out;
}

std::string fmt(double v)
{
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

int MilpModel::add_var(std::string name, double lo, double hi, bool binary)
{
  names.push_back(std::move(name));
  const auto n = static_cast<Eigen::Index>(names.size());
  lower.conservativeResize(n);
  upper.conservativeResize(n);
  lower(n - 1) = lo;
  upper(n - 1) = hi;
  is_binary.push_back(binary);
  const int idx = static_cast<int>(n - 1);
  if (binary) { binaries.push_back(idx); }
  return idx;
}

bool MilpModel::is_feasible(const Vector & v, double tol) const
{
  if (v.size() != num_vars()) { return false; }
  for (int i = 0; i < num_vars(); ++i) {
    if (v(i) < lower(i) - tol || v(i) > upper(i) + tol) { return false; }
    if (is_binary[static_cast<std::size_t>(i)] && std::min(std::abs(v(i)), std::abs(v(i) - 1.0)) > tol) {
      return false;
    }
  }
  for (const Constraint & c : rows) {
    double s = 0.0;
    for (const auto & [j, a] : c.terms) { s += a * v(j); }
    if (s < c.lo - tol * (1.0 + std::abs(c.lo)) || s > c.hi + tol * (1.0 + std::abs(c.hi))) { return false; }
  }
  return true;
}

Vector MilpModel::assignment(const nn::Mlp & net, const Vector & x) const
{
  require_dim(x.size(), static_cast<Eigen::Index>(input_vars.size()), "MILP assignment input");
  Vector v = Vector::Zero(num_vars());
  for (std::size_t i = 0; i < input_vars.size(); ++i) { v(input_vars[i]) = x(static_cast<Eigen::Index>(i)); }
  std::vector<Vector> pre;
  std::vector<Vector> post;
  Vector z = x;
  for (const nn::Layer & L : net.layers) {
    const Vector p = L.W * z + L.b;
    z = p.unaryExpr([&](double s) { return nn::activate(L.act, s); });
    pre.push_back(p);
    post.push_back(z);
  }
  for (const NeuronEncoding & ne : neurons) {
    const auto l = static_cast<std::size_t>(ne.layer - 1);
    v(ne.z_var) = post[l](ne.index);
    if (ne.binary >= 0) { v(ne.binary) = pre[l](ne.index) > 0 ? 1.0 : 0.0; }
  }
  return v;
}

std::string MilpModel::to_lp() const
{
  std::ostringstream os;
  os << "\\ certkit MILP model\nMaximize\n obj:";
  bool any = false;
  for (int i = 0; i < num_vars(); ++i) {
    if (objective.size() == num_vars() && objective(i) != 0.0) {
      os << ' ' << (objective(i) < 0 ? "- " : "+ ") << fmt(std::abs(objective(i))) << ' ' << names[static_cast<std::size_t>(i)];
      any = true;
    }
  }
  if (!any) { os << " 0 " << names.front(); }
  os << "\nSubject To\n";
  auto expr = [&](const Constraint & c) {
    std::ostringstream e;
    for (const auto & [j, a] : c.terms) {
      e << ' ' << (a < 0 ? "- " : "+ ") << fmt(std::abs(a)) << ' ' << names[static_cast<std::size_t>(j)];
    }
    return e.str();
  };
  for (const Constraint & c : rows) {
    const std::string e = expr(c);
    if (c.lo == c.hi) {
      os << ' ' << c.name << ':' << e << " = " << fmt(c.lo) << '\n';
      continue;
    }
    if (std::isfinite(c.lo)) { os << ' ' << c.name << "_lo:" << e << " >= " << fmt(c.lo) << '\n'; }
    if (std::isfinite(c.hi)) { os << ' ' << c.name << "_hi:" << e << " <= " << fmt(c.hi) << '\n'; }
  }
  os << "Bounds\n";
  for (int i = 0; i < num_vars(); ++i) {
    const auto & n = names[static_cast<std::size_t>(i)];
    if (is_binary[static_cast<std::size_t>(i)]) { continue; }
    const bool fl = std::isfinite(lower(i)), fu = std::isfinite(upper(i));
    if (!fl && !fu) {
      os << ' ' << n << " free\n";
    } else if (fl && fu) {
      os << ' ' << fmt(lower(i)) << " <= " << n << " <= " << fmt(upper(i)) << '\n';
    } else if (fl) {
      os << ' ' << n << " >= " << fmt(lower(i)) << '\n';
    } else {
      os << " -inf <= " << n << " <= " << fmt(upper(i)) << '\n';
    }
  }
  if (!binaries.empty()) {
    os << "Binaries\n";
    for (int b : binaries) { os << ' ' << names[static_cast<std::size_t>(b)] << '\n'; }
  }
  os << "End\n";
  return os.str();
}

nlohmann::json MilpModel::stats() const
{
  int stable = 0;
  for (const NeuronEncoding & n : neurons) { stable += n.binary < 0 ? 1 : 0; }
  return {{"variables", num_vars()}, {"constraints", rows.size()}, {"binaries", binaries.size()},
    {"neurons", neurons.size()}, {"stable_neurons", stable}};
}

MilpModel encode_network(const nn::Mlp & net, const Region & region)
{
  for (const nn::Layer & L : net.layers) {
    if (L.act != nn::Activation::Relu && L.act != nn::Activation::Identity) {
      throw Error(ErrorCode::UnsupportedActivation,
        std::string("MILP encoding supports relu and identity layers, got ") + nn::to_string(L.act));
    }
  }
  const geom::Box box = region_box(region);
  require_dim(box.dim(), net.layers.front().W.cols(), "MILP region");
  const auto bounds = nn::interval_bounds(net, box.lower, box.upper);

  MilpModel m;
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    m.input_vars.push_back(m.add_var("x" + std::to_string(i), box.lower(i), box.upper(i)));
  }
  if (const auto * poly = std::get_if<geom::HPolytope>(&region)) {
    for (Eigen::Index r = 0; r < poly->A.rows(); ++r) {
      Constraint c;
      for (Eigen::Index j = 0; j < poly->A.cols(); ++j) {
        if (poly->A(r, j) != 0.0) { c.terms.emplace_back(m.input_vars[static_cast<std::size_t>(j)], poly->A(r, j)); }
      }
      c.hi = poly->b(r);
      c.name = "region" + std::to_string(r);
      m.rows.push_back(std::move(c));
    }
  }

  std::vector<int> prev = m.input_vars;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const nn::Layer & L = net.layers[l];
    const int layer = static_cast<int>(l) + 1;
    std::vector<int> cur;
    for (Eigen::Index j = 0; j < L.W.rows(); ++j) {
      const std::string tag = std::to_string(layer) + "_" + std::to_string(j);
      NeuronEncoding ne;
      ne.layer = layer;
      ne.index = static_cast<int>(j);
      ne.lb = bounds[l].pre_lo(j);
      ne.ub = bounds[l].pre_hi(j);
      ne.M = std::max(std::abs(ne.lb), std::abs(ne.ub));

      // Terms of z - W_j prev.
      auto affine_terms = [&](double zc, double pc) {
        std::vector<std::pair<int, double>> t{{-1, zc}};
        for (Eigen::Index k = 0; k < L.W.cols(); ++k) {
          if (L.W(j, k) != 0.0) { t.emplace_back(prev[static_cast<std::size_t>(k)], -pc * L.W(j, k)); }
        }
        return t;
      };
      auto with_z = [&](std::vector<std::pair<int, double>> t, int z) {
        t.front().first = z;
        return t;
      };
      const double bj = L.b(j);
      const bool relu = L.act == nn::Activation::Relu;

      if (!relu || ne.lb >= 0) {
        ne.z_var = m.add_var("z" + tag, relu ? std::max(0.0, ne.lb) : ne.lb, ne.ub);
        m.rows.push_back({with_z(affine_terms(1.0, 1.0), ne.z_var), bj, bj, "aff" + tag});
      } else if (ne.ub <= 0) {
        ne.z_var = m.add_var("z" + tag, 0.0, 0.0);
      } else {
        ne.z_var = m.add_var("z" + tag, 0.0, ne.ub);
        ne.binary = m.add_var("b" + tag, 0.0, 1.0, true);
        const double M = ne.M;
        // z >= p
        m.rows.push_back({with_z(affine_terms(1.0, 1.0), ne.z_var), bj, kInf, "ge" + tag});
        // z - p <= M (1 - b)
        auto t = with_z(affine_terms(1.0, 1.0), ne.z_var);
        t.emplace_back(ne.binary, M);
        m.rows.push_back({t, -kInf, M + bj, "up" + tag});
        // p - z <= M (1 - b)
        t = with_z(affine_terms(-1.0, -1.0), ne.z_var);
        t.emplace_back(ne.binary, M);
        m.rows.push_back({t, -kInf, M - bj, "lo" + tag});
        // z <= M b
        m.rows.push_back({{{ne.z_var, 1.0}, {ne.binary, -M}}, -kInf, 0.0, "on" + tag});
      }
      cur.push_back(ne.z_var);
      m.neurons.push_back(ne);
    }
    prev = std::move(cur);
  }
  m.output_vars = prev;
  m.objective = Vector::Zero(m.num_vars());
  return m;
}

const char * to_string(VerifyStatus s)
{
  switch (s) {
  case VerifyStatus::Certified: return "certified";
  case VerifyStatus::Falsified: return "falsified";
  case VerifyStatus::BoundOnly: return "bound_only";
  }
  return "?";
}

nlohmann::json VerifyOutcome::to_json() const
{
  nlohmann::json j;
  j["status"] = to_string(status);
  j["bound"] = bound;
  j["value"] = value;
  j["counterexample"] = counterexample ? json_of(*counterexample) : nlohmann::json(nullptr);
  j["nodes_explored"] = nodes_explored;
  j["gap"] = gap;
  return j;
}

VerifyOutcome maximize_output(const nn::Mlp & net, const Region & region, double tol, int node_budget)
{
  if (net.layers.back().W.rows() != 1) {
    throw Error(ErrorCode::InvalidArgument, "maximize_output needs a scalar-output network");
  }
  if (!(tol > 0) || node_budget < 1) {
    throw Error(ErrorCode::InvalidArgument, "maximize_output needs tol > 0 and node_budget >= 1");
  }
  MilpModel m = encode_network(net, region);
  m.objective(m.output_vars.front()) = 1.0;
  const DenseLp lp = dense(m);
  const geom::Box box = region_box(region);
  const auto nb = m.binaries.size();

  VerifyOutcome out;
  double incumbent = -kInf;
  Vector best_x;
  auto try_point = [&](Vector x) {
    x = x.cwiseMax(box.lower).cwiseMin(box.upper);
    if (!x.allFinite()) { return; }
    if (const auto * poly = std::get_if<geom::HPolytope>(&region)) {
      if (!geom::contains(*poly, x)) { return; }
    }
    const double v = nn::forward(net, x)(0);
    if (v > incumbent) {
      incumbent = v;
      best_x = x;
    }
  };
  if (std::holds_alternative<geom::Box>(region)) { try_point(box.center()); }

  const double ibp_ub = m.upper(m.output_vars.front());
  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  long next_id = 0;
  open.push(Node{ibp_ub, next_id++, Fixing(nb, -1)});
  double closed_bound = -kInf;  // max bound over nodes closed without exploring further

  while (!open.empty()) {
    if (open.top().bound <= incumbent + tol) {
      closed_bound = std::max(closed_bound, open.top().bound);
      open.pop();
      continue;
    }
    if (out.nodes_explored >= node_budget) { break; }
    Node node = open.top();
    open.pop();
    ++out.nodes_explored;

    Vector l = lp.l, u = lp.u;
    for (std::size_t b = 0; b < nb; ++b) {
      if (node.fix[b] >= 0) {
        const Eigen::Index r = lp.var_row0 + m.binaries[b];
        l(r) = u(r) = static_cast<double>(node.fix[b]);
      }
    }
    const qp::QpSolution s = qp::solve_lp(-m.objective, lp.A, l, u, kLpTol, kLpMaxIter);
    if (s.status == qp::Status::PrimalInfeasible) { continue; }
    double bound = node.bound;
    Vector beta;
    if (s.status == qp::Status::Optimal) {
      bound = std::min(bound, s.z(m.output_vars.front()));
      Vector x(static_cast<Eigen::Index>(m.input_vars.size()));
      for (std::size_t i = 0; i < m.input_vars.size(); ++i) { x(static_cast<Eigen::Index>(i)) = s.z(m.input_vars[i]); }
      try_point(x);
      beta = s.z;
    }
    if (bound <= incumbent + tol) {
      closed_bound = std::max(closed_bound, bound);
      continue;
    }
    // Most fractional free binary, smallest index on ties; without an LP
    // solution the first free binary.
    int pick = -1;
    double frac = -1.0;
    for (std::size_t b = 0; b < nb; ++b) {
      if (node.fix[b] >= 0) { continue; }
      const double f = beta.size() ? std::min(std::abs(beta(m.binaries[b])), std::abs(1.0 - beta(m.binaries[b]))) : 0.0;
      if (f > frac + 1e-12) {
        frac = f;
        pick = static_cast<int>(b);
      }
    }
    if (pick < 0) {
      closed_bound = std::max(closed_bound, bound);
      continue;
    }
    for (signed char v : {0, 1}) {
      Node child{bound, next_id++, node.fix};
      child.fix[static_cast<std::size_t>(pick)] = v;
      open.push(std::move(child));
    }
  }

  double global = closed_bound;
  if (!open.empty()) { global = std::max(global, open.top().bound); }
  global = std::max(global, incumbent);
  out.bound = global;
  out.value = incumbent;
  if (best_x.size()) { out.counterexample = best_x; }
  out.gap = global - incumbent;
  out.status = open.empty() && out.gap <= tol ? VerifyStatus::Certified : VerifyStatus::BoundOnly;
  return out;
}

std::vector<geom::Box> cover_complement(const geom::Box & region, const std::optional<geom::Box> & exclude)
{
  if (!exclude) { return {region}; }
  require_dim(exclude->dim(), region.dim(), "excluded box");
  const Vector elo = exclude->lower.cwiseMax(region.lower);
  const Vector ehi = exclude->upper.cwiseMin(region.upper);
  if ((elo.array() > ehi.array()).any()) { return {region}; }
  std::vector<geom::Box> out;
  Vector lo = region.lower, hi = region.upper;
  for (Eigen::Index i = 0; i < region.dim(); ++i) {
    if (region.lower(i) < elo(i)) {
      Vector h = hi;
      h(i) = elo(i);
      out.emplace_back(lo, h);
    }
    if (ehi(i) < region.upper(i)) {
      Vector l = lo;
      l(i) = ehi(i);
      out.emplace_back(l, hi);
    }
    lo(i) = elo(i);
    hi(i) = ehi(i);
  }
  return out;
}

VerifyOutcome verify_positivity(const nn::Mlp & f, const geom::Box & region, const std::optional<geom::Box> & exclude,
  double tol, int node_budget)
{
  const nn::Mlp neg = negate(f);
  VerifyOutcome out;
  out.bound = kInf;
  out.value = kInf;
  for (const geom::Box & b : cover_complement(region, exclude)) {
    const VerifyOutcome o = maximize_output(neg, b, tol, node_budget);
    out.nodes_explored += o.nodes_explored;
    out.gap = std::max(out.gap, o.gap);
    out.bound = std::min(out.bound, -o.bound);
    if (-o.value < out.value) {
      out.value = -o.value;
      out.counterexample = o.counterexample;
    }
  }
  if (out.bound >= 0) {
    out.status = VerifyStatus::Certified;
    out.counterexample.reset();
  } else if (out.value < 0 && out.counterexample) {
    out.status = VerifyStatus::Falsified;
  } else {
    out.status = VerifyStatus::BoundOnly;
    out.counterexample.reset();
  }
  return out;
}

nn::Mlp decrease_network(const nn::Mlp & V, const Matrix & A)
{
  require_dim(A.rows(), V.layers.front().W.cols(), "decrease map");
  require_dim(A.cols(), A.rows(), "decrease map");
  std::vector<nn::Layer> layers;
  for (std::size_t l = 0; l < V.layers.size(); ++l) {
    const nn::Layer & L = V.layers[l];
    const Eigen::Index r = L.W.rows(), c = L.W.cols();
    nn::Layer out;
    out.act = L.act;
    out.b = Vector(2 * r);
    out.b << L.b, L.b;
    if (l == 0) {
      out.W = Matrix(2 * r, c);
      out.W << L.W, L.W * A;
    } else {
      out.W = Matrix::Zero(2 * r, 2 * c);
      out.W.topLeftCorner(r, c) = L.W;
      out.W.bottomRightCorner(r, c) = L.W;
    }
    layers.push_back(std::move(out));
  }
  nn::Layer & last = layers.back();
  const Eigen::Index k = V.layers.back().W.rows();
  if (last.act == nn::Activation::Identity) {
    // Fold the difference into the last affine layer.
    Matrix W = last.W.topRows(k) - last.W.bottomRows(k);
    last.W = W;
    last.b = Vector::Zero(k);
  } else {
    Matrix D(k, 2 * k);
    D << Matrix::Identity(k, k), -Matrix::Identity(k, k);
    layers.push_back(nn::Layer{D, Vector::Zero(k), nn::Activation::Identity});
  }
  return nn::Mlp(std::move(layers));
}

VerifyOutcome verify_lyapunov_decrease(const nn::Mlp & V, const dyn::DiscreteMap & model, const geom::Box & region,
  const std::optional<geom::Box> & exclude, double tol, int node_budget)
{
  Matrix A;
  if (const auto * lin = std::get_if<dyn::LinearMap>(&model); lin && lin->B.cols() == 0) {
    A = lin->A;
  } else if (const auto * k = std::get_if<dyn::KoopmanLatent>(&model)) {
    A = k->K;
  } else {
    throw Error(ErrorCode::UnsupportedModel,
      std::string("Lyapunov decrease is MILP-representable only for autonomous linear maps, got ") + dyn::kind(model));
  }
  return verify_positivity(decrease_network(V, A), region, exclude, tol, node_budget);
}

}  // namespace certkit::milp
