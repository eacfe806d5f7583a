#include "certkit/dyn.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "certkit/error.hpp"
#include "certkit/report.hpp"

namespace certkit::dyn {

namespace {

template <class... Ts>
struct overloaded : Ts...
{
  using Ts::operator()...;
};

void require_finite(const Vector & x, std::size_t step, const char * what)
{
  if (!x.allFinite()) { throw NonFiniteStateError(step, what); }
}

Vector clamp_to(const Vector & u, const Vector & lo, const Vector & hi)
{
  Vector out = u;
  if (lo.size() == u.size()) { out = out.cwiseMax(lo); }
  if (hi.size() == u.size()) { out = out.cwiseMin(hi); }
  return out;
}

std::vector<Matrix> tensor_from_json(const nlohmann::json & j)
{
  std::vector<Matrix> Q;
  if (j.is_null()) { return Q; }
  for (const auto & slice : j) { Q.push_back(matrix_from_json(slice)); }
  return Q;
}

nlohmann::json tensor_json(const std::vector<Matrix> & Q)
{
  nlohmann::json j = nlohmann::json::array();
  for (const Matrix & q : Q) { j.push_back(json_of(q)); }
  return j;
}

Matrix matrix_or(const nlohmann::json & j, const char * key, Eigen::Index rows, Eigen::Index cols)
{
  if (!j.contains(key)) { return Matrix::Zero(rows, cols); }
  Matrix m = matrix_from_json(j.at(key));
  if (m.size() == 0) { return Matrix::Zero(rows, cols); }
  return m;
}

}  // namespace

Quadratic::Quadratic(Matrix lin, std::vector<Matrix> quad) : L(std::move(lin)), Q(std::move(quad))
{
  const Eigen::Index n = L.rows();
  require_dim(L.cols(), n, "Quadratic linear part");
  if (Q.empty()) { Q.assign(static_cast<std::size_t>(n), Matrix::Zero(n, n)); }
  require_dim(static_cast<Eigen::Index>(Q.size()), n, "Quadratic tensor");
  for (const Matrix & q : Q) {
    require_dim(q.rows(), n, "Quadratic tensor slice");
    require_dim(q.cols(), n, "Quadratic tensor slice");
    if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + q.cwiseAbs().maxCoeff())) {
      throw Error(ErrorCode::InvalidArgument, "Quadratic tensor must be symmetric in its last two indices");
    }
  }
}

Vector Quadratic::eval(const Vector & x) const
{
  require_dim(x.size(), dim(), "Quadratic state");
  Vector out = L * x;
  for (std::size_t i = 0; i < Q.size(); ++i) { out(static_cast<Eigen::Index>(i)) += x.dot(Q[i] * x); }
  return out;
}

Matrix Quadratic::jacobian(const Vector & x) const
{
  Matrix J = L;
  for (std::size_t i = 0; i < Q.size(); ++i) { J.row(static_cast<Eigen::Index>(i)) += 2.0 * (Q[i] * x).transpose(); }
  return J;
}

PhsSystem::PhsSystem(Matrix s, Matrix l, Matrix g, Matrix p)
    : S(std::move(s)), Lr(std::move(l)), G(std::move(g)), P(std::move(p))
{
  const Eigen::Index n = P.rows();
  require_dim(P.cols(), n, "PhsSystem P");
  require_dim(S.rows(), n, "PhsSystem S");
  require_dim(S.cols(), n, "PhsSystem S");
  require_dim(Lr.rows(), n, "PhsSystem L");
  require_dim(G.rows(), n, "PhsSystem G");
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + P.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::InvalidArgument, "PhsSystem P must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(P, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0)) {
    throw Error(ErrorCode::InvalidArgument, "PhsSystem P must be positive definite");
  }
}

ControlAffineODE::ControlAffineODE(Drift f, Matrix input_map) : drift(std::move(f)), B(std::move(input_map))
{
  require_dim(B.rows(), state_dim(), "ControlAffineODE input map");
}

ControlAffineODE ControlAffineODE::from_phs(const PhsSystem & phs) { return ControlAffineODE(phs, phs.G); }

Eigen::Index ControlAffineODE::state_dim() const
{
  return std::visit(overloaded{
                      [](const LinearDrift & d) { return d.A.rows(); },
                      [](const Quadratic & q) { return q.dim(); },
                      [](const PhsSystem & p) { return p.dim(); },
                    },
    drift);
}

Vector ControlAffineODE::f(const Vector & x) const
{
  require_dim(x.size(), state_dim(), "ODE state");
  return std::visit(overloaded{
                      [&](const LinearDrift & d) -> Vector { return d.A * x; },
                      [&](const Quadratic & q) -> Vector { return q.eval(x); },
                      [&](const PhsSystem & p) -> Vector { return (p.J() - p.R()) * p.grad_h(x); },
                    },
    drift);
}

Matrix ControlAffineODE::g(const Vector &) const { return B; }

Vector ControlAffineODE::clamp_input(const Vector & u) const { return clamp_to(u, u_lower, u_upper); }

BicycleModel::BicycleModel(double l, double steer, double accel) : wheelbase(l), steer_limit(steer), accel_limit(accel)
{
  if (!(wheelbase > 0 && steer_limit > 0 && accel_limit > 0)) {
    throw Error(ErrorCode::InvalidArgument, "BicycleModel limits and wheelbase must be > 0");
  }
}

Vector BicycleModel::clamp_input(const Vector & u) const
{
  require_dim(u.size(), 2, "bicycle input");
  Vector out(2);
  out << std::clamp(u(0), -steer_limit, steer_limit), std::clamp(u(1), -accel_limit, accel_limit);
  return out;
}

Vector BicycleModel::f(const Vector & x, const Vector & u) const
{
  require_dim(x.size(), 4, "bicycle state");
  const Vector uc = clamp_input(u);
  Vector d(4);
  d << x(3) * std::cos(x(2)), x(3) * std::sin(x(2)), x(3) / wheelbase * std::tan(uc(0)), uc(1);
  return d;
}

Eigen::Index state_dim(const ContinuousModel & m)
{
  return std::visit(overloaded{
                      [](const ControlAffineODE & o) { return o.state_dim(); },
                      [](const BicycleModel &) { return Eigen::Index{4}; },
                    },
    m);
}

Eigen::Index input_dim(const ContinuousModel & m)
{
  return std::visit(overloaded{
                      [](const ControlAffineODE & o) { return o.input_dim(); },
                      [](const BicycleModel &) { return Eigen::Index{2}; },
                    },
    m);
}

Vector vector_field(const ContinuousModel & m, const Vector & x, const Vector & u)
{
  return std::visit(overloaded{
                      [&](const ControlAffineODE & o) -> Vector {
                        if (o.input_dim() == 0) { return o.f(x); }
                        require_dim(u.size(), o.input_dim(), "ODE input");
                        return o.f(x) + o.B * o.clamp_input(u);
                      },
                      [&](const BicycleModel & b) -> Vector { return b.f(x, u); },
                    },
    m);
}

Vector rk4_step(const ContinuousModel & sys, const Vector & x, const Vector & u, double h)
{
  const Vector k1 = vector_field(sys, x, u);
  const Vector k2 = vector_field(sys, x + 0.5 * h * k1, u);
  const Vector k3 = vector_field(sys, x + 0.5 * h * k2, u);
  const Vector k4 = vector_field(sys, x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory simulate_ode(const ContinuousModel & sys, const Vector & x0, const std::vector<Vector> & u_seq,
  double dt, int substeps)
{
  if (!(dt > 0)) { throw Error(ErrorCode::InvalidArgument, "dt must be > 0"); }
  if (substeps < 1) { throw Error(ErrorCode::InvalidArgument, "substeps must be >= 1"); }
  require_dim(x0.size(), state_dim(sys), "initial state");
  require_finite(x0, 0, "initial state is not finite");
  const Eigen::Index m = input_dim(sys);
  const double h = dt / substeps;

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  Vector x = x0;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < u_seq.size(); ++k) {
    Vector u = m == 0 ? Vector() : u_seq[k];
    if (m > 0) {
      require_dim(u.size(), m, "input sequence entry");
      u = std::holds_alternative<BicycleModel>(sys) ? std::get<BicycleModel>(sys).clamp_input(u)
                                                     : std::get<ControlAffineODE>(sys).clamp_input(u);
    }
    for (int s = 0; s < substeps; ++s) {
      x = rk4_step(sys, x, u, h);
      ++idx;
      require_finite(x, idx, "state diverged");
      traj.inputs.push_back(u);
      traj.states.push_back(x);
      traj.times.push_back(static_cast<double>(k) * dt + static_cast<double>(s + 1) * h);
    }
  }
  return traj;
}

Eigen::Index state_dim(const DiscreteMap & m)
{
  return std::visit(overloaded{
                      [](const LinearMap & l) { return l.A.rows(); },
                      [](const PolynomialMap & p) { return p.poly.dim(); },
                      [](const NetworkMap & n) { return n.state_dim; },
                      [](const KoopmanLatent & k) { return k.K.rows(); },
                      [](const ClosedLoopMap & c) {
                        return c.open_map ? state_dim(*c.open_map) : state_dim(*c.open_ode);
                      },
                    },
    m);
}

Eigen::Index input_dim(const DiscreteMap & m)
{
  return std::visit(overloaded{
                      [](const LinearMap & l) { return l.B.cols(); },
                      [](const PolynomialMap &) { return Eigen::Index{0}; },
                      [](const NetworkMap & n) { return n.net.input_dim() - n.state_dim; },
                      [](const KoopmanLatent &) { return Eigen::Index{0}; },
                      [](const ClosedLoopMap &) { return Eigen::Index{0}; },
                    },
    m);
}

const char * kind(const DiscreteMap & m)
{
  return std::visit(overloaded{
                      [](const LinearMap &) { return "linear"; },
                      [](const PolynomialMap &) { return "polynomial"; },
                      [](const NetworkMap &) { return "network"; },
                      [](const KoopmanLatent &) { return "koopman"; },
                      [](const ClosedLoopMap &) { return "closed_loop"; },
                    },
    m);
}

Vector step(const DiscreteMap & model, const Vector & x, const Vector & u)
{
  require_dim(x.size(), state_dim(model), "map state");
  const Eigen::Index m = input_dim(model);
  if (m > 0 || u.size() > 0) { require_dim(u.size(), m, "map input"); }
  Vector out = std::visit(overloaded{
                            [&](const LinearMap & l) -> Vector {
                              return m > 0 ? Vector(l.A * x + l.B * u) : Vector(l.A * x);
                            },
                            [&](const PolynomialMap & p) -> Vector { return p.poly.eval(x); },
                            [&](const NetworkMap & n) -> Vector {
                              Vector xu(x.size() + u.size());
                              xu << x, u;
                              return nn::forward(n.net, xu);
                            },
                            [&](const KoopmanLatent & k) -> Vector { return k.K * x; },
                            [&](const ClosedLoopMap & c) -> Vector {
                              const Vector pu = nn::forward(c.policy, x);
                              if (c.open_map) { return step(*c.open_map, x, pu); }
                              const double h = c.dt / c.substeps;
                              const Eigen::Index mi = dyn::input_dim(*c.open_ode);
                              Vector uc = pu;
                              if (const auto * o = std::get_if<ControlAffineODE>(c.open_ode.get())) {
                                uc = mi > 0 ? o->clamp_input(pu) : Vector();
                              } else {
                                uc = std::get<BicycleModel>(*c.open_ode).clamp_input(pu);
                              }
                              Vector y = x;
                              for (int s = 0; s < c.substeps; ++s) { y = rk4_step(*c.open_ode, y, uc, h); }
                              return y;
                            },
                          },
    model);
  require_finite(out, 1, "map output is not finite");
  return out;
}

nn::Mlp linear_policy(const Matrix & K)
{
  return nn::Mlp({nn::Layer{K, Vector::Zero(K.rows()), nn::Activation::Identity}});
}

namespace {

/// K when the policy is a single bias-free identity layer.
std::optional<Matrix> as_linear_gain(const nn::Mlp & policy)
{
  if (policy.layers.size() != 1) { return std::nullopt; }
  const nn::Layer & L = policy.layers.front();
  if (L.act != nn::Activation::Identity || L.b.cwiseAbs().maxCoeff() != 0.0) { return std::nullopt; }
  return L.W;
}

}  // namespace

DiscreteMap closed_loop(const DiscreteMap & model, const nn::Mlp & policy)
{
  require_dim(policy.input_dim(), state_dim(model), "policy input");
  require_dim(policy.output_dim(), input_dim(model), "policy output");
  if (const auto * lin = std::get_if<LinearMap>(&model)) {
    if (const auto K = as_linear_gain(policy)) {
      const Eigen::Index n = lin->A.rows();
      return LinearMap{lin->A + lin->B * *K, Matrix::Zero(n, 0)};
    }
  }
  ClosedLoopMap c;
  c.open_map = std::make_shared<const DiscreteMap>(model);
  c.policy = policy;
  return c;
}

DiscreteMap closed_loop(const ContinuousModel & model, const nn::Mlp & policy, double dt, int substeps)
{
  if (!(dt > 0)) { throw Error(ErrorCode::InvalidArgument, "dt must be > 0"); }
  if (substeps < 1) { throw Error(ErrorCode::InvalidArgument, "substeps must be >= 1"); }
  require_dim(policy.input_dim(), state_dim(model), "policy input");
  require_dim(policy.output_dim(), input_dim(model), "policy output");
  ClosedLoopMap c;
  c.open_ode = std::make_shared<const ContinuousModel>(model);
  c.policy = policy;
  c.dt = dt;
  c.substeps = substeps;
  return c;
}

std::pair<Matrix, Matrix> linearize(const DiscreteMap & model, const Vector & x, const Vector & u, double h)
{
  if (const auto * lin = std::get_if<LinearMap>(&model)) { return {lin->A, lin->B}; }
  const Eigen::Index n = state_dim(model);
  const Eigen::Index m = input_dim(model);
  require_dim(x.size(), n, "linearize state");
  if (m > 0) { require_dim(u.size(), m, "linearize input"); }
  if (h <= 0) { h = 1e-5 * (1.0 + x.lpNorm<Eigen::Infinity>()); }
  const Vector uu = m > 0 ? u : Vector();
  Matrix A(n, n), B(n, m);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    A.col(j) = (step(model, xp, uu) - step(model, xm, uu)) / (2.0 * h);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector up = u, um = u;
    up(j) += h;
    um(j) -= h;
    B.col(j) = (step(model, x, up) - step(model, x, um)) / (2.0 * h);
  }
  if (!A.allFinite() || !B.allFinite()) { throw NonFiniteStateError(0, "linearization is not finite"); }
  return {A, B};
}

nlohmann::json to_json(const DiscreteMap & m)
{
  return std::visit(overloaded{
                      [](const LinearMap & l) {
                        nlohmann::json j;
                        j["kind"] = "linear";
                        j["A"] = json_of(l.A);
                        j["B"] = json_of(l.B);
                        return j;
                      },
                      [](const PolynomialMap & p) {
                        nlohmann::json j;
                        j["kind"] = "polynomial";
                        j["linear"] = json_of(p.poly.L);
                        j["quadratic"] = tensor_json(p.poly.Q);
                        return j;
                      },
                      [](const NetworkMap & n) {
                        nlohmann::json j;
                        j["kind"] = "network";
                        j["state_dim"] = n.state_dim;
                        j["net"] = nn::to_json(n.net);
                        return j;
                      },
                      [](const KoopmanLatent & k) {
                        nlohmann::json j;
                        j["kind"] = "koopman";
                        j["K"] = json_of(k.K);
                        return j;
                      },
                      [](const ClosedLoopMap & c) {
                        nlohmann::json j;
                        j["kind"] = "closed_loop";
                        j["open"] = c.open_map ? to_json(*c.open_map) : to_json(*c.open_ode);
                        j["policy"] = nn::to_json(c.policy);
                        if (c.open_ode) {
                          j["dt"] = c.dt;
                          j["substeps"] = c.substeps;
                        }
                        return j;
                      },
                    },
    m);
}

nlohmann::json to_json(const ContinuousModel & m)
{
  return std::visit(overloaded{
                      [](const ControlAffineODE & o) {
                        nlohmann::json j;
                        j["kind"] = "ode";
                        j["drift"] = std::visit(overloaded{
                                                  [](const LinearDrift & d) {
                                                    nlohmann::json dj;
                                                    dj["kind"] = "linear";
                                                    dj["A"] = json_of(d.A);
                                                    return dj;
                                                  },
                                                  [](const Quadratic & q) {
                                                    nlohmann::json dj;
                                                    dj["kind"] = "polynomial";
                                                    dj["linear"] = json_of(q.L);
                                                    dj["quadratic"] = tensor_json(q.Q);
                                                    return dj;
                                                  },
                                                  [](const PhsSystem & p) {
                                                    nlohmann::json dj;
                                                    dj["kind"] = "phs";
                                                    dj["S"] = json_of(p.S);
                                                    dj["L"] = json_of(p.Lr);
                                                    dj["G"] = json_of(p.G);
                                                    dj["P"] = json_of(p.P);
                                                    return dj;
                                                  },
                                                },
                          o.drift);
                        j["B"] = json_of(o.B);
                        if (o.u_lower.size()) { j["u_lower"] = json_of(o.u_lower); }
                        if (o.u_upper.size()) { j["u_upper"] = json_of(o.u_upper); }
                        if (o.domain) {
                          j["domain"] = {{"lower", json_of(o.domain->lower)}, {"upper", json_of(o.domain->upper)}};
                        }
                        return j;
                      },
                      [](const BicycleModel & b) {
                        nlohmann::json j;
                        j["kind"] = "bicycle";
                        j["wheelbase"] = b.wheelbase;
                        j["steer_limit"] = b.steer_limit;
                        j["accel_limit"] = b.accel_limit;
                        return j;
                      },
                    },
    m);
}

bool is_continuous_json(const nlohmann::json & j)
{
  const std::string k = j.value("kind", std::string());
  return k == "ode" || k == "bicycle";
}

DiscreteMap discrete_map_from_json(const nlohmann::json & j)
{
  const std::string k = j.value("kind", std::string());
  if (k == "linear") {
    const Matrix A = matrix_from_json(j.at("A"));
    return LinearMap{A, matrix_or(j, "B", A.rows(), 0)};
  }
  if (k == "polynomial") {
    return PolynomialMap{Quadratic(matrix_from_json(j.at("linear")), tensor_from_json(j.value("quadratic", nlohmann::json())))};
  }
  if (k == "network") {
    nn::Mlp net = nn::mlp_from_json(j.at("net"));
    const auto n = j.value("state_dim", static_cast<Eigen::Index>(net.output_dim()));
    require_dim(net.output_dim(), n, "network map output");
    return NetworkMap{std::move(net), n};
  }
  if (k == "koopman") { return KoopmanLatent{matrix_from_json(j.at("K"))}; }
  if (k == "closed_loop") {
    const nn::Mlp policy = nn::mlp_from_json(j.at("policy"));
    const auto & open = j.at("open");
    if (is_continuous_json(open)) {
      return closed_loop(continuous_model_from_json(open), policy, j.at("dt").get<double>(), j.value("substeps", 1));
    }
    return closed_loop(discrete_map_from_json(open), policy);
  }
  throw Error(ErrorCode::ConfigError, "unknown discrete map kind \"" + k + "\"");
}

ContinuousModel continuous_model_from_json(const nlohmann::json & j)
{
  const std::string k = j.value("kind", std::string());
  if (k == "bicycle") {
    return BicycleModel(j.value("wheelbase", 2.5), j.value("steer_limit", 0.5), j.value("accel_limit", 3.0));
  }
  if (k != "ode") { throw Error(ErrorCode::ConfigError, "unknown continuous model kind \"" + k + "\""); }
  const auto & d = j.at("drift");
  const std::string dk = d.value("kind", std::string());
  Drift drift;
  if (dk == "linear") {
    drift = LinearDrift{matrix_from_json(d.at("A"))};
  } else if (dk == "polynomial") {
    drift = Quadratic(matrix_from_json(d.at("linear")), tensor_from_json(d.value("quadratic", nlohmann::json())));
  } else if (dk == "phs") {
    const Matrix P = matrix_from_json(d.at("P"));
    const Eigen::Index n = P.rows();
    drift = PhsSystem(matrix_or(d, "S", n, n), matrix_or(d, "L", n, n), matrix_or(d, "G", n, 0), P);
  } else {
    throw Error(ErrorCode::ConfigError, "unknown drift kind \"" + dk + "\"");
  }
  ControlAffineODE ode;
  ode.drift = std::move(drift);
  const Eigen::Index n = ode.state_dim();
  Matrix B = matrix_or(j, "B", n, 0);
  if (B.cols() == 0) {
    if (const auto * p = std::get_if<PhsSystem>(&ode.drift)) { B = p->G; }
  }
  ode = ControlAffineODE(ode.drift, B);
  if (j.contains("u_lower")) { ode.u_lower = vector_from_json(j["u_lower"]); }
  if (j.contains("u_upper")) { ode.u_upper = vector_from_json(j["u_upper"]); }
  if (j.contains("domain")) {
    ode.domain = geom::Box(vector_from_json(j["domain"].at("lower")), vector_from_json(j["domain"].at("upper")));
  }
  return ode;
}

std::string trajectory_csv(const Trajectory & traj)
{
  std::ostringstream os;
  os << std::setprecision(17);
  const Eigen::Index n = traj.states.empty() ? 0 : traj.states.front().size();
  const Eigen::Index m = traj.inputs.empty() ? 0 : traj.inputs.front().size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) { os << ",x" << i; }
  for (Eigen::Index i = 0; i < m; ++i) { os << ",u" << i; }
  os << "\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    os << traj.times[k];
    for (Eigen::Index i = 0; i < n; ++i) { os << "," << traj.states[k](i); }
    for (Eigen::Index i = 0; i < m; ++i) {
      os << ",";
      if (k < traj.inputs.size()) { os << traj.inputs[k](i); }
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace certkit::dyn
