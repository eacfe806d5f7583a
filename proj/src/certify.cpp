#include "certkit/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "certkit/error.hpp"

namespace certkit::certify {

namespace {

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

double matrix_norm(const Matrix & M, DefectNorm norm)
{
  if (M.size() == 0) { return 0.0; }
  if (norm == DefectNorm::Frobenius) { return M.norm(); }
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

Report max_defect_report(const char * task, const char * check, const geom::PointSet & samples,
  const std::function<double(const Vector &)> & defect, double tol, const char * note)
{
  Report rep;
  rep.task = task;
  double worst = 0.0;
  Vector where = samples.points.front();
  for (const Vector & x : samples.points) {
    const double d = std::abs(defect(x));
    if (!(d <= worst)) {
      worst = d;
      where = x;
    }
  }
  rep.add_witness(check, worst <= tol, worst, tol, where, note);
  rep.data["samples"] = samples.size();
  return rep;
}

}  // namespace

Eigen::VectorXcd eigenvalues(const Matrix & K)
{
  require_dim(K.cols(), K.rows(), "eigenvalues: square matrix");
  if (!K.allFinite()) { throw Error(ErrorCode::InvalidArgument, "eigenvalues: matrix must be finite"); }
  if (K.rows() == 0) { return Eigen::VectorXcd(); }
  Eigen::EigenSolver<Matrix> es;
  es.setMaxIterations(40 * static_cast<int>(K.rows()) + 100);
  es.compute(K, false);
  if (es.info() != Eigen::Success) { throw Error(ErrorCode::NoConvergence, "QR iteration did not converge"); }
  return es.eigenvalues();
}

double spectral_radius(const Matrix & K)
{
  const Eigen::VectorXcd ev = eigenvalues(K);
  return ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
}

bool is_schur(const Matrix & K) { return spectral_radius(K) < 1.0 - 1e-12; }

Vector clamped_singular_values(const SvdClampSpec & spec)
{
  if (!(spec.lambda_min >= 0 && spec.lambda_min < spec.lambda_max)) {
    throw Error(ErrorCode::InvalidArgument, "svd_clamp requires 0 <= lambda_min < lambda_max");
  }
  Vector s(spec.raw.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    s(i) = spec.lambda_max - (spec.lambda_max - spec.lambda_min) * sigmoid(spec.raw(i));
  }
  return s;
}

Matrix svd_clamp(const SvdClampSpec & spec, const Matrix & U, const Matrix & V)
{
  const Eigen::Index d = spec.raw.size();
  require_dim(U.rows(), d, "svd_clamp U rows");
  require_dim(U.cols(), d, "svd_clamp U cols");
  require_dim(V.rows(), d, "svd_clamp V rows");
  require_dim(V.cols(), d, "svd_clamp V cols");
  return U * clamped_singular_values(spec).asDiagonal() * V;
}

double orthogonality_defect(const Matrix & M, DefectNorm norm)
{
  require_dim(M.cols(), M.rows(), "orthogonality_defect: square matrix");
  const Matrix I = Matrix::Identity(M.rows(), M.cols());
  return matrix_norm(I - M * M.transpose(), norm) + matrix_norm(I - M.transpose() * M, norm);
}

Report phs_checks(const dyn::PhsSystem & sys, const Trajectory & traj, double step_tol)
{
  Report rep;
  rep.task = "phs_checks";
  const Matrix J = sys.J();
  const Matrix R = sys.R();
  const double skew = (J + J.transpose()).cwiseAbs().maxCoeff();
  rep.add("structure_skew_symmetric", skew <= 1e-12, skew, 1e-12, "max |J + J'| entry");
  const double rmin = R.size() ? Eigen::SelfAdjointEigenSolver<Matrix>(R, Eigen::EigenvaluesOnly).eigenvalues()(0) : 0.0;
  rep.add("dissipation_psd", rmin >= -1e-10, rmin, -1e-10, "smallest eigenvalue of R");
  const double g0 = sys.grad_h(Vector::Zero(sys.dim())).lpNorm<Eigen::Infinity>();
  rep.add("equilibrium_gradient", g0 == 0.0, g0, 0.0, "|dH/dx(0)| for the quadratic Hamiltonian");

  if (traj.states.size() < 2) {
    rep.data["steps"] = 0;
    return rep;
  }
  const std::size_t K = traj.states.size() - 1;
  const Eigen::Index m = sys.G.cols();
  double worst_excess = -kInf;
  double worst_increase = -kInf;
  double max_drift = 0.0;
  std::size_t worst_k = 0, worst_inc_k = 0;
  bool unforced = true;
  const double H0 = sys.hamiltonian(traj.states.front());
  for (std::size_t k = 0; k < K; ++k) {
    const Vector & x0 = traj.states[k];
    const Vector & x1 = traj.states[k + 1];
    const Vector u = (m > 0 && k < traj.inputs.size()) ? traj.inputs[k] : Vector::Zero(m);
    if (u.size() && u.cwiseAbs().maxCoeff() != 0.0) { unforced = false; }
    const double h = traj.times[k + 1] - traj.times[k];
    const double H_a = sys.hamiltonian(x0);
    const double H_b = sys.hamiltonian(x1);
    const double supplied = m > 0 ? 0.5 * h * (u.dot(sys.output(x0)) + u.dot(sys.output(x1))) : 0.0;
    const double excess = (H_b - H_a) - supplied;
    if (excess > worst_excess) {
      worst_excess = excess;
      worst_k = k;
    }
    // Allow the rounding error of evaluating H itself.
    const double increase = (H_b - H_a) - 4.0 * std::numeric_limits<double>::epsilon() * std::abs(H_a);
    if (increase > worst_increase) {
      worst_increase = increase;
      worst_inc_k = k;
    }
    max_drift = std::max(max_drift, std::abs(H_b - H0));
  }
  rep.add("dissipation_inequality", worst_excess <= step_tol, worst_excess, step_tol,
    "max over steps of dH - trapezoid(u'y) dt; worst step " + std::to_string(worst_k));

  const double T = traj.times.back() - traj.times.front();
  const bool lossless = R.cwiseAbs().maxCoeff() == 0.0;
  if (unforced && lossless) {
    rep.add("energy_conservation", max_drift <= 1e-6 * T, max_drift, 1e-6 * T,
      "max |H(t) - H(0)| against 1e-6 per unit time");
  } else if (unforced) {
    rep.add("energy_nonincreasing", worst_increase <= 0.0, worst_increase, 0.0,
      "max stepwise increase of H; worst step " + std::to_string(worst_inc_k));
  }
  rep.data["steps"] = K;
  rep.data["max_energy_drift"] = max_drift;
  rep.data["horizon"] = T;
  return rep;
}

Report conservation_check(const dyn::DiscreteMap & model, const geom::PointSet & samples)
{
  return max_defect_report("conservation_check", "sum_of_increments", samples,
    [&](const Vector & x) { return (dyn::step(model, x) - x).sum(); }, kConservationTol,
    "max |sum_i (f(x) - x)_i| over samples");
}

Report conservation_check(const dyn::ContinuousModel & model, const geom::PointSet & samples)
{
  const Vector u0 = Vector::Zero(dyn::input_dim(model));
  return max_defect_report("conservation_check", "sum_of_rates", samples,
    [&](const Vector & x) { return dyn::vector_field(model, x, u0).sum(); }, kConservationTol,
    "max |sum_i f_i(x)| over samples at zero input");
}

Report quadratic_energy_check(const dyn::Quadratic & poly, const geom::PointSet & samples)
{
  Report rep = max_defect_report("quadratic_energy_check", "energy_preserving_nonlinearity", samples,
    [&](const Vector & x) {
      double e = 0.0;
      for (std::size_t i = 0; i < poly.Q.size(); ++i) { e += x(static_cast<Eigen::Index>(i)) * x.dot(poly.Q[i] * x); }
      return e;
    },
    1e-10, "max |x' Q(x, x)| over samples");

  const auto n = static_cast<std::size_t>(poly.dim());
  double defect = 0.0;
  Vector where = Vector::Zero(3);
  auto q = [&](std::size_t i, std::size_t j, std::size_t k) {
    return poly.Q[i](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      for (std::size_t k = j; k < n; ++k) {
        const double s = q(i, j, k) + q(i, k, j) + q(j, i, k) + q(j, k, i) + q(k, i, j) + q(k, j, i);
        if (std::abs(s) > defect) {
          defect = std::abs(s);
          where << static_cast<double>(i), static_cast<double>(j), static_cast<double>(k);
        }
      }
    }
  }
  rep.add_witness("skew_symmetry_defect", defect <= 1e-10, defect, 1e-10, where,
    "largest symmetrized coefficient sum; witness is the index triple");
  return rep;
}

Report quadratic_energy_check(const dyn::PolynomialMap & model, const geom::PointSet & samples)
{
  return quadratic_energy_check(model.poly, samples);
}

double lyapunov_decrease_loss(const ScalarField & V, const std::vector<std::vector<Vector>> & trajectories)
{
  double loss = 0.0;
  for (const auto & traj : trajectories) {
    for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
      const double hinge = std::max(0.0, V(traj[k + 1]) - V(traj[k]));
      loss += hinge * hinge;
    }
  }
  return loss;
}

double lyapunov_decrease_loss(const nn::LyapunovCandidate & V, const std::vector<std::vector<Vector>> & trajectories)
{
  return lyapunov_decrease_loss([&](const Vector & x) { return nn::lyapunov_eval(V, x); }, trajectories);
}

double lyapunov_decrease_loss(const nn::Mlp & V, const std::vector<std::vector<Vector>> & trajectories)
{
  require_dim(V.output_dim(), 1, "Lyapunov network output");
  return lyapunov_decrease_loss([&](const Vector & x) { return nn::forward(V, x)(0); }, trajectories);
}

ZubovSpec::ZubovSpec(ScalarField w, VectorField grad_w, VectorField dynamics, ScalarField psi_fn)
    : W(std::move(w)), grad_W(std::move(grad_w)), psi(std::move(psi_fn)), f(std::move(dynamics))
{
  if (!psi) {
    psi = [](const Vector & x) { return x.squaredNorm(); };
  }
}

ZubovSpec ZubovSpec::from_network(const nn::Mlp & W, VectorField dynamics, ScalarField psi_fn)
{
  require_dim(W.output_dim(), 1, "Zubov network output");
  return ZubovSpec([W](const Vector & x) { return nn::forward(W, x)(0); }, {}, std::move(dynamics),
    std::move(psi_fn));
}

Vector numeric_gradient(const ScalarField & f, const Vector & x, double h)
{
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

Report zubov_residual(const ZubovSpec & spec, const geom::PointSet & samples, double tol)
{
  Report rep;
  rep.task = "zubov_residual";
  const Eigen::Index n = samples.dim();
  double worst = 0.0, sum = 0.0;
  Vector worst_x = samples.points.front();
  double range_bad = 0.0;
  Vector range_x;
  for (const Vector & x : samples.points) {
    const double w = spec.W(x);
    const Vector g = spec.grad_W ? spec.grad_W(x) : numeric_gradient(spec.W, x);
    const double r = g.dot(spec.f(x)) + spec.psi(x) * (1.0 - w);
    sum += std::abs(r);
    if (!(std::abs(r) <= worst)) {
      worst = std::abs(r);
      worst_x = x;
    }
    if (x.squaredNorm() > 0.0 && !(w > 0.0 && w < 1.0)) {
      const double out = std::max({-w, w - 1.0, 0.0});
      if (range_x.size() == 0 || out > range_bad) {
        range_bad = out;
        range_x = x;
      }
    }
  }
  rep.add_witness("pde_residual", worst <= tol, worst, tol, worst_x, "max |grad W . f + psi (1 - W)|");
  if (range_x.size()) {
    rep.add_witness("range", false, range_bad, 0.0, range_x, "W must lie in (0, 1) away from the origin");
  } else {
    rep.add("range", true, 0.0, 0.0, "W in (0, 1) at every nonzero sample");
  }
  const double w0 = spec.W(Vector::Zero(n));
  rep.add("origin_value", std::abs(w0) <= tol, std::abs(w0), tol, "|W(0)|");
  rep.data["mean_abs_residual"] = sum / static_cast<double>(samples.size());
  rep.data["samples"] = samples.size();
  rep.data["gradient"] = spec.grad_W ? "analytic" : "central differences, h = 1e-5";
  return rep;
}

}  // namespace certkit::certify
