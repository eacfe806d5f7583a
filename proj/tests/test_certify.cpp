#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "certkit/certify.hpp"
#include "certkit/error.hpp"
#include "oracles.hpp"

using namespace certkit;

namespace {

Vector vec(std::initializer_list<double> v)
{
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double a : v) { out(i++) = a; }
  return out;
}

const Check & check_named(const Report & r, const std::string & name)
{
  for (const Check & c : r.checks) {
    if (c.name == name) { return c; }
  }
  FAIL("missing check " << name);
  return r.checks.front();
}

geom::PointSet random_points(std::mt19937 & rng, int n, int dim)
{
  std::vector<Vector> p;
  for (int i = 0; i < n; ++i) { p.push_back(oracle::random_vector(rng, dim)); }
  return geom::PointSet(p);
}

Matrix orthogonal(std::mt19937 & rng, int d)
{
  return Eigen::HouseholderQR<Matrix>(oracle::random_matrix(rng, d, d)).householderQ();
}

dyn::PhsSystem oscillator(double damping, Eigen::Index inputs = 0)
{
  Matrix S(2, 2);
  S << 0, 1, 0, 0;
  Matrix L = Matrix::Zero(2, 2);
  L(1, 1) = std::sqrt(damping);
  Matrix G = Matrix::Zero(2, inputs);
  if (inputs > 0) { G(1, 0) = 1.0; }
  return dyn::PhsSystem(S, L, G, vec({1.5, 0.8}).asDiagonal());
}

Trajectory run(const dyn::PhsSystem & sys, const Vector & x0, double u, int steps, double dt)
{
  const Eigen::Index m = sys.G.cols();
  return dyn::simulate_ode(dyn::ControlAffineODE::from_phs(sys), x0,
    std::vector<Vector>(static_cast<std::size_t>(steps), Vector::Constant(m, u)), dt);
}

}  // namespace

TEST_CASE("spectral radius examples")
{
  CHECK(certify::spectral_radius(0.9 * Matrix::Identity(3, 3)) == doctest::Approx(0.9));
  CHECK(certify::is_schur(0.9 * Matrix::Identity(3, 3)));

  const double th = 0.7;
  Matrix R(2, 2);
  R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  CHECK(certify::spectral_radius(R) == doctest::Approx(1.0));
  CHECK_FALSE(certify::is_schur(R));
  CHECK_THROWS_AS(certify::spectral_radius(Matrix::Zero(2, 3)), Error);
}

TEST_CASE("eigenvalue moduli match characteristic polynomial roots")
{
  std::mt19937 rng(31);
  for (int t = 0; t < 30; ++t) {
    const Matrix K = oracle::random_matrix(rng, 4, 4);
    auto roots = oracle::poly_roots(oracle::char_poly(K));
    const Eigen::VectorXcd ev = certify::eigenvalues(K);
    std::vector<double> a, b;
    for (const auto & r : roots) { a.push_back(std::abs(r)); }
    for (Eigen::Index i = 0; i < ev.size(); ++i) { b.push_back(std::abs(ev(i))); }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) { CHECK(std::abs(a[i] - b[i]) <= 1e-8); }
    CHECK(certify::spectral_radius(K) == doctest::Approx(a.back()).epsilon(1e-10));
  }
}

TEST_CASE("spectral radius is absolutely homogeneous")
{
  std::mt19937 rng(32);
  for (int t = 0; t < 30; ++t) {
    const Matrix K = oracle::random_matrix(rng, 5, 5);
    const double c = oracle::uniform(rng, -3.0, 3.0);
    CHECK(certify::spectral_radius(c * K) == doctest::Approx(std::abs(c) * certify::spectral_radius(K)).epsilon(1e-10));
  }
}

TEST_CASE("svd_clamp limits and the diagonal case")
{
  const Vector lo = certify::clamped_singular_values({vec({-1e3, 1e3}), 0.1, 0.99});
  CHECK(lo(0) == doctest::Approx(0.99));
  CHECK(lo(1) == doctest::Approx(0.1));

  const Vector mid = certify::clamped_singular_values({vec({-3, 0, 3}), 0.1, 0.99});
  for (Eigen::Index i = 0; i < mid.size(); ++i) {
    CHECK(mid(i) > 0.1);
    CHECK(mid(i) < 0.99);
  }
  CHECK(mid(1) == doctest::Approx(0.545));

  const Matrix K = certify::svd_clamp({vec({-2, 0.5, 4}), 0.0, 0.99}, Matrix::Identity(3, 3), Matrix::Identity(3, 3));
  CHECK(K.isDiagonal());
  CHECK(certify::spectral_radius(K) <= 0.99);
  CHECK(certify::is_schur(K));
  CHECK_THROWS_AS(certify::svd_clamp({vec({0, 0}), 0.0, 0.99}, Matrix::Identity(3, 3), Matrix::Identity(3, 3)), Error);
  CHECK_THROWS_AS(certify::clamped_singular_values({vec({0}), 0.5, 0.5}), Error);
}

TEST_CASE("clamped operators with orthogonal factors are Schur")
{
  std::mt19937 rng(33);
  for (int t = 0; t < 50; ++t) {
    const int d = 2 + t % 5;
    const Matrix U = orthogonal(rng, d), V = orthogonal(rng, d);
    REQUIRE(certify::orthogonality_defect(U) <= 1e-10);
    const Matrix K = certify::svd_clamp({oracle::random_vector(rng, d, 5.0), 0.0, 0.97}, U, V);
    CHECK(certify::is_schur(K));
    CHECK(Eigen::JacobiSVD<Matrix>(K).singularValues()(0) <= 0.97 + 1e-12);
  }
}

TEST_CASE("orthogonality defect examples")
{
  CHECK(certify::orthogonality_defect(Matrix::Identity(3, 3)) == 0.0);
  CHECK(certify::orthogonality_defect(2 * Matrix::Identity(3, 3)) == doctest::Approx(6.0));
  // Frobenius variant: 2 * 3 * sqrt(3).
  CHECK(certify::orthogonality_defect(2 * Matrix::Identity(3, 3), certify::DefectNorm::Frobenius)
    == doctest::Approx(6.0 * std::sqrt(3.0)));
  const Vector v = vec({1, 2, -1}).normalized();
  const Matrix H = Matrix::Identity(3, 3) - 2 * v * v.transpose();
  CHECK(certify::orthogonality_defect(H) <= 1e-12);
}

TEST_CASE("phs structure checks")
{
  const Report r = certify::phs_checks(oscillator(0.3), run(oscillator(0.3), vec({1, 0}), 0.0, 10, 1e-3));
  CHECK(check_named(r, "structure_skew_symmetric").pass);
  CHECK(check_named(r, "dissipation_psd").pass);
  CHECK(check_named(r, "equilibrium_gradient").pass);
}

TEST_CASE("lossless oscillator conserves H over unit time")
{
  const auto sys = oscillator(0.0);
  const Report r = certify::phs_checks(sys, run(sys, vec({1, -0.5}), 0.0, 1000, 1e-3));
  CHECK(r.passed());
  CHECK(check_named(r, "energy_conservation").value <= 1e-6);
}

TEST_CASE("damped oscillator dissipates stepwise")
{
  const auto sys = oscillator(0.5);
  const Report r = certify::phs_checks(sys, run(sys, vec({1, -0.5}), 0.0, 2000, 1e-3));
  CHECK(r.passed());
  CHECK(check_named(r, "energy_nonincreasing").pass);
}

TEST_CASE("driven oscillator obeys the dissipation inequality")
{
  const auto sys = oscillator(0.2, 1);
  const Trajectory t = run(sys, vec({0.2, 0.1}), 0.7, 500, 1e-3);
  const Report r = certify::phs_checks(sys, t);
  CHECK(check_named(r, "dissipation_inequality").pass);

  // Independent oracle: re-simulate each step with 20 substeps and integrate
  // u'y with the trapezoid rule on the fine grid.
  double supplied = 0.0;
  Vector x = t.states.front();
  const auto ode = dyn::ControlAffineODE::from_phs(sys);
  for (int k = 0; k < 500; ++k) {
    const Trajectory fine = dyn::simulate_ode(ode, x, {Vector::Constant(1, 0.7)}, 1e-3, 20);
    for (std::size_t i = 0; i + 1 < fine.states.size(); ++i) {
      supplied += 0.5 * 5e-5 * 0.7 * (sys.output(fine.states[i])(0) + sys.output(fine.states[i + 1])(0));
    }
    x = fine.states.back();
  }
  const double dH = sys.hamiltonian(t.states.back()) - sys.hamiltonian(t.states.front());
  CHECK(dH - supplied <= 1e-9);
}

TEST_CASE("energy drift of RK4 shrinks with order at least 3.5")
{
  const auto sys = oscillator(0.0);
  std::vector<double> lh, le;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    const int n = static_cast<int>(std::lround(2.0 / dt));
    const Report r = certify::phs_checks(sys, run(sys, vec({1, 0}), 0.0, n, dt));
    lh.push_back(std::log(dt));
    le.push_back(std::log(r.data["max_energy_drift"].get<double>()));
  }
  // Least-squares slope on the log-log points.
  const double mh = (lh[0] + lh[1] + lh[2] + lh[3]) / 4, me = (le[0] + le[1] + le[2] + le[3]) / 4;
  double num = 0, den = 0;
  for (int i = 0; i < 4; ++i) {
    num += (lh[i] - mh) * (le[i] - me);
    den += (lh[i] - mh) * (lh[i] - mh);
  }
  CHECK(num / den >= 3.5);
}

TEST_CASE("conservation_check examples")
{
  std::mt19937 rng(34);
  Matrix A(2, 2);
  A << -1, 1, 1, -1;
  const dyn::ContinuousModel exchange = dyn::ControlAffineODE(dyn::LinearDrift{A}, Matrix(2, 0));
  CHECK(certify::conservation_check(exchange, random_points(rng, 100, 2)).passed());

  const dyn::ContinuousModel grow = dyn::ControlAffineODE(dyn::LinearDrift{Matrix::Identity(2, 2)}, Matrix(2, 0));
  const geom::PointSet pts({vec({1, 2}), vec({-0.5, 0.25})});
  const Report bad = certify::conservation_check(grow, pts);
  CHECK_FALSE(bad.passed());
  CHECK(bad.checks.front().value == doctest::Approx(3.0));
  CHECK(*bad.checks.front().witness == vec({1, 2}));

  const dyn::DiscreteMap shuffle = dyn::LinearMap{Matrix(Eigen::PermutationMatrix<3>(Eigen::Vector3i(2, 0, 1))),
    Matrix(3, 0)};
  CHECK(certify::conservation_check(shuffle, random_points(rng, 50, 3)).passed());
}

TEST_CASE("mass-exchange flow conserves the total on 10^4 samples")
{
  // f_i = sum_j (c_ji - c_ij) x_i x_j for random rates c: every pairwise
  // exchange appears once with each sign.
  std::mt19937 rng(35);
  const Matrix C = oracle::random_matrix(rng, 3, 3);
  std::vector<Matrix> Q(3, Matrix::Zero(3, 3));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double a = C(j, i) - C(i, j);
      Q[i](i, j) += 0.5 * a;
      Q[i](j, i) += 0.5 * a;
    }
  }
  const dyn::ContinuousModel flow = dyn::ControlAffineODE(dyn::Quadratic(Matrix::Zero(3, 3), Q), Matrix(3, 0));
  CHECK(certify::conservation_check(flow, random_points(rng, 10000, 3)).passed());
}

TEST_CASE("quadratic energy check examples")
{
  std::mt19937 rng(36);
  const auto pts = random_points(rng, 500, 3);
  // Lorenz nonlinearity: x1' gets -x0 x2, x2' gets x0 x1.
  std::vector<Matrix> Q(3, Matrix::Zero(3, 3));
  Q[1](0, 2) = Q[1](2, 0) = -0.5;
  Q[2](0, 1) = Q[2](1, 0) = 0.5;
  const dyn::Quadratic lorenz(Matrix::Identity(3, 3), Q);
  CHECK(certify::quadratic_energy_check(lorenz, pts).passed());

  std::vector<Matrix> P(3, Matrix::Zero(3, 3));
  P[0](0, 0) = 1.0;
  const Report bad = certify::quadratic_energy_check(dyn::Quadratic(Matrix::Identity(3, 3), P), pts);
  CHECK_FALSE(check_named(bad, "energy_preserving_nonlinearity").pass);
  CHECK_FALSE(check_named(bad, "skew_symmetry_defect").pass);

  const dyn::PolynomialMap zero{dyn::Quadratic(Matrix::Identity(3, 3), std::vector<Matrix>(3, Matrix::Zero(3, 3)))};
  CHECK(certify::quadratic_energy_check(zero, pts).passed());
}

TEST_CASE("lyapunov decrease loss examples")
{
  const certify::ScalarField V = [](const Vector & x) { return x.squaredNorm(); };
  std::vector<Vector> half{vec({1, 1})};
  for (int k = 0; k < 5; ++k) { half.push_back(0.5 * half.back()); }
  CHECK(certify::lyapunov_decrease_loss(V, {half}) == 0.0);
  CHECK(certify::lyapunov_decrease_loss(V, {{vec({1}), vec({2})}}) == 9.0);
  CHECK(certify::lyapunov_decrease_loss(V, {}) == 0.0);
}

TEST_CASE("lyapunov decrease loss ignores trajectory order")
{
  std::mt19937 rng(37);
  const certify::ScalarField V = [](const Vector & x) { return x.squaredNorm() + 0.3 * x(0); };
  std::vector<std::vector<Vector>> trajs;
  for (int i = 0; i < 8; ++i) {
    std::vector<Vector> t{oracle::random_vector(rng, 2)};
    for (int k = 0; k < 4; ++k) { t.push_back(1.1 * t.back() + oracle::random_vector(rng, 2, 0.1)); }
    trajs.push_back(t);
  }
  const double a = certify::lyapunov_decrease_loss(V, trajs);
  std::reverse(trajs.begin(), trajs.end());
  std::rotate(trajs.begin(), trajs.begin() + 3, trajs.end());
  CHECK(certify::lyapunov_decrease_loss(V, trajs) == doctest::Approx(a).epsilon(1e-14));
}

TEST_CASE("zubov closed form")
{
  certify::ZubovSpec spec([](const Vector & x) { return 1.0 - std::exp(-x.squaredNorm()); },
    [](const Vector & x) { return Vector(2.0 * x * std::exp(-x.squaredNorm())); }, [](const Vector & x) { return Vector(-x); },
    [](const Vector & x) { return 2.0 * x.squaredNorm(); });
  std::vector<Vector> grid;
  for (int i = 0; i < 1000; ++i) { grid.push_back(Vector::Constant(1, -3.0 + 6.0 * i / 999.0)); }
  const Report r = certify::zubov_residual(spec, geom::PointSet(grid), 1e-10);
  CHECK(r.passed());
  CHECK(check_named(r, "pde_residual").value <= 1e-10);
}

TEST_CASE("zubov violations are flagged")
{
  const geom::PointSet pts({vec({0.5}), vec({1.0}), vec({-2.0})});
  certify::ZubovSpec flat([](const Vector &) { return 0.5; }, [](const Vector & x) { return Vector(Vector::Zero(x.size())); },
    [](const Vector & x) { return Vector(-x); }, [](const Vector & x) { return x.squaredNorm(); });
  const Report r = certify::zubov_residual(flat, pts);
  CHECK(check_named(r, "pde_residual").value == doctest::Approx(0.5 * 4.0));
  CHECK_FALSE(check_named(r, "pde_residual").pass);

  certify::ZubovSpec big([](const Vector & x) { return x.squaredNorm(); }, {}, [](const Vector & x) { return Vector(-x); });
  const Report rb = certify::zubov_residual(big, pts);
  CHECK_FALSE(check_named(rb, "range").pass);
  CHECK((*check_named(rb, "range").witness - vec({-2.0})).norm() == 0.0);
}

TEST_CASE("network Zubov residual uses finite differences")
{
  // W(x) = relu(x) - relu(-x) = x, so grad W = 1; f = -x, psi = 0: residual = -x.
  const nn::Mlp W({nn::Layer{vec({1, -1}), Vector::Zero(2), nn::Activation::Relu},
    nn::Layer{Matrix(vec({1, -1}).transpose()), Vector::Zero(1), nn::Activation::Identity}});
  const auto spec = certify::ZubovSpec::from_network(W, [](const Vector & x) { return Vector(-x); },
    [](const Vector &) { return 0.0; });
  const Report r = certify::zubov_residual(spec, geom::PointSet({vec({0.5}), vec({-0.3})}), 1.0);
  CHECK(check_named(r, "pde_residual").value == doctest::Approx(0.5).epsilon(1e-6));
}
