#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "certkit/error.hpp"
#include "certkit/gpphs.hpp"
#include "oracles.hpp"

using namespace certkit;
using gpphs::PhsKernelParams;

namespace {

Matrix canonical_J()
{
  Matrix J(2, 2);
  J << 0, 1, -1, 0;
  return J;
}

PhsKernelParams params(double sigma_f, double ls, const Matrix & R)
{
  return PhsKernelParams::from_matrices(sigma_f, Vector::Constant(2, ls), canonical_J(), R, Matrix(2, 0));
}

double k_se(const Vector & z, const Vector & z2, const Vector & lambda)
{
  return std::exp(-((z - z2).array().square() / lambda.array()).sum());
}

gpphs::GpPhsDataset dataset(const Matrix & X, const Vector & y, double noise)
{
  gpphs::GpPhsDataset d;
  d.X = X;
  d.Xdot = Eigen::Map<const Matrix>(y.data(), X.cols(), X.rows()).transpose();
  d.U = Matrix(X.rows(), 0);
  d.noise_var = noise;
  return d;
}

Matrix random_states(std::mt19937 & rng, int n, double scale)
{
  return oracle::random_matrix(rng, n, 2, scale);
}

// Draw stacked derivatives from the GP prior.
Vector prior_sample(std::mt19937 & rng, const PhsKernelParams & p, const Matrix & X, double noise)
{
  const Matrix K = gpphs::gram(p, X, noise);
  return Eigen::LLT<Matrix>(K).matrixL() * oracle::random_vector(rng, static_cast<int>(K.rows()));
}

}  // namespace

TEST_CASE("pi hessian examples")
{
  const Vector x = Vector::Constant(2, 0.3);
  CHECK(gpphs::pi_hessian(x, x, Vector::Ones(2)).isApprox(2 * Matrix::Identity(2, 2)));
  const Vector lam(Vector::Constant(2, 3.0));
  CHECK(gpphs::pi_hessian(x, x, lam).isApprox(gpphs::pi_hessian(x, x, Vector::Ones(2)) / 3.0));
}

TEST_CASE("pi hessian matches a central-difference cross derivative")
{
  std::mt19937 rng(81);
  for (int t = 0; t < 20; ++t) {
    const Vector x = oracle::random_vector(rng, 3), x2 = oracle::random_vector(rng, 3);
    Vector lam(3);
    lam << 0.7, 1.3, 2.0;
    const Matrix Pi = gpphs::pi_hessian(x, x2, lam);
    const double h = 1e-4;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Vector ei = Vector::Zero(3), ej = Vector::Zero(3);
        ei(i) = h;
        ej(j) = h;
        const double fd = (k_se(x + ei, x2 + ej, lam) - k_se(x + ei, x2 - ej, lam) - k_se(x - ei, x2 + ej, lam)
                            + k_se(x - ei, x2 - ej, lam))
                          / (4 * h * h);
        CHECK(std::abs(fd - Pi(i, j)) <= 1e-6);
      }
    }
    CHECK(gpphs::pi_hessian(x2, x, lam).isApprox(Pi.transpose(), 1e-14));
  }
}

TEST_CASE("single-point gram block")
{
  Matrix R(2, 2);
  R << 0.2, 0.05, 0.05, 0.1;
  PhsKernelParams p = params(1.5, 0.8, R);
  const Matrix X = Matrix::Constant(1, 2, 0.4);
  const Matrix K = gpphs::gram(p, X, 0.0);
  const Matrix JR = canonical_J() - R;
  const Matrix expect = 1.5 * 1.5 * JR * (2.0 / 0.8 * Matrix::Identity(2, 2)) * JR.transpose();
  CHECK((K - expect).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(p.R().isApprox(R, 1e-12));
  CHECK(p.J().isApprox(canonical_J()));
}

TEST_CASE("gram symmetry and noise shift")
{
  std::mt19937 rng(82);
  const PhsKernelParams p = params(1.0, 1.2, 0.1 * Matrix::Identity(2, 2));
  const Matrix X = random_states(rng, 12, 1.0);
  const Matrix K0 = gpphs::gram(p, X, 0.0);
  CHECK((K0 - K0.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  const Eigen::VectorXd e0 = Eigen::SelfAdjointEigenSolver<Matrix>(K0).eigenvalues();
  const Eigen::VectorXd e1 = Eigen::SelfAdjointEigenSolver<Matrix>(gpphs::gram(p, X, 0.3)).eigenvalues();
  CHECK(e0.minCoeff() > -1e-9);
  CHECK((e1 - e0 - Vector::Constant(e0.size(), 0.3)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("nlml prefers the generating parameters")
{
  std::mt19937 rng(83);
  Matrix R(2, 2);
  R << 0.3, 0, 0, 0.1;
  const PhsKernelParams truth = params(1.0, 1.0, R);
  const Matrix X = random_states(rng, 25, 1.5);
  const auto data = dataset(X, prior_sample(rng, truth, X, 1e-4), 1e-4);
  const double base = gpphs::nlml(truth, data);
  int wins = 0;
  for (int t = 0; t < 50; ++t) {
    PhsKernelParams q = truth;
    auto jiggle = [&](double v) { return v * (1.0 + 0.5 * (rng() % 2 ? 1.0 : -1.0)); };
    q.sigma_f = jiggle(q.sigma_f);
    for (Eigen::Index i = 0; i < q.lengthscales.size(); ++i) { q.lengthscales(i) = jiggle(q.lengthscales(i)); }
    for (Eigen::Index i = 0; i < q.phi_J.size(); ++i) { q.phi_J(i) = jiggle(q.phi_J(i)); }
    for (Eigen::Index i = 0; i < q.phi_R.size(); ++i) { q.phi_R(i) = jiggle(q.phi_R(i)); }
    wins += base <= gpphs::nlml(q, data) ? 1 : 0;
  }
  CHECK(wins >= 45);
}

TEST_CASE("nlml is the Gaussian negative log density")
{
  std::mt19937 rng(84);
  const PhsKernelParams p = params(0.8, 1.1, 0.2 * Matrix::Identity(2, 2));
  const Matrix X = random_states(rng, 5, 1.0);
  const Vector y = oracle::random_vector(rng, 10);
  const auto data = dataset(X, y, 0.01);
  const Matrix K = gpphs::gram(p, X, 0.01);
  const Eigen::FullPivLU<Matrix> lu(K);
  const double ref = 0.5 * y.dot(lu.solve(y)) + 0.5 * std::log(lu.determinant()) + 5.0 * std::log(2 * std::numbers::pi);
  CHECK(gpphs::nlml(p, data) == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("more noise lowers the data-fit term on pure noise")
{
  std::mt19937 rng(85);
  const PhsKernelParams p = params(0.5, 1.0, 0.1 * Matrix::Identity(2, 2));
  const Matrix X = random_states(rng, 10, 2.0);
  const Vector y = oracle::random_vector(rng, 20, 0.3);
  auto fit_term = [&](double noise) { return y.dot(Eigen::LLT<Matrix>(gpphs::gram(p, X, noise)).solve(y)); };
  CHECK(fit_term(0.2) < fit_term(0.1));
  CHECK(fit_term(0.4) < fit_term(0.2));
}

TEST_CASE("empty dataset is rejected")
{
  gpphs::GpPhsDataset d;
  d.X = Matrix(0, 2);
  d.Xdot = Matrix(0, 2);
  d.U = Matrix(0, 0);
  try {
    gpphs::nlml(params(1, 1, Matrix::Zero(2, 2)), d);
    FAIL("expected InsufficientData");
  } catch (const Error & e) {
    CHECK(e.code() == ErrorCode::InsufficientData);
  }
}

TEST_CASE("posterior interpolates and shrinks variance near data")
{
  std::mt19937 rng(86);
  const PhsKernelParams p = params(1.0, 1.0, 0.2 * Matrix::Identity(2, 2));
  Matrix X(4, 2);
  X << -1, -1, 1, -1, -1, 1, 1, 1;
  const Vector y = oracle::random_vector(rng, 8);
  const auto data = dataset(X, y, 0.0);
  std::vector<Vector> q;
  for (Eigen::Index i = 0; i < 4; ++i) { q.push_back(X.row(i).transpose()); }
  q.push_back(Vector::Constant(2, 5 * std::sqrt(2.0) + 1));
  const auto post = gpphs::posterior(p, data, q);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((post.mean[i] - data.Xdot.row(static_cast<Eigen::Index>(i)).transpose()).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(post.cov[i].trace() <= post.cov[4].trace());
  }
  // Far away the posterior returns to the prior.
  const Matrix prior = gpphs::kernel_block(p, q[4], q[4]);
  CHECK(post.cov[4].trace() <= prior.trace() + 1e-12);
  CHECK(post.cov[4].trace() == doctest::Approx(prior.trace()).epsilon(1e-6));
}

TEST_CASE("posterior variance never exceeds the prior")
{
  std::mt19937 rng(87);
  const PhsKernelParams p = params(1.3, 0.7, 0.1 * Matrix::Identity(2, 2));
  const Matrix X = random_states(rng, 15, 1.0);
  const auto data = dataset(X, oracle::random_vector(rng, 30), 0.05);
  std::vector<Vector> q;
  for (int i = 0; i < 40; ++i) { q.push_back(oracle::random_vector(rng, 2, 1.5)); }
  const auto post = gpphs::posterior(p, data, q);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(post.cov[i].trace() <= gpphs::kernel_block(p, q[i], q[i]).trace() + 1e-9);
  }
}

TEST_CASE("lossless posterior mean fields are divergence free")
{
  // With R = 0 the mean is J grad H for a scalar H, and tr(J Hess H) = 0 for
  // skew J.
  std::mt19937 rng(88);
  const PhsKernelParams p = params(1.0, 0.9, Matrix::Zero(2, 2));
  const Matrix X = random_states(rng, 12, 1.0);
  const auto data = dataset(X, prior_sample(rng, p, X, 1e-6), 1e-6);
  const double h = 1e-4;
  for (int t = 0; t < 20; ++t) {
    const Vector x = oracle::random_vector(rng, 2);
    std::vector<Vector> q;
    for (int i = 0; i < 2; ++i) {
      Vector e = Vector::Zero(2);
      e(i) = h;
      q.push_back(x + e);
      q.push_back(x - e);
    }
    const auto m = gpphs::posterior(p, data, q).mean;
    const double div = (m[0](0) - m[1](0) + m[2](1) - m[3](1)) / (2 * h);
    CHECK(std::abs(div) <= 1e-4);
  }
}

TEST_CASE("fit lowers the objective within budget")
{
  std::mt19937 rng(89);
  const PhsKernelParams truth = params(1.0, 1.5, 0.2 * Matrix::Identity(2, 2));
  const Matrix X = random_states(rng, 20, 1.5);
  const auto data = dataset(X, prior_sample(rng, truth, X, 1e-4), 1e-4);
  const PhsKernelParams init = params(0.5, 0.5, 0.5 * Matrix::Identity(2, 2));
  const auto r = gpphs::fit(data, init, 200);
  CHECK(r.evaluations <= 200);
  CHECK(r.nlml <= gpphs::nlml(init, data));
  CHECK(r.nlml == doctest::Approx(gpphs::nlml(r.params, data)));
  CHECK(r.params.sigma_f > 0);
  CHECK((r.params.lengthscales.array() > 0).all());
  CHECK_THROWS_AS(gpphs::fit(data, init, 0), Error);
}

TEST_CASE("derivative filter")
{
  Vector t(6);
  t << 0, 0.1, 0.2, 0.3, 0.4, 0.5;
  Matrix X(6, 2);
  for (int i = 0; i < 6; ++i) {
    X(i, 0) = 3 * t(i) + 1;
    X(i, 1) = t(i) * t(i);
  }
  const Matrix D = gpphs::derivative_filter(t, X);
  CHECK((D.col(0).array() - 3.0).abs().maxCoeff() <= 1e-12);
  for (int i = 1; i < 5; ++i) { CHECK(D(i, 1) == doctest::Approx(2 * t(i))); }
  CHECK(D(0, 1) == doctest::Approx(0.1));
  CHECK_THROWS_AS(gpphs::derivative_filter(Vector::Constant(1, 0.0), Matrix::Zero(1, 2)), Error);
  Vector bad(3);
  bad << 0, 0.2, 0.1;
  CHECK_THROWS_AS(gpphs::derivative_filter(bad, Matrix::Zero(3, 2)), Error);
}

TEST_CASE("params JSON round trip")
{
  Matrix R(2, 2);
  R << 0.3, 0.1, 0.1, 0.2;
  const PhsKernelParams p = PhsKernelParams::from_matrices(1.2, Vector::Constant(2, 0.7), canonical_J(), R, Matrix::Ones(2, 1));
  const auto back = PhsKernelParams::from_json(p.to_json());
  CHECK(back.to_json() == p.to_json());
  CHECK(back.R().isApprox(R, 1e-12));
}
