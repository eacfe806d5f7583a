#include "certkit/gpphs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "certkit/error.hpp"
#include "certkit/report.hpp"

namespace certkit::gpphs {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::Index n_upper(Eigen::Index d) { return d * (d - 1) / 2; }
Eigen::Index n_lower(Eigen::Index d) { return d * (d + 1) / 2; }

Eigen::LLT<Matrix> factor(const Matrix & K)
{
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::CholeskyFail, "GP-PHS Gram is not positive definite; increase noise_var or the jitter");
  }
  return llt;
}

/// Packs the optimizable parameters: log sigma_f, log lengthscales, phi_J,
/// phi_R, G (row-major).
Vector pack(const PhsKernelParams & p)
{
  const Eigen::Index d = p.dim(), m = p.G.cols();
  Vector th(1 + d + p.phi_J.size() + p.phi_R.size() + d * m);
  Eigen::Index k = 0;
  th(k++) = std::log(p.sigma_f);
  for (Eigen::Index i = 0; i < d; ++i) { th(k++) = std::log(p.lengthscales(i)); }
  for (Eigen::Index i = 0; i < p.phi_J.size(); ++i) { th(k++) = p.phi_J(i); }
  for (Eigen::Index i = 0; i < p.phi_R.size(); ++i) { th(k++) = p.phi_R(i); }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) { th(k++) = p.G(i, j); }
  }
  return th;
}

PhsKernelParams unpack(const Vector & th, const PhsKernelParams & shape)
{
  PhsKernelParams p = shape;
  const Eigen::Index d = p.dim(), m = p.G.cols();
  Eigen::Index k = 0;
  p.sigma_f = std::exp(th(k++));
  for (Eigen::Index i = 0; i < d; ++i) { p.lengthscales(i) = std::exp(th(k++)); }
  for (Eigen::Index i = 0; i < p.phi_J.size(); ++i) { p.phi_J(i) = th(k++); }
  for (Eigen::Index i = 0; i < p.phi_R.size(); ++i) { p.phi_R(i) = th(k++); }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) { p.G(i, j) = th(k++); }
  }
  return p;
}

}  // namespace

Matrix PhsKernelParams::J() const
{
  const Eigen::Index d = dim();
  Matrix J = Matrix::Zero(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      J(i, j) = phi_J(k);
      J(j, i) = -phi_J(k);
      ++k;
    }
  }
  return J;
}

Matrix PhsKernelParams::R() const
{
  const Eigen::Index d = dim();
  Matrix L = Matrix::Zero(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) { L(i, j) = phi_R(k++); }
  }
  return L * L.transpose();
}

void PhsKernelParams::validate() const
{
  const Eigen::Index d = dim();
  if (d < 1) { throw Error(ErrorCode::InvalidArgument, "GP-PHS needs at least one state dimension"); }
  if (!(sigma_f > 0)) { throw Error(ErrorCode::InvalidArgument, "sigma_f must be > 0"); }
  if (!(lengthscales.array() > 0).all()) { throw Error(ErrorCode::InvalidArgument, "lengthscales must be > 0"); }
  require_dim(phi_J.size(), n_upper(d), "phi_J");
  require_dim(phi_R.size(), n_lower(d), "phi_R");
  require_dim(G.rows(), d, "G");
}

PhsKernelParams PhsKernelParams::from_matrices(double sigma_f, Vector lengthscales, const Matrix & J, const Matrix & R,
  Matrix G)
{
  const Eigen::Index d = lengthscales.size();
  require_dim(J.rows(), d, "J");
  require_dim(R.rows(), d, "R");
  PhsKernelParams p;
  p.sigma_f = sigma_f;
  p.lengthscales = std::move(lengthscales);
  p.G = G.size() ? std::move(G) : Matrix::Zero(d, 0);
  p.phi_J = Vector(n_upper(d));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) { p.phi_J(k++) = J(i, j); }
  }
  // Lower-triangular L with L L' = R: factor R = B B' by eigen-decomposition,
  // then B' = Q T gives R = T' T with T' lower triangular.
  Matrix L = Matrix::Zero(d, d);
  if (R.norm() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (R + R.transpose()));
    const Matrix B = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::HouseholderQR<Matrix> qr(B.transpose());
    L = qr.matrixQR().triangularView<Eigen::Upper>().toDenseMatrix().transpose();
  }
  p.phi_R = Vector(n_lower(d));
  k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) { p.phi_R(k++) = L(i, j); }
  }
  p.validate();
  return p;
}

nlohmann::json PhsKernelParams::to_json() const
{
  return {{"sigma_f", sigma_f}, {"lengthscales", json_of(lengthscales)}, {"phi_J", json_of(phi_J)},
    {"phi_R", json_of(phi_R)}, {"G", json_of(G)}, {"J", json_of(J())}, {"R", json_of(R())}};
}

PhsKernelParams PhsKernelParams::from_json(const nlohmann::json & j)
{
  PhsKernelParams p;
  p.sigma_f = j.at("sigma_f").get<double>();
  p.lengthscales = vector_from_json(j.at("lengthscales"));
  const Eigen::Index d = p.lengthscales.size();
  if (j.contains("phi_J")) {
    p.phi_J = vector_from_json(j.at("phi_J"));
    p.phi_R = vector_from_json(j.at("phi_R"));
    p.G = j.contains("G") ? matrix_from_json(j.at("G")) : Matrix::Zero(d, 0);
    if (p.G.size() == 0) { p.G = Matrix::Zero(d, 0); }
    p.validate();
    return p;
  }
  Matrix G = j.contains("G") ? matrix_from_json(j.at("G")) : Matrix::Zero(d, 0);
  return from_matrices(p.sigma_f, p.lengthscales, matrix_from_json(j.at("J")), matrix_from_json(j.at("R")), G);
}

void GpPhsDataset::validate() const
{
  if (X.rows() == 0) { throw Error(ErrorCode::InsufficientData, "GP-PHS dataset is empty"); }
  require_dim(Xdot.rows(), X.rows(), "derivative rows");
  require_dim(Xdot.cols(), X.cols(), "derivative columns");
  if (U.size() > 0) { require_dim(U.rows(), X.rows(), "input rows"); }
  if (!X.allFinite() || !Xdot.allFinite() || (U.size() > 0 && !U.allFinite())) {
    throw Error(ErrorCode::InvalidArgument, "GP-PHS dataset must be finite");
  }
  if (!(noise_var >= 0)) { throw Error(ErrorCode::InvalidArgument, "noise_var must be >= 0"); }
}

Matrix pi_hessian(const Vector & x, const Vector & x2, const Vector & lambda)
{
  require_dim(x.size(), lambda.size(), "pi_hessian x");
  require_dim(x2.size(), lambda.size(), "pi_hessian x'");
  const Vector inv = lambda.cwiseInverse();
  const Vector r = x - x2;
  const double k = std::exp(-r.cwiseProduct(r).dot(inv));
  const Vector s = inv.cwiseProduct(r);
  Matrix Pi = -4.0 * s * s.transpose();
  Pi.diagonal() += 2.0 * inv;
  return k * Pi;
}

Matrix kernel_block(const PhsKernelParams & p, const Vector & x, const Vector & x2)
{
  const Matrix JR = p.JR();
  return p.sigma_f * p.sigma_f * JR * pi_hessian(x, x2, p.lengthscales) * JR.transpose();
}

namespace {

Matrix assemble_gram(const PhsKernelParams & p, const Matrix & X, double noise_var)
{
  p.validate();
  require_dim(X.cols(), p.dim(), "GP-PHS states");
  const Eigen::Index N = X.rows(), d = p.dim();
  const Matrix JR = p.JR();
  const double s2 = p.sigma_f * p.sigma_f;
  Matrix K(N * d, N * d);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Matrix B = s2 * JR * pi_hessian(X.row(i).transpose(), X.row(j).transpose(), p.lengthscales) * JR.transpose();
      K.block(i * d, j * d, d, d) = B;
      K.block(j * d, i * d, d, d) = B.transpose();
    }
  }
  K.diagonal().array() += noise_var + kJitter;
  return K;
}

}  // namespace

Matrix gram(const PhsKernelParams & p, const Matrix & X, double noise_var)
{
  Matrix K = assemble_gram(p, X, noise_var);
  factor(K);
  return K;
}

Vector mean_adjusted_targets(const PhsKernelParams & p, const GpPhsDataset & data)
{
  Matrix Y = data.Xdot;
  if (data.U.size() > 0) {
    require_dim(data.U.cols(), p.G.cols(), "input columns");
    Y -= data.U * p.G.transpose();
  }
  // Row-major stacking: derivative of sample i occupies entries [i d, (i+1) d).
  const Matrix Yt = Y.transpose();
  return Eigen::Map<const Vector>(Yt.data(), Yt.size());
}

double nlml(const PhsKernelParams & p, const GpPhsDataset & data)
{
  data.validate();
  const Eigen::LLT<Matrix> llt = factor(assemble_gram(p, data.X, data.noise_var));
  const Vector y = mean_adjusted_targets(p, data);
  const Vector a = llt.matrixL().solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * a.squaredNorm() + 0.5 * logdet + 0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

FitResult fit(const GpPhsDataset & data, const PhsKernelParams & init, int budget)
{
  if (budget < 1) { throw Error(ErrorCode::InvalidArgument, "fit budget must be >= 1"); }
  data.validate();
  init.validate();
  if (data.U.size() > 0) { require_dim(data.U.cols(), init.G.cols(), "input columns"); }

  FitResult res;
  auto objective = [&](const Vector & th) {
    ++res.evaluations;
    try {
      const double v = nlml(unpack(th, init), data);
      return std::isfinite(v) ? v : kInf;
    } catch (const Error & e) {
      if (e.code() == ErrorCode::CholeskyFail || e.code() == ErrorCode::InvalidArgument) { return kInf; }
      throw;
    }
  };

  const Vector th0 = pack(init);
  const Eigen::Index n = th0.size();
  const Eigen::Index n_log = 1 + init.dim();
  std::vector<Vector> simplex{th0};
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector v = th0;
    v(i) += i < n_log ? 0.5 : 0.1 * std::max(1.0, std::abs(th0(i)));
    simplex.push_back(v);
  }
  std::vector<double> f;
  for (const Vector & v : simplex) { f.push_back(res.evaluations < budget ? objective(v) : kInf); }

  std::vector<std::size_t> order(simplex.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    std::vector<Vector> s2;
    std::vector<double> f2;
    for (std::size_t i : order) {
      s2.push_back(simplex[i]);
      f2.push_back(f[i]);
    }
    simplex = std::move(s2);
    f = std::move(f2);
  };

  while (res.evaluations < budget) {
    sort_simplex();
    double diam = 0.0;
    for (const Vector & v : simplex) { diam = std::max(diam, (v - simplex.front()).lpNorm<Eigen::Infinity>()); }
    if (std::isfinite(f.back()) && f.back() - f.front() <= 1e-10 * (1.0 + std::abs(f.front())) && diam <= 1e-8) {
      res.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) { centroid += simplex[static_cast<std::size_t>(i)]; }
    centroid /= static_cast<double>(n);
    const Vector & worst = simplex.back();
    const Vector xr = centroid + (centroid - worst);
    const double fr = objective(xr);
    if (fr < f.front()) {
      const Vector xe = centroid + 2.0 * (centroid - worst);
      const double fe = res.evaluations < budget ? objective(xe) : kInf;
      if (fe < fr) {
        simplex.back() = xe;
        f.back() = fe;
      } else {
        simplex.back() = xr;
        f.back() = fr;
      }
      continue;
    }
    if (fr < f[f.size() - 2]) {
      simplex.back() = xr;
      f.back() = fr;
      continue;
    }
    const bool outside = fr < f.back();
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (worst - centroid));
    const double fc = res.evaluations < budget ? objective(xc) : kInf;
    if (fc < (outside ? fr : f.back())) {
      simplex.back() = xc;
      f.back() = fc;
      continue;
    }
    for (std::size_t i = 1; i < simplex.size() && res.evaluations < budget; ++i) {
      simplex[i] = simplex.front() + 0.5 * (simplex[i] - simplex.front());
      f[i] = objective(simplex[i]);
    }
  }
  sort_simplex();
  if (!std::isfinite(f.front())) {
    throw Error(ErrorCode::CholeskyFail, "no evaluated parameter set gave a positive definite Gram");
  }
  res.params = unpack(simplex.front(), init);
  res.nlml = f.front();
  return res;
}

Posterior posterior(const PhsKernelParams & p, const GpPhsDataset & data, const std::vector<Vector> & x_star,
  const Matrix & U_star)
{
  data.validate();
  const Eigen::Index N = data.size(), d = p.dim();
  const Eigen::LLT<Matrix> llt = factor(assemble_gram(p, data.X, data.noise_var));
  const Vector alpha = llt.solve(mean_adjusted_targets(p, data));
  if (U_star.size() > 0) {
    require_dim(U_star.rows(), static_cast<Eigen::Index>(x_star.size()), "query input rows");
    require_dim(U_star.cols(), p.G.cols(), "query input columns");
  }
  Posterior post;
  for (std::size_t q = 0; q < x_star.size(); ++q) {
    const Vector & xs = x_star[q];
    require_dim(xs.size(), d, "query state");
    Matrix Ks(d, N * d);
    for (Eigen::Index j = 0; j < N; ++j) { Ks.block(0, j * d, d, d) = kernel_block(p, xs, data.X.row(j).transpose()); }
    Vector mean = Ks * alpha;
    if (U_star.size() > 0) { mean += p.G * U_star.row(static_cast<Eigen::Index>(q)).transpose(); }
    const Matrix V = llt.matrixL().solve(Ks.transpose());
    Matrix cov = kernel_block(p, xs, xs) - V.transpose() * V;
    post.mean.push_back(mean);
    post.cov.push_back(0.5 * (cov + cov.transpose()));
  }
  return post;
}

Matrix derivative_filter(const Vector & t, const Matrix & X)
{
  const Eigen::Index n = t.size();
  require_dim(X.rows(), n, "filter samples");
  if (n < 2) { throw Error(ErrorCode::InsufficientData, "derivative filter needs at least two samples"); }
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(t(i) > t(i - 1))) { throw Error(ErrorCode::InvalidArgument, "sample times must be strictly increasing"); }
  }
  Matrix D(n, X.cols());
  D.row(0) = (X.row(1) - X.row(0)) / (t(1) - t(0));
  D.row(n - 1) = (X.row(n - 1) - X.row(n - 2)) / (t(n - 1) - t(n - 2));
  for (Eigen::Index i = 1; i + 1 < n; ++i) { D.row(i) = (X.row(i + 1) - X.row(i - 1)) / (t(i + 1) - t(i - 1)); }
  return D;
}

}  // namespace certkit::gpphs
