#include "certkit/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "certkit/error.hpp"
#include "certkit/qp.hpp"
#include "certkit/report.hpp"

namespace certkit::geom {

namespace {

template <class... Ts>
struct overloaded : Ts...
{
  using Ts::operator()...;
};

bool within(double v, double lo, double hi, double tol) { return v >= lo - tol && v <= hi + tol; }

/// Lexicographic "a > b" on vectors, used to order tied eigenvectors.
bool lex_greater(const Vector & a, const Vector & b)
{
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::abs(a(i) - b(i)) > 1e-12) { return a(i) > b(i); }
  }
  return false;
}

void fix_sign(Eigen::Ref<Vector> v)
{
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > 1e-12) {
      if (v(i) < 0) { v = -v; }
      return;
    }
  }
}

bool hull_contains(const PointSet & ps, const Vector & x)
{
  const Eigen::Index n = ps.dim();
  const auto k = static_cast<Eigen::Index>(ps.size());
  const Box bb = bounding_box(ps);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!within(x(i), bb.lower(i), bb.upper(i), kHullTol)) { return false; }
  }
  if (k == 1) { return (ps.points.front() - x).lpNorm<Eigen::Infinity>() <= kHullTol; }

  // lambda >= 0, sum lambda = 1, points * lambda = x.
  Matrix A(n + 1 + k, k);
  A.topRows(n) = ps.matrix();
  A.row(n).setOnes();
  A.bottomRows(k) = Matrix::Identity(k, k);
  Vector l(n + 1 + k), u(n + 1 + k);
  l.head(n) = x;
  u.head(n) = x;
  l(n) = u(n) = 1.0;
  l.tail(k).setZero();
  u.tail(k).setConstant(kInf);
  const qp::QpSolution s = qp::solve_lp(Vector::Zero(k), A, l, u, 1e-9, 20000);
  if (s.status == qp::Status::PrimalInfeasible) { return false; }
  const Vector lambda = s.z.cwiseMax(0.0);
  const double sum = lambda.sum();
  if (sum <= 0) { return false; }
  const Vector r = ps.matrix() * (lambda / sum) - x;
  return r.lpNorm<Eigen::Infinity>() <= kHullTol * (1.0 + x.lpNorm<Eigen::Infinity>());
}

}  // namespace

Box::Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi))
{
  require_dim(upper.size(), lower.size(), "Box upper");
  if (lower.size() < 1) { throw Error(ErrorCode::InvalidArgument, "Box needs dimension >= 1"); }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower(i) <= upper(i))) { throw Error(ErrorCode::InvalidArgument, "Box requires lower <= upper"); }
  }
}

Box Box::cube(Eigen::Index n, double lo, double hi)
{
  return Box(Vector::Constant(n, lo), Vector::Constant(n, hi));
}

OrientedBox::OrientedBox(Vector c, Matrix ax, Vector hw)
    : center(std::move(c)), axes(std::move(ax)), half_widths(std::move(hw))
{
  const Eigen::Index n = center.size();
  require_dim(axes.rows(), n, "OrientedBox axes rows");
  require_dim(axes.cols(), n, "OrientedBox axes cols");
  require_dim(half_widths.size(), n, "OrientedBox half_widths");
  if ((axes.transpose() * axes - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-8) {
    throw Error(ErrorCode::InvalidArgument, "OrientedBox axes must be orthonormal");
  }
  if ((half_widths.array() < 0).any()) {
    throw Error(ErrorCode::InvalidArgument, "OrientedBox half_widths must be nonnegative");
  }
}

HPolytope::HPolytope(Matrix a, Vector rhs) : A(std::move(a)), b(std::move(rhs))
{
  require_dim(b.size(), A.rows(), "HPolytope b");
  if (A.rows() < 1) { throw Error(ErrorCode::InvalidArgument, "HPolytope needs at least one row"); }
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    if (A.row(i).lpNorm<Eigen::Infinity>() == 0.0) {
      throw Error(ErrorCode::InvalidArgument, "HPolytope rows must be nonzero");
    }
  }
}

PointSet::PointSet(std::vector<Vector> pts) : points(std::move(pts))
{
  if (points.empty()) { throw Error(ErrorCode::InvalidArgument, "PointSet must be nonempty"); }
  for (const Vector & p : points) { require_dim(p.size(), points.front().size(), "PointSet point"); }
}

Matrix PointSet::matrix() const
{
  Matrix M(dim(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) { M.col(static_cast<Eigen::Index>(j)) = points[j]; }
  return M;
}

BallUnion::BallUnion(PointSet c, double r) : centers(std::move(c)), radius(r)
{
  if (!(radius >= 0)) { throw Error(ErrorCode::NegativeRadius, "BallUnion radius must be >= 0"); }
}

Eigen::Index dim(const SetRegion & r)
{
  return std::visit([](const auto & s) { return s.dim(); }, r);
}

const char * kind(const SetRegion & r)
{
  return std::visit(overloaded{
                      [](const Box &) { return "box"; },
                      [](const OrientedBox &) { return "oriented_box"; },
                      [](const HPolytope &) { return "hpolytope"; },
                      [](const PointSet &) { return "point_set"; },
                      [](const BallUnion &) { return "ball_union"; },
                    },
    r);
}

bool contains(const SetRegion & region, const Vector & x)
{
  require_dim(x.size(), dim(region), "contains point");
  return std::visit(overloaded{
                      [&](const Box & b) {
                        return ((x.array() >= b.lower.array()) && (x.array() <= b.upper.array())).all();
                      },
                      [&](const OrientedBox & b) {
                        const Vector t = b.axes.transpose() * (x - b.center);
                        for (Eigen::Index i = 0; i < t.size(); ++i) {
                          const double w = b.half_widths(i);
                          if (std::abs(t(i)) > w + 1e-9 * (1.0 + w)) { return false; }
                        }
                        return true;
                      },
                      [&](const HPolytope & p) {
                        const Vector Ax = p.A * x;
                        for (Eigen::Index i = 0; i < Ax.size(); ++i) {
                          if (Ax(i) > p.b(i) + 1e-9 * (1.0 + std::abs(p.b(i)))) { return false; }
                        }
                        return true;
                      },
                      [&](const PointSet & ps) { return hull_contains(ps, x); },
                      [&](const BallUnion & bu) {
                        const double r2 = bu.radius * bu.radius * (1.0 + 1e-12) + 1e-300;
                        for (const Vector & c : bu.centers.points) {
                          if ((x - c).squaredNorm() <= r2) { return true; }
                        }
                        return false;
                      },
                    },
    region);
}

SetRegion pad(const SetRegion & region, double eps)
{
  if (!(eps >= 0)) { throw Error(ErrorCode::NegativeRadius, "pad radius must be >= 0"); }
  return std::visit(overloaded{
                      [&](const Box & b) -> SetRegion {
                        return Box(b.lower.array() - eps, b.upper.array() + eps);
                      },
                      [&](const OrientedBox & b) -> SetRegion {
                        return OrientedBox(b.center, b.axes, b.half_widths.array() + eps);
                      },
                      [&](const HPolytope & p) -> SetRegion {
                        return HPolytope(p.A, p.b + eps * p.A.rowwise().norm());
                      },
                      [&](const PointSet & ps) -> SetRegion { return BallUnion(ps, eps); },
                      [&](const BallUnion & bu) -> SetRegion { return BallUnion(bu.centers, bu.radius + eps); },
                    },
    region);
}

OrientedBox fit_oriented_box(const PointSet & points, double pad_eps)
{
  if (!(pad_eps >= 0)) { throw Error(ErrorCode::NegativeRadius, "fit_oriented_box pad must be >= 0"); }
  const Eigen::Index n = points.dim();
  const Matrix X = points.matrix();
  const Vector mean = X.rowwise().mean();
  const Matrix D = X.colwise() - mean;
  const Matrix cov = D * D.transpose() / static_cast<double>(X.cols());

  const double scale = cov.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    return OrientedBox(mean, Matrix::Identity(n, n), Vector::Constant(n, pad_eps));
  }

  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector evals = es.eigenvalues();  // ascending
  const Matrix evecs = es.eigenvectors();
  const double tie = 1e-10 * scale;

  Matrix axes(n, n);
  Eigen::Index out = 0;
  Eigen::Index hi = n - 1;
  while (hi >= 0) {
    Eigen::Index lo = hi;
    while (lo > 0 && evals(hi) - evals(lo - 1) <= tie) { --lo; }
    const Eigen::Index k = hi - lo + 1;
    const Matrix V = evecs.middleCols(lo, k);
    std::vector<Vector> group;
    if (k == 1) {
      group.push_back(V.col(0));
    } else {
      const Matrix proj = V * V.transpose();
      for (Eigen::Index j = 0; j < n && static_cast<Eigen::Index>(group.size()) < k; ++j) {
        Vector v = proj.col(j);
        for (const Vector & g : group) { v -= g.dot(v) * g; }
        const double nv = v.norm();
        if (nv > 1e-8) { group.push_back(v / nv); }
      }
    }
    for (Vector & g : group) { fix_sign(g); }
    std::sort(group.begin(), group.end(), lex_greater);
    for (const Vector & g : group) { axes.col(out++) = g; }
    hi = lo - 1;
  }

  const Matrix T = axes.transpose() * D;
  const Vector hw = T.cwiseAbs().rowwise().maxCoeff().array() + pad_eps;
  return OrientedBox(mean, axes, hw);
}

double directed_hausdorff(const PointSet & from, const PointSet & to)
{
  require_dim(to.dim(), from.dim(), "hausdorff dimension");
  // Sort the target by its first coordinate; the scan stops once the
  // coordinate gap alone exceeds the best distance found.
  std::vector<std::size_t> order(to.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
    [&](std::size_t a, std::size_t b) { return to.points[a](0) < to.points[b](0); });
  std::vector<double> keys(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) { keys[i] = to.points[order[i]](0); }

  double worst = 0.0;
  for (const Vector & p : from.points) {
    const auto start = static_cast<std::ptrdiff_t>(std::lower_bound(keys.begin(), keys.end(), p(0)) - keys.begin());
    double best2 = kInf;
    for (std::ptrdiff_t i = start; i < static_cast<std::ptrdiff_t>(keys.size()); ++i) {
      const double gap = keys[static_cast<std::size_t>(i)] - p(0);
      if (gap * gap >= best2) { break; }
      best2 = std::min(best2, (to.points[order[static_cast<std::size_t>(i)]] - p).squaredNorm());
    }
    for (std::ptrdiff_t i = start - 1; i >= 0; --i) {
      const double gap = p(0) - keys[static_cast<std::size_t>(i)];
      if (gap * gap >= best2) { break; }
      best2 = std::min(best2, (to.points[order[static_cast<std::size_t>(i)]] - p).squaredNorm());
    }
    worst = std::max(worst, std::sqrt(best2));
  }
  return worst;
}

double hausdorff(const PointSet & a, const PointSet & b)
{
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

Box bounding_box(const SetRegion & region)
{
  return std::visit(overloaded{
                      [](const Box & b) { return b; },
                      [](const OrientedBox & b) {
                        const Vector r = b.axes.cwiseAbs() * b.half_widths;
                        return Box(b.center - r, b.center + r);
                      },
                      [](const HPolytope & p) {
                        const Eigen::Index n = p.dim();
                        Vector lo(n), hi(n);
                        const Vector l = Vector::Constant(p.A.rows(), -kInf);
                        for (Eigen::Index i = 0; i < n; ++i) {
                          for (int sgn : {1, -1}) {
                            Vector c = Vector::Zero(n);
                            c(i) = sgn;
                            const qp::QpSolution s = qp::solve_lp(c, p.A, l, p.b, 1e-9, 20000);
                            if (s.status == qp::Status::DualInfeasible) {
                              throw Error(ErrorCode::UnboundedRegion, "HPolytope is unbounded");
                            }
                            if (s.status == qp::Status::PrimalInfeasible) {
                              throw Error(ErrorCode::InvalidArgument, "HPolytope is empty");
                            }
                            (sgn > 0 ? lo : hi)(i) = s.z(i);
                          }
                        }
                        return Box(lo, hi.cwiseMax(lo));
                      },
                      [](const PointSet & ps) {
                        const Matrix M = ps.matrix();
                        return Box(M.rowwise().minCoeff(), M.rowwise().maxCoeff());
                      },
                      [](const BallUnion & bu) {
                        const Matrix M = bu.centers.matrix();
                        return Box(M.rowwise().minCoeff().array() - bu.radius,
                          M.rowwise().maxCoeff().array() + bu.radius);
                      },
                    },
    region);
}

Vector sample_uniform(const SetRegion & region, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto in_box = [&](const Box & b) {
    Vector x(b.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) { x(i) = b.lower(i) + (b.upper(i) - b.lower(i)) * unit(rng); }
    return x;
  };
  if (const auto * b = std::get_if<Box>(&region)) { return in_box(*b); }
  if (const auto * ob = std::get_if<OrientedBox>(&region)) {
    Vector t(ob->dim());
    for (Eigen::Index i = 0; i < t.size(); ++i) { t(i) = (2.0 * unit(rng) - 1.0) * ob->half_widths(i); }
    return ob->center + ob->axes * t;
  }
  const Box bb = bounding_box(region);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vector x = in_box(bb);
    if (contains(region, x)) { return x; }
  }
  throw Error(ErrorCode::NoConvergence, "rejection sampling found no point in the region");
}

PointSet hull_2d(const PointSet & points)
{
  require_dim(points.dim(), 2, "hull_2d dimension");
  std::vector<Vector> p = points.points;
  std::sort(p.begin(), p.end(), [](const Vector & a, const Vector & b) {
    return a(0) < b(0) || (a(0) == b(0) && a(1) < b(1));
  });
  p.erase(std::unique(p.begin(), p.end(), [](const Vector & a, const Vector & b) { return a == b; }), p.end());
  if (p.size() < 3) { return PointSet(p); }
  auto cross = [](const Vector & o, const Vector & a, const Vector & b) {
    return (a(0) - o(0)) * (b(1) - o(1)) - (a(1) - o(1)) * (b(0) - o(0));
  };
  std::vector<Vector> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) { --k; }
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) { --k; }
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return PointSet(h);
}

double polygon_area(const PointSet & polygon)
{
  const std::size_t k = polygon.size();
  if (k < 3) { return 0.0; }
  double a = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Vector & p = polygon.points[i];
    const Vector & q = polygon.points[(i + 1) % k];
    a += p(0) * q(1) - q(0) * p(1);
  }
  return 0.5 * a;
}

namespace {

PointSet corners_of(const Vector & center, const Matrix & axes, const Vector & hw)
{
  const Eigen::Index n = center.size();
  std::vector<Vector> out;
  for (unsigned long mask = 0; mask < (1UL << n); ++mask) {
    Vector t(n);
    for (Eigen::Index i = 0; i < n; ++i) { t(i) = ((mask >> i) & 1UL) ? hw(i) : -hw(i); }
    out.push_back(center + axes * t);
  }
  return PointSet(out);
}

}  // namespace

PointSet corners(const Box & b)
{
  return corners_of(b.center(), Matrix::Identity(b.dim(), b.dim()), b.radius());
}

PointSet corners(const OrientedBox & b) { return corners_of(b.center, b.axes, b.half_widths); }

nlohmann::json to_json(const SetRegion & r)
{
  nlohmann::json j;
  j["kind"] = kind(r);
  std::visit(overloaded{
               [&](const Box & b) {
                 j["lower"] = json_of(b.lower);
                 j["upper"] = json_of(b.upper);
               },
               [&](const OrientedBox & b) {
                 j["center"] = json_of(b.center);
                 j["axes"] = json_of(b.axes);
                 j["half_widths"] = json_of(b.half_widths);
               },
               [&](const HPolytope & p) {
                 j["A"] = json_of(p.A);
                 j["b"] = json_of(p.b);
               },
               [&](const PointSet & p) { j["points"] = json_of(Matrix(p.matrix().transpose())); },
               [&](const BallUnion & u) {
                 j["centers"] = json_of(Matrix(u.centers.matrix().transpose()));
                 j["radius"] = u.radius;
               },
             },
    r);
  return j;
}

namespace {

PointSet points_from_json(const nlohmann::json & j)
{
  const Matrix M = matrix_from_json(j);
  std::vector<Vector> pts;
  for (Eigen::Index i = 0; i < M.rows(); ++i) { pts.push_back(M.row(i).transpose()); }
  return PointSet(std::move(pts));
}

}  // namespace

Box box_from_json(const nlohmann::json & j)
{
  return Box(vector_from_json(j.at("lower")), vector_from_json(j.at("upper")));
}

SetRegion region_from_json(const nlohmann::json & j)
{
  const std::string k = j.at("kind").get<std::string>();
  if (k == "box") { return box_from_json(j); }
  if (k == "oriented_box") {
    return OrientedBox(vector_from_json(j.at("center")), matrix_from_json(j.at("axes")),
      vector_from_json(j.at("half_widths")));
  }
  if (k == "hpolytope") { return HPolytope(matrix_from_json(j.at("A")), vector_from_json(j.at("b"))); }
  if (k == "point_set" || k == "points") { return points_from_json(j.at("points")); }
  if (k == "ball_union") { return BallUnion(points_from_json(j.at("centers")), j.at("radius").get<double>()); }
  throw Error(ErrorCode::ConfigError, "unknown region kind '" + k + "'");
}

}  // namespace certkit::geom
