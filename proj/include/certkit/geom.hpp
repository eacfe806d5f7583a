#ifndef CERTKIT_GEOM_HPP_
#define CERTKIT_GEOM_HPP_

#include <random>
#include <variant>
#include <vector>

#include <json.hpp>

#include "certkit/types.hpp"

namespace certkit::geom {

/// Axis-aligned box [lower, upper].
struct Box
{
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi);

  static Box cube(Eigen::Index n, double lo, double hi);

  Eigen::Index dim() const { return lower.size(); }
  Vector center() const { return 0.5 * (lower + upper); }
  Vector radius() const { return 0.5 * (upper - lower); }
  double volume() const { return (upper - lower).prod(); }
};

/// center + axes * diag(half_widths) * [-1,1]^n with orthonormal axes.
struct OrientedBox
{
  Vector center;
  Matrix axes;
  Vector half_widths;

  OrientedBox() = default;
  OrientedBox(Vector c, Matrix ax, Vector hw);

  Eigen::Index dim() const { return center.size(); }
  double volume() const { return (2.0 * half_widths).prod(); }
};

/// {x : A x <= b}.
struct HPolytope
{
  Matrix A;
  Vector b;

  HPolytope() = default;
  HPolytope(Matrix a, Vector rhs);

  Eigen::Index dim() const { return A.cols(); }
};

/// Finite point cloud. As a region it denotes the convex hull of the points.
struct PointSet
{
  std::vector<Vector> points;

  PointSet() = default;
  explicit PointSet(std::vector<Vector> pts);

  Eigen::Index dim() const { return points.front().size(); }
  std::size_t size() const { return points.size(); }
  /// Points as columns.
  Matrix matrix() const;
};

/// Union of closed 2-norm balls of a common radius around `centers`.
struct BallUnion
{
  PointSet centers;
  double radius{0.0};

  BallUnion() = default;
  BallUnion(PointSet c, double r);

  Eigen::Index dim() const { return centers.dim(); }
};

using SetRegion = std::variant<Box, OrientedBox, HPolytope, PointSet, BallUnion>;

Eigen::Index dim(const SetRegion & r);
const char * kind(const SetRegion & r);

/// Hull membership of a PointSet is decided by LP feasibility with this
/// tolerance on the residual.
inline constexpr double kHullTol = 1e-7;

bool contains(const SetRegion & region, const Vector & x);

/// Minkowski sum with the closed eps-ball of the 2-norm. Boxes and oriented
/// boxes are padded per coordinate and polytopes shift every face by eps
/// times its row norm (both outer bounds of the 2-norm pad); point sets become
/// ball unions around their points.
SetRegion pad(const SetRegion & region, double eps);

/// PCA-oriented bounding box of the cloud. Axes follow descending covariance
/// eigenvalues; each axis is signed so that its first nonzero entry is
/// positive. Inside a group of tied eigenvalues the basis is built by
/// Gram-Schmidt on the projections of e_1, e_2, ... and the group is ordered
/// lexicographically descending. A cloud of identical points gives a
/// zero-width box at that point with identity axes.
OrientedBox fit_oriented_box(const PointSet & points, double pad = 0.0);

double directed_hausdorff(const PointSet & from, const PointSet & to);
double hausdorff(const PointSet & a, const PointSet & b);

/// Smallest axis-aligned box containing the region.
Box bounding_box(const SetRegion & region);

/// Uniform sample. Exact for boxes and oriented boxes; rejection from the
/// bounding box otherwise (throws NoConvergence after 10^5 rejections).
Vector sample_uniform(const SetRegion & region, std::mt19937_64 & rng);

/// Vertices of the convex hull of a planar cloud, counter-clockwise
/// (Andrew's monotone chain). Collinear points are dropped.
PointSet hull_2d(const PointSet & points);

/// Area of a counter-clockwise planar polygon.
double polygon_area(const PointSet & polygon);

/// Corners of a box or oriented box (2^n points).
PointSet corners(const Box & b);
PointSet corners(const OrientedBox & b);

/// {"kind": "box", "lower", "upper"}, {"kind": "oriented_box", "center",
/// "axes", "half_widths"}, {"kind": "hpolytope", "A", "b"},
/// {"kind": "point_set", "points"} and {"kind": "ball_union", "centers", "radius"}.
nlohmann::json to_json(const SetRegion & r);
SetRegion region_from_json(const nlohmann::json & j);
Box box_from_json(const nlohmann::json & j);

}  // namespace certkit::geom

#endif  // CERTKIT_GEOM_HPP_
