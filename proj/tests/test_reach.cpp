#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "certkit/error.hpp"
#include "certkit/reach.hpp"
#include "oracles.hpp"

using namespace certkit;
using geom::Box;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

Matrix rotation(double th)
{
  Matrix R(2, 2);
  R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  return R;
}

dyn::DiscreteMap linear(const Matrix & A) { return dyn::LinearMap{A, Matrix(A.rows(), 0)}; }

reach::ReachConfig sampled(int steps, reach::Template t, int n, double eps, std::uint64_t seed = 0)
{
  reach::ReachConfig cfg;
  cfg.steps = steps;
  cfg.templ = t;
  cfg.n_samples = n;
  cfg.eps = eps;
  cfg.seed = seed;
  return cfg;
}

double box_volume(const Box & b) { return (b.upper - b.lower).prod(); }

// x+ = clamp(2x, -1, 1) as a two-layer ReLU network; attractors at -1 and 1.
nn::Mlp saturating_doubler()
{
  Matrix W1(2, 1), W2(1, 2);
  W1 << 2, 2;
  W2 << 1, -1;
  Vector b1(2);
  b1 << 1, -1;
  return nn::Mlp({nn::Layer{W1, b1, nn::Activation::Relu}, nn::Layer{W2, v1(-1), nn::Activation::Identity}});
}

}  // namespace

TEST_CASE("interval propagation examples")
{
  const auto r = reach::propagate_interval(linear(0.5 * Matrix::Identity(2, 2)), Box::cube(2, -1, 1), 1);
  REQUIRE(r.regions.size() == 2);
  const auto & b = std::get<Box>(r.regions[1]);
  CHECK(b.lower.isApprox(Vector::Constant(2, -0.5)));
  CHECK(b.upper.isApprox(Vector::Constant(2, 0.5)));
  CHECK(r.guarantee == reach::Guarantee::SoundOverapprox);
  CHECK(std::get<Box>(r.regions[0]).lower == Vector::Constant(2, -1.0));

  const dyn::DiscreteMap relu = dyn::NetworkMap{nn::Mlp({nn::Layer{Matrix::Ones(1, 1), v1(0), nn::Activation::Relu}}), 1};
  const auto rr = std::get<Box>(reach::propagate_interval(relu, Box(v1(-1), v1(1)), 1).regions[1]);
  CHECK(rr.lower(0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(rr.upper(0) == doctest::Approx(1.0).epsilon(1e-12));

  const auto rot = std::get<Box>(reach::propagate_interval(linear(rotation(std::numbers::pi / 4)), Box::cube(2, -1, 1), 1).regions[1]);
  CHECK(rot.upper.isApprox(Vector::Constant(2, std::sqrt(2.0)), 1e-12));

  const dyn::DiscreteMap poly = dyn::PolynomialMap{dyn::Quadratic(Matrix::Identity(1, 1), {Matrix::Ones(1, 1)})};
  CHECK_THROWS_AS(reach::propagate_interval(poly, Box(v1(-1), v1(1)), 1), Error);
}

TEST_CASE("interval propagation is sound on random maps")
{
  std::mt19937 rng(51);
  std::mt19937_64 rng64(51);
  const Box x0 = Box::cube(3, -0.5, 1.0);
  const std::vector<dyn::DiscreteMap> maps{linear(oracle::random_matrix(rng, 3, 3, 0.6)),
    dyn::KoopmanLatent{oracle::random_matrix(rng, 3, 3, 0.6)},
    dyn::NetworkMap{nn::Mlp({nn::Layer{oracle::random_matrix(rng, 8, 3), oracle::random_vector(rng, 8), nn::Activation::Relu},
                      nn::Layer{oracle::random_matrix(rng, 3, 8, 0.3), oracle::random_vector(rng, 3), nn::Activation::Identity}}),
      3}};
  for (const auto & m : maps) {
    const auto r = reach::propagate_interval(m, x0, 3);
    int violations = 0;
    for (int s = 0; s < 10000; ++s) {
      Vector x = geom::sample_uniform(geom::SetRegion(x0), rng64);
      for (int k = 1; k <= 3; ++k) {
        x = dyn::step(m, x);
        violations += r.contains(k, x) ? 0 : 1;
      }
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("interval wrapping grows while the sampled hull does not")
{
  const auto R = linear(rotation(std::numbers::pi / 4));
  const auto iv = reach::propagate_interval(R, Box::cube(2, -1, 1), 4);
  const auto hs = reach::reach_sampled(R, Box::cube(2, -1, 1), sampled(4, reach::Template::SampleHull, 2000, 0.0, 9));
  const double a0 = geom::polygon_area(geom::hull_2d(std::get<geom::PointSet>(hs.regions[1])));
  for (int k = 1; k <= 4; ++k) {
    CHECK(box_volume(std::get<Box>(iv.regions[static_cast<std::size_t>(k)])) / 4.0 >= std::pow(std::sqrt(2.0), k) - 1e-9);
    const double a = geom::polygon_area(geom::hull_2d(std::get<geom::PointSet>(hs.regions[static_cast<std::size_t>(k)])));
    CHECK(std::abs(a - a0) <= 0.05 * a0);
  }
}

TEST_CASE("sampled reach on the identity and linear maps")
{
  const Box x0 = Box::cube(2, -1, 1);
  const auto id = reach::reach_sampled(linear(Matrix::Identity(2, 2)), x0, sampled(1, reach::Template::SampleHull, 300, 0.0));
  CHECK(id.guarantee == reach::Guarantee::Statistical);
  for (const Vector & p : std::get<geom::PointSet>(id.regions[1]).points) { CHECK(geom::contains(x0, p)); }

  std::mt19937 rng(52);
  std::mt19937_64 rng64(52);
  const Matrix A = oracle::random_matrix(rng, 2, 2);
  const auto lin = reach::reach_sampled(linear(A), x0, sampled(2, reach::Template::SampleHull, 500, 0.0, 4));
  // Step-1 hull vertices are pushed samples, so their images are step-2 generators.
  for (const Vector & p : std::get<geom::PointSet>(lin.regions[1]).points) { CHECK(lin.contains(2, A * p)); }

  for (auto t : {reach::Template::Interval, reach::Template::PcaBox, reach::Template::BallUnion}) {
    const auto r = reach::reach_sampled(linear(A), x0, sampled(1, t, 200, 0.01, 5));
    CHECK(r.regions.size() == 2);
    CHECK(r.containment.size() == 2);
  }
}

TEST_CASE("half contraction hull matches the exact image")
{
  const auto r = reach::reach_sampled(linear(0.5 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)),
    sampled(1, reach::Template::SampleHull, 1000, 0.05, 17));
  // In one dimension the estimate is [min - eps, max + eps].
  const auto & pts = std::get<geom::PointSet>(r.regions[1]).points;
  double lo = 1e9, hi = -1e9;
  for (const Vector & p : pts) {
    lo = std::min(lo, p(0));
    hi = std::max(hi, p(0));
  }
  const double pad = r.hull_pad[1];
  CHECK(pad == 0.05);
  CHECK(std::max(std::abs(lo - pad + 0.5), std::abs(hi + pad - 0.5)) <= 0.06);
}

TEST_CASE("hull accuracy improves with the sample count")
{
  // Image of [-1,1]^2 under 0.5 I is the box [-0.5,0.5]^2; the unpadded hull
  // lies inside it, so the Hausdorff distance is the farthest image corner.
  const auto m = linear(0.5 * Matrix::Identity(2, 2));
  double prev = 1e9;
  for (int n : {10, 100, 1000}) {
    std::vector<double> d;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = reach::reach_sampled(m, Box::cube(2, -1, 1), sampled(1, reach::Template::SampleHull, n, 0.0, seed));
      const auto & hull = std::get<geom::PointSet>(r.regions[1]);
      for (const Vector & p : hull.points) { CHECK(p.lpNorm<Eigen::Infinity>() <= 0.5 + 1e-12); }
      double h = 0.0;
      for (const Vector & c : geom::corners(Box::cube(2, -0.5, 0.5)).points) { h = std::max(h, reach::hull_distance(hull, c)); }
      d.push_back(h);
    }
    std::nth_element(d.begin(), d.begin() + 10, d.end());
    CHECK(d[10] <= prev);
    prev = d[10];
  }
}

TEST_CASE("sample_size formula")
{
  // M = 2 * 1 * 1 * 1 / 0.5 = 4, N = ceil(4 ln 40) = 15.
  CHECK(reach::sample_size(0.5, 0.1, 1, 1, 1) == 15);
  CHECK(reach::sample_size(0.5, 0.1, 1, 1, 1) == static_cast<std::int64_t>(std::ceil(4 * std::log(40.0))));
  for (double eps : {0.01, 0.1, 0.3}) {
    CHECK(reach::sample_size(2 * eps, 0.05, 1.5, 2, 2) <= reach::sample_size(eps, 0.05, 1.5, 2, 2));
  }
  // Linear in log(1/delta): equal increments per decade, up to rounding.
  const auto n1 = reach::sample_size(0.1, 1e-1, 1, 1, 2), n2 = reach::sample_size(0.1, 1e-2, 1, 1, 2),
             n3 = reach::sample_size(0.1, 1e-3, 1, 1, 2);
  CHECK(n1 < n2);
  CHECK(std::llabs((n3 - n2) - (n2 - n1)) <= 1);
  CHECK_THROWS_AS(reach::sample_size(1e-6, 0.1, 1, 1, 6), Error);
  CHECK_THROWS_AS(reach::sample_size(0.1, 1.0, 1, 1, 1), Error);
  CHECK(reach::sample_size(reach::epsilon_for_budget(5000, 0.1, 1, 1, 2), 0.1, 1, 1, 2) <= 5000);
}

TEST_CASE("covering-size epsilon gives fresh containment at the confidence level")
{
  const double L = 0.5, D = 2.0, eps = 0.05, delta = 0.1;
  const auto n = reach::sample_size(eps, delta, L, D, 1);
  auto cfg = sampled(3, reach::Template::SampleHull, static_cast<int>(n), eps, 3);
  cfg.delta = delta;
  cfg.n_fresh = 2000;
  const auto r = reach::reach_sampled(linear(0.5 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)), cfg);
  for (double c : r.containment) { CHECK(c >= 1 - delta); }
}

TEST_CASE("sampled reach is deterministic across worker counts")
{
  const auto m = linear(rotation(0.3));
  auto cfg = sampled(3, reach::Template::BallUnion, 400, 0.02, 8);
  const auto a = reach::reach_sampled(m, Box::cube(2, -1, 1), cfg);
  cfg.workers = 4;
  const auto b = reach::reach_sampled(m, Box::cube(2, -1, 1), cfg);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("invariant estimate of a global contraction")
{
  auto cfg = sampled(1, reach::Template::BallUnion, 500, 0.01, 2);
  const auto est = reach::estimate_invariant(linear(0.5 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)), v1(0), cfg, {});
  CHECK(est.n_positive == 500);
  CHECK(est.recurrence_verified);
  REQUIRE(est.region.has_value());
}

TEST_CASE("invariant estimate of an expanding map")
{
  // x+ = 2x: a sample is positive iff it starts in B_r and |x0| 2^T <= 1.
  auto cfg = sampled(1, reach::Template::BallUnion, 20000, 0.0, 6);
  const reach::InvariantOracle o{0.01, 5};
  const auto est = reach::estimate_invariant(linear(2 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)), v1(0), cfg, o);
  REQUIRE(est.region.has_value());
  for (const Vector & p : est.region->centers.points) {
    CHECK(std::abs(p(0)) <= o.r);
    CHECK(std::abs(p(0)) * std::pow(2.0, o.T) <= 1.0);
  }
  // Expected count 20000 * 0.01 = 200, standard deviation about 14.
  CHECK(std::abs(est.n_positive - 200) <= 60);

  const auto none = reach::estimate_invariant(linear(2 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)), v1(0), cfg, {0.01, 50});
  CHECK(none.n_positive == 0);
  CHECK_FALSE(none.region.has_value());
  CHECK_THROWS_AS(reach::estimate_invariant(linear(2 * Matrix::Identity(1, 1)), Box(v1(-1), v1(1)), v1(0.5), cfg, o), Error);
}

TEST_CASE("invariant estimate of a bistable map stays in one basin")
{
  const dyn::DiscreteMap m = dyn::NetworkMap{saturating_doubler(), 1};
  const auto sat = [](double x) { return std::clamp(2 * x, -1.0, 1.0); };
  auto cfg = sampled(1, reach::Template::BallUnion, 2000, 0.01, 7);
  const reach::InvariantOracle o{0.05, 30};
  const auto est = reach::estimate_invariant(m, Box(v1(-2), v1(2)), v1(1), cfg, o);
  REQUIRE(est.region.has_value());
  CHECK(est.recurrence_verified);

  // Dense-grid basin labels from direct iteration of the scalar map.
  int checked = 0;
  for (int i = 0; i <= 4000; ++i) {
    const double x0 = -2.0 + i * 1e-3;
    double x = x0;
    for (int t = 0; t < o.T; ++t) { x = sat(x); }
    const bool in_basin = std::abs(x - 1.0) <= o.r;
    if (!in_basin && x0 < -cfg.eps) {
      CHECK_FALSE(est.contains(v1(x0)));
      ++checked;
    }
  }
  CHECK(checked > 1900);
  for (const Vector & p : est.region->centers.points) { CHECK(p(0) > 0.0); }
}

TEST_CASE("regions csv lists every step")
{
  const auto r = reach::propagate_interval(linear(0.5 * Matrix::Identity(2, 2)), Box::cube(2, -1, 1), 2);
  const std::string csv = reach::regions_csv(r);
  CHECK(csv.rfind("step,radius,x0,x1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 4);
}
