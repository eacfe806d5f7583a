#ifndef CERTKIT_REACH_HPP_
#define CERTKIT_REACH_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "certkit/dyn.hpp"
#include "certkit/geom.hpp"

namespace certkit::reach {

enum class Template { Interval, PcaBox, SampleHull, BallUnion };

const char * to_string(Template t);
Template template_from_string(const std::string & s);

struct ReachConfig
{
  int steps{1};
  Template templ{Template::SampleHull};
  int n_samples{1000};
  double eps{0.0};
  double delta{0.1};
  std::uint64_t seed{0};
  int workers{1};
  /// Fresh samples drawn after the estimate to measure containment.
  int n_fresh{1000};

  void validate() const;
};

enum class Guarantee { SoundOverapprox, Statistical };

const char * to_string(Guarantee g);

/**
 * Per-step regions, regions[0] being the initial set. A sample_hull step is
 * stored as the hull vertices (a PointSet) with the pad in hull_pad[k]; the
 * region it denotes is conv(vertices) + B_eps.
 */
struct ReachResult
{
  std::vector<geom::SetRegion> regions;
  std::vector<double> hull_pad;
  std::string method;
  Template templ{Template::Interval};
  Guarantee guarantee{Guarantee::SoundOverapprox};
  int n_samples{0};
  double eps{0.0};
  /// Fraction of fresh trajectories inside each step region (sampled only).
  std::vector<double> containment;

  int steps() const { return static_cast<int>(regions.size()) - 1; }
  /// Membership in step k including the hull pad.
  bool contains(int k, const Vector & x) const;
  nlohmann::json to_json() const;
};

/// Euclidean distance from x to the convex hull of the points.
double hull_distance(const geom::PointSet & points, const Vector & x);

/// Sound interval images for linear, Koopman, network and closed-loop maps
/// (monotone activations only). Polynomial maps raise UnsupportedModel.
ReachResult propagate_interval(const dyn::DiscreteMap & model, const geom::Box & x0, int steps);

/// N uniform samples from x0 pushed forward and wrapped by the configured
/// template, padded by eps. Trajectories are evaluated on `workers` threads;
/// the result depends only on the seed.
ReachResult reach_sampled(const dyn::DiscreteMap & model, const geom::SetRegion & x0, const ReachConfig & cfg);

/// Covering bound with c = 2: with M = (2 L D sqrt(d) / eps)^d,
/// N = ceil(M ln(M / delta)) (at least 1). Throws Overflow past 2^53.
std::int64_t sample_size(double eps, double delta, double lipschitz, double diameter, int dim);

/// Smallest eps whose sample_size fits in `budget` (bisection in log eps).
double epsilon_for_budget(std::int64_t budget, double delta, double lipschitz, double diameter, int dim);

struct InvariantOracle
{
  double r{0.01};
  int T{50};
};

struct InvariantEstimate
{
  /// Ball union of positive samples; empty when no sample is positive.
  std::optional<geom::BallUnion> region;
  InvariantOracle oracle;
  Vector x_star;
  bool recurrence_verified{false};
  int n_positive{0};
  int n_samples{0};
  /// Samples whose one-step image left the estimate (recurrence failures).
  std::vector<Vector> recurrence_failures;

  bool contains(const Vector & x) const;
  nlohmann::json to_json() const;
};

/// Labels uniform samples of `domain`: positive iff the T-step trajectory
/// stays in the domain and reaches B_r(x_star). The estimate is the eps-padded
/// union of positives; recurrence is checked on the positives only.
InvariantEstimate estimate_invariant(const dyn::DiscreteMap & model, const geom::Box & domain, const Vector & x_star,
  const ReachConfig & cfg, const InvariantOracle & oracle);

/// CSV of every step region: step,radius,x0..x{n-1}, one row per corner,
/// hull vertex or ball center.
std::string regions_csv(const ReachResult & r);

}  // namespace certkit::reach

#endif  // CERTKIT_REACH_HPP_
