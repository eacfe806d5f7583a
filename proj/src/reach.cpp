#include "certkit/reach.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "certkit/error.hpp"
#include "certkit/nn.hpp"
#include "certkit/parallel.hpp"
#include "certkit/qp.hpp"
#include "certkit/report.hpp"

namespace certkit::reach {

namespace {

using Interval = std::pair<Vector, Vector>;

Interval net_image(const nn::Mlp & net, const Vector & lo, const Vector & hi)
{
  const auto bounds = nn::interval_bounds(net, lo, hi);
  return {bounds.back().post_lo, bounds.back().post_hi};
}

Interval linear_image(const Matrix & A, const Vector & lo, const Vector & hi)
{
  Vector olo, ohi;
  nn::affine_interval(A, Vector::Zero(A.rows()), lo, hi, olo, ohi);
  return {olo, ohi};
}

Interval interval_image(const dyn::DiscreteMap & model, const Vector & lo, const Vector & hi)
{
  if (const auto * m = std::get_if<dyn::LinearMap>(&model)) {
    if (m->B.cols() > 0) {
      throw Error(ErrorCode::UnsupportedModel, "interval propagation needs an autonomous map; close the loop first");
    }
    return linear_image(m->A, lo, hi);
  }
  if (const auto * m = std::get_if<dyn::KoopmanLatent>(&model)) { return linear_image(m->K, lo, hi); }
  if (const auto * m = std::get_if<dyn::NetworkMap>(&model)) {
    if (dyn::input_dim(model) > 0) {
      throw Error(ErrorCode::UnsupportedModel, "interval propagation needs an autonomous map; close the loop first");
    }
    return net_image(m->net, lo, hi);
  }
  if (const auto * m = std::get_if<dyn::ClosedLoopMap>(&model)) {
    if (!m->open_map) {
      throw Error(ErrorCode::UnsupportedModel, "interval propagation of sampled continuous loops is not supported");
    }
    const auto [plo, phi] = net_image(m->policy, lo, hi);
    const Eigen::Index n = lo.size(), k = plo.size();
    Vector jlo(n + k), jhi(n + k);
    jlo << lo, plo;
    jhi << hi, phi;
    if (const auto * lin = std::get_if<dyn::LinearMap>(m->open_map.get())) {
      Matrix AB(n, n + k);
      AB << lin->A, lin->B;
      return linear_image(AB, jlo, jhi);
    }
    if (const auto * net = std::get_if<dyn::NetworkMap>(m->open_map.get())) { return net_image(net->net, jlo, jhi); }
    throw Error(ErrorCode::UnsupportedModel, "interval propagation supports linear or network open loops");
  }
  throw Error(ErrorCode::UnsupportedModel, "interval propagation does not support polynomial maps; use sampling");
}

double segment_distance(const Vector & a, const Vector & b, const Vector & x)
{
  const Vector d = b - a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0 ? std::clamp((x - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (a + t * d - x).norm();
}

double polygon_distance(const geom::PointSet & hull, const Vector & x)
{
  const auto & v = hull.points;
  if (v.size() == 1) { return (v[0] - x).norm(); }
  bool inside = v.size() >= 3;
  double best = kInf;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vector & a = v[i];
    const Vector & b = v[(i + 1) % v.size()];
    const double cross = (b(0) - a(0)) * (x(1) - a(1)) - (b(1) - a(1)) * (x(0) - a(0));
    if (cross < 0) { inside = false; }
    best = std::min(best, segment_distance(a, b, x));
  }
  return inside ? 0.0 : best;
}

geom::SetRegion wrap(const std::vector<Vector> & pts, Template t, double eps)
{
  geom::PointSet cloud(pts);
  switch (t) {
  case Template::Interval: {
    Vector lo = pts.front(), hi = pts.front();
    for (const Vector & p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return geom::Box(lo.array() - eps, hi.array() + eps);
  }
  case Template::PcaBox: return geom::fit_oriented_box(cloud, eps);
  case Template::SampleHull: {
    if (cloud.dim() == 2) { return geom::hull_2d(cloud); }
    if (cloud.dim() == 1) {
      double lo = kInf, hi = -kInf;
      for (const Vector & p : pts) {
        lo = std::min(lo, p(0));
        hi = std::max(hi, p(0));
      }
      return geom::PointSet({Vector::Constant(1, lo), Vector::Constant(1, hi)});
    }
    return cloud;
  }
  case Template::BallUnion: return geom::BallUnion(std::move(cloud), eps);
  }
  return cloud;
}

std::vector<std::vector<Vector>> push(const dyn::DiscreteMap & model, const std::vector<Vector> & x0, int steps,
  int workers)
{
  std::vector<std::vector<Vector>> out(x0.size());
  parallel_for(x0.size(), workers, [&](std::size_t i) {
    std::vector<Vector> traj{x0[i]};
    for (int k = 1; k <= steps; ++k) {
      Vector next = dyn::step(model, traj.back());
      if (!next.allFinite()) {
        throw NonFiniteStateError(static_cast<std::size_t>(k), "sampled trajectory became non-finite");
      }
      traj.push_back(std::move(next));
    }
    out[i] = std::move(traj);
  });
  return out;
}

}  // namespace

const char * to_string(Template t)
{
  switch (t) {
  case Template::Interval: return "interval";
  case Template::PcaBox: return "pca_box";
  case Template::SampleHull: return "sample_hull";
  case Template::BallUnion: return "ball_union";
  }
  return "?";
}

Template template_from_string(const std::string & s)
{
  for (Template t : {Template::Interval, Template::PcaBox, Template::SampleHull, Template::BallUnion}) {
    if (s == to_string(t)) { return t; }
  }
  throw Error(ErrorCode::ConfigError, "unknown reach template '" + s + "'");
}

const char * to_string(Guarantee g)
{
  return g == Guarantee::SoundOverapprox ? "sound_overapprox" : "statistical";
}

void ReachConfig::validate() const
{
  if (steps < 1) { throw Error(ErrorCode::InvalidArgument, "reach steps must be >= 1"); }
  if (n_samples < 1) { throw Error(ErrorCode::InvalidArgument, "reach n_samples must be >= 1"); }
  if (!(eps >= 0)) { throw Error(ErrorCode::InvalidArgument, "reach eps must be >= 0"); }
  if (!(delta > 0 && delta < 1)) { throw Error(ErrorCode::InvalidArgument, "reach delta must be in (0, 1)"); }
  if (n_fresh < 0) { throw Error(ErrorCode::InvalidArgument, "reach n_fresh must be >= 0"); }
}

double hull_distance(const geom::PointSet & points, const Vector & x)
{
  require_dim(x.size(), points.dim(), "hull query");
  if (points.dim() == 1) {
    double lo = kInf, hi = -kInf;
    for (const Vector & p : points.points) {
      lo = std::min(lo, p(0));
      hi = std::max(hi, p(0));
    }
    return std::max({0.0, lo - x(0), x(0) - hi});
  }
  if (points.dim() == 2) { return polygon_distance(geom::hull_2d(points), x); }
  // min |V l - x|^2 over the simplex.
  const Matrix V = points.matrix();
  const auto k = V.cols();
  qp::QProblem p;
  p.P = 2.0 * V.transpose() * V;
  p.q = -2.0 * V.transpose() * x;
  p.A = Matrix::Zero(k + 1, k);
  p.A.topRows(k) = Matrix::Identity(k, k);
  p.A.row(k).setOnes();
  p.l = Vector::Zero(k + 1);
  p.u = Vector::Constant(k + 1, kInf);
  p.l(k) = 1.0;
  p.u(k) = 1.0;
  const qp::QpSolution sol = qp::solve(p, 1e-10);
  Vector lam = sol.z.cwiseMax(0.0);
  lam /= lam.sum();
  return (V * lam - x).norm();
}

bool ReachResult::contains(int k, const Vector & x) const
{
  const auto & r = regions.at(static_cast<std::size_t>(k));
  if (const auto * pts = std::get_if<geom::PointSet>(&r)) {
    const double pad = hull_pad.at(static_cast<std::size_t>(k));
    return hull_distance(*pts, x) <= pad + geom::kHullTol;
  }
  return geom::contains(r, x);
}

nlohmann::json ReachResult::to_json() const
{
  nlohmann::json j;
  j["method"] = method;
  j["template"] = to_string(templ);
  j["guarantee"] = to_string(guarantee);
  j["steps"] = steps();
  j["n_samples"] = n_samples;
  j["eps"] = eps;
  j["hull_pad"] = hull_pad;
  j["containment"] = containment;
  nlohmann::json rs = nlohmann::json::array();
  for (const auto & r : regions) { rs.push_back(geom::to_json(r)); }
  j["regions"] = rs;
  return j;
}

ReachResult propagate_interval(const dyn::DiscreteMap & model, const geom::Box & x0, int steps)
{
  if (steps < 1) { throw Error(ErrorCode::InvalidArgument, "reach steps must be >= 1"); }
  require_dim(x0.dim(), dyn::state_dim(model), "initial box");
  ReachResult res;
  res.method = "interval_propagation";
  res.templ = Template::Interval;
  res.guarantee = Guarantee::SoundOverapprox;
  res.regions.push_back(x0);
  res.hull_pad.push_back(0.0);
  Vector lo = x0.lower, hi = x0.upper;
  for (int k = 1; k <= steps; ++k) {
    std::tie(lo, hi) = interval_image(model, lo, hi);
    if (!lo.allFinite() || !hi.allFinite()) {
      throw NonFiniteStateError(static_cast<std::size_t>(k), "interval bounds became non-finite");
    }
    res.regions.emplace_back(geom::Box(lo, hi));
    res.hull_pad.push_back(0.0);
  }
  return res;
}

ReachResult reach_sampled(const dyn::DiscreteMap & model, const geom::SetRegion & x0, const ReachConfig & cfg)
{
  cfg.validate();
  require_dim(geom::dim(x0), dyn::state_dim(model), "initial region");
  std::mt19937_64 rng(cfg.seed);
  std::vector<Vector> starts;
  starts.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) { starts.push_back(geom::sample_uniform(x0, rng)); }
  const auto trajs = push(model, starts, cfg.steps, cfg.workers);

  ReachResult res;
  res.method = "sampled";
  res.templ = cfg.templ;
  res.guarantee = Guarantee::Statistical;
  res.n_samples = cfg.n_samples;
  res.eps = cfg.eps;
  res.regions.push_back(x0);
  res.hull_pad.push_back(0.0);
  for (int k = 1; k <= cfg.steps; ++k) {
    std::vector<Vector> pts;
    pts.reserve(trajs.size());
    for (const auto & t : trajs) { pts.push_back(t[static_cast<std::size_t>(k)]); }
    res.regions.push_back(wrap(pts, cfg.templ, cfg.eps));
    res.hull_pad.push_back(cfg.templ == Template::SampleHull ? cfg.eps : 0.0);
  }

  if (cfg.n_fresh > 0) {
    std::vector<Vector> fresh;
    for (int i = 0; i < cfg.n_fresh; ++i) { fresh.push_back(geom::sample_uniform(x0, rng)); }
    const auto ftrajs = push(model, fresh, cfg.steps, cfg.workers);
    for (int k = 0; k <= cfg.steps; ++k) {
      std::vector<char> inside(ftrajs.size(), 0);
      parallel_for(ftrajs.size(), cfg.workers,
        [&](std::size_t i) { inside[i] = res.contains(k, ftrajs[i][static_cast<std::size_t>(k)]) ? 1 : 0; });
      const auto hits = std::count(inside.begin(), inside.end(), 1);
      res.containment.push_back(static_cast<double>(hits) / static_cast<double>(ftrajs.size()));
    }
  }
  return res;
}

std::int64_t sample_size(double eps, double delta, double lipschitz, double diameter, int dim)
{
  if (!(eps > 0 && delta > 0 && delta < 1 && lipschitz > 0 && diameter > 0 && dim > 0)) {
    throw Error(ErrorCode::InvalidArgument, "sample_size needs eps, L, D > 0, delta in (0, 1) and dim >= 1");
  }
  const double d = static_cast<double>(dim);
  const double log_m = d * std::log(2.0 * lipschitz * diameter * std::sqrt(d) / eps);
  const double n = std::exp(log_m) * (log_m - std::log(delta));
  constexpr double kMax = 9007199254740992.0;  // 2^53
  if (!std::isfinite(n) || n > kMax) {
    throw Error(ErrorCode::Overflow, "sample size overflows; choose a coarser eps");
  }
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(n)));
}

double epsilon_for_budget(std::int64_t budget, double delta, double lipschitz, double diameter, int dim)
{
  if (budget < 1) { throw Error(ErrorCode::InvalidArgument, "sample budget must be >= 1"); }
  auto fits = [&](double eps) {
    try {
      return sample_size(eps, delta, lipschitz, diameter, dim) <= budget;
    } catch (const Error & e) {
      if (e.code() == ErrorCode::Overflow) { return false; }
      throw;
    }
  };
  double hi = 2.0 * lipschitz * diameter * std::sqrt(static_cast<double>(dim));
  while (!fits(hi)) { hi *= 2.0; }
  double lo = hi;
  while (fits(lo)) { lo *= 0.5; }
  for (int i = 0; i < 200 && hi / lo > 1.0 + 1e-12; ++i) {
    const double mid = std::sqrt(lo * hi);
    (fits(mid) ? hi : lo) = mid;
  }
  return hi;
}

bool InvariantEstimate::contains(const Vector & x) const { return region && geom::contains(*region, x); }

nlohmann::json InvariantEstimate::to_json() const
{
  nlohmann::json j;
  j["guarantee"] = "statistical";
  j["oracle"] = {{"r", oracle.r}, {"T", oracle.T}};
  j["x_star"] = json_of(x_star);
  j["recurrence_verified"] = recurrence_verified;
  j["n_positive"] = n_positive;
  j["n_samples"] = n_samples;
  j["region"] = region ? geom::to_json(*region) : nlohmann::json(nullptr);
  nlohmann::json f = nlohmann::json::array();
  for (const Vector & v : recurrence_failures) { f.push_back(json_of(v)); }
  j["recurrence_failures"] = f;
  return j;
}

InvariantEstimate estimate_invariant(const dyn::DiscreteMap & model, const geom::Box & domain, const Vector & x_star,
  const ReachConfig & cfg, const InvariantOracle & oracle)
{
  cfg.validate();
  if (!(oracle.r > 0) || oracle.T < 1) {
    throw Error(ErrorCode::InvalidArgument, "invariant oracle needs r > 0 and T >= 1");
  }
  const Eigen::Index n = dyn::state_dim(model);
  require_dim(x_star.size(), n, "equilibrium");
  require_dim(domain.dim(), n, "invariant domain");
  if (dyn::input_dim(model) > 0) { throw Error(ErrorCode::UnsupportedModel, "invariant estimation needs an autonomous map"); }
  if ((dyn::step(model, x_star) - x_star).lpNorm<Eigen::Infinity>() > 1e-8) {
    throw Error(ErrorCode::NotFixedPoint, "x_star is not a fixed point of the map");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<Vector> samples;
  for (int i = 0; i < cfg.n_samples; ++i) { samples.push_back(geom::sample_uniform(domain, rng)); }
  std::vector<char> label(samples.size(), 0);
  parallel_for(samples.size(), cfg.workers, [&](std::size_t i) {
    Vector x = samples[i];
    bool reached = (x - x_star).norm() <= oracle.r;
    for (int t = 1; t <= oracle.T; ++t) {
      x = dyn::step(model, x);
      if (!x.allFinite() || !geom::contains(domain, x)) { return; }
      reached = reached || (x - x_star).norm() <= oracle.r;
    }
    label[i] = reached ? 1 : 0;
  });

  InvariantEstimate est;
  est.oracle = oracle;
  est.x_star = x_star;
  est.n_samples = cfg.n_samples;
  std::vector<Vector> pos;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (label[i]) { pos.push_back(samples[i]); }
  }
  est.n_positive = static_cast<int>(pos.size());
  if (pos.empty()) { return est; }
  est.region = geom::BallUnion(geom::PointSet(pos), cfg.eps);

  std::vector<char> ok(pos.size(), 0);
  parallel_for(pos.size(), cfg.workers, [&](std::size_t i) {
    const Vector y = dyn::step(model, pos[i]);
    ok[i] = ((y - x_star).norm() <= oracle.r || geom::contains(*est.region, y)) ? 1 : 0;
  });
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (!ok[i]) { est.recurrence_failures.push_back(pos[i]); }
  }
  est.recurrence_verified = est.recurrence_failures.empty();
  return est;
}

std::string regions_csv(const ReachResult & r)
{
  std::ostringstream os;
  os.precision(17);
  const Eigen::Index n = geom::dim(r.regions.front());
  os << "step,radius";
  for (Eigen::Index i = 0; i < n; ++i) { os << ",x" << i; }
  os << '\n';
  auto row = [&](int k, double radius, const Vector & p) {
    os << k << ',' << radius;
    for (Eigen::Index i = 0; i < p.size(); ++i) { os << ',' << p(i); }
    os << '\n';
  };
  for (int k = 0; k <= r.steps(); ++k) {
    const auto & reg = r.regions[static_cast<std::size_t>(k)];
    const double pad = r.hull_pad[static_cast<std::size_t>(k)];
    if (const auto * b = std::get_if<geom::Box>(&reg)) {
      for (const Vector & p : geom::corners(*b).points) { row(k, 0.0, p); }
    } else if (const auto * ob = std::get_if<geom::OrientedBox>(&reg)) {
      for (const Vector & p : geom::corners(*ob).points) { row(k, 0.0, p); }
    } else if (const auto * ps = std::get_if<geom::PointSet>(&reg)) {
      for (const Vector & p : ps->points) { row(k, pad, p); }
    } else if (const auto * bu = std::get_if<geom::BallUnion>(&reg)) {
      for (const Vector & p : bu->centers.points) { row(k, bu->radius, p); }
    } else {
      // Polytopes are exported through their bounding box corners.
      for (const Vector & p : geom::corners(geom::bounding_box(reg)).points) { row(k, 0.0, p); }
    }
  }
  return os.str();
}

}  // namespace certkit::reach
