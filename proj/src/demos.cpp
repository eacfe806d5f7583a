#include <cmath>
#include <numbers>
#include <random>

#include "certkit/certify.hpp"
#include "certkit/cli.hpp"
#include "certkit/conformal.hpp"
#include "certkit/dyn.hpp"
#include "certkit/error.hpp"
#include "certkit/geom.hpp"
#include "certkit/gpphs.hpp"
#include "certkit/reach.hpp"

namespace certkit::cli {

using json = nlohmann::json;

namespace {

std::uint64_t pick_seed(const RunContext & ctx, std::uint64_t fallback) { return ctx.seed.value_or(fallback); }

// x' = u with h(x) = 1 - x, u in [-2, 2] and a sinusoidal nominal input that
// keeps pushing into the boundary.
JobOutput integrator_cbf(const RunContext & ctx)
{
  const json cfg = {
    {"task", "filter-sim"},
    {"filter", "cbf"},
    {"system", {{"kind", "ode"}, {"drift", {{"kind", "linear"}, {"A", {{0.0}}}}}, {"B", {{1.0}}}}},
    {"barrier", {{"kind", "affine"}, {"a", {-1.0}}, {"c", 1.0}, {"kappa", 1.0}}},
    {"u_box", {{"lower", {-2.0}}, {"upper", {2.0}}}},
    {"x0", {0.0}},
    {"dt", 1e-3},
    {"steps", 100000},
    {"nominal", {{"u", {0.5}}, {"amplitude", 2.0}, {"omega", 2.0 * std::numbers::pi / 5.0}}},
    {"write_trajectory", false},
  };
  JobOutput out = run(cfg, ctx);
  out.report.task = "demo:integrator-cbf";
  out.report.seed = pick_seed(ctx, 0);
  return out;
}

// Kinematic bicycle over a 5-step horizon. Predictions roll out the nominal
// inputs; the realized trajectory sees Gaussian input noise. Rectangles are
// calibrated per step and coverage is measured on a disjoint test split.
JobOutput bicycle_conformal(const RunContext & ctx)
{
  const std::uint64_t seed = pick_seed(ctx, 11);
  constexpr int kHorizon = 5, kCal = 500, kTest = 1000;
  constexpr double kDt = 0.2, kDelta = 0.1, kSlack = 0.02;
  const dyn::ContinuousModel model = dyn::BicycleModel(2.5, 0.5, 3.0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi), speed(5.0, 10.0),
    steer(-0.2, 0.2), accel(-1.0, 1.0);
  std::normal_distribution<double> steer_noise(0.0, 0.05), accel_noise(0.0, 0.5);

  auto episode = [&] {
    Vector x0(4);
    x0 << 0.0, 0.0, heading(rng), speed(rng);
    Vector u(2);
    u << steer(rng), accel(rng);
    std::vector<Vector> nominal(kHorizon, u), noisy;
    for (int k = 0; k < kHorizon; ++k) {
      Vector w(2);
      w << steer_noise(rng), accel_noise(rng);
      noisy.push_back(u + w);
    }
    const Trajectory pred = dyn::simulate_ode(model, x0, nominal, kDt);
    const Trajectory act = dyn::simulate_ode(model, x0, noisy, kDt);
    std::vector<std::pair<double, double>> errs;
    for (int k = 1; k <= kHorizon; ++k) {
      const Vector & p = pred.states[static_cast<std::size_t>(k)];
      errs.push_back(conformal::rotated_rect_score(p.head(3), act.states[static_cast<std::size_t>(k)].head(2)));
    }
    return errs;
  };

  std::vector<std::vector<std::pair<double, double>>> cal(kHorizon), test(kHorizon);
  for (int i = 0; i < kCal; ++i) {
    const auto e = episode();
    for (int k = 0; k < kHorizon; ++k) { cal[static_cast<std::size_t>(k)].push_back(e[static_cast<std::size_t>(k)]); }
  }
  for (int i = 0; i < kTest; ++i) {
    const auto e = episode();
    for (int k = 0; k < kHorizon; ++k) { test[static_cast<std::size_t>(k)].push_back(e[static_cast<std::size_t>(k)]); }
  }

  JobOutput out;
  Report & rep = out.report;
  rep.task = "demo:bicycle-conformal";
  rep.seed = seed;
  const auto cals = conformal::calibrate_horizon(cal, kDelta);
  json cj = json::array();
  for (int k = 0; k < kHorizon; ++k) {
    const auto & c = cals[static_cast<std::size_t>(k)];
    int hit = 0;
    for (const auto & [a, b] : test[static_cast<std::size_t>(k)]) { hit += c.covers(a, b) ? 1 : 0; }
    const double cov = static_cast<double>(hit) / kTest;
    rep.add("coverage_step_" + std::to_string(k + 1), cov >= 1.0 - kDelta - kSlack, cov, 1.0 - kDelta - kSlack,
      "test coverage of the calibrated rectangle");
    json step = c.to_json();
    step["lon"].erase("scores");
    step["lat"].erase("scores");
    step["coverage"] = cov;
    cj.push_back(step);
  }
  rep.data["calibration"] = cj;
  rep.data["n_cal"] = kCal;
  rep.data["n_test"] = kTest;
  rep.data["delta"] = kDelta;
  return out;
}

// Random latent operators through the SVD clamp with lambda_max = 0.99.
JobOutput koopman_stability(const RunContext & ctx)
{
  const std::uint64_t seed = pick_seed(ctx, 3);
  constexpr int kDim = 4, kOps = 20, kSteps = 200;
  constexpr double kLmax = 0.99;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
    Matrix M(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) { M(i, j) = gauss(rng); }
    }
    return M;
  };

  int non_schur = 0;
  double worst_rho = 0.0, worst_excess = -kInf, worst_defect = 0.0;
  json radii = json::array();
  for (int t = 0; t < kOps; ++t) {
    const Matrix U = Eigen::HouseholderQR<Matrix>(gaussian(kDim, kDim)).householderQ();
    const Matrix V = Eigen::HouseholderQR<Matrix>(gaussian(kDim, kDim)).householderQ();
    worst_defect = std::max({worst_defect, certify::orthogonality_defect(U), certify::orthogonality_defect(V)});
    const Matrix K = certify::svd_clamp({3.0 * gaussian(kDim, 1).col(0), 0.0, kLmax}, U, V);
    const double rho = certify::spectral_radius(K);
    radii.push_back(rho);
    worst_rho = std::max(worst_rho, rho);
    non_schur += certify::is_schur(K) ? 0 : 1;

    Vector x = gaussian(kDim, 1).col(0);
    x *= std::pow(unif(rng), 1.0 / kDim) / x.norm();
    const double n0 = x.norm();
    for (int k = 1; k <= kSteps; ++k) {
      x = K * x;
      worst_excess = std::max(worst_excess, x.norm() - (std::pow(kLmax, k) * n0 + 1e-9));
    }
  }

  JobOutput out;
  Report & rep = out.report;
  rep.task = "demo:koopman-stability";
  rep.seed = seed;
  rep.add("all_schur", non_schur == 0, non_schur, 0, "clamped operators failing is_schur");
  rep.add("spectral_radius", worst_rho <= kLmax, worst_rho, kLmax, "largest spectral radius");
  rep.add("rollout_bound", worst_excess <= 0.0, worst_excess, 0.0,
    "max of |x_k| - (0.99^k |x_0| + 1e-9) over 200-step rollouts");
  rep.add("orthogonality_defect", worst_defect <= 1e-12, worst_defect, 1e-12, "QR factors used as U and V");
  rep.data["spectral_radii"] = radii;
  return out;
}

// Undamped unit mass-spring, H = |x|^2 / 2. Ten trajectories are sampled
// densely, differentiated with the derivative filter and thinned to five
// interior samples each (N = 50).
JobOutput gp_massspring(const RunContext & ctx)
{
  const std::uint64_t seed = pick_seed(ctx, 5);
  constexpr int kTraj = 10, kPer = 5, kDense = 101;
  constexpr double kDt = 0.01;
  Matrix J(2, 2), R = Matrix::Zero(2, 2), P = Matrix::Identity(2, 2);
  J << 0.0, 1.0, -1.0, 0.0;
  json sys = {{"kind", "ode"}, {"drift", {{"kind", "linear"}, {"A", json_of(Matrix(J * P))}}}};
  const dyn::ContinuousModel model = dyn::continuous_model_from_json(sys);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix X(kTraj * kPer, 2), Xdot(kTraj * kPer, 2);
  for (int t = 0; t < kTraj; ++t) {
    Vector x0(2);
    x0 << unif(rng), unif(rng);
    const Trajectory tr = dyn::simulate_ode(model, x0, std::vector<Vector>(kDense - 1, Vector()), kDt);
    Vector times(kDense);
    Matrix S(kDense, 2);
    for (int k = 0; k < kDense; ++k) {
      times(k) = tr.times[static_cast<std::size_t>(k)];
      S.row(k) = tr.states[static_cast<std::size_t>(k)].transpose();
    }
    const Matrix D = gpphs::derivative_filter(times, S);
    for (int i = 0; i < kPer; ++i) {
      const int k = 10 + 20 * i;
      X.row(t * kPer + i) = S.row(k);
      Xdot.row(t * kPer + i) = D.row(k);
    }
  }
  Matrix grid(21 * 21, 2);
  for (int i = 0; i < 21; ++i) {
    for (int j = 0; j < 21; ++j) { grid.row(i * 21 + j) << -1.0 + 0.1 * i, -1.0 + 0.1 * j; }
  }
  const json cfg = {
    {"task", "gpphs"},
    {"dataset", {{"X", json_of(X)}, {"Xdot", json_of(Xdot)}, {"noise_var", 1e-6}}},
    {"init", {{"sigma_f", 1.0}, {"lengthscales", {4.0, 4.0}}, {"phi_J", {1.0}}, {"phi_R", {0.0, 0.0, 0.0}}}},
    {"budget", 300},
    {"query", json_of(grid)},
    {"truth", {{"J", json_of(J)}, {"R", json_of(R)}, {"P", json_of(P)}}},
    {"rms_tol", 0.05},
  };
  JobOutput out = run(cfg, ctx);
  out.report.task = "demo:gp-massspring";
  out.report.seed = seed;
  return out;
}

// 45-degree rotation of [-1, 1]^2: interval boxes double in area every step
// while the sampled hull keeps its area.
JobOutput reach_rotation(const RunContext & ctx)
{
  const std::uint64_t seed = pick_seed(ctx, 1);
  constexpr int kSteps = 4;
  const double c = std::cos(std::numbers::pi / 4.0), s = std::sin(std::numbers::pi / 4.0);
  Matrix A(2, 2);
  A << c, -s, s, c;
  const dyn::DiscreteMap model = dyn::LinearMap{A, Matrix(2, 0)};
  const geom::Box x0 = geom::Box::cube(2, -1.0, 1.0);

  JobOutput out;
  Report & rep = out.report;
  rep.task = "demo:reach-rotation";
  rep.seed = seed;

  const reach::ReachResult ibp = reach::propagate_interval(model, x0, kSteps);
  json ratios = json::array();
  for (int k = 1; k <= kSteps; ++k) {
    const double ratio = geom::bounding_box(ibp.regions[static_cast<std::size_t>(k)]).volume() / x0.volume();
    const double need = std::pow(std::numbers::sqrt2, k);
    ratios.push_back(ratio);
    rep.add("interval_volume_ratio_step_" + std::to_string(k), ratio >= need, ratio, need,
      "interval box area over initial area");
  }

  reach::ReachConfig rc;
  rc.steps = kSteps;
  rc.templ = reach::Template::SampleHull;
  rc.n_samples = 1000;
  rc.seed = seed;
  rc.workers = ctx.workers;
  const reach::ReachResult sampled = reach::reach_sampled(model, x0, rc);
  const double a0 = geom::polygon_area(std::get<geom::PointSet>(sampled.regions[1]));
  json areas = json::array();
  double worst = 0.0;
  for (int k = 1; k <= kSteps; ++k) {
    const double a = geom::polygon_area(std::get<geom::PointSet>(sampled.regions[static_cast<std::size_t>(k)]));
    areas.push_back(a);
    worst = std::max(worst, std::abs(a - a0) / a0);
  }
  rep.add("hull_area_constant", worst <= 0.05, worst, 0.05, "max relative change of the sampled hull area");

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    Vector x = geom::sample_uniform(x0, rng);
    for (int k = 1; k <= kSteps; ++k) {
      x = dyn::step(model, x);
      violations += ibp.contains(k, x) ? 0 : 1;
    }
  }
  rep.add("interval_soundness", violations == 0, violations, 0, "pushed samples outside the interval boxes");
  rep.data["interval_volume_ratio"] = ratios;
  rep.data["hull_area"] = areas;
  rep.data["interval"] = ibp.to_json();
  return out;
}

}  // namespace

JobOutput demo(const std::string & name, const RunContext & ctx)
{
  if (name == "integrator-cbf") { return integrator_cbf(ctx); }
  if (name == "bicycle-conformal") { return bicycle_conformal(ctx); }
  if (name == "koopman-stability") { return koopman_stability(ctx); }
  if (name == "gp-massspring") { return gp_massspring(ctx); }
  if (name == "reach-rotation") { return reach_rotation(ctx); }
  throw Error(ErrorCode::UnknownDemo, "no demo named '" + name + "'");
}

}  // namespace certkit::cli
