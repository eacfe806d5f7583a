#include "certkit/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <unistd.h>

#include "certkit/certify.hpp"
#include "certkit/conformal.hpp"
#include "certkit/dyn.hpp"
#include "certkit/error.hpp"
#include "certkit/filter.hpp"
#include "certkit/geom.hpp"
#include "certkit/gpphs.hpp"
#include "certkit/milp.hpp"
#include "certkit/nn.hpp"
#include "certkit/reach.hpp"

namespace certkit::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in) { throw Error(ErrorCode::ConfigError, "cannot open '" + p.string() + "'"); }
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path resolve(const std::string & s, const RunContext & ctx)
{
  const fs::path p(s);
  return p.is_absolute() ? p : ctx.base_dir / p;
}

/// Inline object or a path to a JSON file.
json ref(const json & cfg, const char * key, const RunContext & ctx)
{
  const json & v = cfg.at(key);
  if (v.is_string()) { return load_json(resolve(v.get<std::string>(), ctx)); }
  return v;
}

std::uint64_t seed_of(const json & cfg, const RunContext & ctx, std::uint64_t fallback)
{
  if (ctx.seed) { return *ctx.seed; }
  return cfg.value("seed", fallback);
}

void merge(Report & into, const Report & from, const std::string & key)
{
  for (const Check & c : from.checks) { into.checks.push_back(c); }
  into.data[key] = from.data;
}

std::vector<Vector> points_of(const json & j)
{
  const Matrix M = matrix_from_json(j);
  std::vector<Vector> out;
  for (Eigen::Index i = 0; i < M.rows(); ++i) { out.push_back(M.row(i).transpose()); }
  return out;
}

geom::PointSet sample_box(const geom::Box & b, int n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::vector<Vector> pts;
  for (int i = 0; i < n; ++i) { pts.push_back(geom::sample_uniform(b, rng)); }
  return geom::PointSet(std::move(pts));
}

/// u_nom(t, x) = K x + u + amplitude * sin(omega t).
struct Nominal
{
  Matrix K;
  Vector u;
  double amplitude{0.0};
  double omega{0.0};

  static Nominal from_json(const json & j, Eigen::Index n, Eigen::Index m)
  {
    Nominal nom;
    nom.K = j.contains("K") ? matrix_from_json(j.at("K")) : Matrix::Zero(m, n);
    nom.u = j.contains("u") ? vector_from_json(j.at("u")) : Vector::Zero(m);
    nom.amplitude = j.value("amplitude", 0.0);
    nom.omega = j.value("omega", 0.0);
    require_dim(nom.K.rows(), m, "nominal K rows");
    require_dim(nom.K.cols(), n, "nominal K cols");
    require_dim(nom.u.size(), m, "nominal u");
    return nom;
  }

  Vector operator()(double t, const Vector & x) const
  {
    return K * x + u + Vector::Constant(u.size(), amplitude * std::sin(omega * t));
  }
};

filter::BarrierSpec barrier_from_json(const json & j)
{
  const std::string k = j.at("kind").get<std::string>();
  const double kappa = j.value("kappa", 1.0);
  if (k == "affine") { return filter::BarrierSpec::affine(vector_from_json(j.at("a")), j.value("c", 0.0), kappa); }
  if (k == "quadratic") {
    return filter::BarrierSpec::quadratic(matrix_from_json(j.at("Q")), vector_from_json(j.at("a")), j.value("c", 0.0),
      kappa);
  }
  if (k == "box_distance") { return filter::BarrierSpec::box_distance(geom::box_from_json(j.at("box")), kappa); }
  throw Error(ErrorCode::ConfigError, "unknown barrier kind '" + k + "'");
}

// ---------------------------------------------------------------- certify

JobOutput task_certify(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "certify";
  const std::uint64_t seed = seed_of(cfg, ctx, 0);
  rep.seed = seed;

  if (cfg.contains("model")) {
    const json mj = ref(cfg, "model", ctx);
    if (dyn::is_continuous_json(mj)) {
      const dyn::ContinuousModel model = dyn::continuous_model_from_json(mj);
      const auto * ode = std::get_if<dyn::ControlAffineODE>(&model);
      if (ode && std::holds_alternative<dyn::PhsSystem>(ode->drift) && cfg.contains("x0")) {
        const auto & phs = std::get<dyn::PhsSystem>(ode->drift);
        const int steps = cfg.value("steps", 1000);
        const Vector u = cfg.contains("u") ? vector_from_json(cfg.at("u")) : Vector::Zero(ode->input_dim());
        const Trajectory traj = dyn::simulate_ode(model, vector_from_json(cfg.at("x0")),
          std::vector<Vector>(static_cast<std::size_t>(steps), u), cfg.value("dt", 1e-3), cfg.value("substeps", 1));
        merge(rep, certify::phs_checks(phs, traj), "phs");
        out.artifacts.emplace_back("trajectory.csv", dyn::trajectory_csv(traj));
      }
      if (cfg.contains("samples")) {
        const auto pts = sample_box(geom::box_from_json(cfg["samples"].at("region")), cfg["samples"].value("n", 100), seed);
        merge(rep, certify::conservation_check(model, pts), "conservation");
      }
    } else {
      const dyn::DiscreteMap model = dyn::discrete_map_from_json(mj);
      const Matrix * A = nullptr;
      if (const auto * l = std::get_if<dyn::LinearMap>(&model)) { A = &l->A; }
      if (const auto * k = std::get_if<dyn::KoopmanLatent>(&model)) { A = &k->K; }
      if (A) {
        const double rho = certify::spectral_radius(*A);
        rep.add("schur_stable", certify::is_schur(*A), rho, 1.0 - 1e-12, "spectral radius < 1");
        rep.data["spectral_radius"] = rho;
        const Eigen::VectorXcd ev = certify::eigenvalues(*A);
        json evs = json::array();
        for (Eigen::Index i = 0; i < ev.size(); ++i) { evs.push_back({ev(i).real(), ev(i).imag()}); }
        rep.data["eigenvalues"] = evs;
      }
      if (const auto * n = std::get_if<dyn::NetworkMap>(&model)) {
        const double L = nn::lipschitz_bound(n->net);
        rep.add("lipschitz_bound", std::isfinite(L), L, kInf, "certified 2-norm Lipschitz upper bound");
      }
      if (cfg.contains("samples")) {
        const auto pts = sample_box(geom::box_from_json(cfg["samples"].at("region")), cfg["samples"].value("n", 100), seed);
        if (const auto * p = std::get_if<dyn::PolynomialMap>(&model)) {
          merge(rep, certify::quadratic_energy_check(*p, pts), "quadratic_energy");
        }
        merge(rep, certify::conservation_check(model, pts), "conservation");
      }
      if (cfg.contains("lyapunov")) {
        const json & lj = cfg.at("lyapunov");
        const nn::LyapunovCandidate V = nn::lyapunov_from_json(lj.at("V"));
        const auto starts = sample_box(geom::box_from_json(lj.at("region")), lj.value("trajectories", 50), seed);
        std::vector<std::vector<Vector>> trajs;
        for (const Vector & x0 : starts.points) {
          std::vector<Vector> t{x0};
          for (int k = 0; k < lj.value("steps", 20); ++k) { t.push_back(dyn::step(model, t.back())); }
          trajs.push_back(std::move(t));
        }
        const double loss = certify::lyapunov_decrease_loss(V, trajs);
        const double tol = lj.value("tolerance", 0.0);
        rep.add("lyapunov_decrease", loss <= tol, loss, tol, "sum of squared decrease violations along sampled rollouts");
      }
    }
  }
  if (cfg.contains("svd_clamp")) {
    const json & s = cfg.at("svd_clamp");
    certify::SvdClampSpec spec{vector_from_json(s.at("raw")), s.value("lambda_min", 0.0), s.value("lambda_max", 0.99)};
    const Matrix K = certify::svd_clamp(spec, matrix_from_json(s.at("U")), matrix_from_json(s.at("V")));
    const double rho = certify::spectral_radius(K);
    rep.add("svd_clamp_schur", certify::is_schur(K), rho, 1.0 - 1e-12, "spectral radius of the clamped operator");
    rep.data["svd_clamp"] = {{"K", json_of(K)}, {"spectral_radius", rho}};
  }
  if (rep.checks.empty()) { throw Error(ErrorCode::ConfigError, "certify job produced no checks; give a model or svd_clamp"); }
  return out;
}

// ---------------------------------------------------------------- reach

JobOutput task_reach(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "reach";
  const dyn::DiscreteMap model = dyn::discrete_map_from_json(ref(cfg, "model", ctx));
  const std::string mode = cfg.value("mode", "interval");
  const std::uint64_t seed = seed_of(cfg, ctx, 0);
  rep.seed = seed;

  reach::ReachConfig rc;
  rc.steps = cfg.value("steps", 1);
  rc.n_samples = cfg.value("n_samples", 1000);
  rc.delta = cfg.value("delta", 0.1);
  rc.seed = seed;
  rc.workers = ctx.workers;
  rc.n_fresh = cfg.value("n_fresh", 1000);
  rc.templ = reach::template_from_string(cfg.value("template", "sample_hull"));
  if (cfg.contains("eps") && cfg["eps"].is_string() && cfg["eps"] == "auto") {
    const geom::Box bb = geom::bounding_box(geom::region_from_json(cfg.at("initial")));
    const double L = cfg.at("lipschitz").get<double>();
    rc.eps = reach::epsilon_for_budget(rc.n_samples, rc.delta, std::pow(std::max(L, 1e-300), rc.steps),
      (bb.upper - bb.lower).norm(), static_cast<int>(bb.dim()));
  } else {
    rc.eps = cfg.value("eps", 0.0);
  }
  rep.data["mode"] = mode;

  if (mode == "interval") {
    const geom::Box x0 = geom::box_from_json(cfg.at("initial"));
    const reach::ReachResult res = reach::propagate_interval(model, x0, rc.steps);
    const int n_check = cfg.value("soundness_samples", 1000);
    std::mt19937_64 rng(seed);
    int violations = 0;
    for (int i = 0; i < n_check; ++i) {
      Vector x = geom::sample_uniform(x0, rng);
      for (int k = 1; k <= rc.steps; ++k) {
        x = dyn::step(model, x);
        violations += res.contains(k, x) ? 0 : 1;
      }
    }
    rep.add("interval_soundness", violations == 0, violations, 0, "pushed samples outside the step boxes");
    rep.data["result"] = res.to_json();
    out.artifacts.emplace_back("regions.csv", reach::regions_csv(res));
  } else if (mode == "sampled") {
    const reach::ReachResult res = reach::reach_sampled(model, geom::region_from_json(cfg.at("initial")), rc);
    double worst = 1.0;
    for (std::size_t k = 1; k < res.containment.size(); ++k) { worst = std::min(worst, res.containment[k]); }
    rep.add("fresh_containment", worst >= 1.0 - rc.delta, worst, 1.0 - rc.delta,
      "smallest fraction of fresh trajectories inside the step estimate");
    rep.data["result"] = res.to_json();
    out.artifacts.emplace_back("regions.csv", reach::regions_csv(res));
  } else if (mode == "invariant") {
    reach::InvariantOracle oracle{cfg.value("r", 0.01), cfg.value("T", 50)};
    const reach::InvariantEstimate est = reach::estimate_invariant(model, geom::box_from_json(cfg.at("domain")),
      vector_from_json(cfg.at("x_star")), rc, oracle);
    rep.add("recurrence", est.recurrence_verified, static_cast<double>(est.recurrence_failures.size()), 0,
      "positive samples whose one-step image leaves the estimate");
    rep.data["result"] = est.to_json();
  } else {
    throw Error(ErrorCode::ConfigError, "reach mode must be interval, sampled or invariant");
  }
  return out;
}

// ---------------------------------------------------------------- verify-nn

JobOutput task_verify_nn(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "verify-nn";
  const std::string prop = cfg.value("property", "positivity");
  const double tol = cfg.value("tol", 1e-6);
  const int budget = cfg.value("node_budget", 10000);
  const geom::Box region = geom::box_from_json(cfg.at("region"));
  std::optional<geom::Box> exclude;
  if (cfg.contains("exclude") && !cfg["exclude"].is_null()) { exclude = geom::box_from_json(cfg["exclude"]); }

  auto record = [&](const milp::VerifyOutcome & o, const std::string & name, bool pass, double value, double t) {
    Check & c = rep.add(name, pass, value, t, std::string("branch and bound: ") + milp::to_string(o.status));
    if (o.counterexample && !pass) { c.witness = *o.counterexample; }
    rep.data["outcome"] = o.to_json();
  };

  // Witness value when falsified, proven lower bound otherwise.
  auto reported = [](const milp::VerifyOutcome & o) {
    return o.status == milp::VerifyStatus::Falsified ? o.value : o.bound;
  };

  if (prop == "icnn") {
    const nn::Icnn net = nn::icnn_from_json(ref(cfg, "network", ctx));
    merge(rep, nn::check_icnn(net, region, cfg.value("trials", 1000), seed_of(cfg, ctx, 0)), "icnn");
    return out;
  }
  const nn::Mlp net = nn::mlp_from_json(ref(cfg, "network", ctx));
  if (prop == "positivity") {
    const milp::VerifyOutcome o = milp::verify_positivity(net, region, exclude, tol, budget);
    record(o, "positivity", o.status == milp::VerifyStatus::Certified, reported(o), 0.0);
  } else if (prop == "maximum") {
    const double threshold = cfg.at("threshold").get<double>();
    const milp::VerifyOutcome o = milp::maximize_output(net, region, tol, budget);
    record(o, "maximum_below_threshold", o.status == milp::VerifyStatus::Certified && o.bound <= threshold, o.bound,
      threshold);
  } else if (prop == "lyapunov_decrease") {
    const dyn::DiscreteMap model = dyn::discrete_map_from_json(ref(cfg, "model", ctx));
    const milp::VerifyOutcome o = milp::verify_lyapunov_decrease(net, model, region, exclude, tol, budget);
    record(o, "lyapunov_decrease", o.status == milp::VerifyStatus::Certified, reported(o), 0.0);
  } else {
    throw Error(ErrorCode::ConfigError, "verify-nn property must be positivity, maximum, lyapunov_decrease or icnn");
  }
  if (cfg.value("export_lp", false)) { out.artifacts.emplace_back("model.lp", milp::encode_network(net, region).to_lp()); }
  return out;
}

// ---------------------------------------------------------------- filter-sim

JobOutput task_filter_sim(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "filter-sim";
  const std::string kind = cfg.value("filter", "cbf");
  const int steps = cfg.value("steps", 1000);
  Vector x = vector_from_json(cfg.at("x0"));

  if (kind == "cbf") {
    const dyn::ContinuousModel model = dyn::continuous_model_from_json(ref(cfg, "system", ctx));
    const auto * sys = std::get_if<dyn::ControlAffineODE>(&model);
    if (!sys) { throw Error(ErrorCode::ConfigError, "CBF filtering needs a control-affine ode system"); }
    const filter::BarrierSpec barrier = barrier_from_json(cfg.at("barrier"));
    const geom::Box ubox = geom::box_from_json(cfg.at("u_box"));
    const Nominal nom = Nominal::from_json(cfg.value("nominal", json::object()), sys->state_dim(), sys->input_dim());
    const double dt = cfg.value("dt", 1e-3);
    filter::CbfFilter cbf;
    Trajectory traj;
    double min_h = barrier.h(x), passthrough_dev = 0.0;
    int interventions = 0;
    for (int k = 0; k < steps; ++k) {
      const double t = k * dt;
      const Vector un = nom(t, x);
      const Vector u = cbf.filter(*sys, x, un, barrier, ubox);
      const Vector gh = barrier.grad(x);
      const bool nominal_ok = (un.array() >= ubox.lower.array()).all() && (un.array() <= ubox.upper.array()).all() &&
        gh.dot(sys->f(x) + sys->g(x) * un) >= -barrier.kappa * barrier.h(x);
      if (nominal_ok) {
        passthrough_dev = std::max(passthrough_dev, (u - un).lpNorm<Eigen::Infinity>());
      } else {
        ++interventions;
      }
      traj.times.push_back(t);
      traj.states.push_back(x);
      traj.inputs.push_back(u);
      x = dyn::rk4_step(model, x, u, dt);
      if (!x.allFinite()) { throw NonFiniteStateError(static_cast<std::size_t>(k + 1), "CBF closed loop"); }
      min_h = std::min(min_h, barrier.h(x));
    }
    traj.times.push_back(steps * dt);
    traj.states.push_back(x);
    rep.add("barrier_nonnegative", min_h >= -1e-6, min_h, -1e-6, "min h(x) over the closed loop");
    rep.add("nominal_passthrough", passthrough_dev <= 1e-6, passthrough_dev, 1e-6,
      "max |u - u_nom| over steps where u_nom already satisfied the constraint");
    rep.data["interventions"] = interventions;
    rep.data["steps"] = steps;
    if (cfg.value("write_trajectory", steps <= 10000)) {
      out.artifacts.emplace_back("trajectory.csv", dyn::trajectory_csv(traj));
    }
    return out;
  }
  if (kind == "psf") {
    const dyn::DiscreteMap model = dyn::discrete_map_from_json(ref(cfg, "model", ctx));
    const json & pj = cfg.at("psf");
    filter::PsfConfig pc;
    pc.horizon = pj.value("horizon", 1);
    pc.state_set = geom::region_from_json(pj.at("state_set"));
    pc.input_set = geom::box_from_json(pj.at("input_set"));
    if (pj.contains("terminal_set")) { pc.terminal_set = geom::region_from_json(pj.at("terminal_set")); }
    pc.slack_weight = pj.value("slack_weight", 0.0);
    const Nominal nom = Nominal::from_json(cfg.value("nominal", json::object()), dyn::state_dim(model),
      dyn::input_dim(model));
    filter::PredictiveSafetyFilter psf(pc);
    json diags = json::array();
    int outside = 0, modified = 0;
    for (int k = 0; k < steps; ++k) {
      const filter::PsfResult r = psf.filter(model, x, nom(static_cast<double>(k), x));
      json d = r.diagnostics.to_json();
      d["u0"] = json_of(r.u0);
      diags.push_back(std::move(d));
      modified += r.diagnostics.modified ? 1 : 0;
      x = dyn::step(model, x, r.u0);
      outside += geom::contains(pc.state_set, x) ? 0 : 1;
    }
    rep.add("state_constraints", outside == 0, outside, 0, "closed-loop states outside the state set");
    rep.data["modified_steps"] = modified;
    rep.data["diagnostics"] = diags;
    rep.data["final_state"] = json_of(x);
    return out;
  }
  throw Error(ErrorCode::ConfigError, "filter must be cbf or psf");
}

// ---------------------------------------------------------------- conformal

JobOutput task_conformal(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "conformal";
  const double delta = cfg.value("delta", 0.1);
  const double slack = cfg.value("coverage_slack", 0.02);
  std::pair<double, double> tau{0.05, 0.95};
  if (cfg.contains("q_levels")) { tau = {cfg["q_levels"].at(0).get<double>(), cfg["q_levels"].at(1).get<double>()}; }

  if (cfg.contains("csv")) {
    const auto per_step = conformal::errors_from_csv(read_text(resolve(cfg.at("csv").get<std::string>(), ctx)));
    const auto cals = conformal::calibrate_horizon(per_step, delta, tau);
    json cj = json::array();
    for (const auto & c : cals) { cj.push_back(c.to_json()); }
    rep.data["calibration"] = cj;
    rep.data["pooling"] = "per_step";
    if (cfg.contains("test_csv")) {
      const auto test = conformal::errors_from_csv(read_text(resolve(cfg.at("test_csv").get<std::string>(), ctx)));
      for (std::size_t h = 0; h < std::min(test.size(), cals.size()); ++h) {
        if (test[h].empty()) { continue; }
        int hit = 0;
        for (const auto & [a, b] : test[h]) { hit += cals[h].covers(a, b) ? 1 : 0; }
        const double cov = static_cast<double>(hit) / static_cast<double>(test[h].size());
        rep.add("coverage_step_" + std::to_string(h), cov >= 1.0 - delta - slack, cov, 1.0 - delta - slack);
      }
    }
  } else {
    const auto scores = cfg.at("scores").get<std::vector<double>>();
    const conformal::ConformalCalibration cal = conformal::calibrate(scores, delta, tau);
    rep.data["calibration"] = cal.to_json();
    rep.add("calibrated", true, cal.E, 0.0, "finite-sample correction E");
    if (cfg.contains("test_scores")) {
      const auto test = cfg.at("test_scores").get<std::vector<double>>();
      int hit = 0;
      for (double s : test) { hit += conformal::covers(cal, s) ? 1 : 0; }
      const double cov = test.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(test.size());
      rep.add("coverage", cov >= 1.0 - delta - slack, cov, 1.0 - delta - slack);
    }
  }
  return out;
}

// ---------------------------------------------------------------- gpphs

JobOutput task_gpphs(const json & cfg, const RunContext & ctx)
{
  JobOutput out;
  Report & rep = out.report;
  rep.task = "gpphs";
  const json dj = ref(cfg, "dataset", ctx);
  gpphs::GpPhsDataset data;
  data.noise_var = dj.value("noise_var", 1e-6);
  if (dj.contains("csv")) {
    // t, x_1..x_d, u_1..u_m with the derivative filter applied per file.
    const Matrix M = [&] {
      std::istringstream in(read_text(resolve(dj.at("csv").get<std::string>(), ctx)));
      std::string line;
      std::getline(in, line);
      std::vector<std::vector<double>> rows;
      while (std::getline(in, line)) {
        if (line.empty()) { continue; }
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> r;
        while (std::getline(ls, cell, ',')) { r.push_back(std::stod(cell)); }
        rows.push_back(std::move(r));
      }
      if (rows.empty()) { throw Error(ErrorCode::InsufficientData, "dataset CSV has no rows"); }
      Matrix out_m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        require_dim(static_cast<Eigen::Index>(rows[i].size()), out_m.cols(), "dataset CSV row");
        for (std::size_t c = 0; c < rows[i].size(); ++c) { out_m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c]; }
      }
      return out_m;
    }();
    const Eigen::Index d = dj.at("state_dim").get<Eigen::Index>();
    data.X = M.middleCols(1, d);
    data.U = M.rightCols(M.cols() - 1 - d);
    data.Xdot = gpphs::derivative_filter(M.col(0), data.X);
  } else {
    data.X = matrix_from_json(dj.at("X"));
    data.Xdot = matrix_from_json(dj.at("Xdot"));
    if (dj.contains("U")) { data.U = matrix_from_json(dj.at("U")); }
  }
  const gpphs::PhsKernelParams init = gpphs::PhsKernelParams::from_json(cfg.at("init"));
  const gpphs::FitResult fr = gpphs::fit(data, init, cfg.value("budget", 300));
  rep.add("fit_finite", std::isfinite(fr.nlml), fr.nlml, kInf, "negative log marginal likelihood at the fitted point");
  rep.data["params"] = fr.params.to_json();
  rep.data["evaluations"] = fr.evaluations;
  rep.data["converged"] = fr.converged;

  if (cfg.contains("query")) {
    const auto q = points_of(cfg.at("query"));
    const gpphs::Posterior post = gpphs::posterior(fr.params, data, q);
    std::ostringstream csv;
    csv.precision(17);
    csv << "point";
    for (Eigen::Index i = 0; i < data.X.cols(); ++i) { csv << ",x" << i; }
    for (Eigen::Index i = 0; i < data.X.cols(); ++i) { csv << ",mean" << i; }
    for (Eigen::Index i = 0; i < data.X.cols(); ++i) { csv << ",var" << i; }
    csv << '\n';
    for (std::size_t k = 0; k < q.size(); ++k) {
      csv << k;
      for (Eigen::Index i = 0; i < q[k].size(); ++i) { csv << ',' << q[k](i); }
      for (Eigen::Index i = 0; i < q[k].size(); ++i) { csv << ',' << post.mean[k](i); }
      for (Eigen::Index i = 0; i < q[k].size(); ++i) { csv << ',' << post.cov[k](i, i); }
      csv << '\n';
    }
    out.artifacts.emplace_back("posterior.csv", csv.str());
    if (cfg.contains("truth")) {
      const json & t = cfg.at("truth");
      const Matrix JR = matrix_from_json(t.at("J")) - matrix_from_json(t.at("R"));
      const Matrix P = matrix_from_json(t.at("P"));
      double err = 0.0, norm = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) {
        const Vector f = JR * P * q[k];
        err += (post.mean[k] - f).squaredNorm();
        norm += f.squaredNorm();
      }
      const double rel = std::sqrt(err / std::max(norm, 1e-300));
      const double tol = cfg.value("rms_tol", 0.05);
      rep.add("field_rms_relative", rel <= tol, rel, tol, "posterior mean field against the true vector field");
    }
  }
  return out;
}

}  // namespace

nlohmann::json load_json(const fs::path & path)
{
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error & e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

void atomic_write(const fs::path & path, const std::string & content)
{
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) { throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'"); }
    os << content;
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::Io, "write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot rename into '" + path.string() + "'");
  }
}

int exit_code(const Report & r) { return r.passed() ? 0 : 1; }

JobOutput run(const nlohmann::json & config, const RunContext & ctx)
{
  try {
    if (!config.is_object()) { throw Error(ErrorCode::ConfigError, "config must be a JSON object"); }
    const std::string task = config.at("task").get<std::string>();
    JobOutput out;
    if (task == "certify") {
      out = task_certify(config, ctx);
    } else if (task == "reach") {
      out = task_reach(config, ctx);
    } else if (task == "verify-nn") {
      out = task_verify_nn(config, ctx);
    } else if (task == "filter-sim") {
      out = task_filter_sim(config, ctx);
    } else if (task == "conformal") {
      out = task_conformal(config, ctx);
    } else if (task == "gpphs") {
      out = task_gpphs(config, ctx);
    } else {
      throw Error(ErrorCode::ConfigError, "unknown task '" + task + "'");
    }
    out.report.data["config"] = config;
    return out;
  } catch (const json::exception & e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

int main_entry(int argc, const char * const * argv)
{
  CLI::App app{"certkit: verification, reachability and safety-filter jobs"};
  std::string config_path, out_path, demo_name;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  auto * cfg_opt = app.add_option("--config", config_path, "job config (JSON)");
  auto * demo_opt = app.add_option("--demo", demo_name, "bundled scenario")->check(CLI::IsMember(kDemos));
  cfg_opt->excludes(demo_opt);
  app.add_option("--out", out_path, "report path (JSON); stdout when omitted");
  app.add_option("--seed", seed, "override the config or demo seed");
  app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1, 1024));
  try {
    app.parse(argc, argv);
    if (config_path.empty() && demo_name.empty()) { throw CLI::RequiredError("--config or --demo"); }
  } catch (const CLI::ParseError & e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  RunContext ctx;
  ctx.seed = seed;
  ctx.workers = workers;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    JobOutput job;
    if (!demo_name.empty()) {
      job = demo(demo_name, ctx);
    } else {
      ctx.base_dir = fs::path(config_path).parent_path();
      if (ctx.base_dir.empty()) { ctx.base_dir = "."; }
      job = run(load_json(config_path), ctx);
    }
    job.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string text = job.report.to_json().dump(2) + "\n";
    if (out_path.empty()) {
      std::cout << text;
    } else {
      // Artifacts first so a report on disk implies its artifacts are complete.
      const fs::path out(out_path);
      const fs::path stem = out.parent_path() / out.stem();
      for (const auto & [name, content] : job.artifacts) { atomic_write(stem.string() + "." + name, content); }
      atomic_write(out, text);
      std::cerr << job.report.task << ": " << job.report.status() << " (" << job.report.checks.size() << " checks)\n";
    }
    if (const Check * c = job.report.first_failure()) {
      std::cerr << "violation: " << c->name << " value=" << c->value << " tolerance=" << c->tolerance << '\n';
    }
    return exit_code(job.report);
  } catch (const Error & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace certkit::cli
