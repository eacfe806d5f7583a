// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "certkit/certify.hpp"
#include "certkit/cli.hpp"
#include "certkit/conformal.hpp"
#include "certkit/dyn.hpp"
#include "certkit/filter.hpp"
#include "certkit/gpphs.hpp"
#include "certkit/milp.hpp"
#include "certkit/nn.hpp"
#include "certkit/qp.hpp"
#include "certkit/reach.hpp"
#include "oracles.hpp"

using namespace certkit;
using geom::Box;

namespace {

struct Outcome
{
  bool pass{true};
  std::string detail;
};

std::string fmt(const char * f, double a, double b = 0.0, double c = 0.0)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

const Check * find(const Report & r, const std::string & name)
{
  for (const Check & c : r.checks) {
    if (c.name == name) { return &c; }
  }
  return nullptr;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Box random_box(std::mt19937 & rng, int d)
{
  Vector lo(d), hi(d);
  for (int i = 0; i < d; ++i) {
    lo(i) = oracle::uniform(rng, -2.0, 1.0);
    hi(i) = lo(i) + oracle::uniform(rng, 0.2, 2.0);
  }
  return Box(lo, hi);
}

// Maximum of a one-hidden-layer ReLU net by enumerating activation patterns,
// each an LP solved by vertex enumeration.
double enumerate_max(const nn::Mlp & net, const Box & box)
{
  const Matrix & W1 = net.layers[0].W;
  const Vector & b1 = net.layers[0].b;
  const Matrix & W2 = net.layers[1].W;
  const auto h = W1.rows(), d = W1.cols();
  double best = -kInf;
  for (long s = 0; s < (1L << h); ++s) {
    Matrix A(d + h, d);
    Vector l(d + h), u(d + h), c = Vector::Zero(d);
    double c0 = net.layers[1].b(0);
    A.topRows(d) = Matrix::Identity(d, d);
    l.head(d) = box.lower;
    u.head(d) = box.upper;
    for (Eigen::Index i = 0; i < h; ++i) {
      A.row(d + i) = W1.row(i);
      const bool on = (s >> i) & 1;
      l(d + i) = on ? -b1(i) : -kInf;
      u(d + i) = on ? kInf : -b1(i);
      if (on) {
        c += W2(0, i) * W1.row(i).transpose();
        c0 += W2(0, i) * b1(i);
      }
    }
    if (const auto sol = oracle::lp_vertices(-c, A, l, u)) { best = std::max(best, c0 - sol->value); }
  }
  return best;
}

Outcome criterion1()
{
  std::mt19937 rng(1001);
  double worst_err = 0.0, worst_time = 0.0;
  int uncertified = 0;
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + t % 2, h = 1 + static_cast<int>(rng() % 8);
    const nn::Mlp net({nn::Layer{oracle::random_matrix(rng, h, d), oracle::random_vector(rng, h, 0.5), nn::Activation::Relu},
      nn::Layer{oracle::random_matrix(rng, 1, h), oracle::random_vector(rng, 1), nn::Activation::Identity}});
    const Box box = random_box(rng, d);
    const auto t0 = std::chrono::steady_clock::now();
    const auto o = milp::maximize_output(net, box);
    worst_time = std::max(worst_time, seconds_since(t0));
    uncertified += o.status == milp::VerifyStatus::Certified ? 0 : 1;
    worst_err = std::max(worst_err, std::abs(o.value - enumerate_max(net, box)));
  }
  return {worst_err <= 1e-5 && worst_time <= 5.0 && uncertified == 0,
    fmt("max |milp - enumeration| = %.2e, slowest run %.3f s, uncertified %.0f", worst_err, worst_time, uncertified)};
}

Outcome criterion2()
{
  std::mt19937 rng(1002);
  std::mt19937_64 rng64(1002);
  const nn::Activation acts[] = {nn::Activation::Relu, nn::Activation::Sigmoid, nn::Activation::Softplus, nn::Activation::Identity};
  long violations = 0;
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + t % 3, depth = 1 + t % 3;
    std::vector<nn::Layer> layers;
    int in = d;
    for (int l = 0; l < depth; ++l) {
      const int out = l + 1 == depth ? 2 : 4 + static_cast<int>(rng() % 5);
      layers.push_back({oracle::random_matrix(rng, out, in), oracle::random_vector(rng, out), acts[rng() % 4]});
      in = out;
    }
    const nn::Mlp net(layers);
    const Box box = random_box(rng, d);
    const auto b = nn::interval_bounds(net, box.lower, box.upper).back();
    for (int s = 0; s < 10000; ++s) {
      const Vector y = nn::forward(net, geom::sample_uniform(geom::SetRegion(box), rng64));
      violations += ((y.array() < b.post_lo.array()) || (y.array() > b.post_hi.array())).any() ? 1 : 0;
    }
  }
  return {violations == 0, fmt("%.0f violations over 50 x 10^4 samples", static_cast<double>(violations))};
}

Outcome criterion3()
{
  const auto out = cli::demo("integrator-cbf");
  const Check * h = find(out.report, "barrier_nonnegative");
  const Check * pass = find(out.report, "nominal_passthrough");
  // Direct passthrough probe with nominal inputs that already satisfy the constraint.
  std::mt19937 rng(1003);
  const dyn::ControlAffineODE sys(dyn::LinearDrift{Matrix::Zero(1, 1)}, Matrix::Ones(1, 1));
  const auto barrier = filter::BarrierSpec::affine(Vector::Constant(1, -1.0), 1.0, 1.0);
  const Box ubox(Vector::Constant(1, -2.0), Vector::Constant(1, 2.0));
  filter::CbfFilter f;
  double dev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vector x = Vector::Constant(1, oracle::uniform(rng, -3.0, 1.0));
    const double cap = std::min(2.0, 1.0 - x(0));  // -u >= -(1 - x)
    if (cap < -2.0) { continue; }
    const Vector un = Vector::Constant(1, oracle::uniform(rng, -2.0, cap));
    dev = std::max(dev, (f.filter(sys, x, un, barrier, ubox) - un).lpNorm<Eigen::Infinity>());
  }
  const int steps = out.report.data.value("steps", 0);
  const bool ok = h && pass && h->value >= -1e-6 && pass->value <= 1e-6 && dev <= 1e-6 && steps == 100000;
  return {ok, fmt("min h = %.4g over %.0f steps, passthrough deviation %.2e", h ? h->value : NAN, steps,
                std::max(dev, pass ? pass->value : 0.0))};
}

Outcome criterion4()
{
  std::mt19937 rng(1004);
  double worst = 0.0, worst_kkt = 0.0;
  int not_optimal = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng() % 6), m = 1 + static_cast<int>(rng() % 10);
    const auto in = oracle::random_qp(rng, n, m);
    const auto ref = oracle::qp_active_set(in.P, in.q, in.A, in.l, in.u);
    const auto s = qp::solve({in.P, in.q, in.A, in.l, in.u});
    if (s.status != qp::Status::Optimal || !ref) {
      ++not_optimal;
      continue;
    }
    worst = std::max(worst, (s.z - ref->z).lpNorm<Eigen::Infinity>());
    const Vector Az = in.A * s.z;
    const double primal = (Az - Az.cwiseMax(in.l).cwiseMin(in.u)).lpNorm<Eigen::Infinity>();
    const double stationarity = (in.P * s.z + in.q + in.A.transpose() * s.dual).lpNorm<Eigen::Infinity>();
    worst_kkt = std::max({worst_kkt, primal, stationarity});
  }
  return {not_optimal == 0 && worst <= 1e-5 && worst_kkt <= 1e-6,
    fmt("max |z - oracle| = %.2e, max KKT residual %.2e, non-optimal %.0f", worst, worst_kkt, not_optimal)};
}

Outcome criterion5()
{
  std::mt19937_64 rng(1005);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double sum = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> cal(1000);
    for (double & s : cal) { s = u(rng); }
    const auto c = conformal::calibrate(cal, 0.1);
    int hit = 0;
    for (int i = 0; i < 1000; ++i) { hit += conformal::covers(c, u(rng)) ? 1 : 0; }
    sum += hit / 1000.0;
  }
  const double mean = sum / 200;
  return {mean >= 0.88 && mean <= 0.92, fmt("mean coverage %.4f", mean)};
}

Outcome criterion6()
{
  std::mt19937 rng(1006);
  int non_schur = 0;
  double worst_excess = -kInf;
  for (int t = 0; t < 100; ++t) {
    const int d = 2 + t % 5;
    const Matrix U = Eigen::HouseholderQR<Matrix>(oracle::random_matrix(rng, d, d)).householderQ();
    const Matrix V = Eigen::HouseholderQR<Matrix>(oracle::random_matrix(rng, d, d)).householderQ();
    const Matrix K = certify::svd_clamp({oracle::random_vector(rng, d, 3.0), 0.0, 0.99}, U, V);
    non_schur += certify::is_schur(K) ? 0 : 1;
    for (int s = 0; s < 5; ++s) {
      Vector x0 = oracle::random_vector(rng, d);
      x0 *= oracle::uniform(rng, 0.0, 1.0) / x0.norm();
      Vector x = x0;
      for (int k = 1; k <= 200; ++k) {
        x = K * x;
        worst_excess = std::max(worst_excess, x.norm() - std::pow(0.99, k) * x0.norm());
      }
    }
  }
  return {non_schur == 0 && worst_excess <= 1e-9,
    fmt("non-Schur %.0f, max excess over 0.99^k |x0| = %.2e", non_schur, worst_excess)};
}

Outcome criterion7()
{
  auto phs = [](double damping) {
    Matrix S(2, 2), L = Matrix::Zero(2, 2);
    S << 0, 1, 0, 0;
    L(1, 1) = std::sqrt(damping);
    return dyn::PhsSystem(S, L, Matrix(2, 0), Matrix::Identity(2, 2));
  };
  auto simulate = [](const dyn::PhsSystem & sys, int steps, double dt) {
    Vector x0(2);
    x0 << 1.0, 0.5;
    return dyn::simulate_ode(dyn::ControlAffineODE::from_phs(sys), x0, std::vector<Vector>(static_cast<std::size_t>(steps), Vector()), dt);
  };
  const auto lossless = phs(0.0);
  const Trajectory a = simulate(lossless, 10000, 1e-3);
  double drift = 0.0;
  for (const Vector & x : a.states) {
    drift = std::max(drift, std::abs(lossless.hamiltonian(x) - lossless.hamiltonian(a.states.front())));
  }
  const double per_unit = drift / 10.0;

  const auto damped = phs(0.4);
  const Trajectory b = simulate(damped, 10000, 1e-3);
  double max_increase = -kInf;
  for (std::size_t k = 1; k < b.states.size(); ++k) {
    max_increase = std::max(max_increase, damped.hamiltonian(b.states[k]) - damped.hamiltonian(b.states[k - 1]));
  }

  std::vector<double> lh, le;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    const Trajectory c = simulate(lossless, static_cast<int>(std::lround(2.0 / dt)), dt);
    double e = 0.0;
    for (const Vector & x : c.states) { e = std::max(e, std::abs(lossless.hamiltonian(x) - lossless.hamiltonian(c.states.front()))); }
    lh.push_back(std::log(dt));
    le.push_back(std::log(e));
  }
  double mh = 0, me = 0, num = 0, den = 0;
  for (int i = 0; i < 4; ++i) {
    mh += lh[i] / 4;
    me += le[i] / 4;
  }
  for (int i = 0; i < 4; ++i) {
    num += (lh[i] - mh) * (le[i] - me);
    den += (lh[i] - mh) * (lh[i] - mh);
  }
  const double slope = num / den;
  const bool checks = certify::phs_checks(lossless, a).passed() && certify::phs_checks(damped, b).passed();
  return {per_unit <= 1e-6 && max_increase <= 0.0 && slope >= 3.5 && checks,
    fmt("drift %.2e per unit time, max stepwise dH %.2e, RK4 slope %.2f", per_unit, max_increase, slope)};
}

Outcome criterion8()
{
  certify::ZubovSpec spec([](const Vector & x) { return 1.0 - std::exp(-x.squaredNorm()); },
    [](const Vector & x) { return Vector(2.0 * x * std::exp(-x.squaredNorm())); }, [](const Vector & x) { return Vector(-x); },
    [](const Vector & x) { return 2.0 * x.squaredNorm(); });
  std::vector<Vector> grid;
  for (int i = 0; i < 1000; ++i) { grid.push_back(Vector::Constant(1, -3.0 + 6.0 * i / 999.0)); }
  const Report r = certify::zubov_residual(spec, geom::PointSet(grid), 1e-10);
  const Check * c = find(r, "pde_residual");
  return {c && c->value <= 1e-10 && r.passed(), fmt("max |residual| = %.2e", c ? c->value : NAN)};
}

Outcome criterion9()
{
  // Dense-grid image of [-1,1]^2 under 0.5 I.
  std::vector<Vector> image;
  for (int i = 0; i <= 200; ++i) {
    for (int j = 0; j <= 200; ++j) {
      Vector p(2);
      p << -1.0 + i / 100.0, -1.0 + j / 100.0;
      image.push_back(0.5 * p);
    }
  }
  const dyn::DiscreteMap f = dyn::LinearMap{0.5 * Matrix::Identity(2, 2), Matrix(2, 0)};
  auto median_hausdorff = [&](int n) {
    std::vector<double> d;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      reach::ReachConfig cfg;
      cfg.templ = reach::Template::SampleHull;
      cfg.n_samples = n;
      cfg.seed = seed;
      cfg.n_fresh = 1;
      const auto r = reach::reach_sampled(f, Box::cube(2, -1, 1), cfg);
      const auto & hull = std::get<geom::PointSet>(r.regions[1]);
      // The image side is attained on the boundary of the convex image.
      double h = 0.0;
      for (const Vector & p : image) {
        if (std::abs(p(0)) > 0.49 || std::abs(p(1)) > 0.49) { h = std::max(h, reach::hull_distance(hull, p)); }
      }
      double back = 0.0;
      for (const Vector & v : hull.points) {
        double best = kInf;
        for (const Vector & p : image) { best = std::min(best, (v - p).norm()); }
        back = std::max(back, best);
      }
      d.push_back(std::max(h, back));
    }
    std::nth_element(d.begin(), d.begin() + 10, d.end());
    return d[10];
  };
  const double h2 = median_hausdorff(100), h4 = median_hausdorff(10000);
  const double ratio = h4 / h2;

  const double delta = 0.1, L = 0.5, D = 2 * std::sqrt(2.0);
  reach::ReachConfig cfg;
  cfg.templ = reach::Template::SampleHull;
  cfg.n_samples = 10000;
  cfg.eps = reach::epsilon_for_budget(10000, delta, L, D, 2);
  cfg.delta = delta;
  cfg.seed = 99;
  cfg.n_fresh = 5000;
  const auto r = reach::reach_sampled(f, Box::cube(2, -1, 1), cfg);
  const double contain = *std::min_element(r.containment.begin(), r.containment.end());

  return {ratio >= 0.4 && ratio <= 0.6 && contain >= 1 - delta,
    fmt("median Hausdorff N=1e2 %.4f -> N=1e4 %.4f (ratio %.3f, target 0.5 +/- 20%%)", h2, h4, ratio)
      + fmt("; fresh containment %.4f at sample_size eps %.3f", contain, cfg.eps)};
}

Outcome criterion10()
{
  std::mt19937 rng(1010);
  Matrix J(2, 2);
  J << 0, 1, -1, 0;
  const auto p = gpphs::PhsKernelParams::from_matrices(1.0, Vector::Constant(2, 1.0), J, 0.2 * Matrix::Identity(2, 2), Matrix(2, 0));
  gpphs::GpPhsDataset data;
  data.X = oracle::random_matrix(rng, 8, 2, 1.5);
  data.Xdot = oracle::random_matrix(rng, 8, 2);
  data.U = Matrix(8, 0);
  std::vector<Vector> q;
  for (Eigen::Index i = 0; i < 8; ++i) { q.push_back(data.X.row(i).transpose()); }
  const auto post = gpphs::posterior(p, data, q);
  double interp = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    interp = std::max(interp, (post.mean[i] - data.Xdot.row(static_cast<Eigen::Index>(i)).transpose()).lpNorm<Eigen::Infinity>());
  }

  const auto demo = cli::demo("gp-massspring");
  const Check * rms = find(demo.report, "field_rms_relative");

  auto kse = [](const Vector & z, const Vector & z2, const Vector & lam) {
    return std::exp(-((z - z2).array().square() / lam.array()).sum());
  };
  double fd_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector x = oracle::random_vector(rng, 2), x2 = oracle::random_vector(rng, 2);
    Vector lam(2);
    lam << oracle::uniform(rng, 0.5, 2.0), oracle::uniform(rng, 0.5, 2.0);
    const Matrix Pi = gpphs::pi_hessian(x, x2, lam);
    const double h = 1e-4;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        Vector ei = Vector::Zero(2), ej = Vector::Zero(2);
        ei(i) = h;
        ej(j) = h;
        const double fd = (kse(x + ei, x2 + ej, lam) - kse(x + ei, x2 - ej, lam) - kse(x - ei, x2 + ej, lam) + kse(x - ei, x2 - ej, lam))
                          / (4 * h * h);
        fd_err = std::max(fd_err, std::abs(fd - Pi(i, j)));
      }
    }
  }
  return {interp <= 1e-6 && rms && rms->pass && rms->value <= 0.05 && fd_err <= 1e-6,
    fmt("interpolation error %.2e, field RMS %.2e, Pi vs finite differences %.2e", interp, rms ? rms->value : NAN, fd_err)};
}

Outcome criterion11()
{
  std::string differing;
  for (const std::string & name : cli::kDemos) {
    cli::RunContext ctx;
    ctx.workers = 1;
    const auto a = cli::demo(name, ctx), b = cli::demo(name, ctx);
    if (a.report.to_json(false).dump() != b.report.to_json(false).dump() || a.artifacts != b.artifacts) {
      differing += " " + name;
    }
  }
  return {differing.empty(), differing.empty() ? "all " + std::to_string(cli::kDemos.size()) + " demos identical"
                                               : "differing:" + differing};
}

}  // namespace

int main()
{
  const std::function<Outcome()> criteria[] = {criterion1, criterion2, criterion3, criterion4, criterion5, criterion6,
    criterion7, criterion8, criterion9, criterion10, criterion11};
  int failed = 0;
  for (int i = 0; i < 11; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception & e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %d: %s  %s  (%.1f s)\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/11 criteria passed\n", 11 - failed);
  return failed == 0 ? 0 : 1;
}
