#include "certkit/nn.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "certkit/error.hpp"

namespace certkit::nn {

namespace {

constexpr double kUnit = std::numeric_limits<double>::epsilon();

double down(double v) { return std::nextafter(v, -kInf); }
double up(double v) { return std::nextafter(v, kInf); }

void check_finite(const Matrix & M, const char * what)
{
  if (!M.allFinite()) { throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be finite"); }
}

Vector apply(Activation a, const Vector & s)
{
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) { out(i) = activate(a, s(i)); }
  return out;
}

bool convex_activation(Activation a) { return a != Activation::Sigmoid; }

nlohmann::json layer_json(const Matrix & W, const Vector & b, Activation a)
{
  nlohmann::json j;
  j["w"] = json_of(W);
  j["b"] = json_of(b);
  j["act"] = to_string(a);
  return j;
}

const nlohmann::json & layers_of(const nlohmann::json & j)
{
  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty()) {
    throw Error(ErrorCode::ConfigError, "network JSON needs a nonempty \"layers\" array");
  }
  return j["layers"];
}

Activation act_of(const nlohmann::json & layer)
{
  return activation_from_string(layer.value("act", std::string("relu")));
}

}  // namespace

const char * to_string(Activation a)
{
  switch (a) {
  case Activation::Relu: return "relu";
  case Activation::Sigmoid: return "sigmoid";
  case Activation::Softplus: return "softplus";
  case Activation::Identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string & s)
{
  if (s == "relu") { return Activation::Relu; }
  if (s == "sigmoid") { return Activation::Sigmoid; }
  if (s == "softplus") { return Activation::Softplus; }
  if (s == "identity" || s == "linear") { return Activation::Identity; }
  throw Error(ErrorCode::UnsupportedActivation, "unknown activation \"" + s + "\"");
}

double activate(Activation a, double s)
{
  switch (a) {
  case Activation::Relu: return s > 0 ? s : 0.0;
  case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-s));
  case Activation::Softplus: return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)));
  case Activation::Identity: return s;
  }
  return s;
}

double activation_lipschitz(Activation a) { return a == Activation::Sigmoid ? 0.25 : 1.0; }

Mlp::Mlp(std::vector<Layer> ls) : layers(std::move(ls))
{
  if (layers.empty()) { throw Error(ErrorCode::InvalidArgument, "Mlp needs at least one layer"); }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer & L = layers[i];
    require_dim(L.b.size(), L.W.rows(), "Mlp bias");
    if (i > 0) { require_dim(L.W.cols(), layers[i - 1].W.rows(), "Mlp layer chain"); }
    check_finite(L.W, "Mlp weights");
    check_finite(L.b, "Mlp biases");
  }
}

Icnn::Icnn(std::vector<Matrix> w, std::vector<Matrix> u, std::vector<Vector> bias, std::vector<Activation> acts)
    : W(std::move(w)), U(std::move(u)), b(std::move(bias)), act(std::move(acts))
{
  if (W.empty()) { throw Error(ErrorCode::InvalidArgument, "Icnn needs at least one layer"); }
  require_dim(static_cast<Eigen::Index>(U.size()) + 1, static_cast<Eigen::Index>(W.size()), "Icnn latent weights");
  require_dim(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(W.size()), "Icnn biases");
  require_dim(static_cast<Eigen::Index>(act.size()), static_cast<Eigen::Index>(W.size()), "Icnn activations");
  for (std::size_t i = 0; i < W.size(); ++i) {
    require_dim(W[i].cols(), W[0].cols(), "Icnn input weights");
    require_dim(b[i].size(), W[i].rows(), "Icnn bias");
    check_finite(W[i], "Icnn weights");
    if (i > 0) {
      require_dim(U[i - 1].rows(), W[i].rows(), "Icnn latent rows");
      require_dim(U[i - 1].cols(), W[i - 1].rows(), "Icnn latent cols");
      check_finite(U[i - 1], "Icnn weights");
    }
  }
}

const char * to_string(Outer o)
{
  switch (o) {
  case Outer::Softplus: return "softplus";
  case Outer::Relu: return "relu";
  case Outer::SmoothRelu: return "smooth_relu";
  }
  return "unknown";
}

Outer outer_from_string(const std::string & s)
{
  if (s == "softplus") { return Outer::Softplus; }
  if (s == "relu") { return Outer::Relu; }
  if (s == "smooth_relu") { return Outer::SmoothRelu; }
  throw Error(ErrorCode::UnsupportedActivation, "unknown outer activation \"" + s + "\"");
}

LyapunovCandidate::LyapunovCandidate(Icnn g, double eps, Outer o, double width)
    : core(std::move(g)), eps_quad(eps), outer(o), smooth_width(width)
{
  if (!(eps_quad > 0)) { throw Error(ErrorCode::InvalidArgument, "eps_quad must be > 0"); }
  if (!(smooth_width > 0)) { throw Error(ErrorCode::InvalidArgument, "smooth_width must be > 0"); }
  require_dim(core.output_dim(), 1, "Lyapunov core output");
}

Vector forward(const Mlp & net, const Vector & x)
{
  require_dim(x.size(), net.input_dim(), "Mlp input");
  Vector z = x;
  for (const Layer & L : net.layers) { z = apply(L.act, L.W * z + L.b); }
  return z;
}

Vector forward(const Icnn & net, const Vector & x)
{
  require_dim(x.size(), net.input_dim(), "Icnn input");
  Vector z = apply(net.act[0], net.W[0] * x + net.b[0]);
  for (std::size_t i = 1; i < net.W.size(); ++i) {
    z = apply(net.act[i], net.U[i - 1] * z + net.W[i] * x + net.b[i]);
  }
  return z;
}

double outer_activate(const LyapunovCandidate & V, double s)
{
  switch (V.outer) {
  case Outer::Softplus: return activate(Activation::Softplus, s);
  case Outer::Relu: return s > 0 ? s : 0.0;
  case Outer::SmoothRelu: {
    const double d = V.smooth_width;
    if (s <= 0) { return 0.0; }
    if (s < d) { return s * s / (2.0 * d); }
    return s - 0.5 * d;
  }
  }
  return s;
}

double lyapunov_eval(const LyapunovCandidate & V, const Vector & x)
{
  const double g = forward(V.core, x)(0);
  const double g0 = forward(V.core, Vector::Zero(x.size()))(0);
  return outer_activate(V, g - g0) - outer_activate(V, 0.0) + V.eps_quad * x.squaredNorm();
}

Report check_icnn(const Icnn & net, const geom::Box & domain, int trials, std::uint64_t seed)
{
  if (trials < 1) { throw Error(ErrorCode::InvalidArgument, "check_icnn needs trials >= 1"); }
  require_dim(domain.dim(), net.input_dim(), "check_icnn domain");
  Report rep;
  rep.task = "check_icnn";
  rep.seed = seed;

  double min_u = kInf;
  Vector where;
  for (std::size_t i = 0; i < net.U.size(); ++i) {
    Eigen::Index r = 0, c = 0;
    const double m = net.U[i].size() ? net.U[i].minCoeff(&r, &c) : kInf;
    if (m < min_u) {
      min_u = m;
      where = Vector(3);
      where << static_cast<double>(i + 1), static_cast<double>(r), static_cast<double>(c);
    }
  }
  if (where.size() == 0) {
    rep.add("latent_weights_nonnegative", true, 0.0, 0.0, "no latent layers");
  } else {
    rep.add_witness("latent_weights_nonnegative", min_u >= 0.0, min_u, 0.0, where,
      "value is the smallest latent weight; witness is (layer, row, col)");
  }

  int bad_act = -1;
  for (std::size_t i = 0; i < net.act.size(); ++i) {
    if (!convex_activation(net.act[i])) {
      bad_act = static_cast<int>(i);
      break;
    }
  }
  rep.add("activations_convex_nondecreasing", bad_act < 0, bad_act, 0.0,
    bad_act < 0 ? "" : std::string("layer ") + std::to_string(bad_act) + " uses " + to_string(net.act[static_cast<std::size_t>(bad_act)]));

  std::mt19937_64 rng(seed);
  double worst = -kInf;
  Vector worst_pair;
  for (int t = 0; t < trials; ++t) {
    const Vector a = geom::sample_uniform(domain, rng);
    const Vector b = geom::sample_uniform(domain, rng);
    const Vector gap = forward(net, 0.5 * (a + b)) - 0.5 * (forward(net, a) + forward(net, b));
    const double v = gap.maxCoeff();
    if (v > worst) {
      worst = v;
      worst_pair = Vector(2 * a.size());
      worst_pair << a, b;
    }
  }
  rep.add_witness("midpoint_convexity", worst <= 1e-9, worst, 1e-9, worst_pair,
    "value is max of f((a+b)/2) - (f(a)+f(b))/2 over " + std::to_string(trials) + " pairs; witness is (a, b)");
  return rep;
}

double spectral_norm_bound(const Matrix & W)
{
  check_finite(W, "weight matrix");
  const Eigen::Index n = W.cols();
  if (W.size() == 0 || W.cwiseAbs().maxCoeff() == 0.0) { return 0.0; }
  const Matrix G = W.transpose() * W;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) { v(i) = 1.0 + 1.0 / static_cast<double>(i + 2); }
  v.normalize();
  double lambda = 0.0;
  bool converged = false;
  for (int it = 0; it < 10000; ++it) {
    Vector w = G * v;
    const double nw = w.norm();
    if (nw == 0.0) {
      // Start vector in the null space; restart from a coordinate direction.
      v = Vector::Unit(n, it % n);
      continue;
    }
    const double next = v.dot(w);
    v = w / nw;
    if (it > 0 && std::abs(next - lambda) <= 1e-8 * std::abs(next)) {
      lambda = next;
      converged = true;
      break;
    }
    lambda = next;
  }
  if (!converged) { throw Error(ErrorCode::PowerIterationStall, "power iteration did not converge in 1e4 iterations"); }

  // The Rayleigh quotient underestimates; raise s until s^2 I - W'W >= 0.
  double s = std::sqrt(std::max(lambda, 0.0)) * (1.0 + 1e-8) + 1e-300;
  const Matrix I = Matrix::Identity(n, n);
  for (int k = 0; k < 200; ++k) {
    Eigen::LLT<Matrix> llt(s * s * I - G);
    if (llt.info() == Eigen::Success) { return s; }
    s *= 1.0 + 1e-6 * std::pow(2.0, k);
  }
  return std::sqrt(G.cwiseAbs().rowwise().sum().maxCoeff());
}

double lipschitz_bound(const Mlp & net)
{
  double L = 1.0;
  for (const Layer & layer : net.layers) { L *= spectral_norm_bound(layer.W) * activation_lipschitz(layer.act); }
  return L;
}

void affine_interval(const Matrix & W, const Vector & b, const Vector & lo, const Vector & hi, Vector & out_lo,
  Vector & out_hi)
{
  require_dim(lo.size(), W.cols(), "interval input");
  require_dim(hi.size(), W.cols(), "interval input");
  const Eigen::Index n = lo.size();
  Vector c(n), r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i) = 0.5 * lo(i) + 0.5 * hi(i);
    r(i) = up(std::max(hi(i) - c(i), c(i) - lo(i)));
  }
  const Matrix Wa = W.cwiseAbs();
  const Vector mid = W * c + b;
  const Vector rad = Wa * r;
  const Vector mag = Wa * c.cwiseAbs() + rad + b.cwiseAbs();
  const double gamma = static_cast<double>(n + 2) * kUnit;
  out_lo.resize(W.rows());
  out_hi.resize(W.rows());
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    const double slack = up(rad(i) + gamma * mag(i));
    out_lo(i) = down(mid(i) - slack);
    out_hi(i) = up(mid(i) + slack);
  }
}

std::vector<LayerBounds> interval_bounds(const Mlp & net, const Vector & lo, const Vector & hi)
{
  require_dim(lo.size(), net.input_dim(), "interval_bounds lower");
  require_dim(hi.size(), net.input_dim(), "interval_bounds upper");
  std::vector<LayerBounds> out;
  Vector l = lo, h = hi;
  for (const Layer & L : net.layers) {
    LayerBounds lb;
    affine_interval(L.W, L.b, l, h, lb.pre_lo, lb.pre_hi);
    lb.post_lo.resize(lb.pre_lo.size());
    lb.post_hi.resize(lb.pre_hi.size());
    for (Eigen::Index i = 0; i < lb.pre_lo.size(); ++i) {
      const double a = activate(L.act, lb.pre_lo(i));
      const double z = activate(L.act, lb.pre_hi(i));
      const bool exact = L.act == Activation::Relu || L.act == Activation::Identity;
      lb.post_lo(i) = exact ? a : down(a);
      lb.post_hi(i) = exact ? z : up(z);
    }
    l = lb.post_lo;
    h = lb.post_hi;
    out.push_back(std::move(lb));
  }
  return out;
}

nlohmann::json to_json(const Mlp & net)
{
  nlohmann::json j;
  j["kind"] = "mlp";
  j["layers"] = nlohmann::json::array();
  for (const Layer & L : net.layers) { j["layers"].push_back(layer_json(L.W, L.b, L.act)); }
  return j;
}

nlohmann::json to_json(const Icnn & net)
{
  nlohmann::json j;
  j["kind"] = "icnn";
  j["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < net.W.size(); ++i) {
    nlohmann::json L = layer_json(net.W[i], net.b[i], net.act[i]);
    if (i > 0) { L["u"] = json_of(net.U[i - 1]); }
    j["layers"].push_back(std::move(L));
  }
  return j;
}

nlohmann::json to_json(const LyapunovCandidate & V)
{
  nlohmann::json j = to_json(V.core);
  j["kind"] = "lyapunov";
  j["eps_quad"] = V.eps_quad;
  j["outer"] = to_string(V.outer);
  if (V.outer == Outer::SmoothRelu) { j["smooth_width"] = V.smooth_width; }
  return j;
}

Mlp mlp_from_json(const nlohmann::json & j)
{
  if (j.value("kind", std::string("mlp")) != "mlp") {
    throw Error(ErrorCode::ConfigError, "expected a network of kind \"mlp\"");
  }
  std::vector<Layer> layers;
  for (const auto & L : layers_of(j)) {
    layers.push_back(Layer{matrix_from_json(L.at("w")), vector_from_json(L.at("b")), act_of(L)});
  }
  return Mlp(std::move(layers));
}

Icnn icnn_from_json(const nlohmann::json & j)
{
  std::vector<Matrix> W, U;
  std::vector<Vector> b;
  std::vector<Activation> act;
  const auto & layers = layers_of(j);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto & L = layers[i];
    W.push_back(matrix_from_json(L.at("w")));
    b.push_back(vector_from_json(L.at("b")));
    act.push_back(act_of(L));
    if (i > 0) { U.push_back(matrix_from_json(L.at("u"))); }
  }
  return Icnn(std::move(W), std::move(U), std::move(b), std::move(act));
}

LyapunovCandidate lyapunov_from_json(const nlohmann::json & j)
{
  return LyapunovCandidate(icnn_from_json(j), j.value("eps_quad", 1e-3),
    outer_from_string(j.value("outer", std::string("softplus"))), j.value("smooth_width", 0.1));
}

}  // namespace certkit::nn
