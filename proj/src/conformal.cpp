#include "certkit/conformal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "certkit/error.hpp"

namespace certkit::conformal {

namespace {

/// ceil(v) that ignores representation error just above an integer
/// (100 * 0.07 evaluates to 7.000000000000001).
long guarded_ceil(double v) { return static_cast<long>(std::ceil(v - 1e-9 * std::max(1.0, std::abs(v)))); }

}  // namespace

std::pair<double, double> rotated_rect_score(const Vector & pred, const Vector & actual)
{
  require_dim(pred.size(), 3, "prediction (x, y, psi)");
  require_dim(actual.size(), 2, "observation (x, y)");
  if (!std::isfinite(pred(2))) { throw Error(ErrorCode::InvalidArgument, "heading must be finite"); }
  const double dx = actual(0) - pred(0), dy = actual(1) - pred(1);
  const double c = std::cos(pred(2)), s = std::sin(pred(2));
  return {c * dx + s * dy, -s * dx + c * dy};
}

double empirical_quantile(std::vector<double> values, double tau)
{
  if (values.empty()) { throw Error(ErrorCode::InsufficientCalibration, "quantile of an empty sample"); }
  const long n = static_cast<long>(values.size());
  const long k = std::clamp<long>(guarded_ceil(tau * static_cast<double>(n)), 1, n);
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
  return values[static_cast<std::size_t>(k - 1)];
}

ConformalCalibration calibrate(const std::vector<double> & cal_scores, double delta, std::pair<double, double> q_levels)
{
  const auto [tl, th] = q_levels;
  if (!(delta > 0 && delta < 1)) { throw Error(ErrorCode::InvalidArgument, "delta must be in (0, 1)"); }
  if (!(tl >= 0 && tl < th && th <= 1)) { throw Error(ErrorCode::InvalidArgument, "need 0 <= tau_low < tau_high <= 1"); }
  if (cal_scores.empty()) { throw Error(ErrorCode::InsufficientCalibration, "no calibration scores"); }
  for (double s : cal_scores) {
    if (!std::isfinite(s)) { throw Error(ErrorCode::InvalidArgument, "calibration scores must be finite"); }
  }
  const long n = static_cast<long>(cal_scores.size());
  const long k = guarded_ceil(static_cast<double>(n + 1) * (1.0 - delta));
  if (k > n) {
    throw Error(ErrorCode::InsufficientCalibration,
      "ceil((n+1)(1-delta)) = " + std::to_string(k) + " exceeds n = " + std::to_string(n) + "; increase n or delta");
  }
  ConformalCalibration cal;
  cal.delta = delta;
  cal.n_cal = static_cast<int>(n);
  cal.tau_low = tl;
  cal.tau_high = th;
  cal.q_low = empirical_quantile(cal_scores, tl);
  cal.q_high = empirical_quantile(cal_scores, th);
  cal.scores.reserve(cal_scores.size());
  for (double s : cal_scores) { cal.scores.push_back(std::max(cal.q_low - s, s - cal.q_high)); }
  std::vector<double> sorted = cal.scores;
  std::nth_element(sorted.begin(), sorted.begin() + (std::max<long>(k, 1) - 1), sorted.end());
  cal.E = sorted[static_cast<std::size_t>(std::max<long>(k, 1) - 1)];
  return cal;
}

std::pair<double, double> region(const ConformalCalibration & cal) { return {cal.q_low - cal.E, cal.q_high + cal.E}; }

bool covers(const ConformalCalibration & cal, double s)
{
  const auto [lo, hi] = region(cal);
  return s >= lo && s <= hi;
}

nlohmann::json ConformalCalibration::to_json() const
{
  const auto [lo, hi] = region(*this);
  return {{"q_low", q_low}, {"q_high", q_high}, {"E", E}, {"delta", delta}, {"n_cal", n_cal},
    {"tau_low", tau_low}, {"tau_high", tau_high}, {"region", {lo, hi}}, {"scores", scores}};
}

ConformalCalibration ConformalCalibration::from_json(const nlohmann::json & j)
{
  ConformalCalibration c;
  c.q_low = j.at("q_low").get<double>();
  c.q_high = j.at("q_high").get<double>();
  c.E = j.at("E").get<double>();
  c.delta = j.at("delta").get<double>();
  c.n_cal = j.at("n_cal").get<int>();
  c.tau_low = j.value("tau_low", 0.05);
  c.tau_high = j.value("tau_high", 0.95);
  c.scores = j.value("scores", std::vector<double>{});
  return c;
}

bool RectCalibration::covers(double e_lon, double e_lat) const
{
  return conformal::covers(lon, e_lon) && conformal::covers(lat, e_lat);
}

nlohmann::json RectCalibration::to_json() const
{
  return {{"delta", delta}, {"split", "bonferroni"}, {"lon", lon.to_json()}, {"lat", lat.to_json()}};
}

RectCalibration RectCalibration::from_json(const nlohmann::json & j)
{
  RectCalibration r;
  r.delta = j.at("delta").get<double>();
  r.lon = ConformalCalibration::from_json(j.at("lon"));
  r.lat = ConformalCalibration::from_json(j.at("lat"));
  return r;
}

RectCalibration calibrate_rect(const std::vector<std::pair<double, double>> & errors, double delta,
  std::pair<double, double> q_levels)
{
  std::vector<double> a, b;
  for (const auto & [lon, lat] : errors) {
    a.push_back(lon);
    b.push_back(lat);
  }
  RectCalibration r;
  r.delta = delta;
  r.lon = calibrate(a, delta / 2.0, q_levels);
  r.lat = calibrate(b, delta / 2.0, q_levels);
  return r;
}

std::vector<RectCalibration> calibrate_horizon(const std::vector<std::vector<std::pair<double, double>>> & per_step,
  double delta, std::pair<double, double> q_levels)
{
  std::vector<RectCalibration> out;
  for (const auto & errs : per_step) { out.push_back(calibrate_rect(errs, delta, q_levels)); }
  return out;
}

std::vector<std::vector<std::pair<double, double>>> errors_from_csv(const std::string & text)
{
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) { throw Error(ErrorCode::ConfigError, "empty error CSV"); }
  if (line.empty() || std::isdigit(static_cast<unsigned char>(line.front())) || line.front() == '-' || line.front() == '.') {
    throw Error(ErrorCode::ConfigError, "error CSV needs a header line");
  }
  std::vector<std::vector<std::pair<double, double>>> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") { continue; }
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception &) {
        throw Error(ErrorCode::ConfigError, "bad number on CSV line " + std::to_string(lineno));
      }
    }
    if (v.size() != 6 || v[0] < 0) {
      throw Error(ErrorCode::ConfigError, "CSV line " + std::to_string(lineno) + " needs 6 fields");
    }
    const auto step = static_cast<std::size_t>(v[0]);
    if (out.size() <= step) { out.resize(step + 1); }
    Vector pred(3), act(2);
    pred << v[1], v[2], v[3];
    act << v[4], v[5];
    out[step].push_back(rotated_rect_score(pred, act));
  }
  return out;
}

}  // namespace certkit::conformal
