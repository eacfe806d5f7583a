#ifndef CERTKIT_CONFORMAL_HPP_
#define CERTKIT_CONFORMAL_HPP_

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "certkit/types.hpp"

namespace certkit::conformal {

/// Heading-aligned error of a prediction (x, y, psi) against an observed
/// position (x, y): (longitudinal, lateral).
std::pair<double, double> rotated_rect_score(const Vector & pred, const Vector & actual);

struct ConformalCalibration
{
  double q_low{0.0};
  double q_high{0.0};
  /// R_i = max(q_low - s_i, s_i - q_high) in input order.
  std::vector<double> scores;
  double E{0.0};
  double delta{0.1};
  int n_cal{0};
  double tau_low{0.05};
  double tau_high{0.95};

  nlohmann::json to_json() const;
  static ConformalCalibration from_json(const nlohmann::json & j);
};

/// k-th order statistic with k = ceil(tau n) (at least 1).
double empirical_quantile(std::vector<double> values, double tau);

/// Conformalized quantile calibration; E is the ceil((n + 1)(1 - delta))-th
/// order statistic of R. Throws InsufficientCalibration when that index
/// exceeds n.
ConformalCalibration calibrate(const std::vector<double> & cal_scores, double delta,
  std::pair<double, double> q_levels = {0.05, 0.95});

/// [q_low - E, q_high + E]; empty (lo > hi) when E is negative enough.
std::pair<double, double> region(const ConformalCalibration & cal);
bool covers(const ConformalCalibration & cal, double s);

/// Rotated-rectangle region: per-axis calibration with Bonferroni delta / 2.
struct RectCalibration
{
  ConformalCalibration lon;
  ConformalCalibration lat;
  double delta{0.1};

  /// Covers a (longitudinal, lateral) error.
  bool covers(double e_lon, double e_lat) const;
  nlohmann::json to_json() const;
  static RectCalibration from_json(const nlohmann::json & j);
};

RectCalibration calibrate_rect(const std::vector<std::pair<double, double>> & errors, double delta,
  std::pair<double, double> q_levels = {0.05, 0.95});

/// One calibration per horizon step (no pooling across steps).
std::vector<RectCalibration> calibrate_horizon(const std::vector<std::vector<std::pair<double, double>>> & per_step,
  double delta, std::pair<double, double> q_levels = {0.05, 0.95});

/// Rows of step,pred_x,pred_y,pred_psi,actual_x,actual_y (header required)
/// turned into per-step rotated errors.
std::vector<std::vector<std::pair<double, double>>> errors_from_csv(const std::string & text);

}  // namespace certkit::conformal

#endif  // CERTKIT_CONFORMAL_HPP_
