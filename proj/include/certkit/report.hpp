#ifndef CERTKIT_REPORT_HPP_
#define CERTKIT_REPORT_HPP_

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "certkit/types.hpp"

namespace certkit {

inline constexpr const char * kReportSchema = "certkit.report/1";
inline constexpr const char * kVersion = "0.1.0";

/// One pass/fail entry of a verification report. `value` is the measured
/// quantity and `tolerance` the threshold it was compared against.
struct Check
{
  std::string name;
  bool pass{false};
  double value{0.0};
  double tolerance{0.0};
  std::optional<Vector> witness;
  std::string note;
};

struct Report
{
  std::string task;
  std::vector<Check> checks;
  /// Free-form task output (bounds, statistics, configuration echo).
  nlohmann::json data = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  /// Kept apart from everything else so reports can be compared byte for byte.
  double wall_time{0.0};

  Check & add(std::string name, bool pass, double value, double tolerance, std::string note = {});
  Check & add_witness(std::string name, bool pass, double value, double tolerance, const Vector & witness,
    std::string note = {});

  bool passed() const;
  /// "pass" or "violation".
  std::string status() const;
  /// First failing check, if any.
  const Check * first_failure() const;

  /// Serialization; wall time is written only when `with_wall_time`.
  nlohmann::json to_json(bool with_wall_time = true) const;
};

nlohmann::json json_of(const Vector & v);
nlohmann::json json_of(const Matrix & m);
Vector vector_from_json(const nlohmann::json & j);
Matrix matrix_from_json(const nlohmann::json & j);

}  // namespace certkit

#endif  // CERTKIT_REPORT_HPP_
