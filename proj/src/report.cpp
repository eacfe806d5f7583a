#include "certkit/report.hpp"

#include <cmath>

#include "certkit/error.hpp"

namespace certkit {

namespace {

nlohmann::json number(double v)
{
  if (std::isfinite(v)) { return v; }
  if (std::isnan(v)) { return "nan"; }
  return v > 0 ? "inf" : "-inf";
}

double parse_number(const nlohmann::json & j)
{
  if (j.is_number()) { return j.get<double>(); }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") { return kInf; }
    if (s == "-inf") { return -kInf; }
    if (s == "nan") { return std::nan(""); }
  }
  if (j.is_null()) { return std::nan(""); }
  throw Error(ErrorCode::ConfigError, "expected a number, got " + j.dump());
}

}  // namespace

Check & Report::add(std::string name, bool pass, double value, double tolerance, std::string note)
{
  checks.push_back(Check{std::move(name), pass, value, tolerance, std::nullopt, std::move(note)});
  return checks.back();
}

Check & Report::add_witness(std::string name, bool pass, double value, double tolerance, const Vector & witness,
  std::string note)
{
  Check & c = add(std::move(name), pass, value, tolerance, std::move(note));
  c.witness = witness;
  return c;
}

bool Report::passed() const
{
  for (const Check & c : checks) {
    if (!c.pass) { return false; }
  }
  return true;
}

std::string Report::status() const { return passed() ? "pass" : "violation"; }

const Check * Report::first_failure() const
{
  for (const Check & c : checks) {
    if (!c.pass) { return &c; }
  }
  return nullptr;
}

nlohmann::json Report::to_json(bool with_wall_time) const
{
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["version"] = kVersion;
  j["task"] = task;
  j["status"] = status();
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  nlohmann::json cs = nlohmann::json::array();
  for (const Check & c : checks) {
    nlohmann::json e;
    e["name"] = c.name;
    e["pass"] = c.pass;
    e["value"] = number(c.value);
    e["tolerance"] = number(c.tolerance);
    if (c.witness) { e["witness"] = json_of(*c.witness); }
    if (!c.note.empty()) { e["note"] = c.note; }
    cs.push_back(std::move(e));
  }
  j["checks"] = std::move(cs);
  j["data"] = data;
  if (with_wall_time) { j["wall_time"] = wall_time; }
  return j;
}

nlohmann::json json_of(const Vector & v)
{
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) { j.push_back(number(v(i))); }
  return j;
}

nlohmann::json json_of(const Matrix & m)
{
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) { row.push_back(number(m(r, c))); }
    j.push_back(std::move(row));
  }
  return j;
}

Vector vector_from_json(const nlohmann::json & j)
{
  if (!j.is_array()) { throw Error(ErrorCode::ConfigError, "expected an array, got " + j.dump()); }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) { v(static_cast<Eigen::Index>(i)) = parse_number(j[i]); }
  return v;
}

Matrix matrix_from_json(const nlohmann::json & j)
{
  if (!j.is_array()) { throw Error(ErrorCode::ConfigError, "expected a row-major matrix, got " + j.dump()); }
  if (j.empty()) { return Matrix(0, 0); }
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array()) { throw Error(ErrorCode::ConfigError, "matrix rows must be arrays"); }
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto & row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::ConfigError, "ragged matrix at row " + std::to_string(r));
    }
    for (Eigen::Index c = 0; c < cols; ++c) { m(r, c) = parse_number(row[static_cast<std::size_t>(c)]); }
  }
  return m;
}

}  // namespace certkit
