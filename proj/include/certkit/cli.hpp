#ifndef CERTKIT_CLI_HPP_
#define CERTKIT_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "certkit/report.hpp"

namespace certkit::cli {

struct RunContext
{
  std::optional<std::uint64_t> seed;  // overrides the config / demo seed
  int workers{1};
  /// Directory that relative paths inside a config resolve against.
  std::filesystem::path base_dir{"."};
};

/// A report plus named CSV artifacts written next to it.
struct JobOutput
{
  Report report;
  std::vector<std::pair<std::string, std::string>> artifacts;
};

/// Dispatches a job config on its "task" field: certify, reach, verify-nn,
/// filter-sim, conformal or gpphs. Config problems raise ConfigError.
JobOutput run(const nlohmann::json & config, const RunContext & ctx = {});

inline const std::vector<std::string> kDemos{
  "integrator-cbf", "bicycle-conformal", "koopman-stability", "gp-massspring", "reach-rotation"};

/// Bundled scenario with a fixed default seed. Throws UnknownDemo.
JobOutput demo(const std::string & name, const RunContext & ctx = {});

/// Reads and parses a JSON file; parse errors become ConfigError with the
/// position in the message.
nlohmann::json load_json(const std::filesystem::path & path);

/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path & path, const std::string & content);

/// 0 when every check passes, 1 otherwise.
int exit_code(const Report & r);

/// Full command line: --config/--demo, --out, --seed, --workers. Returns the
/// process exit code (2 on usage, config and infeasibility errors).
int main_entry(int argc, const char * const * argv);

}  // namespace certkit::cli

#endif  // CERTKIT_CLI_HPP_
