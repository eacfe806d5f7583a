#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "certkit/cli.hpp"
#include "certkit/error.hpp"

using namespace certkit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
  fs::path path;

  TempDir()
  {
    static int counter = 0;
    path = fs::temp_directory_path() / ("certkit_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path & p)
{
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path & p, const std::string & s) { std::ofstream(p) << s; }

int invoke(std::vector<std::string> args)
{
  args.insert(args.begin(), "certkit");
  std::vector<const char *> argv;
  for (const auto & a : args) { argv.push_back(a.c_str()); }
  return cli::main_entry(static_cast<int>(argv.size()), argv.data());
}

const json kCertifyHalf = {{"task", "certify"}, {"model", {{"kind", "koopman"}, {"K", {{0.5, 0.0}, {0.0, 0.5}}}}}};

const json kPositivityIdentity = {{"task", "verify-nn"}, {"property", "positivity"},
  {"network", {{"layers", {{{"w", {{1.0}}}, {"b", {0.0}}, {"act", "identity"}}}}}}, {"region", {{"lower", {-1.0}}, {"upper", {1.0}}}}};

const Check * find(const Report & r, const std::string & name)
{
  for (const Check & c : r.checks) {
    if (c.name == name) { return &c; }
  }
  return nullptr;
}

}  // namespace

TEST_CASE("certify job on a contraction")
{
  const auto out = cli::run(kCertifyHalf);
  CHECK(out.report.passed());
  CHECK(cli::exit_code(out.report) == 0);
  CHECK(out.report.data["spectral_radius"].get<double>() == doctest::Approx(0.5));
  const json j = out.report.to_json();
  CHECK(j["schema"] == "certkit.report/1");
  CHECK(j.contains("version"));
  CHECK(j.contains("wall_time"));
  CHECK_FALSE(out.report.to_json(false).contains("wall_time"));
}

TEST_CASE("verify-nn finds the counterexample through the command line")
{
  TempDir dir;
  spit(dir.path / "job.json", kPositivityIdentity.dump());
  const fs::path report = dir.path / "report.json";
  CHECK(invoke({"--config", (dir.path / "job.json").string(), "--out", report.string()}) == 1);
  const json j = json::parse(slurp(report));
  bool found = false;
  for (const auto & c : j["checks"]) {
    if (c.contains("witness")) {
      CHECK(c["witness"][0].get<double>() == doctest::Approx(-1.0).epsilon(1e-6));
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("exit code 2 for usage and config errors")
{
  TempDir dir;
  spit(dir.path / "bad.json", "{\"task\": \"certify\",");
  const fs::path report = dir.path / "report.json";
  CHECK(invoke({"--config", (dir.path / "bad.json").string(), "--out", report.string()}) == 2);
  CHECK_FALSE(fs::exists(report));
  CHECK(invoke({"--config", (dir.path / "missing.json").string()}) == 2);
  CHECK(invoke({"--demo", "no-such-demo"}) == 2);
  CHECK(invoke({}) == 2);
  CHECK(invoke({"--demo", "reach-rotation", "--workers", "zero"}) == 2);

  spit(dir.path / "task.json", json{{"task", "paint"}}.dump());
  CHECK(invoke({"--config", (dir.path / "task.json").string(), "--out", report.string()}) == 2);
  CHECK_FALSE(fs::exists(report));
}

TEST_CASE("config errors carry their code")
{
  try {
    cli::run(json{{"task", "reach"}});
    FAIL("expected ConfigError");
  } catch (const Error & e) {
    CHECK(e.code() == ErrorCode::ConfigError);
  }
  try {
    cli::demo("nope");
    FAIL("expected UnknownDemo");
  } catch (const Error & e) {
    CHECK(e.code() == ErrorCode::UnknownDemo);
  }
  TempDir dir;
  spit(dir.path / "bad.json", "[1, 2,");
  CHECK_THROWS_AS(cli::load_json(dir.path / "bad.json"), Error);
}

TEST_CASE("atomic writes leave no temporaries")
{
  TempDir dir;
  const fs::path p = dir.path / "out.json";
  cli::atomic_write(p, "first");
  cli::atomic_write(p, "second");
  CHECK(slurp(p) == "second");
  int files = 0;
  for ([[maybe_unused]] const auto & e : fs::directory_iterator(dir.path)) { ++files; }
  CHECK(files == 1);
  CHECK_THROWS_AS(cli::atomic_write(dir.path / "no" / "such" / "dir.json", "x"), Error);
}

TEST_CASE("artifacts are written next to the report")
{
  TempDir dir;
  json cfg = {{"task", "filter-sim"}, {"filter", "cbf"},
    {"system", {{"kind", "ode"}, {"drift", {{"kind", "linear"}, {"A", {{0.0}}}}}, {"B", {{1.0}}}}},
    {"barrier", {{"kind", "affine"}, {"a", {-1.0}}, {"c", 1.0}, {"kappa", 1.0}}}, {"u_box", {{"lower", {-2.0}}, {"upper", {2.0}}}},
    {"x0", {0.0}}, {"dt", 0.01}, {"steps", 200}, {"nominal", {{"u", {3.0}}}}};
  spit(dir.path / "cbf.json", cfg.dump());
  CHECK(invoke({"--config", (dir.path / "cbf.json").string(), "--out", (dir.path / "run.json").string()}) == 0);
  CHECK(fs::exists(dir.path / "run.trajectory.csv"));
  const json j = json::parse(slurp(dir.path / "run.json"));
  CHECK(j["data"]["interventions"].get<int>() > 0);
}

TEST_CASE("model files resolve relative to the config")
{
  TempDir dir;
  spit(dir.path / "net.json", kPositivityIdentity["network"].dump());
  json cfg = kPositivityIdentity;
  cfg["network"] = "net.json";
  cli::RunContext ctx;
  ctx.base_dir = dir.path;
  const auto out = cli::run(cfg, ctx);
  CHECK_FALSE(out.report.passed());
  CHECK(find(out.report, "positivity") != nullptr);
}

TEST_CASE("identical config and seed give identical reports")
{
  const json reach = {{"task", "reach"}, {"mode", "sampled"}, {"model", {{"kind", "linear"}, {"A", {{0.5, 0.1}, {0.0, 0.5}}}}},
    {"initial", {{"kind", "box"}, {"lower", {-1.0, -1.0}}, {"upper", {1.0, 1.0}}}}, {"steps", 3}, {"n_samples", 300},
    {"eps", 0.02}, {"template", "sample_hull"}, {"seed", 4}};
  const auto a = cli::run(reach), b = cli::run(reach);
  CHECK(a.report.to_json(false).dump() == b.report.to_json(false).dump());
  CHECK(a.artifacts == b.artifacts);

  cli::RunContext other;
  other.seed = 5;
  const auto c = cli::run(reach, other);
  CHECK(c.report.seed == 5u);
  CHECK(c.report.to_json(false).dump() != a.report.to_json(false).dump());
}

TEST_CASE("demo reports are stable across runs")
{
  const auto a = cli::demo("reach-rotation"), b = cli::demo("reach-rotation");
  CHECK(a.report.passed());
  CHECK(a.report.to_json(false).dump() == b.report.to_json(false).dump());
  CHECK(a.report.task == "demo:reach-rotation");
}
