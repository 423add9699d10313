#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "qbsde/cli.hpp"
#include "qbsde/config.hpp"

using namespace qbsde;
using nlohmann::json;

namespace {

json base_config() {
  return json{{"version", 1},
              {"mode", "validate"},
              {"seed", 42},
              {"out", "/tmp/qbsde_test_out"},
              {"problem", {{"name", "cosine-ou"}}}};
}

}  // namespace

TEST_CASE("config: unknown keys are rejected by name") {
  auto cfg = base_config();
  cfg["banana"] = 1;
  REQUIRE_THROWS_WITH(config::RunConfig::from_json(cfg),
                      Catch::Matchers::ContainsSubstring("banana"));
}

TEST_CASE("config: missing required keys are named") {
  auto cfg = base_config();
  cfg.erase("seed");
  REQUIRE_THROWS_WITH(config::RunConfig::from_json(cfg),
                      Catch::Matchers::ContainsSubstring("seed"));

  auto cfg2 = base_config();
  cfg2["problem"] = {{"name", "affine"}};  // affine requires lambda
  REQUIRE_THROWS_WITH(config::RunConfig::from_json(cfg2),
                      Catch::Matchers::ContainsSubstring("lambda"));
}

TEST_CASE("config: version and mode are validated") {
  auto cfg = base_config();
  cfg["version"] = 2;
  REQUIRE_THROWS_AS(config::RunConfig::from_json(cfg), config::ConfigError);
  cfg = base_config();
  cfg["mode"] = "??";
  REQUIRE_THROWS_WITH(config::RunConfig::from_json(cfg),
                      Catch::Matchers::ContainsSubstring("mode"));
}

TEST_CASE("config: problem catalog covers the fixtures") {
  for (const char* name : {"cosine-ou", "sine-quadratic", "sine-monotone", "two-dim"}) {
    auto cfg = base_config();
    cfg["problem"] = {{"name", name}};
    const auto parsed = config::RunConfig::from_json(cfg);
    REQUIRE(parsed.problem.has_value());
  }
  auto cfg = base_config();
  cfg["problem"] = {{"name", "affine"}, {"lambda", 2.0}, {"kappa", 0.5}};
  REQUIRE(config::RunConfig::from_json(cfg).problem->constants.lambda == 2.0);
}

TEST_CASE("config: threads never reach the report echo") {
  auto cfg = base_config();
  cfg["threads"] = 8;
  const auto parsed = config::RunConfig::from_json(cfg);
  REQUIRE(parsed.threads == 8);
  REQUIRE_FALSE(parsed.echo.contains("threads"));
}

TEST_CASE("validate mode: assumption rows with all-pass on the cosine fixture") {
  const auto parsed = config::RunConfig::from_json(base_config());
  const auto result = cli::run(parsed);
  REQUIRE(result.exit_code == 0);
  int assumption_rows = 0;
  for (const auto& row : result.report.rows)
    if (row.name.starts_with("assumption/")) ++assumption_rows;
  REQUIRE(assumption_rows == 7);
  REQUIRE(std::filesystem::exists("/tmp/qbsde_test_out/report.json"));
}

TEST_CASE("reports are byte-identical for identical config and seed") {
  auto cfg = base_config();
  cfg["out"] = "/tmp/qbsde_test_out_a";
  cli::run(config::RunConfig::from_json(cfg));
  cfg["out"] = "/tmp/qbsde_test_out_b";
  cfg["threads"] = 2;
  cli::run(config::RunConfig::from_json(cfg));

  auto slurp = [](const std::string& path) {
    std::ifstream in(path);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  auto a = slurp("/tmp/qbsde_test_out_a/report.json");
  auto b = slurp("/tmp/qbsde_test_out_b/report.json");
  // The out directory is not part of the payload; normalize before comparing.
  const auto norm = [](std::string s) {
    const auto pos = s.find("qbsde_test_out_");
    if (pos != std::string::npos) s.erase(pos, std::string("qbsde_test_out_x").size());
    return s;
  };
  REQUIRE(norm(a) == norm(b));
  REQUIRE(!a.empty());
}

TEST_CASE("numerical check failures exit with code 3") {
  auto cfg = base_config();
  cfg["problem"] = {{"name", "affine"}, {"lambda", 1.0}, {"kappa", 1.0}};
  auto parsed = config::RunConfig::from_json(cfg);
  // Sabotage: an anti-monotone generator fails the audit, so run() reports
  // failure (but does not throw).
  parsed.problem->generator.f = [](const Vec&, double y, const Vec&) { return y; };
  parsed.problem->generator.grad_y = [](const Vec&, double, const Vec&) { return 1.0; };
  const auto result = cli::run(parsed);
  REQUIRE(result.exit_code == 3);
  REQUIRE_FALSE(result.report.first_failure().empty());
}

TEST_CASE("solve mode runs end to end on the affine fixture") {
  auto cfg = base_config();
  cfg["mode"] = "solve";
  cfg["problem"] = {{"name", "affine"}, {"lambda", 1.0}, {"kappa", 1.0}};
  cfg["paths"] = 2000;
  cfg["blocks"] = 2;
  cfg["eps"] = 0.2;
  cfg["grid"] = {{"steps_per_unit", 8}};
  cfg["threads"] = 2;
  const auto result = cli::run(config::RunConfig::from_json(cfg));
  REQUIRE(result.exit_code == 0);
}

TEST_CASE("simulate mode writes both export formats") {
  auto cfg = base_config();
  cfg["mode"] = "simulate";
  cfg["paths"] = 50;
  cfg["grid"] = {{"steps_per_unit", 8}, {"horizon", 1.0}};
  cfg["out"] = "/tmp/qbsde_test_out_sim";
  const auto result = cli::run(config::RunConfig::from_json(cfg));
  REQUIRE(result.exit_code == 0);
  REQUIRE(std::filesystem::exists("/tmp/qbsde_test_out_sim/ensemble.csv"));
  REQUIRE(std::filesystem::exists("/tmp/qbsde_test_out_sim/ensemble.bin"));
  std::ifstream bin("/tmp/qbsde_test_out_sim/ensemble.bin", std::ios::binary);
  char magic[8];
  bin.read(magic, 8);
  REQUIRE(std::string(magic, 8) == "QBSDENS1");
}

TEST_CASE("cauchy csv carries the exact column order") {
  std::vector<horizon::CauchyRow> rows{{2, 4, 0.1, 0.2, 0.01}, {2, 6, 0.05, 0.2, 0.01},
                                       {4, 6, 0.02, 0.05, 0.01}};
  std::ostringstream os;
  io::cauchy_to_csv(rows, os);
  const auto text = os.str();
  REQUIRE(text.rfind("n,m,gap,bound,ci\n", 0) == 0);
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 4);  // header + C(3,2) pairs
}
