#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "coarsen/cli.hpp"
#include "coarsen/config.hpp"

using namespace coarsen;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("coarsen_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("flags fill defaults") {
    const RunConfig c = parse_config({"run", "--beta", "0.5", "--n", "100000", "--seed", "1"});
    CHECK(c.experiment == Experiment::Run);
    CHECK(c.beta == 0.5);
    CHECK(c.n == 100000);
    CHECK(c.rel_tol == 1e-8);
    CHECK(c.boundary == "periodic");
    const RunConfig l = parse_config({"ladder", "tune"});
    CHECK(l.experiment == Experiment::LadderTune);
    CHECK(l.beta == 0.8);
    CHECK(l.rel_tol == 1e-11);
  }

  TEST_CASE("file then flags; the flag wins and is echoed") {
    const fs::path d = scratch("cfg");
    fs::create_directories(d);
    std::ofstream(d / "c.txt") << "# comment\nbeta = 0.3\nseed=9\n";
    const RunConfig c =
        parse_config({"run", "--config", (d / "c.txt").string(), "--beta=0.5", "--n", "50"});
    CHECK(c.beta == 0.5);
    CHECK(c.seed == 9);
    CHECK(c.echo().find("beta=0.5\n") != std::string::npos);
    // The echo reads back to the same configuration.
    CHECK(parse_config_text(c.echo()).echo() == c.echo());
  }

  TEST_CASE("config errors name the problem") {
    auto msg = [](std::vector<std::string> a) {
      try {
        parse_config(a);
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(msg({"run", "--betta", "0.5"}).find("betta") != std::string::npos);
    CHECK(msg({"run", "--beta", "abc"}).find("beta") != std::string::npos);
    CHECK(msg({"run", "--beta", "-1"}).find("beta") != std::string::npos);
    CHECK(msg({"walk"}).find("walk") != std::string::npos);
    CHECK(msg({"run", "--beta"}).find("needs a value") != std::string::npos);
    CHECK_THROWS_AS(parse_config_text("nonsense line\n"), ConfigError);
  }

  TEST_CASE("content hash matches git blob ids") {
    CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  }

  TEST_CASE("local-pair run writes result and metadata") {
    const fs::path d = scratch("pair");
    std::ostringstream log, err;
    const int code = run_cli({"local-pair", "--beta", "1", "--A1", "1", "--A2", "1", "--output-dir",
                              d.string(), "--check"},
                             log, err);
    CHECK(code == kExitOk);
    const auto r = nlohmann::json::parse(slurp(d / "result.json"));
    // y' = -(b+1) for equal particles: tau = A^(b+1)/(b+1) = 1/2 at b = 1.
    CHECK(std::fabs(r["tau1"].get<double>() - 0.5) <= 1e-10);
    CHECK(std::fabs(r["tau2"].get<double>() - 0.5) <= 1e-10);
    const auto m = nlohmann::json::parse(slurp(d / "metadata.json"));
    CHECK(m["status"] == "ok");
    CHECK(m["config_hash"] == content_hash(slurp(d / "config.txt")));
    CHECK(parse_config_text(slurp(d / "config.txt")).echo() == slurp(d / "config.txt"));
  }

  TEST_CASE("exit codes") {
    std::ostringstream log, err;
    CHECK(run_cli({"run", "--betta", "1"}, log, err) == kExitConfig);
    CHECK(nlohmann::json::parse(err.str())["kind"] == "config");

    // A pair that cannot be simultaneous fails its --check.
    const fs::path d = scratch("check");
    CHECK(run_cli({"local-pair", "--a1", "1", "--a2", "0.9", "--tune", "--f1", "0.5", "--output-dir",
                   d.string(), "--check"},
                  log, err) == kExitCheck);

    // Tuning a ladder far too tightly is a numeric failure with partial output.
    const fs::path e = scratch("numeric");
    CHECK(run_cli({"ladder-tune", "--rungs", "3", "--tol-tau", "1e-30", "--output-dir", e.string()},
                  log, err) == kExitNumeric);
    const auto m = nlohmann::json::parse(slurp(e / "metadata.json"));
    CHECK(m["status"] == "incomplete");
    CHECK(m["error"]["kind"] == "numeric");
    CHECK(fs::exists(e / "ladder.json"));

    // Too short for a growth decade: a check miss, not a crash.
    const fs::path g = scratch("short");
    CHECK(run_cli({"run", "--n", "200", "--t-end", "1", "--output-dir", g.string(), "--check"}, log, err) ==
          kExitCheck);
    CHECK(nlohmann::json::parse(slurp(g / "result.json"))["growth_fit"].is_null());
  }

  TEST_CASE("identical configs give identical outputs") {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    std::ostringstream log, err;
    for (const auto& d : {a, b})
      REQUIRE(run_cli({"run", "--n", "3000", "--t-end", "20", "--seed", "3", "--output-dir", d.string()},
                      log, err) == kExitOk);
    for (const char* f : {"stats.csv", "events.csv", "result.json"})
      CHECK(slurp(a / f) == slurp(b / f));
  }
}
