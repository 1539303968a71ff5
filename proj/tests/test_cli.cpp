#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrs/config.hpp"
#include "mrs/ingest.hpp"

using namespace mrs;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = MRS_FIXTURE_DIR;

struct Result {
  int code = 0;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mrs_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Result run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const auto out = cwd / "stdout.txt";
  const auto err = cwd / "stderr.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" + MRS_CLI_PATH + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) rows.push_back(detail::split_csv(line));
  return rows;
}

}  // namespace

TEST_CASE("constant ticks average to the constant") {
  const auto s = ingest_file((kFixtures / "ticks_generic.csv").string(), {});
  REQUIRE(s.size() == 2);
  CHECK(s.values[0] == 55.5);
  CHECK(s.values[1] == 55.5);
  CHECK(format_date(s.dates[0]) == "2016-04-01");
  CHECK(s.start_weekday == 4);  // a Friday
}

TEST_CASE("settlement timestamps close their interval") {
  std::istringstream in(
      "SETTLEMENTDATE,REGION,RRP\n"
      "2013/01/01 23:30:00,SA1,10\n"
      "2013/01/02 00:00:00,SA1,20\n"
      "2013/01/02 00:30:00,SA1,30\n");
  IngestOptions opt;
  opt.policy = PartialDays::mean_available;
  const auto s = ingest(in, opt);
  REQUIRE(s.size() == 2);
  CHECK(s.values[0] == 15.0);
  CHECK(s.ticks[0] == 2);
  CHECK(s.values[1] == 30.0);
}

TEST_CASE("a full multi-year file yields one value per calendar day") {
  using namespace std::chrono;
  std::ostringstream file;
  file << "SETTLEMENTDATE,REGION,RRP\n";
  const Date first = year{2013} / January / 1;
  const long days = 2342;
  for (long k = 1; k <= days * 48; ++k) {
    const long minutes = first.time_since_epoch().count() * 1440L + 30 * k;
    const Date d{std::chrono::days{minutes / 1440}};
    const long m = minutes % 1440;
    char ts[32];
    std::snprintf(ts, sizeof ts, "%s %02ld:%02ld:00", format_date(d).c_str(), m / 60, m % 60);
    file << ts << ",SA1," << (k % 7) << "\n";
  }
  std::istringstream in(file.str());
  const auto s = ingest(in, {});
  CHECK(s.size() == 2342);
  CHECK(s.dates.front() == first);
  CHECK(s.dates.back() == first + std::chrono::days{2341});
}

TEST_CASE("ingestion errors") {
  SECTION("a 47-price day is rejected under the strict policy") {
    try {
      ingest_file((kFixtures / "ticks_47.csv").string(), {});
      FAIL("expected an ingestion error");
    } catch (const IngestionError& e) {
      CHECK(std::string(e.what()).find("2013-01-02") != std::string::npos);
    }
  }
  SECTION("mean-available averages whatever is there") {
    IngestOptions opt;
    opt.policy = PartialDays::mean_available;
    const auto s = ingest_file((kFixtures / "ticks_47.csv").string(), opt);
    CHECK(s.ticks[1] == 47);
    // Prices 41 + 0.5 k for k = 0..47 without k = 25 (13:00 closes the 12:30 interval).
    double sum = 0.0;
    for (int k = 0; k < 48; ++k)
      if (k != 25) sum += 41.0 + 0.5 * k;
    CHECK(s.values[1] == Approx(sum / 47.0).epsilon(1e-12));
  }
  SECTION("malformed rows name their line") {
    CHECK_THROWS_WITH(ingest_file((kFixtures / "ticks_malformed.csv").string(), {}),
                      Catch::Matchers::ContainsSubstring("line 10"));
  }
  SECTION("missing days are listed") {
    CHECK_THROWS_WITH(ingest_file((kFixtures / "ticks_gap.csv").string(), {}),
                      Catch::Matchers::ContainsSubstring("2016-04-02"));
  }
  SECTION("several regions need a selection") {
    CHECK_THROWS_AS(ingest_file((kFixtures / "ticks_complete.csv").string(), {}), IngestionError);
    IngestOptions opt;
    opt.region = "VIC1";
    CHECK(ingest_file((kFixtures / "ticks_complete.csv").string(), opt).values[0] == Approx(45.0 + 11.75));
  }
  SECTION("out-of-order timestamps") {
    std::istringstream in("timestamp,price\n2016-01-01 00:30,1\n2016-01-01 00:00,1\n");
    CHECK_THROWS_WITH(ingest(in, {}), Catch::Matchers::ContainsSubstring("line 3"));
  }
}

TEST_CASE("configuration parsing") {
  SECTION("defaults and model sections") {
    const auto cfg = parse_config("[data]\nseries=x.csv\n[model.a]\nn_base=2\nspikes=lognormal, gamma\ndrop=yes\n"
                                  "[model.b]\nn_base=1\ntrend=wavelet\n");
    REQUIRE(cfg.models.size() == 2);
    CHECK(cfg.model("a").spec.regime_count() == 5);
    CHECK(cfg.model("b").trend.kind == TrendKind::wavelet);
    CHECK(cfg.run.n_sweeps == 200000);
    CHECK(cfg.run.burn_in == 50000);
    CHECK(cfg.run.thin == 50);
    CHECK_THROWS_AS(cfg.model("c"), ConfigError);
  }
  SECTION("missing keys name the key and its type") {
    CHECK_THROWS_WITH(parse_config("[data]\nseries=x.csv\n[model]\ndrop=false\n"),
                      Catch::Matchers::ContainsSubstring("'n_base'") && Catch::Matchers::ContainsSubstring("integer"));
    CHECK_THROWS_WITH(parse_config("[data]\nseries=x.csv\n[model]\nn_base=1\n[simulate]\nT=50\n[truth]\nphi_1=0.5\nP=1\n"),
                      Catch::Matchers::ContainsSubstring("'sigma2_1'") &&
                          Catch::Matchers::ContainsSubstring("real number"));
  }
  SECTION("bad values and unknown keys") {
    CHECK_THROWS_WITH(parse_config("[model]\nn_base=1\n[run]\nthin=2.5\n"), Catch::Matchers::ContainsSubstring("'thin'"));
    CHECK_THROWS_WITH(parse_config("[model]\nn_base=1\n[run]\nn_sweep=10\n"),
                      Catch::Matchers::ContainsSubstring("unknown key 'n_sweep'"));
    CHECK_THROWS_AS(parse_config("[model]\nn_base=3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nn_base=1\nspikes=pareto\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[mdoel]\nn_base=1\n"), ConfigError);
  }
  SECTION("seed precedence") {
    const auto cfg = parse_config("[model]\nn_base=1\n[run]\nseed=7\n");
    ::unsetenv("MRS_SEED");
    CHECK(effective_seed(cfg, std::nullopt) == 7);
    ::setenv("MRS_SEED", "9", 1);
    CHECK(effective_seed(cfg, std::nullopt) == 9);
    CHECK(effective_seed(cfg, 3) == 3);
    ::setenv("MRS_SEED", "x", 1);
    CHECK_THROWS_AS(effective_seed(cfg, std::nullopt), ConfigError);
    ::unsetenv("MRS_SEED");
  }
}

TEST_CASE("ingest subcommand is idempotent") {
  const auto dir = scratch("ingest");
  const std::string args = "ingest --input '" + (kFixtures / "ticks_complete.csv").string() + "' --region SA1 --out ";
  const auto a = run(args + "a", dir);
  const auto b = run(args + "b", dir);
  REQUIRE(a.code == 0);
  CHECK(slurp(dir / "a" / "series.csv") == slurp(dir / "b" / "series.csv"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(a.out.find("3 days") != std::string::npos);
  const auto strict = run("ingest --input '" + (kFixtures / "ticks_47.csv").string() + "' --out c", dir);
  CHECK(strict.code == 3);
  CHECK(strict.err.find("2013-01-02") != std::string::npos);
}

TEST_CASE("simulate, fit, ppc and classify round trip") {
  const auto dir = scratch("fit");
  fs::copy(kFixtures / "simulate.ini", dir / "simulate.ini");
  REQUIRE(run("simulate --config simulate.ini --out sim", dir).code == 0);
  fs::copy(dir / "sim" / "simulated.csv", dir / "simulated.csv");

  const auto first = run("fit --config simulate.ini --out fit1", dir);
  INFO(first.err);
  REQUIRE(first.code == 0);
  REQUIRE(run("fit --config simulate.ini --out fit2", dir).code == 0);
  for (const char* f : {"samples_chain1.csv", "samples_chain2.csv", "regimes_chain1.txt", "regimes_chain2.txt",
                        "summary.csv", "classification.csv", "residuals_1.csv", "qq_3.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "fit1" / f) == slurp(dir / "fit2" / f));
  }

  SECTION("base variances stay ordered in every draw") {
    const auto rows = read_csv(dir / "fit1" / "samples_chain1.csv");
    const auto col = [&](const std::string& name) {
      return static_cast<std::size_t>(std::find(rows[0].begin(), rows[0].end(), name) - rows[0].begin());
    };
    const auto s1 = col("sigma2_1"), s2 = col("sigma2_2");
    REQUIRE(rows.size() == 201);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][s1]) < std::stod(rows[i][s2]));
  }
  SECTION("seed sources change the draws") {
    REQUIRE(run("fit --config simulate.ini --out fit3", dir, "MRS_SEED=99").code == 0);
    CHECK(slurp(dir / "fit1" / "samples_chain1.csv") != slurp(dir / "fit3" / "samples_chain1.csv"));
    REQUIRE(run("fit --config simulate.ini --out fit4 --seed 99", dir).code == 0);
    CHECK(slurp(dir / "fit3" / "samples_chain1.csv") == slurp(dir / "fit4" / "samples_chain1.csv"));
  }
  SECTION("ppc and classify rebuild outputs from the manifest") {
    REQUIRE(run("ppc --run fit1 --out again", dir).code == 0);
    REQUIRE(run("classify --run fit1 --out again", dir).code == 0);
    for (const char* f : {"residuals_1.csv", "residuals_2.csv", "qq_3.csv", "ppc_summary.csv", "classification.csv"})
      CHECK(slurp(dir / "fit1" / f) == slurp(dir / "again" / f));
    const auto rows = read_csv(dir / "again" / "classification.csv");
    REQUIRE(rows.size() == 401);
    for (std::size_t i = 1; i < rows.size(); ++i)
      CHECK(std::stod(rows[i][4]) + std::stod(rows[i][5]) + std::stod(rows[i][6]) == Approx(1.0));
  }
  SECTION("changed input is detected") {
    std::ofstream(dir / "simulated.csv", std::ios::app) << "401,1,50.0,1,40\n";
    const auto r = run("ppc --run fit1 --out again", dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("fingerprint") != std::string::npos);
  }
  SECTION("design dump") {
    REQUIRE(run("dump-design --config simulate.ini --out dd --trend wavelet", dir).code == 0);
    const auto rows = read_csv(dir / "dd" / "design.csv");
    CHECK(rows[0][1] == "observation");
    CHECK(rows.size() > 401);  // padded rows are included
  }
}

TEST_CASE("evidence subcommand") {
  const auto dir = scratch("evidence");
  fs::copy(kFixtures / "evidence.ini", dir / "evidence.ini");
  REQUIRE(run("simulate --config evidence.ini --out sim", dir).code == 0);
  fs::copy(dir / "sim" / "simulated.csv", dir / "simulated.csv");
  const auto r = run("evidence --config evidence.ini --out ev", dir);
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto rows = read_csv(dir / "ev" / "evidence.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][0] == "lognormal");
  CHECK(std::stod(rows[1][4]) == 0.0);
  CHECK(std::stod(rows[1][5]) == 0.0);
  CHECK(std::isfinite(std::stod(rows[2][4])));
  CHECK(read_csv(dir / "ev" / "evidence_rungs.csv").size() == 17);

  const auto one = run("evidence --config evidence.ini --out ev2 --model gamma", dir);
  CHECK(one.code == 2);
  CHECK(one.err.find("at least two models") != std::string::npos);
}

TEST_CASE("configuration errors from the command line") {
  const auto dir = scratch("config");
  for (const char* f : {"missing_key.ini", "bad_type.ini"}) fs::copy(kFixtures / f, dir / f);
  const auto missing = run("fit --config missing_key.ini --out x", dir);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("'n_base'") != std::string::npos);
  CHECK(missing.err.find("integer") != std::string::npos);
  const auto bad = run("fit --config bad_type.ini --out x", dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("'n_sweeps'") != std::string::npos);
}
