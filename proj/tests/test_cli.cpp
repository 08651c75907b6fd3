#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "ivfalign/hash.hpp"

namespace {

struct Run {
  int exit_code = -1;
  std::string out;
};

// Runs the CLI in `dir`, capturing stdout; stderr goes to dir/stderr.txt.
Run cli(const std::filesystem::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + IVFALIGN_CLI + "' " + args + " 2>stderr.txt";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (const std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

nlohmann::json stderr_json(const std::filesystem::path& dir) { return nlohmann::json::parse(slurp(dir / "stderr.txt")); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    fixture::TempDir dir("cli-usage");
    CHECK(cli(dir.path(), "gen-data --bogus 1").exit_code == 2);
    CHECK(stderr_json(dir.path())["error"] == "usage");
    CHECK(cli(dir.path(), "").exit_code == 2);
    CHECK(cli(dir.path(), "no-such-command").exit_code == 2);
    CHECK(cli(dir.path(), "gen-data --n notanumber").exit_code == 2);
    CHECK(cli(dir.path(), "--help").exit_code == 0);
    CHECK(cli(dir.path(), "--version").out.find("0.1.0") != std::string::npos);
  }

  TEST_CASE("validation and I/O errors exit with 3") {
    fixture::TempDir dir("cli-errors");
    CHECK(cli(dir.path(), "eval --truth missing.jsonl --pred missing.jsonl --out e.json").exit_code == 3);
    CHECK(stderr_json(dir.path())["exit_code"] == 3);
    CHECK(cli(dir.path(), "gen-data --n 10 --noise 2 --out c.jsonl").exit_code == 3);
    CHECK(stderr_json(dir.path())["error"] == "validation");
    std::ofstream(dir / "cfg.json") << R"({"n": 10, "out": "c.jsonl", "colour": "blue"})";
    CHECK(cli(dir.path(), "gen-data --config cfg.json").exit_code == 3);
    CHECK(stderr_json(dir.path())["message"].get<std::string>().find("colour") != std::string::npos);
    std::ofstream(dir / "broken.jsonl") << "{\"id\":\n";
    CHECK(cli(dir.path(), "eval --truth broken.jsonl --pred broken.jsonl --out e.json").exit_code == 3);
    CHECK(stderr_json(dir.path())["message"].get<std::string>().find("line 1") != std::string::npos);
  }

  TEST_CASE("config files merge with flags") {
    fixture::TempDir dir("cli-config");
    std::ofstream(dir / "cfg.json") << R"({"n": 40, "seed": 9, "out": "a.jsonl"})";
    auto r = cli(dir.path(), "gen-data --config cfg.json --n 30");
    REQUIRE(r.exit_code == 0);
    CHECK(nlohmann::json::parse(r.out)["n"] == 30);
    const auto manifest = nlohmann::json::parse(slurp(dir / "a.jsonl.manifest.json"));
    CHECK(manifest["command"] == "gen-data");
    CHECK(manifest["config"]["seed"] == 9);
    CHECK(manifest["outputs"][0]["sha256"] == ivfalign::sha256_hex(slurp(dir / "a.jsonl")));
  }

  TEST_CASE("eval of a corpus against itself is perfect") {
    fixture::TempDir dir("cli-eval");
    REQUIRE(cli(dir.path(), "gen-data --n 150 --seed 3 --out c.jsonl").exit_code == 0);
    const auto r = cli(dir.path(), "eval --truth c.jsonl --pred c.jsonl --out e.json --csv e.csv");
    REQUIRE(r.exit_code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "e.json"));
    for (const char* f : {"infertility_type", "art", "cos", "art_generation"}) CHECK(report[f]["accuracy"] == 1.0);
    CHECK(report["gn"]["mae"] == 0.0);
    CHECK(slurp(dir / "e.csv").find('\n') != std::string::npos);
    REQUIRE(cli(dir.path(), "confusion --truth c.jsonl --pred c.jsonl --field cos --out m.json").exit_code == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "m.json")).contains("labels"));
    CHECK(cli(dir.path(), "confusion --truth c.jsonl --pred c.jsonl --field colour --out m.json").exit_code == 3);
  }

  TEST_CASE("reruns reproduce every artifact") {
    fixture::TempDir dir("cli-rerun");
    const std::string chain =
        "gen-data --n 120 --seed 5 --out c.jsonl && '" + std::string(IVFALIGN_CLI) +
        "' train-sft --data c.jsonl --epochs 1 --out sft.bin && '" + IVFALIGN_CLI +
        "' infer --model sft.bin --data c.jsonl --split test --out p.jsonl";
    REQUIRE(cli(dir.path(), chain).exit_code == 0);
    const auto first = ivfalign::sha256_hex(slurp(dir / "c.jsonl")) + ivfalign::sha256_hex(slurp(dir / "sft.bin")) +
                       ivfalign::sha256_hex(slurp(dir / "p.jsonl"));
    REQUIRE(cli(dir.path(), chain).exit_code == 0);
    const auto second = ivfalign::sha256_hex(slurp(dir / "c.jsonl")) + ivfalign::sha256_hex(slurp(dir / "sft.bin")) +
                        ivfalign::sha256_hex(slurp(dir / "p.jsonl"));
    CHECK(first == second);
    const auto manifest = nlohmann::json::parse(slurp(dir / "p.jsonl.manifest.json"));
    CHECK(manifest["previous_manifest_hash"] == ivfalign::sha256_hex(slurp(dir / "sft.bin.manifest.json")));
    const auto eval = cli(dir.path(), "eval --truth c.jsonl --pred p.jsonl --out e.json");
    CHECK(eval.exit_code == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "e.json"))["n"] == 12);
  }

  TEST_CASE("schema export") {
    fixture::TempDir dir("cli-schema");
    REQUIRE(cli(dir.path(), "review-serve --schema-dir schemas").exit_code == 0);
    for (const char* f : {"blind_case", "review_submission", "review_event"}) {
      const auto p = dir / ("schemas/" + std::string(f) + ".schema.json");
      REQUIRE(std::filesystem::exists(p));
      CHECK(nlohmann::json::parse(slurp(p))["$schema"].get<std::string>().find("2020-12") != std::string::npos);
    }
  }

  TEST_CASE("weight sweep") {
    fixture::TempDir dir("cli-sweep");
    REQUIRE(cli(dir.path(), "gen-data --n 50 --out c.jsonl").exit_code == 0);
    REQUIRE(cli(dir.path(), "weight-sweep --truth c.jsonl --pred c.jsonl --step 0.5 --out s.json").exit_code == 0);
    const auto sweep = nlohmann::json::parse(slurp(dir / "s.json"));
    CHECK(sweep.dump().find("1.0") != std::string::npos);
  }
}
