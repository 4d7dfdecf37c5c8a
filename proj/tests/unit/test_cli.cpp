// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <doctest.h>

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cellmnn::cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cellmnn-test-cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth is reproducible for a fixed seed") {
  const fs::path dir = scratch("synth");
  for (const char* name : {"a.csv", "b.csv"}) {
    const Result r = run({"synth", "--kind", "linear", "--seed", "7", "--n-per-time", "200", "--out",
                          (dir / name).string()});
    REQUIRE(r.code == 0);
  }
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv.json") == slurp(dir / "b.csv.json"));

  REQUIRE(run({"synth", "--seed", "8", "--n-per-time", "200", "--out", (dir / "c.csv").string()}).code == 0);
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));
}

TEST_CASE("usage errors exit with code 2 and name the flag") {
  const fs::path dir = scratch("usage");
  Result r = run({"eval", "--data", "x.csv", "--report", (dir / "r.csv").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("--checkpoint") != std::string::npos);

  r = run({"synth", "--kind", "cubic", "--out", (dir / "a.csv").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("--kind") != std::string::npos);

  r = run({});
  CHECK(r.code == 2);
}

TEST_CASE("failing commands exit with code 1 and a structured error") {
  const fs::path dir = scratch("failure");
  const Result r = run({"pca", "--data", (dir / "missing.csv").string(), "--out", (dir / "b.csv").string()});
  CHECK(r.code == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j.contains("error"));
  CHECK(j["message"].get<std::string>().find("missing.csv") != std::string::npos);
}

TEST_CASE("help lists defaults") {
  const Result r = run({"train", "--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("--lr") != std::string::npos);
  CHECK(r.out.find("[0.0002]") != std::string::npos);
  CHECK(r.out.find("--patience") != std::string::npos);
}

TEST_CASE("end to end: synth, pca, train, eval") {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = scratch("e2e");
  const std::string data = (dir / "data.csv").string(), basis = (dir / "basis.csv").string();
  REQUIRE(run({"synth", "--seed", "7", "--n-per-time", "300", "--out", data}).code == 0);
  REQUIRE(run({"pca", "--data", data, "--dz", "2", "--out", basis}).code == 0);

  auto train = [&](const std::string& name) {
    const Result r = run({"--deterministic", "train", "--data", data, "--basis", basis, "--heldout", "1",
                          "--max-steps", "150", "--depth", "2", "--width", "16", "--seed", "3", "--out",
                          (dir / name).string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  };
  train("a.json");
  train("b.json");
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

  auto strip = [](nlohmann::json m) {
    m.erase("wall_seconds");
    m["config"].erase("out");
    m.erase("outputs");
    return m;
  };
  const auto ma = nlohmann::json::parse(slurp(dir / "a.json.manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(dir / "b.json.manifest.json"));
  CHECK(ma.contains("wall_seconds"));
  CHECK(ma["seed"].get<std::uint64_t>() == 3);
  CHECK(ma["inputs"].size() == 2);
  CHECK(strip(ma) == strip(mb));

  const std::string report = (dir / "report.csv").string();
  const Result ev = run({"eval", "--checkpoint", (dir / "a.json").string(), "--data", data, "--baselines",
                         "--report", report});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const std::string csv = slurp(report);
  CHECK(csv.find("cellmnn,emd") != std::string::npos);
  CHECK(csv.find("persistence,emd") != std::string::npos);
  CHECK(csv.find("ot-interpolate,emd") != std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j.contains("entries"));

  const std::string db = (dir / "db.tsv").string();
  std::ofstream(db) << "g0\tg1\tActivation\t1\ng0\tg2\tRepression\t2\ng1\tg0\tActivation\t3\n";
  const std::string inter = (dir / "inter.csv").string();
  const Result ens = run({"interactions", "--checkpoint", (dir / "a.json").string(), "--checkpoint",
                          (dir / "b.json").string(), "--data", data, "--db", db, "--min-edges", "0", "--top-k", "0",
                          "--n-cells", "200", "--out", inter});
  REQUIRE_MESSAGE(ens.code == 0, ens.err);
  CHECK(slurp(inter).rfind("source,models,precision_mean", 0) == 0);
  const auto ej = nlohmann::json::parse(slurp(dir / "inter.json"));
  REQUIRE(ej["ensemble"].size() == 2);
  CHECK(ej["ensemble"][0]["models"].get<int>() == 2);
  // Twin checkpoints classify identically.
  CHECK(ej["ensemble"][0]["f1"]["std"].get<double>() == 0.0);
  CHECK(run({"interactions", "--checkpoint", (dir / "a.json").string(), "--checkpoint", (dir / "b.json").string(),
             "--data", data, "--out", inter})
            .code == 2);

  const double minutes =
      std::chrono::duration<double, std::ratio<60>>(std::chrono::steady_clock::now() - start).count();
  CHECK(minutes < 5.0);
}

TEST_CASE("config file supplies options that flags override") {
  const fs::path dir = scratch("config");
  const fs::path cfg = dir / "run.toml";
  std::ofstream(cfg) << "[synth]\nseed = 11\nn-per-time = 50\n";
  const std::string a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
  REQUIRE(run({"--config", cfg.string(), "synth", "--out", a}).code == 0);
  REQUIRE(run({"synth", "--seed", "11", "--n-per-time", "50", "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  const auto m = nlohmann::json::parse(slurp(a + ".manifest.json"));
  CHECK(m["config"]["seed"].get<std::string>() == "11");
}
