// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0

#include "flowstraight/cli/commands.hpp"
#include "flowstraight/io/binary.hpp"
#include "flowstraight/io/csv.hpp"
#include "flowstraight/io/manifest.hpp"

#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

using namespace flowstraight;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

const fs::path kFixtures = fs::path(FLOWSTRAIGHT_FIXTURES) / "cli";
const fs::path kRecipes = FLOWSTRAIGHT_RECIPES;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("flowstraight_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("'") + FLOWSTRAIGHT_CLI + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

std::string fixture(const std::string& name) { return "'" + (kFixtures / name).string() + "'"; }

/// Content hashes of every file in a run directory except the manifest.
std::map<std::string, std::string> digest(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == io::kManifestName) continue;
    out[fs::relative(e.path(), dir).string()] = hex64(io::content_hash(io::read_file(e.path())));
  }
  return out;
}

double summary_gte(const fs::path& dir) {
  return io::CsvTable::load(dir / "summary.csv").numeric_column("gte").at(0);
}

}  // namespace

TEST_CASE("solve reproduces the Euler and Heun one-step table on dx/dt = x") {
  TempDir tmp("solve");
  const auto e = std::numbers::e;
  auto r = run("solve --config " + fixture("solve_exponential.json") + " --out '" + (tmp.path / "euler").string() + "'",
               tmp.path);
  REQUIRE(r.code == 0);
  REQUIRE(summary_gte(tmp.path / "euler") == Catch::Approx(e - 2.0).epsilon(1e-14));
  r = run("solve --config " + fixture("solve_exponential.json") + " --solver heun --out '" +
              (tmp.path / "heun").string() + "'",
          tmp.path);
  REQUIRE(r.code == 0);
  REQUIRE(summary_gte(tmp.path / "heun") == Catch::Approx(e - 2.5).epsilon(1e-14));
  const auto traj = io::CsvTable::load(tmp.path / "heun" / "trajectory.csv");
  REQUIRE(traj.numeric_column("x0").back() == 2.5);
  REQUIRE(io::CsvTable::load(tmp.path / "heun" / "summary.csv").numeric_column("nfe").at(0) == 2.0);

  r = run("solve --config " + fixture("solve_exponential.json") + " --nfe 10,20,40 --out '" +
              (tmp.path / "conv").string() + "'",
          tmp.path);
  REQUIRE(r.code == 0);
  const auto g = io::CsvTable::load(tmp.path / "conv" / "convergence.csv").numeric_column("gte");
  REQUIRE(g.size() == 3);
  REQUIRE(g[0] / g[1] == Catch::Approx(2.0).epsilon(0.05));
  REQUIRE(g[1] / g[2] == Catch::Approx(2.0).epsilon(0.05));
}

TEST_CASE("sample on the conditional straight field lands every point on x1") {
  TempDir tmp("sample");
  for (const std::string solver : {"heun", "distilled"}) {
    const auto dir = tmp.path / solver;
    const auto r = run("sample --config " + fixture("sample_straight.json") + " --solver " + solver + " --out '" +
                           dir.string() + "'",
                       tmp.path);
    REQUIRE(r.code == 0);
    const auto t = io::CsvTable::load(dir / "samples.csv");
    REQUIRE(t.rows.size() == 16);
    for (double x : t.numeric_column("x0")) REQUIRE(std::abs(x - 1.0) < 1e-14);
    for (double y : t.numeric_column("x1")) REQUIRE(std::abs(y - 2.0) < 1e-14);
    REQUIRE(t.metadata_value("nfe") == (solver == "distilled" ? "3" : "12"));
  }
}

TEST_CASE("exit codes distinguish configuration, data and numeric failures") {
  TempDir tmp("codes");
  const std::string out = " --out '" + (tmp.path / "run").string() + "'";
  auto r = run("train --config " + fixture("unknown_key.json") + out, tmp.path);
  REQUIRE(r.code == 2);
  REQUIRE_THAT(r.err, ContainsSubstring("unknown key 'radius'"));
  REQUIRE(run("train --config '" + (tmp.path / "absent.json").string() + "'" + out, tmp.path).code == 3);
  REQUIRE(run("frobnicate", tmp.path).code == 2);
  REQUIRE(run("train", tmp.path).code == 2);
  REQUIRE(run("solve --config " + fixture("solve_exponential.json") + " --k 0" + out, tmp.path).code == 2);
  REQUIRE(run("solve --config " + fixture("solve_exponential.json") + " --solver midpoint" + out, tmp.path).code == 2);

  io::write_file_atomic(tmp.path / "broken.fsck", std::string("FSCK\x01\x00\x00\x00garbage", 15));
  r = run("sample --config " + fixture("sample_straight.json") + " --checkpoint '" + (tmp.path / "broken.fsck").string() +
              "'" + out,
          tmp.path);
  REQUIRE(r.code == 3);

  const auto div = tmp.path / "diverged";
  r = run("solve --config " + fixture("solve_divergent.json") + " --out '" + div.string() + "'", tmp.path);
  REQUIRE(r.code == 4);
  REQUIRE(fs::exists(div / "config.json"));
  REQUIRE_FALSE(fs::exists(div / io::kManifestName));
}

TEST_CASE("help enumerates every flag") {
  TempDir tmp("help");
  const std::vector<std::string> flags{"--config", "--seed", "--out",    "--checkpoint", "--k",
                                       "--nfe",    "--solver", "--tol", "--pairs"};
  auto top = run("--help", tmp.path);
  REQUIRE(top.code == 0);
  for (const auto* sub : {"train", "reflow", "distill", "sample", "eval", "solve", "recipe"})
    REQUIRE_THAT(top.out, ContainsSubstring(sub));
  for (const auto& f : flags) REQUIRE_THAT(top.out, ContainsSubstring(f));
  for (const auto* sub : {"train", "reflow", "distill", "sample", "eval", "solve", "recipe"}) {
    const auto r = run(std::string(sub) + " --help", tmp.path);
    REQUIRE(r.code == 0);
    for (const auto& f : flags) REQUIRE_THAT(r.out, ContainsSubstring(f + " "));
    // Every long flag in the help text is one of the documented ones.
    std::istringstream words(r.out);
    std::string w;
    while (words >> w)
      if (w.rfind("--", 0) == 0 && w != "--help")
        REQUIRE(std::find(flags.begin(), flags.end(), w) != flags.end());
  }
  REQUIRE_THAT(run("--version", tmp.path).out, ContainsSubstring(FLOWSTRAIGHT_VERSION));
}

TEST_CASE("full pipeline reruns are byte-identical and manifests verify") {
  TempDir tmp("pipeline");
  const std::string cfg = " --config " + fixture("tiny_pipeline.json");
  auto pipeline = [&](const fs::path& root) {
    const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
    REQUIRE(run("train" + cfg + " --out " + q(root / "train"), tmp.path).code == 0);
    const auto stage1 = root / "train" / "stage1.fsck";
    REQUIRE(run("reflow" + cfg + " --checkpoint " + q(stage1) + " --out " + q(root / "reflow"), tmp.path).code == 0);
    REQUIRE(run("distill" + cfg + " --checkpoint " + q(root / "reflow" / "seqrf.fsck") + " --pairs " +
                    q(root / "reflow" / "pairs.fspd") + " --out " + q(root / "distill"),
                tmp.path)
                .code == 0);
    REQUIRE(run("sample" + cfg + " --checkpoint " + q(root / "distill" / "distilled.fsck") +
                    " --solver distilled --out " + q(root / "sample"),
                tmp.path)
                .code == 0);
    REQUIRE(run("eval" + cfg + " --checkpoint " + q(root / "reflow" / "seqrf.fsck") + " --pairs " +
                    q(root / "reflow" / "pairs.fspd") + " --out " + q(root / "eval"),
                tmp.path)
                .code == 0);
  };
  pipeline(tmp.path / "a");
  pipeline(tmp.path / "b");
  for (const auto* step : {"train", "reflow", "distill", "sample", "eval"}) {
    const auto a = digest(tmp.path / "a" / step), b = digest(tmp.path / "b" / step);
    REQUIRE_FALSE(a.empty());
    REQUIRE(a == b);
    const auto m = io::RunManifest::load(tmp.path / "a" / step);
    REQUIRE_NOTHROW(m.verify(tmp.path / "a" / step));
    REQUIRE(m.outputs.size() == a.size());
  }
  for (const auto* f : {"straightness.csv", "sequential_straightness.csv", "gte_curve.csv", "lipschitz.csv",
                        "distance.csv", "variance_independent.csv", "variance_joint.csv"})
    REQUIRE(fs::exists(tmp.path / "a" / "eval" / f));
  const auto samples = io::CsvTable::load(tmp.path / "a" / "sample" / "samples.csv");
  REQUIRE(samples.metadata_value("nfe") == "2");
  const auto loss = io::CsvTable::load(tmp.path / "a" / "reflow" / "loss.csv");
  REQUIRE(std::find(loss.header.begin(), loss.header.end(), "loss_seg1") != loss.header.end());

  // A different seed changes the outputs.
  REQUIRE(run("train" + cfg + " --seed 6 --out '" + (tmp.path / "c").string() + "'", tmp.path).code == 0);
  REQUIRE(digest(tmp.path / "c") != digest(tmp.path / "a" / "train"));
}

TEST_CASE("bundled recipes parse and reject unknown keys", "[cli]") {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(kRecipes)) {
    if (e.path().extension() != ".json" || e.path().filename() == "checksums.json") continue;
    ++n;
    const auto cfg = cli::load_config(e.path());
    REQUIRE(cfg.recipe.has_value());
    auto j = nlohmann::json::parse(io::read_file(e.path()));
    j["train"]["unexpected"] = 1;
    REQUIRE_THROWS_AS(cli::parse_config(j), ConfigError);
  }
  REQUIRE(n >= 5);
}

TEST_CASE("bundled recipes reproduce their pinned checksums", "[recipe]") {
  const auto pinned = nlohmann::json::parse(io::read_file(kRecipes / "checksums.json"));
  TempDir tmp("recipes");
  for (const auto& [name, entry] : pinned.items()) {
    DYNAMIC_SECTION(name) {
      const auto dir = tmp.path / name;
      const auto r = run("recipe --config '" + (kRecipes / name).string() + "' --out '" + dir.string() + "'", tmp.path);
      REQUIRE(r.code == 0);
      for (const auto& [file, hash] : entry.items()) {
        INFO(name << ": " << file);
        REQUIRE(hex64(io::content_hash(io::read_file(dir / file))) == hash.get<std::string>());
      }
    }
  }
}
