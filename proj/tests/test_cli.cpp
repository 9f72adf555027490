#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_binary;

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string &args) {
  const std::string cmd = g_binary + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult res;
  FILE *pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe))
    res.output += buf.data();
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("plforge_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// one synth + source-train per process, shared by the tests below
struct Workspace {
  TempDir dir;
  fs::path source, target, model;
  Workspace() {
    source = dir.path / "source.fbun";
    target = dir.path / "target.fbun";
    model = dir.path / "model.adpt";
    auto r = run_cli("--seed 7 synth --out-dir " + dir.str());
    REQUIRE(r.exit_code == 0);
    r = run_cli("--seed 7 source-train " + source.string() + " --out " +
                model.string());
    REQUIRE(r.exit_code == 0);
  }
};

Workspace &workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("synth writes deterministic bundles") {
  auto &ws = workspace();
  TempDir other;
  const auto r = run_cli("--seed 7 synth --out-dir " + other.str());
  CHECK(r.exit_code == 0);
  CHECK(slurp(other.path / "source.fbun") == slurp(ws.source));
  CHECK(slurp(other.path / "target.fbun") == slurp(ws.target));
  CHECK(fs::exists(other.path / "source.fbun.manifest.json"));
}

TEST_CASE("synth requires an existing output directory") {
  const auto r = run_cli("synth --out-dir /nonexistent/plforge");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("does not exist") != std::string::npos);
}

TEST_CASE("source-train reports validation accuracy") {
  auto &ws = workspace();
  CHECK(fs::exists(ws.model));
  TempDir tmp;
  const auto r = run_cli("--seed 7 source-train " + ws.source.string() +
                         " --out " + (tmp.path / "m.adpt").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("validation accuracy") != std::string::npos);
  // same seed, same data: byte-identical checkpoint
  CHECK(slurp(tmp.path / "m.adpt") == slurp(ws.model));
}

TEST_CASE("select emits an id-sorted CSV") {
  auto &ws = workspace();
  TempDir tmp;
  const auto out = tmp.path / "sel.csv";
  const auto r = run_cli("--seed 7 --gamma 0.6 select " + ws.target.string() +
                         " " + ws.model.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);

  std::ifstream is(out);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "id,pseudo_label,score,selected");
  long prev_id = -1;
  int n_rows = 0, n_selected = 0;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const long id = std::stol(cell);
    CHECK(id > prev_id);
    prev_id = id;
    std::getline(ss, cell, ',');  // pseudo_label
    std::getline(ss, cell, ',');  // score
    std::getline(ss, cell, ',');
    const int sel = std::stoi(cell);
    CHECK((sel == 0 || sel == 1));
    n_selected += sel;
    ++n_rows;
  }
  CHECK(n_rows == 300);
  CHECK(n_selected >= 180);  // ceil(0.6 * 100) per class, three classes

  SUBCASE("baseline methods run too") {
    for (const std::string m : {"prob", "ent", "cossim"}) {
      const auto rb = run_cli("--seed 7 select " + ws.target.string() + " " +
                              ws.model.string() + " --method " + m + " --out " +
                              (tmp.path / (m + ".csv")).string());
      CHECK(rb.exit_code == 0);
    }
  }
  SUBCASE("unknown method fails with a config error") {
    const auto rb = run_cli("select " + ws.target.string() + " " +
                            ws.model.string() + " --method bogus --out " +
                            (tmp.path / "x.csv").string());
    CHECK(rb.exit_code == 2);
  }
}

TEST_CASE("invalid flag values exit with code 2") {
  auto &ws = workspace();
  TempDir tmp;
  const auto r = run_cli("--gamma 1.5 select " + ws.target.string() + " " +
                         ws.model.string() + " --out " +
                         (tmp.path / "x.csv").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("gamma") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected") {
  TempDir tmp;
  const auto cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 7, "gamme": 0.5})";
  const auto r =
      run_cli("--config " + cfg.string() + " synth --out-dir " + tmp.str());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("unknown config key") != std::string::npos);
}

TEST_CASE("malformed config json is a config error") {
  TempDir tmp;
  const auto cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << "{not json";
  const auto r =
      run_cli("--config " + cfg.string() + " synth --out-dir " + tmp.str());
  CHECK(r.exit_code == 2);
}

TEST_CASE("config values drive generation") {
  TempDir tmp;
  const auto cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 11, "n_classes": 4, "per_class": 10})";
  const auto r =
      run_cli("--config " + cfg.string() + " synth --out-dir " + tmp.str());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("N=40") != std::string::npos);
}

TEST_CASE("adapt produces a checkpoint and an epoch log") {
  auto &ws = workspace();
  TempDir tmp;
  const auto r = run_cli("--seed 7 --epochs 2 adapt " + ws.target.string() +
                         " " + ws.model.string() + " --out-dir " + tmp.str());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(tmp.path / "adapted.adpt"));

  std::ifstream is(tmp.path / "epochs.csv");
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line ==
        "seed,epoch,pl_accuracy,selected_pl_accuracy,target_accuracy,"
        "mean_l_cl,mean_l_ce,mean_l_im,mean_l_all,n_selected");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  SUBCASE("a second run is byte-identical") {
    TempDir again;
    const auto r2 = run_cli("--seed 7 --epochs 2 adapt " + ws.target.string() +
                            " " + ws.model.string() + " --out-dir " +
                            again.str());
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(again.path / "adapted.adpt") == slurp(tmp.path / "adapted.adpt"));
    CHECK(slurp(again.path / "epochs.csv") == slurp(tmp.path / "epochs.csv"));
  }
  SUBCASE("report merges logs sorted by seed then epoch") {
    TempDir second;
    const auto r2 = run_cli("--seed 3 --epochs 2 adapt " + ws.target.string() +
                            " " + ws.model.string() + " --out-dir " +
                            second.str());
    REQUIRE(r2.exit_code == 0);
    const auto merged = tmp.path / "merged.csv";
    const auto r3 = run_cli("report " + (tmp.path / "epochs.csv").string() +
                            " " + (second.path / "epochs.csv").string() +
                            " --out " + merged.string());
    REQUIRE(r3.exit_code == 0);
    std::ifstream ms(merged);
    std::getline(ms, line);  // header
    std::vector<std::pair<long, long>> keys;
    while (std::getline(ms, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      const long seed = std::stol(cell);
      std::getline(ss, cell, ',');
      keys.emplace_back(seed, std::stol(cell));
    }
    REQUIRE(keys.size() == 4);
    CHECK(std::is_sorted(keys.begin(), keys.end()));
    CHECK(keys.front().first == 3);
    CHECK(keys.back().first == 7);
  }
}

TEST_CASE("report with no logs writes just the header") {
  TempDir tmp;
  const auto out = tmp.path / "empty.csv";
  const auto r = run_cli("report --out " + out.string());
  REQUIRE(r.exit_code == 0);
  std::ifstream is(out);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("seed,epoch,", 0) == 0);
  CHECK(!std::getline(is, line));
}

TEST_CASE("missing input file is an io error") {
  TempDir tmp;
  const auto r = run_cli("source-train /nonexistent.fbun --out " +
                         (tmp.path / "m.adpt").string());
  CHECK(r.exit_code == 2);
}

int main_impl(int argc, char **argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <plforge-binary> [doctest args]\n");
    return 1;
  }
  g_binary = argv[1];
  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  return ctx.run();
}

int main(int argc, char **argv) { return main_impl(argc, argv); }
