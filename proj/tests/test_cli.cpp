// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the command-line surface: exit codes, determinism,
// and the gen-data -> pretrain -> probe -> eval flow on a tiny corpus.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const std::string kCli = TRISIM_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "trisim_cli_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const char* name) const { return (path / name).string(); }
};

const char* kGenFlags =
    " --classes 4 --grid 16x16 --patch 16 --pretrain-mosaics 2 --train-mosaics 6"
    " --test-mosaics 2 --pairs 64 --seed 7";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  TempDir tmp;
  CHECK(run("gen-data --out " + tmp.sub("x") + " --classes 1") == 2);
  CHECK(run("definitely-not-a-command") == 2);
  CHECK(run("probe --checkpoint " + tmp.sub("missing.tsck") + " --data " + tmp.sub("nope") +
            " --out " + tmp.sub("p")) == 2);
  CHECK(run("verify --suite nonsense") == 2);
}

TEST_CASE("gen-data output is byte-identical per seed and creates directories") {
  TempDir tmp;
  REQUIRE(run("gen-data --out " + tmp.sub("a/deep/dir") + kGenFlags) == 0);
  REQUIRE(run("gen-data --out " + tmp.sub("b") + kGenFlags) == 0);
  bool all_equal = true;
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(tmp.sub("a/deep/dir"))) {
    files++;
    const auto other = fs::path(tmp.sub("b")) / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) all_equal = false;
  }
  CHECK(files >= 13);  // 10 mosaics + pairs + 2 label manifests + stats
  CHECK(all_equal);

  REQUIRE(run("gen-data --out " + tmp.sub("c") + kGenFlags + " --seed 8") == 0);
  CHECK(slurp(fs::path(tmp.sub("b")) / "mosaic_pre_0.trimg") !=
        slurp(fs::path(tmp.sub("c")) / "mosaic_pre_0.trimg"));
}

TEST_CASE("config file values apply with flags taking precedence") {
  TempDir tmp;
  {
    std::ofstream conf(tmp.sub("run.conf"));
    conf << "# comment line\n";
    conf << "classes=3\n";
    conf << "seed=9\n";
  }
  REQUIRE(run("gen-data --out " + tmp.sub("from-config") + " --config " + tmp.sub("run.conf") +
              " --grid 16x16 --patch 16 --pretrain-mosaics 1 --train-mosaics 1 --test-mosaics 1"
              " --pairs 16") == 0);
  const std::string stats = slurp(fs::path(tmp.sub("from-config")) / "stats.txt");
  CHECK(stats.find("classes=3") != std::string::npos);
  CHECK(stats.find("# seed=9") != std::string::npos);

  REQUIRE(run("gen-data --out " + tmp.sub("flag-wins") + " --config " + tmp.sub("run.conf") +
              " --classes 4 --grid 16x16 --patch 16 --pretrain-mosaics 1 --train-mosaics 1"
              " --test-mosaics 1 --pairs 16") == 0);
  CHECK(slurp(fs::path(tmp.sub("flag-wins")) / "stats.txt").find("classes=4") !=
        std::string::npos);

  {
    std::ofstream conf(tmp.sub("bad.conf"));
    conf << "not_a_real_key=1\n";
  }
  CHECK(run("gen-data --out " + tmp.sub("y") + " --config " + tmp.sub("bad.conf")) == 2);
}

TEST_CASE("pretrain, probe, supervised, and eval round out the pipeline") {
  TempDir tmp;
  REQUIRE(run("gen-data --out " + tmp.sub("data") + kGenFlags) == 0);

  SECTION("pretrain writes the curve and a loadable checkpoint") {
    REQUIRE(run("pretrain --data " + tmp.sub("data") + " --out " + tmp.sub("run") +
                " --method simtriplet --epochs 2 --batch 16 --encoder small --seed 3") == 0);
    const std::string curve = slurp(fs::path(tmp.sub("run")) / "curve.csv");
    CHECK(curve.find("# method=simtriplet") != std::string::npos);
    CHECK(curve.find("# scaled_lr=0.003125") != std::string::npos);  // 0.05*16/256
    CHECK(curve.find("step,lr,l_intra,l_inter,l_total") != std::string::npos);
    std::size_t rows = 0;
    std::istringstream is(curve);
    std::string line;
    while (std::getline(is, line))
      if (!line.empty() && line[0] != '#' && line[0] != 's') rows++;
    CHECK(rows == 8);  // 2 epochs x (64/16) steps

    REQUIRE(run("probe --checkpoint " + tmp.sub("run") + "/checkpoint.tsck --data " +
                tmp.sub("data") + " --out " + tmp.sub("probe") + " --epochs 3 --seed 3") == 0);
    CHECK(fs::exists(fs::path(tmp.sub("probe")) / "heads.tsck"));
    const std::string report = slurp(fs::path(tmp.sub("probe")) / "probe_report.csv");
    CHECK(report.find("macro_f1,balanced_acc") != std::string::npos);
    CHECK(report.find("# fraction=1") != std::string::npos);

    REQUIRE(run("eval --checkpoint " + tmp.sub("run") + "/checkpoint.tsck --heads " +
                tmp.sub("probe") + "/heads.tsck --data " + tmp.sub("data") +
                " --labels labels_test.csv --out " + tmp.sub("report.csv")) == 0);
    CHECK(slurp(tmp.sub("report.csv")).find("confusion") != std::string::npos);
  }

  SECTION("simsiam curve writes empty inter-sample fields") {
    REQUIRE(run("pretrain --data " + tmp.sub("data") + " --out " + tmp.sub("ss") +
                " --method simsiam --epochs 1 --batch 16 --encoder small --seed 3") == 0);
    const std::string curve = slurp(fs::path(tmp.sub("ss")) / "curve.csv");
    CHECK(curve.find(",,") != std::string::npos);
  }

  SECTION("supervised bundle evaluates without a pretraining checkpoint") {
    REQUIRE(run("supervised --data " + tmp.sub("data") + " --out " + tmp.sub("sup") +
                " --encoder small --epochs 3 --fraction 0.25 --seed 3") == 0);
    REQUIRE(run("eval --heads " + tmp.sub("sup") + "/supervised.tsck --data " + tmp.sub("data") +
                " --labels labels_test.csv --out " + tmp.sub("sup_report.csv")) == 0);
    CHECK(slurp(tmp.sub("sup_report.csv")).find("macro_f1,balanced_acc") != std::string::npos);
  }

  SECTION("probe reports are reproducible per seed") {
    REQUIRE(run("pretrain --data " + tmp.sub("data") + " --out " + tmp.sub("r1") +
                " --epochs 1 --batch 16 --encoder small --seed 5") == 0);
    REQUIRE(run("probe --checkpoint " + tmp.sub("r1") + "/checkpoint.tsck --data " +
                tmp.sub("data") + " --out " + tmp.sub("p1") + " --epochs 3 --seed 11") == 0);
    REQUIRE(run("probe --checkpoint " + tmp.sub("r1") + "/checkpoint.tsck --data " +
                tmp.sub("data") + " --out " + tmp.sub("p2") + " --epochs 3 --seed 11") == 0);
    CHECK(slurp(fs::path(tmp.sub("p1")) / "probe_report.csv") ==
          slurp(fs::path(tmp.sub("p2")) / "probe_report.csv"));
    CHECK(slurp(fs::path(tmp.sub("p1")) / "heads.tsck") ==
          slurp(fs::path(tmp.sub("p2")) / "heads.tsck"));
  }
}

TEST_CASE("verify suites succeed on a healthy build") {
  CHECK(run("verify --suite gradcheck") == 0);
  CHECK(run("verify --suite metrics") == 0);
  CHECK(run("verify --suite sampler") == 0);
}
