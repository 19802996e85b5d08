#include "dgadr/config.hpp"
#include "dgadr/data.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(::testing::TempDir()) / "dgadr_cli_test";

int run(const std::string &args) {
  const std::string cmd = std::string(DGADR_CLI) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> last_row_fields(const fs::path &p) {
  std::istringstream in(slurp(p));
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  std::vector<std::string> out;
  std::istringstream row(last);
  for (std::string f; std::getline(row, f, ',');) out.push_back(f);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream cfg(kWork / "tiny.cfg");
    cfg << "num_domains = 3\nnum_classes = 3\nfeature_dim = 4\nsamples_per_domain = 40\n"
           "hidden_dims = 8\nbatch_size = 16\nepochs = 2\nlr = 0.05\nseeds = 0,1\n";
  }
  std::string cfg() const { return (kWork / "tiny.cfg").string(); }
};

}  // namespace

TEST_F(Cli, GenWritesDatasetAndResolvedConfig) {
  ASSERT_EQ(run("gen --config " + cfg() + " --out " + (kWork / "d.csv").string() + " --seed 3"), 0);
  const auto ds = dgadr::load_dataset((kWork / "d.csv").string());
  EXPECT_EQ(ds.size(), 120u);
  EXPECT_EQ(dgadr::load_config((kWork / "d.csv.config.resolved").string()).synth.seed, 3u);
}

TEST_F(Cli, TrainEvalAnalyzeChain) {
  const auto data = (kWork / "chain.csv").string();
  ASSERT_EQ(run("gen --config " + cfg() + " --out " + data), 0);
  const auto run_dir = kWork / "train";
  ASSERT_EQ(run("train --config " + cfg() + " --data " + data + " --target-domain 1 --out " + run_dir.string()), 0);
  for (const char *f : {"params.out", "history.csv", "results.csv", "metrics.json", "config.resolved", "manifest.txt"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  const auto eval_dir = kWork / "eval";
  ASSERT_EQ(run("eval --params " + (run_dir / "params.out").string() + " --data " + data +
                " --target-domain 1 --out " + eval_dir.string()),
            0);
  // Same model, same target: the metric columns agree with the training run.
  const auto train_row = last_row_fields(run_dir / "results.csv");
  const auto eval_row = last_row_fields(eval_dir / "results.csv");
  ASSERT_EQ(train_row.size(), 6u);
  ASSERT_EQ(eval_row.size(), 4u);
  EXPECT_EQ(std::vector<std::string>(train_row.begin() + 2, train_row.begin() + 5),
            std::vector<std::string>(eval_row.begin() + 1, eval_row.end()));
  const auto an = kWork / "analyze";
  ASSERT_EQ(run("analyze --params " + (run_dir / "params.out").string() + " --data " + data + " --out " + an.string()), 0);
  for (const char *f : {"kl.csv", "dispersion.txt", "pca.csv"}) EXPECT_TRUE(fs::exists(an / f)) << f;
}

TEST_F(Cli, LotoIsByteReproducible) {
  ASSERT_EQ(run("loto --config " + cfg() + " --out " + (kWork / "l1").string()), 0);
  ASSERT_EQ(run("loto --config " + cfg() + " --out " + (kWork / "l2").string() + " --jobs 2"), 0);
  EXPECT_EQ(slurp(kWork / "l1" / "results.csv"), slurp(kWork / "l2" / "results.csv"));
  EXPECT_EQ(slurp(kWork / "l1" / "aggregate.csv"), slurp(kWork / "l2" / "aggregate.csv"));
  EXPECT_NE(slurp(kWork / "l1" / "aggregate.csv").find("\nAverage,"), std::string::npos);
}

TEST_F(Cli, ErrorsExitNonZeroWithMessage) {
  EXPECT_EQ(run("train --config " + cfg() + " --target-domain 9 --out " + (kWork / "bad").string()), 1);
  EXPECT_NE(slurp(kWork / "last.log").find("dgadr: error:"), std::string::npos);
  EXPECT_NE(run("frobnicate"), 0);
  std::ofstream(kWork / "bad.cfg") << "learning_rate = 1\n";
  EXPECT_EQ(run("loto --config " + (kWork / "bad.cfg").string() + " --out " + (kWork / "x").string()), 1);
  EXPECT_NE(slurp(kWork / "last.log").find("unknown config key"), std::string::npos);
}

TEST_F(Cli, GradcheckPasses) {
  EXPECT_EQ(run("gradcheck --cases 5"), 0);
}
