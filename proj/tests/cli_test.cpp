#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Result run(const std::string& args) {
  const std::string cmd = std::string(KDOP_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "kdop_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream cfg(root_ / "kdop.cfg");
    cfg << "data.dynamic = " << (root_ / "data" / "dynamic.csv").string() << "\n"
        << "data.static = " << (root_ / "data" / "static.csv").string() << "\n"
        << "data.labels = " << (root_ / "data" / "labels.csv").string() << "\n"
        << "data.window_candidates = 180\n"
        << "output.dir = " << (root_ / "out").string() << "\n"
        << "synth.n_patients = 60\n"
        << "synth.T = 8\n"
        << "synth.v = 3\n"
        << "synth.u = 3\n"
        << "train.max_epochs = 4\n"
        << "train.patience = 2\n"
        << "gb.n_trees = 10\n";
  }
  static std::string cfg() { return " --config " + (root_ / "kdop.cfg").string(); }
  static inline fs::path root_;
};

}  // namespace

TEST(Cli, MissingConfigIsUsageError) {
  const auto r = run("train --config /nonexistent/kdop.cfg");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("kdop: error[config]:"), std::string::npos) << r.output;
}

TEST(Cli, UnknownOptionIsUsageError) { EXPECT_EQ(run("train --bogus").code, 1); }

TEST(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run("").code, 1); }

TEST(Cli, PrintConfigShowsOverrides) {
  const auto r = run("train --print-config --seed 9 --interval 7");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("seed = 9\n"), std::string::npos);
  EXPECT_NE(r.output.find("data.interval_days = 7\n"), std::string::npos);
}

TEST_F(CliRun, PrepareWithoutDataIsDataError) {
  std::ofstream bad(root_ / "nodata.cfg");
  bad << "data.dynamic = " << (root_ / "nodata" / "missing.csv").string() << "\n";
  bad.close();
  const auto e = run("prepare --config " + (root_ / "nodata.cfg").string());
  EXPECT_EQ(e.code, 2) << e.output;
}

TEST_F(CliRun, FullPipelineAndRepeatableEvaluate) {
  ASSERT_EQ(run("synth" + cfg() + " --out " + (root_ / "data").string()).code, 0);
  ASSERT_EQ(run("prepare" + cfg()).code, 0);
  const auto train = run("train" + cfg());
  ASSERT_EQ(train.code, 0) << train.output;
  EXPECT_TRUE(fs::exists(root_ / "out" / "report.json"));
  for (const char* f : {"fold.json", "dynamic_kd.json", "static_op.json"})
    EXPECT_TRUE(fs::exists(root_ / "out" / "fold_2" / f)) << f;

  ASSERT_EQ(run("evaluate" + cfg()).code, 0);
  const auto first = slurp(root_ / "out" / "evaluation.json");
  ASSERT_EQ(run("evaluate" + cfg()).code, 0);
  EXPECT_EQ(slurp(root_ / "out" / "evaluation.json"), first);

  const auto explain = run("explain" + cfg() + " --patient P00001 --patient P00002");
  ASSERT_EQ(explain.code, 0) << explain.output;
  EXPECT_TRUE(fs::exists(root_ / "out" / "explain" / "P00002.svg"));
  const auto unknown = run("explain" + cfg() + " --patient NOPE");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_EQ(run("explain" + cfg()).code, 1);

  // A changed hyperparameter makes the saved checkpoints stale.
  const auto stale = run("evaluate" + cfg() + " --seed 43");
  EXPECT_EQ(stale.code, 1);
  EXPECT_NE(stale.output.find("stale artifact"), std::string::npos) << stale.output;
}
