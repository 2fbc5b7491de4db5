#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "pdseg/image_io.hpp"
#include "pdseg/serialize.hpp"

namespace fs = std::filesystem;
using namespace pdseg;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "pdseg_test_cli";

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PDSEG_CLI + "\" " + args + " > \"" + (kRoot / "log.txt").string() +
                          "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string at(const std::string& leaf) { return "\"" + (kRoot / leaf).string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Image plane(float a, float b, float c, float d) {
  Image img(1, 2, 2);
  img.data = {a, b, c, d};
  return img;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write_pfm(kRoot / "a.pfm", plane(0.1f, 0.2f, 0.3f, 0.4f));
    write_pfm(kRoot / "b.pfm", plane(0.9f, 0.5f, 0.25f, 0.0f));
    write_pfm(kRoot / "small.pfm", Image(1, 1, 2, 0.5f));
  }
};

void expect_scaled(const Image& out, const Image& in, float k, float tol) {
  ASSERT_EQ(out.channels, 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) EXPECT_NEAR(out.at(c, y, x), k * in.at(0, y, x), tol);
    }
  }
}

}  // namespace

TEST_F(Cli, AggregateSingleInputWithoutAttentionIsIdentity) {
  ASSERT_EQ(run_cli("--out-dir " + at("agg1") + " aggregate --inputs " + at("a.pfm") + " --lambda-c 0 --lambda-s 0"),
            0);
  expect_scaled(read_pfm(kRoot / "agg1" / "aggregated.pfm"), read_pfm(kRoot / "a.pfm"), 1.0f, 1.2e-7f);
}

TEST_F(Cli, AggregateThreeEqualInputsTriples) {
  const std::string a = at("a.pfm");
  ASSERT_EQ(run_cli("--out-dir " + at("agg3") + " aggregate --inputs " + a + "," + a + "," + a +
                  " --lambda-c 0 --lambda-s 0"),
            0);
  expect_scaled(read_pfm(kRoot / "agg3" / "aggregated.pfm"), read_pfm(kRoot / "a.pfm"), 3.0f, 1e-6f);
}

TEST_F(Cli, AggregateZeroAttentionGivesOneAndAHalf) {
  ASSERT_EQ(run_cli("--out-dir " + at("agg15") + " aggregate --inputs " + at("b.pfm")), 0);
  expect_scaled(read_pfm(kRoot / "agg15" / "aggregated.pfm"), read_pfm(kRoot / "b.pfm"), 1.5f, 1e-6f);
  // Same map as a tensor container and as a min-max stretched 16-bit PGM.
  const auto t = load_tensor<float>(kRoot / "agg15" / "aggregated.dftn");
  EXPECT_EQ(t.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_NEAR(t.data()[0], 1.5f * 0.9f, 1e-6f);
  const Image pgm = read_pgm16(kRoot / "agg15" / "aggregated.pgm");
  EXPECT_FLOAT_EQ(pgm.at(0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(pgm.at(0, 1, 1), 0.0f);
}

TEST_F(Cli, AggregateSizeMismatchIsAnError) {
  EXPECT_NE(run_cli("--out-dir " + at("aggx") + " aggregate --inputs " + at("a.pfm") + "," + at("small.pfm")), 0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " --no-such-flag schedule"), 1);
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " train"), 1);  // --data missing
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " --dtype f16 schedule"), 1);
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " schedule --kind cosine"), 1);
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " train --data " + at("missing")), 2);
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " aggregate --inputs " + at("missing.pfm")), 2);
  EXPECT_EQ(run_cli("--out-dir " + at("x") + " schedule"), 0);
}

TEST_F(Cli, ScheduleDumpAndConfigEcho) {
  ASSERT_EQ(run_cli("--out-dir " + at("sched") + " --seed 5 schedule --steps 10"), 0);
  const std::string dump = slurp(kRoot / "sched" / "schedule.txt");
  EXPECT_EQ(dump.rfind("# t beta alpha_bar", 0), 0u);
  const std::string echo = slurp(kRoot / "sched" / "config.ini");
  EXPECT_NE(echo.find("seed=5"), std::string::npos);
  EXPECT_NE(echo.find("[schedule]"), std::string::npos);
  EXPECT_NE(echo.find("steps=10"), std::string::npos);
  EXPECT_EQ(echo.find("train"), std::string::npos);  // only the subcommand that ran
  ASSERT_EQ(run_cli("--config " + at("sched/config.ini") + " --out-dir " + at("sched2")), 0);
  EXPECT_EQ(slurp(kRoot / "sched2" / "schedule.txt"), dump);
}

TEST_F(Cli, GradcheckReportsPerSeedRows) {
  ASSERT_EQ(run_cli("--out-dir " + at("gc") + " gradcheck --case sigmoid --seeds 2"), 0);
  const std::string csv = slurp(kRoot / "gc" / "gradcheck.csv");
  EXPECT_EQ(csv.rfind("case,seed,worst_rel_error,probes,unresolved,status\nsigmoid,0,", 0), 0u);
  EXPECT_EQ(run_cli("--out-dir " + at("gc") + " gradcheck --case nonexistent"), 1);
}

TEST_F(Cli, GenTrainEvalPipeline) {
  ASSERT_EQ(run_cli("--out-dir " + at("data") + " gen-data --n-train 3 --n-test 2 --image-size 32"), 0);
  ASSERT_TRUE(fs::exists(kRoot / "data" / "manifest.txt"));
  ASSERT_EQ(run_cli("--out-dir " + at("run") + " train --data " + at("data") +
                  " --iterations 4 --batch-size 1 --eval-interval 2 --pd-source single:smooth"),
            0);
  const std::string trace = slurp(kRoot / "run" / "trace.csv");
  EXPECT_EQ(trace.rfind("iteration,ce,dice,val_miou\n2,", 0), 0u);
  ASSERT_EQ(run_cli("--out-dir " + at("ev") + " eval --data " + at("data") + " --checkpoint " + at("run/model.ckpt")),
            0);
  EXPECT_EQ(slurp(kRoot / "ev" / "scores.csv").rfind("name,pa,ma,miou\ntest,", 0), 0u);
  // A trained single-map checkpoint has no three-map PDAM to aggregate with.
  EXPECT_EQ(run_cli("--out-dir " + at("agg") + " aggregate --inputs " + at("a.pfm") + " --params " +
                  at("run/model.ckpt")),
            1);
}
