#include <gtest/gtest.h>

#include <sstream>

#include "rdnet/cli.hpp"
#include "rdnet/named_arrays.hpp"
#include "test_util.hpp"

namespace rdnet {
namespace {

using testing::TempDir;

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, SynthThenTrainStage1) {
  TempDir dir("cli");
  const auto data = (dir / "d.rdn").string();
  auto r = cli({"synth", "--out", data, "--count", "6", "--seed", "3", "--manifest", (dir / "m.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "samples\t6\n");
  r = cli({"train-stage1", "--dataset", data, "--epochs", "2", "--checkpoint", (dir / "s1.rdn").string(),
           "--loss-csv", (dir / "loss.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steps\t6\n"), std::string::npos);
  EXPECT_NE(r.out.find("final_loss\t"), std::string::npos);
  const auto csv = read_file_bytes(dir / "loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  TempDir dir("cli_cfg");
  const auto data = (dir / "d.rdn").string();
  ASSERT_EQ(cli({"synth", "--out", data, "--count", "4"}).code, 0);
  const std::string cfg = "epochs=1\nbatch_size=4\ndataset=" + data + "\n";
  write_file_bytes(dir / "c.cfg", std::vector<std::uint8_t>(cfg.begin(), cfg.end()));
  auto r = cli({"train-stage1", "--config", (dir / "c.cfg").string(), "--epochs", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steps\t3\n"), std::string::npos);

  const std::string bad = "stage=2\n";
  write_file_bytes(dir / "bad.cfg", std::vector<std::uint8_t>(bad.begin(), bad.end()));
  r = cli({"train-stage1", "--config", (dir / "bad.cfg").string(), "--dataset", data});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(r.err.starts_with("error\tconfig\t")) << r.err;
}

TEST(Cli, ErrorsAreOneMachineReadableLine) {
  auto r = cli({"train-stage1", "--no-such-flag"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.err.starts_with("error\tusage\t"));
  r = cli({});
  EXPECT_EQ(r.code, 2);
  r = cli({"train-stage2", "--dataset", "/nonexistent/d.rdn", "--stage1-checkpoint", "x"});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(r.err.starts_with("error\tio\t")) << r.err;
  EXPECT_NE(r.err.find("/nonexistent/d.rdn"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  r = cli({"train-stage1", "--epochs", "zero", "--dataset", "x"});
  EXPECT_TRUE(r.err.starts_with("error\tconfig\t")) << r.err;
}

TEST(Cli, Help) {
  const auto r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train-stage2"), std::string::npos);
}

TEST(Cli, DiagRoundtripFreshModel) {
  const auto r = cli({"diag-roundtrip", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "column\tmax_relative_error");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_LT(std::stod(line.substr(line.find('\t') + 1)), 1e-5);
  }
  EXPECT_EQ(rows, 2);
}

TEST(Cli, GradCheckSmall) {
  const auto r = cli({"grad-check", "--size", "16", "--samples", "1"});
  EXPECT_EQ(r.code, 0) << r.err << r.out;
  EXPECT_NE(r.out.find("max_relative_error\t"), std::string::npos);
}

}  // namespace
}  // namespace rdnet
