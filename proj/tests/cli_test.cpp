#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clap/checkpoint.hpp"
#include "clap/run_config.hpp"

namespace clap {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "clap_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome run(const std::string& args) {
  const fs::path log = scratch() / "last_output.txt";
  const std::string cmd = std::string("'") + CLAP_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

// Small synthetic problem shared by the commands below.
const std::string kData = "--synthetic --classes 2 --per-class 6 --seed 3";
const std::string kModel = "--image-size 32 --widths 4,8 --decoder-width 4";

std::string dir_arg(const std::string& name) { return "--out '" + (scratch() / name).string() + "'"; }

// Trains once and returns the run directory.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const auto r = run("train " + kData + " " + kModel + " --epochs 2 --batch 4 " + dir_arg("train"));
    EXPECT_EQ(r.code, 0) << r.out;
    return scratch() / "train";
  }();
  return dir;
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  EXPECT_EQ(run("train --synthetic --data /tmp").code, 2);
  EXPECT_EQ(run("train " + kData + " --variant wide " + dir_arg("bad_variant")).code, 2);
}

TEST(Cli, InspectReportsCountsAgainstReference) {
  const auto r = run("inspect");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("3,967,697"), std::string::npos);
  EXPECT_NE(r.out.find("reference: 4,991,554"), std::string::npos);
  EXPECT_NE(r.out.find("decoder.wide"), std::string::npos);
  EXPECT_EQ(run("inspect --variant encoder_only --format csv").code, 0);
}

TEST(Cli, TrainWritesRunDirectoryAndEchoesConfig) {
  const fs::path& dir = trained_run();
  for (const char* f : {"config.txt", "classes.txt", "history.log", "best.ckpt", "final.ckpt", "report.txt",
                        "report.csv", "confusion.csv", "summary.txt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const RunConfig rc = RunConfig::from_kv(KeyValues::parse(slurp(dir / "config.txt")));
  EXPECT_EQ(rc.command, "train");
  EXPECT_EQ(rc.train.epochs, 2u);
  EXPECT_EQ(rc.train.batch_size, 4u);
  EXPECT_EQ(rc.model.encoder_widths, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(rc.model.input_height, 32u);
  EXPECT_TRUE(rc.synthetic);
  EXPECT_EQ(read_class_manifest(dir / "classes.txt"), (std::vector<std::string>{"blob0", "blob1"}));
  const std::string history = slurp(dir / "history.log");
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 2);
  EXPECT_EQ(EpochRecord::parse(history.substr(0, history.find('\n'))).epoch, 1u);
  const auto ckpt = load_checkpoint<float>(dir / "final.ckpt");
  EXPECT_EQ(ckpt.model.config(), rc.model);
  EXPECT_EQ(ckpt.class_names.size(), 2u);
}

TEST(Cli, EvalAndGradcamFromCheckpoint) {
  const std::string ckpt = "--checkpoint '" + (trained_run() / "best.ckpt").string() + "'";
  const auto eval = run("eval " + kData + " " + ckpt + " --format csv " + dir_arg("eval"));
  ASSERT_EQ(eval.code, 0) << eval.out;
  const auto rows = parse_csv_report(slurp(scratch() / "eval" / "report.csv"));
  EXPECT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows.back().name, "weighted_avg");

  const auto cam = run("gradcam " + kData + " " + ckpt + " --layer decoder.wide --limit 2 " + dir_arg("cam"));
  ASSERT_EQ(cam.code, 0) << cam.out;
  std::size_t overlays = 0;
  for (const auto& e : fs::directory_iterator(scratch() / "cam" / "heatmaps")) {
    overlays += e.path().extension() == ".ppm";
    EXPECT_EQ(decode_ppm(slurp(e.path())).dim(1), 32u);
  }
  EXPECT_EQ(overlays, 2u);
}

TEST(Cli, ErrorExitCodes) {
  const fs::path& dir = trained_run();
  const std::string ckpt = "--checkpoint '" + (dir / "best.ckpt").string() + "'";

  const auto layer = run("gradcam " + kData + " " + ckpt + " --layer head " + dir_arg("bad_layer"));
  EXPECT_EQ(layer.code, 5) << layer.out;
  EXPECT_NE(layer.out.find("encoder.0"), std::string::npos);

  EXPECT_EQ(run("train " + kData + " " + kModel + " --lr -1 " + dir_arg("bad_lr")).code, 2);
  EXPECT_EQ(run("train " + kData + " " + kModel + " --split 0.5,0.5,0.5 " + dir_arg("bad_split")).code, 2);

  const std::string bytes = slurp(dir / "best.ckpt");
  std::ofstream(scratch() / "truncated.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  const auto corrupt = run("eval " + kData + " --checkpoint '" + (scratch() / "truncated.ckpt").string() + "' " +
                           dir_arg("corrupt"));
  EXPECT_EQ(corrupt.code, 4) << corrupt.out;

  fs::create_directories(scratch() / "empty_data");
  const auto empty = run("eval --data '" + (scratch() / "empty_data").string() + "' " + ckpt + " " + dir_arg("empty"));
  EXPECT_EQ(empty.code, 2) << empty.out;

  const auto diverged = run("train " + kData + " " + kModel + " --epochs 3 --lr 1e9 " + dir_arg("diverged"));
  EXPECT_EQ(diverged.code, 3) << diverged.out;
  EXPECT_TRUE(fs::exists(scratch() / "diverged" / "last_good.ckpt"));
}

TEST(Cli, ResumeContinuesFromCheckpoint) {
  const std::string ckpt = "--checkpoint '" + (trained_run() / "final.ckpt").string() + "'";
  const auto r = run("train " + kData + " " + ckpt + " --epochs 3 --batch 4 " + dir_arg("resume"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string history = slurp(scratch() / "resume" / "history.log");
  ASSERT_FALSE(history.empty());
  EXPECT_EQ(EpochRecord::parse(history.substr(0, history.find('\n'))).epoch, 3u);
  EXPECT_EQ(load_checkpoint<float>(scratch() / "resume" / "final.ckpt").state.get("epoch"), "3");
}

TEST(Cli, WorkerCountDoesNotChangeResults) {
  const std::string common = "train " + kData + " " + kModel + " --epochs 1 --batch 4 ";
  ASSERT_EQ(run(common + "--workers 1 " + dir_arg("w1")).code, 0);
  ASSERT_EQ(run(common + "--workers 3 " + dir_arg("w3")).code, 0);
  EXPECT_EQ(slurp(scratch() / "w1" / "history.log"), slurp(scratch() / "w3" / "history.log"));
  EXPECT_EQ(slurp(scratch() / "w1" / "final.ckpt"), slurp(scratch() / "w3" / "final.ckpt"));
}

}  // namespace
}  // namespace clap
