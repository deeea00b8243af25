#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("afldm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.cfg") << "image_size = 32\n"
                                        "image_count = 8\n"
                                        "eval_count = 4\n"
                                        "vae_widths = 8,8\n"
                                        "vae_steps = 2\n"
                                        "vae_batch = 2\n"
                                        "warmup = 1\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(AFLDM_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() +
                            " 2>" + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  std::string cfg() const { return "--config " + (dir_ / "tiny.cfg").string(); }

  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command --out " + dir_.string()), 2);
  EXPECT_EQ(run("train-vae"), 2);
  EXPECT_EQ(run("train-vae --out " + (dir_ / "o").string() + " --steps -3"), 2);
}

TEST_F(CliTest, BadConfigExitsTwo) {
  std::ofstream(dir_ / "bad.cfg") << "no_such_key = 1\n";
  EXPECT_EQ(run("gen-data --config " + (dir_ / "bad.cfg").string() + " --out " + (dir_ / "o").string()), 2);
  EXPECT_NE(slurp(dir_ / "stderr.txt").find("no_such_key"), std::string::npos);
  EXPECT_EQ(run("freq-map " + cfg() + " --steps 3 --out " + (dir_ / "o").string()), 2);
}

TEST_F(CliTest, MissingOrCorruptCheckpointExitsThree) {
  EXPECT_EQ(run("freq-map " + cfg() + " --ckpt " + (dir_ / "absent.ckpt").string() + " --out " +
                (dir_ / "o").string()),
            3);
  std::ofstream(dir_ / "junk.ckpt") << "afldm-checkpoint 1\ntype=vae\n";
  EXPECT_EQ(run("freq-map " + cfg() + " --ckpt " + (dir_ / "junk.ckpt").string() + " --out " +
                (dir_ / "o").string()),
            3);
}

TEST_F(CliTest, IdentityEvalIsCapped) {
  std::ofstream(dir_ / "tiny.cfg", std::ios::app) << "pipeline = identity\n";
  ASSERT_EQ(run("eval-spsnr " + cfg() + " --out " + (dir_ / "o").string()), 0) << slurp(dir_ / "stderr.txt");
  std::istringstream csv(slurp(dir_ / "o" / "spsnr.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "metric,dx,dy,step,value");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "100") << line;
  }
  EXPECT_EQ(rows, 5);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "manifest.txt"));
}

TEST_F(CliTest, TrainingIsReproducibleAndSweepCanBeEmpty) {
  ASSERT_EQ(run("train-vae " + cfg() + " --seed 7 --out " + (dir_ / "a").string()), 0) << slurp(dir_ / "stderr.txt");
  ASSERT_EQ(run("train-vae " + cfg() + " --seed 7 --out " + (dir_ / "b").string()), 0) << slurp(dir_ / "stderr.txt");
  const std::string a = slurp(dir_ / "a" / "vae.ckpt");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b" / "vae.ckpt"));
  EXPECT_EQ(slurp(dir_ / "a" / "train_log.csv"), slurp(dir_ / "b" / "train_log.csv"));

  ASSERT_EQ(run("shift-sweep " + cfg() + " --ckpt " + (dir_ / "a" / "vae.ckpt").string() + " --steps 0 --out " +
                (dir_ / "s").string()),
            0)
      << slurp(dir_ / "stderr.txt");
  EXPECT_EQ(slurp(dir_ / "s" / "sweep.csv"), "metric,dx,dy,step,value\n");
}

}  // namespace
