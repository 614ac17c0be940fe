#include "rotlab/cli.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using rotlab::cli::run;

namespace {

struct Result {
  int status;
  std::string out, err;
};

Result rotlab_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rotlab");
  std::ostringstream out, err;
  const int status = run(args, out, err);
  return {status, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rotlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return path(name);
  }
  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  fs::path dir_;
};

}  // namespace

TEST(CliCommands, AllTenSubcommands) {
  const auto cmds = rotlab::cli::subcommands();
  EXPECT_EQ(cmds.size(), 10u);
  EXPECT_EQ(cmds.front(), "verify-rotation");
  EXPECT_EQ(cmds.back(), "train-demo");
}

TEST_F(Cli, MissingOrUnknownSubcommandIsUsageError) {
  EXPECT_EQ(rotlab_cli({}).status, 2);
  const Result r = rotlab_cli({"frobnicate"});
  EXPECT_EQ(r.status, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, HelpAndVersion) {
  const Result h = rotlab_cli({"--help"});
  EXPECT_EQ(h.status, 0);
  EXPECT_NE(h.out.find("verify-rotation"), std::string::npos);
  const Result sub = rotlab_cli({"linreg", "--help"});
  EXPECT_EQ(sub.status, 0);
  EXPECT_NE(sub.out.find("--degenerate-column"), std::string::npos);
  const Result v = rotlab_cli({"--version"});
  EXPECT_EQ(v.status, 0);
  EXPECT_EQ(v.out, std::string(ROTLAB_VERSION) + "\n");
}

TEST_F(Cli, VerifyRotationWritesInvariantSuite) {
  const Result r = rotlab_cli({"verify-rotation", "--dim", "8", "--sigma", "0.5", "--samples", "1e5",
                               "--seed", "7", "--out", path("o")});
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string csv = slurp(path("o/verify_rotation.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "check,value,tolerance,pass");
  EXPECT_NE(csv.find("dense_oracle_rel_err"), std::string::npos);
  EXPECT_EQ(csv.find(",false"), std::string::npos);
  const auto manifest = nlohmann::json::parse(slurp(path("o/verify-rotation.manifest.json")));
  EXPECT_EQ(manifest["command"], "verify-rotation");
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["config"]["dim"], 8);
  EXPECT_TRUE(manifest.contains("timestamp"));
}

TEST_F(Cli, LinregDegenerateColumnReportsInfiniteDropoutKappa) {
  const Result r = rotlab_cli({"linreg", "--lambda", "1", "--degenerate-column", "--out", path("o")});
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream csv(slurp(path("o/linreg.csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "lambda,method,D,N,kappa");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    const std::string kappa = line.substr(line.rfind(',') + 1);
    if (line.find(",dropout,") != std::string::npos) {
      EXPECT_EQ(kappa, "inf");
    } else {
      EXPECT_LE(std::stod(kappa), 7.0);
    }
  }
  EXPECT_GT(rows, 0);
}

TEST_F(Cli, EmptyConfigMeansDefaults) {
  const std::string cfg = write("empty.json", "");
  ASSERT_EQ(rotlab_cli({"linreg", "--config", cfg, "--out", path("a")}).status, 0);
  ASSERT_EQ(rotlab_cli({"linreg", "--out", path("b")}).status, 0);
  EXPECT_EQ(slurp(path("a/linreg.csv")), slurp(path("b/linreg.csv")));
}

TEST_F(Cli, UnknownConfigKeyIsNamedWithLine) {
  const std::string cfg = write("bad.json", "{\n  \"dim\": 4,\n  \"dimm\": 5\n}\n");
  const Result r = rotlab_cli({"linreg", "--config", cfg, "--out", path("o")});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("dimm"), std::string::npos);
  EXPECT_NE(r.err.find(":3"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(Cli, MalformedConfigIsConfigError) {
  const std::string cfg = write("broken.json", "{\"dim\": }");
  EXPECT_EQ(rotlab_cli({"linreg", "--config", cfg, "--out", path("o")}).status, 2);
  EXPECT_EQ(rotlab_cli({"linreg", "--config", path("missing.json"), "--out", path("o")}).status, 2);
  const std::string arr = write("array.json", "[1, 2]");
  EXPECT_EQ(rotlab_cli({"linreg", "--config", arr, "--out", path("o")}).status, 2);
}

TEST_F(Cli, FlagOverridesFileValue) {
  const std::string cfg = write("c.json", "{\"dim\": 4, \"problems\": 1, \"lambda\": [0.5, 1]}");
  ASSERT_EQ(rotlab_cli({"linreg", "--config", cfg, "--dim", "6", "--out", path("o")}).status, 0);
  std::istringstream csv(slurp(path("o/linreg.csv")));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_NE(line.find(",6,"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 4);
}

TEST_F(Cli, ConfigBooleansAndUnderscores) {
  const std::string cfg = write("c.json", "{\"degenerate_column\": true, \"lambda\": 1, \"problems\": 1}");
  ASSERT_EQ(rotlab_cli({"linreg", "--config", cfg, "--out", path("o")}).status, 0);
  EXPECT_NE(slurp(path("o/linreg.csv")).find("dropout,8,50,inf"), std::string::npos);
  const auto manifest = nlohmann::json::parse(slurp(path("o/linreg.manifest.json")));
  EXPECT_EQ(manifest["config"]["degenerate-column"], true);
  EXPECT_EQ(manifest["config_file"], cfg);
}

TEST_F(Cli, BadValueNamesTheKey) {
  const Result r = rotlab_cli({"linreg", "--dim", "1", "--out", path("o")});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("dim"), std::string::npos);
  const Result t = rotlab_cli({"train-demo", "--lr", "-1", "--out", path("o")});
  EXPECT_EQ(t.status, 2);
  EXPECT_NE(t.err.find("l"), std::string::npos);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  const std::vector<std::string> base{"coadapt", "--samples", "2e4", "--seed", "3"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", path("a")});
  b.insert(b.end(), {"--out", path("b")});
  ASSERT_EQ(rotlab_cli(a).status, 0);
  ASSERT_EQ(rotlab_cli(b).status, 0);
  EXPECT_EQ(slurp(path("a/coadapt.csv")), slurp(path("b/coadapt.csv")));
  auto c = base;
  c[4] = "4";
  c.insert(c.end(), {"--out", path("c")});
  ASSERT_EQ(rotlab_cli(c).status, 0);
  EXPECT_NE(slurp(path("a/coadapt.csv")), slurp(path("c/coadapt.csv")));
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  ::setenv("ROTLAB_OUT_DIR", path("env").c_str(), 1);
  const Result r = rotlab_cli({"noise-budget", "--batch", "8", "--samples", "1e3"});
  ::unsetenv("ROTLAB_OUT_DIR");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "env" / "noise_budget.csv"));
}

TEST_F(Cli, EverySubcommandRunsOnASmallBudget) {
  const std::vector<std::vector<std::string>> runs{
      {"verify-rotation", "--samples", "1e4", "--oracle-samples", "20"},
      {"coadapt", "--samples", "2e4"},
      {"linreg", "--problems", "2"},
      {"angle-demo", "--samples", "100", "--dim", "64", "--flip-samples", "200"},
      {"var-shift", "--reps", "3", "--per-unit"},
      {"bn-curve", "--batch", "8", "--step", "1", "--samples", "1e4"},
      {"bn-poly", "--batch", "8", "--step", "0.5", "--samples", "1e4", "--write-curve"},
      {"cn-check", "--step", "1", "--samples", "1e4"},
      {"noise-budget", "--samples", "1e3"},
      {"train-demo", "--epochs", "2", "--seeds", "2", "--n-val", "50", "--methods", "baseline",
       "rotation"},
  };
  const std::map<std::string, std::string> headers{
      {"coadapt", "coadapt.csv"},          {"linreg", "linreg.csv"},
      {"angle-demo", "flip_rate.csv"},     {"var-shift", "var_shift.csv"},
      {"bn-curve", "bn_curve.csv"},        {"bn-poly", "bn_poly.csv"},
      {"cn-check", "cn_check.csv"},        {"noise-budget", "noise_budget.csv"},
      {"train-demo", "train_summary.csv"}, {"verify-rotation", "verify_rotation.csv"}};
  for (auto args : runs) {
    const std::string name = args.front();
    args.insert(args.end(), {"--out", path(name)});
    const Result r = rotlab_cli(args);
    ASSERT_EQ(r.status, 0) << name << ": " << r.err;
    EXPECT_TRUE(fs::exists(dir_ / name / headers.at(name))) << name;
    EXPECT_TRUE(fs::exists(dir_ / name / (name + ".manifest.json"))) << name;
  }
  EXPECT_EQ(slurp(path("bn-poly/bn_poly.csv")).substr(0, 21), "B,a1,a3,a5,a7,rmse\n8,");
  EXPECT_EQ(slurp(path("bn-curve/bn_curve.csv")).substr(0, 36), "dist,B,x_test,f_expect,f_var,stderr\n");
  const std::string train = slurp(path("train-demo/train.csv"));
  EXPECT_EQ(train.substr(0, train.find('\n')), "regularizer,strength,seed,epoch,train_acc,val_acc");
}

TEST(LoadConfig, ParsesKeysTokensAndLines) {
  const auto p = fs::temp_directory_path() / "rotlab_load_config.json";
  std::ofstream(p) << "{\n  \"keep_rate\": [0.5, 0.8],\n  \"per-unit\": false,\n  \"dist\": \"laplace\"\n}\n";
  const auto cfg = rotlab::cli::load_config(p.string());
  ASSERT_EQ(cfg.entries.size(), 3u);
  std::map<std::string, rotlab::cli::ConfigEntry> by_key;
  for (const auto& e : cfg.entries) by_key[e.key] = e;
  EXPECT_EQ(by_key["keep-rate"].tokens, (std::vector<std::string>{"--keep-rate", "0.5", "0.8"}));
  EXPECT_EQ(by_key["keep-rate"].line, 2);
  EXPECT_EQ(by_key["per-unit"].tokens, (std::vector<std::string>{"--per-unit=false"}));
  EXPECT_EQ(by_key["dist"].tokens, (std::vector<std::string>{"--dist", "laplace"}));
  EXPECT_EQ(by_key["dist"].line, 4);
  fs::remove(p);
}
