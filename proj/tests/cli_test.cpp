#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fig_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Result run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(FIG_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  fs::path dir_;
};

TEST_F(Cli, NoArgumentsIsUsageError) {
  auto r = run("");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE((r.out + r.err).find("gen-data"), std::string::npos);
}

TEST_F(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("gen-data --frobnicate 3").code, 1); }

TEST_F(Cli, GenDataWritesOneLinePerGraph) {
  auto r = run("gen-data --num-graphs 10 --seed 7 -o " + path("d.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(path("d.jsonl"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 10);
  auto again = run("gen-data --num-graphs 10 --seed 7");
  EXPECT_EQ(again.out, text);
}

TEST_F(Cli, GradCheckPasses) {
  auto r = run("grad-check --seed 1");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
  auto vn = run("grad-check --seed 2 --variant fig_vn");
  EXPECT_EQ(vn.code, 0) << vn.out;
}

TEST_F(Cli, BadConfigIsDataError) {
  run("gen-data --num-graphs 6 --seed 1 -o " + path("d.jsonl").string());
  write("bad.json", R"({"K_hat": 2.0})");
  auto r = run("train --train " + path("d.jsonl").string() + " --val " + path("d.jsonl").string() + " --config " +
               path("bad.json").string() + " -o " + path("ck.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("K_hat"), std::string::npos) << r.err;
  write("unknown.json", R"({"learning_rate": 0.1})");
  r = run("train --train " + path("d.jsonl").string() + " --val " + path("d.jsonl").string() + " --config " +
          path("unknown.json").string() + " -o " + path("ck.json").string());
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, MalformedDataIsDataError) {
  write("bad.jsonl", "{\"n\":2,\"edges\":[[0,9]],\"x\":[[1],[1]],\"y\":0}\n");
  auto r = run("train --train " + path("bad.jsonl").string() + " --val " + path("bad.jsonl").string() + " -o " +
               path("ck.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("endpoint out of range"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainEvalExportPipeline) {
  ASSERT_EQ(run("gen-data --num-graphs 20 --seed 3 --env-max 6 -o " + path("train.jsonl").string()).code, 0);
  ASSERT_EQ(run("gen-data --num-graphs 8 --seed 4 --env-max 6 -o " + path("val.jsonl").string()).code, 0);
  write("cfg.json", R"({"d": 8, "max_epochs": 3, "batch_size": 8})");
  const std::string train_args = "train -q --train " + path("train.jsonl").string() + " --val " +
                                 path("val.jsonl").string() + " --config " + path("cfg.json").string() +
                                 " --seed 5 -o ";
  auto t1 = run(train_args + path("a.json").string() + " --log " + path("a.log").string());
  ASSERT_EQ(t1.code, 0) << t1.err;
  auto t2 = run(train_args + path("b.json").string() + " --log " + path("b.log").string());
  ASSERT_EQ(t2.code, 0) << t2.err;
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  EXPECT_EQ(slurp(path("a.log")), slurp(path("b.log")));
  const auto log = slurp(path("a.log"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("a.json")))["config"]["seed"], 5);

  auto ev = run("eval --checkpoint " + path("a.json").string() + " --data " + path("val.jsonl").string());
  ASSERT_EQ(ev.code, 0) << ev.err;
  auto report = nlohmann::json::parse(ev.out);
  EXPECT_EQ(report["n_samples"], 8);
  EXPECT_TRUE(report.contains("accuracy"));
  EXPECT_TRUE(report.contains("recovery"));

  auto ex = run("export-attention --checkpoint " + path("a.json").string() + " --data " + path("val.jsonl").string() +
                " --index 2 -o " + path("heat").string());
  ASSERT_EQ(ex.code, 0) << ex.err;
  EXPECT_TRUE(fs::exists(path("heat.csv")));
  EXPECT_TRUE(fs::exists(path("heat.json")));
  auto oob = run("export-attention --checkpoint " + path("a.json").string() + " --data " + path("val.jsonl").string() +
                 " --index 99 -o " + path("heat").string());
  EXPECT_EQ(oob.code, 2);
}

TEST_F(Cli, DivergenceExitsThree) {
  ASSERT_EQ(run("gen-data --num-graphs 8 --seed 3 -o " + path("d.jsonl").string()).code, 0);
  write("cfg.json", R"({"d": 4, "lr": 1e200, "max_epochs": 5})");
  auto r = run("train -q --train " + path("d.jsonl").string() + " --val " + path("d.jsonl").string() + " --config " +
               path("cfg.json").string() + " -o " + path("ck.json").string());
  EXPECT_EQ(r.code, 3) << r.err;
}

}  // namespace
