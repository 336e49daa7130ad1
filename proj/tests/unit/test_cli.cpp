#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "opf_resid/cli.hpp"
#include "opf_resid/grid_model.hpp"
#include "opf_resid/neural.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("opf_resid_cli_" + std::string(::testing::UnitTest::GetInstance()
                                               ->current_test_info()
                                               ->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  const std::string case9_ = opf_test::data_path("case9.m");
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, AcopfSucceeds) {
  const CliRun r = run({"acopf", case9_});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j.at("status"), "optimal");
  EXPECT_NEAR(j.at("cost").get<double>(), 5296.69, 0.1);
}

TEST_F(Cli, MalformedSetpointsNameTheField) {
  const std::string sp = write("sp.json", R"({"pg": [1.0], "vg": [1.0, 1.0], "vref": 1.0})");
  const CliRun r = run({"pf", case9_, "--setpoints", sp});
  EXPECT_EQ(r.code, exit_domain_error);
  EXPECT_NE(r.err.find("'pg'"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({"bogus"}).code, exit_usage);
  EXPECT_EQ(run({}).code, exit_usage);
  EXPECT_EQ(run({"acopf"}).code, exit_usage);
  EXPECT_EQ(run({"acopf", case9_, "--max-iter", "many"}).code, exit_usage);
  EXPECT_EQ(run({"--help"}).code, exit_ok);
}

TEST_F(Cli, MissingCaseIsADomainError) {
  EXPECT_EQ(run({"dcopf", path("missing.m")}).code, exit_domain_error);
}

TEST_F(Cli, CaseDumpUsesExternalIds) {
  const CliRun r = run({"case", "dump", case9_});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const auto j = r.json();
  EXPECT_EQ(j.at("buses").size(), 9u);
  EXPECT_EQ(j.at("branches")[0].at("from"), 1);
}

TEST_F(Cli, DcopfWritesToFile) {
  const std::string out = path("dc.json");
  const CliRun r = run({"dcopf", case9_, "--out", out});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::ifstream in(out);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("status"), "optimal");
}

TEST_F(Cli, GradcheckPasses) {
  const CliRun r = run({"gradcheck", case9_, "--seed", "1", "--directions", "5"});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  EXPECT_LE(r.json().at("max_relative_error").get<double>(), 1e-4);
}

TEST_F(Cli, GenerateInspectAndEvaluate) {
  const std::string data = path("data.jsonl");
  ASSERT_EQ(run({"gen-data", case9_, "-n", "3", "--out", data}).code, exit_ok);
  std::ifstream in(data);
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    ++lines;
  }
  EXPECT_EQ(lines, 3);

  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  Checkpoint c;
  c.params = MlpParams(network_dims(g, layout, {8}));
  c.case_name = g.name;
  const std::string ckpt = path("net.json");
  save_checkpoint(c, ckpt);

  const CliRun info = run({"nn", "inspect", ckpt});
  ASSERT_EQ(info.code, exit_ok) << info.err;
  EXPECT_EQ(info.json().at("dims"), nlohmann::json(c.params.dims()));

  const char* saved = std::getenv("OPF_RESID_THREADS");
  const std::string restore = saved ? saved : "";
  setenv("OPF_RESID_THREADS", "2", 1);
  const CliRun env_run = run({"eval", case9_, "--ckpt", ckpt, "--data", data, "--mode", "pf",
                              "--repeats", "1"});
  const CliRun flag_run = run({"eval", case9_, "--ckpt", ckpt, "--data", data, "--mode", "pf",
                               "--repeats", "1", "--threads", "1"});
  if (saved) {
    setenv("OPF_RESID_THREADS", restore.c_str(), 1);
  } else {
    unsetenv("OPF_RESID_THREADS");
  }
  ASSERT_EQ(env_run.code, exit_ok) << env_run.err;
  ASSERT_EQ(flag_run.code, exit_ok) << flag_run.err;
  EXPECT_EQ(env_run.json().at("hardware").at("threads"), 2);
  EXPECT_EQ(flag_run.json().at("hardware").at("threads"), 1);
  EXPECT_EQ(flag_run.json().at("pf").at("samples"), 3);

  const CliRun mismatch = run({"eval", opf_test::data_path("case14.m"), "--ckpt", ckpt,
                               "--data", data});
  EXPECT_EQ(mismatch.code, exit_domain_error);
}

TEST_F(Cli, BinaryRunsStandalone) {
  const std::string out = path("stdout.txt");
  const std::string cmd = std::string(OPF_RESID_BIN) + " dcopf " + case9_ + " > " + out;
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  std::ifstream in(out);
  EXPECT_EQ(nlohmann::json::parse(in).at("case"), "case9");
  const std::string bad = std::string(OPF_RESID_BIN) + " nosuchcommand 2> /dev/null";
  const int status = std::system(bad.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
}
