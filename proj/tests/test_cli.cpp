#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

namespace fs = std::filesystem;
using otcf::test_util::read_file;
using otcf::test_util::temp_dir;
using otcf::test_util::write_file;

namespace {

int run(const std::string& args, const fs::path& stderr_file = {}) {
  std::string cmd = std::string(OTCF_CLI_PATH) + " " + args;
  cmd += stderr_file.empty() ? " 2>/dev/null" : " 2>" + stderr_file.string();
  cmd += " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const fs::path& shared_sample() {
  static const fs::path dir = [] {
    auto d = temp_dir("cli_sample");
    if (run("simulate --n 4000 --seed 42 --out " + d.string()) != 0) throw std::runtime_error("simulate failed");
    return d;
  }();
  return dir;
}

std::string data_args() { return "--data " + (shared_sample() / "dataset.csv").string() + " --colliders xc"; }

}  // namespace

TEST(Cli, SimulateWritesThreeFilesDeterministically) {
  const auto a = temp_dir("cli_sim_a"), b = temp_dir("cli_sim_b");
  ASSERT_EQ(run("simulate --preset appendix-a2 --n 3000 --seed 42 --out " + a.string()), 0);
  ASSERT_EQ(run("simulate --preset appendix-a2 --n 3000 --seed 42 --jobs 3 --out " + b.string()), 0);
  for (const char* f : {"dataset.csv", "params.json", "analytic.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
}

TEST(Cli, SimulateRecordsCorrelation) {
  const auto a = temp_dir("cli_sim_r");
  ASSERT_EQ(run("simulate --n 10 --r 0.9 --out " + a.string()), 0);
  const auto j = nlohmann::json::parse(read_file(a / "params.json"));
  EXPECT_EQ(j.at("params").at("r0").get<double>(), 0.9);
  EXPECT_EQ(j.at("params").at("r1").get<double>(), 0.9);
  EXPECT_EQ(run("simulate --n 10 --r 1.5 --out " + a.string()), 2);
}

TEST(Cli, ConfigFileOverrides) {
  const auto a = temp_dir("cli_cfg");
  const auto cfg = write_file(a / "run.ini", "seed=7\n[simulate]\nn=25\n");
  ASSERT_EQ(run("--config " + cfg + " simulate --out " + a.string()), 0);
  const auto j = nlohmann::json::parse(read_file(a / "params.json"));
  EXPECT_EQ(j.at("n").get<int>(), 25);
  EXPECT_EQ(j.at("seed").get<int>(), 7);
}

TEST(Cli, QuantileTransportOnIdenticalGroupsIsIdentity) {
  const auto a = temp_dir("cli_tq");
  std::string csv = "y,t,x\n";
  for (int i = 0; i < 20; ++i)
    for (int t = 0; t < 2; ++t) csv += "0," + std::to_string(t) + "," + std::to_string(i * 0.37 - 2) + "\n";
  const auto data = write_file(a / "d.csv", csv);
  ASSERT_EQ(run("transport --method quantile --data " + data + " --out " + a.string()), 0);
  std::istringstream in(read_file(a / "transported.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "from,to");
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    EXPECT_EQ(line.substr(0, comma), line.substr(comma + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 20);
}

TEST(Cli, GaussianTransportSelfCheck) {
  const auto a = temp_dir("cli_tg");
  ASSERT_EQ(run("transport --method gaussian " + data_args() + " --out " + a.string()), 0);
  const auto j = nlohmann::json::parse(read_file(a / "map.json"));
  EXPECT_LE(j.at("fixed_point_residual").get<double>(), 1e-8);
  EXPECT_EQ(j.at("mediator_columns").size(), 2u);
  EXPECT_TRUE(fs::exists(a / "transported.csv"));
  EXPECT_EQ(run("transport --method gaussian " + data_args() + " --columns xc --out " + a.string()), 2);
}

TEST(Cli, CouplingGuard) {
  const auto a = temp_dir("cli_guard");
  ASSERT_EQ(run("simulate --n 15000 --seed 1 --out " + a.string()), 0);
  EXPECT_EQ(run("transport --method coupling --data " + (a / "dataset.csv").string() +
                " --colliders xc --out " + a.string()),
            4);
}

TEST(Cli, CouplingSmall) {
  const auto a = temp_dir("cli_cpl");
  ASSERT_EQ(run("simulate --n 200 --seed 3 --out " + a.string()), 0);
  ASSERT_EQ(run("transport --method coupling --data " + (a / "dataset.csv").string() + " --colliders xc --out " +
                a.string()),
            0);
  const auto j = nlohmann::json::parse(read_file(a / "map.json"));
  EXPECT_LE(j.at("marginal_residual").get<double>(), 1e-9);
  EXPECT_EQ(read_file(a / "coupling.csv").rfind("i,j,mass\n", 0), 0u);
}

TEST(Cli, MatchOutputs) {
  const auto a = temp_dir("cli_match");
  ASSERT_EQ(run("match --method greedy " + data_args() + " --out " + a.string()), 0);
  EXPECT_EQ(read_file(a / "matching.csv").rfind("control_index,treated_index\n", 0), 0u);
}

TEST(Cli, CateNeedsOutcomeModel) {
  const auto a = temp_dir("cli_cate_missing");
  EXPECT_EQ(run("cate --estimator scate-quantile " + data_args() + " --out " + a.string()), 2);
  EXPECT_EQ(run("cate --estimator qcate " + data_args() + " --out " + a.string()), 2);
  EXPECT_EQ(run("cate --estimator scate-quantile --outcome-model kernel --columns x1m,x2m " + data_args() +
                " --out " + a.string()),
            2);
  EXPECT_EQ(run("cate --estimator nonsense " + data_args()), 2);
}

TEST(Cli, CateCurvesAndSignMap) {
  const auto a = temp_dir("cli_cate");
  ASSERT_EQ(run("cate --estimator scate-quantile --outcome-model kernel --columns x1m --grid -1:1:5 " + data_args() +
                " --out " + a.string()),
            0);
  const auto csv = read_file(a / "curve.csv");
  EXPECT_EQ(csv.rfind("x1m,estimate,cp_estimate,lo,hi\n", 0), 0u);
  const auto j = nlohmann::json::parse(read_file(a / "curve.json"));
  EXPECT_EQ(j.at("estimate").size(), 5u);
  const auto b = temp_dir("cli_cate2d");
  ASSERT_EQ(run("cate --estimator scate-gaussian --outcome-model knn --grid-points 5 " + data_args() + " --out " +
                b.string()),
            0);
  EXPECT_TRUE(fs::exists(b / "sign_map.csv"));
  const auto c = temp_dir("cli_ipw");
  ASSERT_EQ(run("cate --estimator ipw-kernel --columns x1m " + data_args() + " --out " + c.string()), 0);
  const auto sate = nlohmann::json::parse(read_file(c / "sate.json"));
  EXPECT_NEAR(sate.at("sate").get<double>(), 3.0, 0.5);
}

TEST(Cli, InvalidLabelExitsTwo) {
  const auto a = temp_dir("cli_label");
  const auto data = write_file(a / "d.csv", "y,t,x\n1,0,1\n2,1,2\n3,2,3\n");
  EXPECT_EQ(run("match --data " + data + " --out " + a.string()), 2);
  EXPECT_EQ(run("match --data " + data + " --label-map 2=drop --out " + a.string()), 0);
}

TEST(Cli, BootstrapSmokeAuditAndJobsDeterminism) {
  const auto a = temp_dir("cli_boot_a"), b = temp_dir("cli_boot_b");
  const std::string args = "bootstrap --estimator scate-quantile --outcome-model kernel --columns x1m --grid -1:1:5 "
                           "--replicates 6 --seed 5 " + data_args();
  ASSERT_EQ(run(args + " --jobs 1 --out " + a.string(), a / "stderr.txt"), 0);
  ASSERT_EQ(run(args + " --jobs 4 --out " + b.string(), b / "stderr.txt"), 0);
  EXPECT_EQ(read_file(a / "curve.csv"), read_file(b / "curve.csv"));
  EXPECT_EQ(read_file(a / "replicates.json"), read_file(b / "replicates.json"));
  const auto log = read_file(a / "stderr.txt");
  EXPECT_NE(log.find("bootstrap progress 6/6"), std::string::npos);
  EXPECT_NE(log.find("replicate 5 n0="), std::string::npos);
  EXPECT_EQ(log.find("stratified=no"), std::string::npos);
  const auto c = temp_dir("cli_boot_two");
  EXPECT_EQ(run("bootstrap --estimator ipw-knn --replicates 2 " + data_args() + " --out " + c.string()), 0);
}

TEST(Cli, StabilityTable) {
  const auto a = temp_dir("cli_stab");
  ASSERT_EQ(run("stability --estimator scate-quantile --outcome-model knn --columns x1m --grid -1:1:3 --sizes 500,2000 "
                "--replicates 3 " + data_args() + " --out " + a.string()),
            0);
  const auto csv = read_file(a / "stability.csv");
  EXPECT_EQ(csv.rfind("subsample_size,point,x1m,mean,sd,replicates\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}
