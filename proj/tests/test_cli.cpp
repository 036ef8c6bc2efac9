#include "kpp_drift/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "kpp_drift");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = kpp::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string config(const std::string& name) { return std::string(KPP_DRIFT_CONFIG_DIR) + "/" + name; }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kpp_drift_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("kpp_drift_cfg_" + name + ".toml");
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(Cli, BadMeanFlowIsAValidationFailure) {
  const auto dir = fresh_dir("bad_mean");
  const auto r = run({"check-flow", "--config", config("bad_mean.toml"), "--out", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("mean-zero condition violated for q1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir));  // nothing written on validation failure
}

TEST(Cli, CheckFlowPassesForShear) {
  const auto dir = fresh_dir("check_shear");
  const auto r = run({"check-flow", "--config", config("shear_e1.toml"), "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir / "check_flow.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "max_divergence,mean_q1,mean_q2,max_boundary_normal,q_inf,passed");
  EXPECT_NE(rows[1].find("true"), std::string::npos);
}

TEST(Cli, UnknownKeysAreRejectedWithTheirLocation) {
  const auto p = write_config("unknown", "[cell]\nn1 = 32\nn3 = 32\n");
  const auto r = run({"check-flow", "--config", p.string(), "--out", fresh_dir("unknown").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cell.n3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;

  const auto t = write_config("unknown_table", "[cells]\nn1 = 32\n");
  EXPECT_EQ(run({"kernel", "--config", t.string()}).code, 1);
}

TEST(Cli, ParseErrorsReportTheLine) {
  const auto p = write_config("broken", "[cell]\nn1 = 32\nn2 = = 4\n");
  const auto r = run({"check-flow", "--config", p.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(":3:"), std::string::npos) << r.err;
}

TEST(Cli, TypeErrorsNameTheField) {
  const auto p = write_config("typed", "[cell]\nn1 = \"many\"\n");
  const auto r = run({"check-flow", "--config", p.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cell.n1"), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigAndBadUsage) {
  EXPECT_EQ(run({"check-flow", "--config", "/nonexistent/x.toml"}).code, 1);
  EXPECT_EQ(run({"check-flow"}).code, 1);
  EXPECT_EQ(run({"fly", "--config", config("shear_e1.toml")}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, ValidationCoversEveryBlock) {
  const auto dir = fresh_dir("invalid_mlist");
  const auto r = run({"stream", "--config", config("shear_e1.toml"), "--out", dir.string(), "--set",
                      "converge.M_list=[4.0, 1.0]"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("M_list"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Cli, LimitSpeedCellularIsZero) {
  const auto dir = fresh_dir("cellular");
  const auto r = run({"limit-speed", "--config", config("cellular_e1.toml"), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir / "limit_speed.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "e_x,e_y,value,constraint_active,mu,kernel_dim");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> cols;
    std::istringstream in(rows[i]);
    for (std::string c; std::getline(in, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 6u);
    EXPECT_LE(std::stod(cols[2]), 1e-6) << rows[i];
  }
}

TEST(Cli, ConvergeShearWritesFiveRowsAndAVerdict) {
  const auto dir = fresh_dir("converge");
  const auto r = run({"converge", "--config", config("shear_e1.toml"), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir / "converge.csv"));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "M,speed_over_M,gap");
  const auto verdict = slurp(dir / "converge_verdict.txt");
  EXPECT_EQ(verdict.rfind("limit=", 0), 0u);
  EXPECT_NE(r.out.find(verdict.substr(0, verdict.size() - 1)), std::string::npos);
  EXPECT_NE(verdict.find("final_gap_ok=true"), std::string::npos) << verdict;
}

TEST(Cli, OverridesAndByteIdenticalReruns) {
  const auto a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  const std::vector<std::string> common{"--config", config("shear_e1.toml"), "--set", "cell.n1=16", "--set",
                                        "cell.n2=16", "--set", "speed.M=3"};
  auto args = [&](const fs::path& d) {
    std::vector<std::string> v{"min-speed"};
    v.insert(v.end(), common.begin(), common.end());
    v.push_back("--out");
    v.push_back(d.string());
    return v;
  };
  const auto ra = run(args(a));
  const auto rb = run(args(b));
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  EXPECT_EQ(slurp(a / "min_speed.csv"), slurp(b / "min_speed.csv"));
  EXPECT_EQ(lines(slurp(a / "min_speed.csv"))[0], "lambda,k,ratio");
  EXPECT_NE(ra.out.find("n1 = 16"), std::string::npos);  // config echo carries the override
}

TEST(Cli, NumbersRoundTrip) {
  const auto dir = fresh_dir("roundtrip");
  ASSERT_EQ(run({"min-speed", "--config", config("homogeneous_min_speed.toml"), "--out", dir.string(), "--set",
                 "cell.n1=16", "--set", "cell.n2=16"})
                .code,
            0);
  const auto rows = lines(slurp(dir / "min_speed.csv"));
  ASSERT_GT(rows.size(), 9u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::string lam;
    std::getline(in, lam, ',');
    const double v = std::stod(lam);
    EXPECT_EQ(kpp::detail::format_double(v), lam);
  }
}

TEST(Cli, NumericalFailureExitsWithTwo) {
  const auto r = run({"min-speed", "--config", config("homogeneous_min_speed.toml"), "--out",
                      fresh_dir("numfail").string(), "--set", "cell.n1=16", "--set", "cell.n2=16", "--set",
                      "speed.lambda_hi=0.2", "--set", "speed.max_expansions=0"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bracket"), std::string::npos) << r.err;
}

TEST(Cli, StreamTrajectoriesAndKernelOutputs) {
  const auto dir = fresh_dir("outputs");
  auto ok = [&](std::vector<std::string> a) {
    a.push_back("--out");
    a.push_back(dir.string());
    const auto r = run(a);
    EXPECT_EQ(r.code, 0) << r.err;
    return r;
  };
  ok({"stream", "--config", config("strip_shear_stream.toml")});
  const auto st = lines(slurp(dir / "stream.csv"));
  EXPECT_EQ(st[0], "x,y,phi");
  EXPECT_EQ(st.size(), 1u + 64u * 65u);

  const auto tr = ok({"trajectories", "--config", config("remark_trajectory.toml")});
  const auto rows = lines(slurp(dir / "trajectories.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "seed_x,seed_y,tag,a_x,a_y,return_time");
  EXPECT_NE(rows[1].find("UnboundedNonPeriodic"), std::string::npos);

  ok({"kernel", "--config", config("cellular_e1.toml"), "--set", "cell.n1=32", "--set", "cell.n2=32"});
  EXPECT_EQ(lines(slurp(dir / "kernel.csv"))[0], "index,singular_value,moment_x,moment_y");

  ok({"limit-speed", "--config", config("diagonal_limit.toml"), "--set", "cell.n1=32", "--set", "cell.n2=32",
      "--set", "limit_speed.dump_maximizer=true"});
  EXPECT_TRUE(fs::exists(dir / "limit_speed_maximizer.csv"));
}
