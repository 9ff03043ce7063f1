#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "wflow/cli.hpp"

using namespace wflow;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(name = "tiny"
methods = ["WGF", "HB", "Nes", "Exp"]
particles = 5
gap_levels = [1e-2, 1e-4, 1e-6]

[problem]
kind = "quadratic_potential"
dim = 3
eig_min = 0.3
eig_max = 1.0
b_variance = 4.0

[integrator]
t_end = 12.0
record_count = 30
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("wflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const std::string& text) {
    const auto p = dir_ / "cfg.toml";
    std::ofstream(p) << text;
    return p.string();
  }

  cli::Options out_opt(const std::string& sub) {
    cli::Options o;
    o.output_dir = (dir_ / sub).string();
    return o;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  }

  static std::set<std::string> listing(const fs::path& d) {
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(d)) names.insert(e.path().filename().string());
    return names;
  }

  fs::path dir_;
};

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_F(CliTest, RunWritesArtifacts) {
  std::ostringstream out, err;
  const int code = cli::cmd_run(write_config(kTiny), out_opt("run"), out, err);
  EXPECT_EQ(code, cli::kOk) << err.str();
  EXPECT_EQ(listing(dir_ / "run"), (std::set<std::string>{"trace_WGF.csv", "trace_HB.csv", "trace_Nes.csv",
                                                           "trace_Exp.csv", "summary.txt", "gap.svg"}));
  const std::string summary = slurp(dir_ / "run" / "summary.txt");
  EXPECT_NE(summary.find("E_star: 0 (analytic)"), std::string::npos);
  EXPECT_EQ(out.str(), summary);
  const std::string svg = slurp(dir_ / "run" / "gap.svg");
  EXPECT_EQ(count(svg, "<polyline"), 4u);
  EXPECT_NE(svg.find("viewBox=\"0 0 800 500\""), std::string::npos);
}

TEST_F(CliTest, RerunIsByteIdentical) {
  std::ostringstream out, err;
  const std::string cfg = write_config(kTiny);
  ASSERT_EQ(cli::cmd_run(cfg, out_opt("a"), out, err), 0);
  ASSERT_EQ(cli::cmd_run(cfg, out_opt("b"), out, err), 0);
  for (const auto& name : listing(dir_ / "a")) EXPECT_EQ(slurp(dir_ / "a" / name), slurp(dir_ / "b" / name)) << name;
}

TEST_F(CliTest, UnknownKeyExitsOne) {
  std::ostringstream out, err;
  const int code = cli::cmd_run(write_config(std::string(kTiny) + "rtoll = 1e-4\n"), out_opt("x"), out, err);
  EXPECT_EQ(code, cli::kConfigError);
  EXPECT_NE(err.str().find("rtoll"), std::string::npos);
  EXPECT_NE(err.str().find(":16:"), std::string::npos) << err.str();
  EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(CliTest, IncompleteRunExitsTwo) {
  std::string text = kTiny;
  text.replace(text.find("t_end = 12.0"), 12, "t_end = 800.0\nmax_steps = 20000");
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_run(write_config(text), out_opt("inc"), out, err), cli::kIncomplete);
  EXPECT_NE(slurp(dir_ / "inc" / "summary.txt").find("max-steps"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "inc" / "gap.svg"));
}

TEST_F(CliTest, SweepThreeRowsPerMethod) {
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_sweep(write_config(kTiny), out_opt("sw"), out, err), 0) << err.str();
  const std::string csv = slurp(dir_ / "sw" / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,gap_level,total_steps");
  for (const char* m : {"WGF,", "HB,", "Nes,", "Exp,"}) EXPECT_EQ(count(csv, std::string("\n") + m), 3u) << m;
  EXPECT_TRUE(fs::exists(dir_ / "sw" / "sweep.svg"));
}

TEST_F(CliTest, SweepConfigErrors) {
  std::ostringstream out, err;
  std::string no_levels = kTiny;
  no_levels.erase(no_levels.find("gap_levels"), std::string("gap_levels = [1e-2, 1e-4, 1e-6]\n").size());
  EXPECT_EQ(cli::cmd_sweep(write_config(no_levels), out_opt("a"), out, err), cli::kConfigError);

  std::string rising = kTiny;
  rising.replace(rising.find("[1e-2, 1e-4, 1e-6]"), 18, "[1e-2, 1e-1]");
  err.str("");
  EXPECT_EQ(cli::cmd_sweep(write_config(rising), out_opt("b"), out, err), cli::kConfigError);
  EXPECT_NE(err.str().find("decreasing"), std::string::npos);

  std::string empty = kTiny;
  empty.replace(empty.find("[\"WGF\", \"HB\", \"Nes\", \"Exp\"]"), 28, "[]");
  EXPECT_EQ(cli::cmd_sweep(write_config(empty), out_opt("c"), out, err), cli::kConfigError);
  EXPECT_EQ(cli::cmd_run(write_config(empty), out_opt("c"), out, err), cli::kConfigError);
}

TEST_F(CliTest, MissingConfigExitsOne) {
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_run((dir_ / "nope.toml").string(), out_opt("a"), out, err), cli::kConfigError);
}

TEST(Paths, LabelsCannotEscapeOutputDir) {
  EXPECT_EQ(cli::sanitize_label("../../etc/passwd"), "______etc_passwd");
  EXPECT_EQ(cli::sanitize_label("Nes-4_b"), "Nes-4_b");
  EXPECT_EQ(cli::sanitize_label(""), "method");
  std::vector<MethodTrace> traces(3);
  traces[0].method.label = "a/b";
  traces[1].method.label = "a_b";
  traces[2].method.label = "a.b";
  EXPECT_EQ(cli::file_stems(traces), (std::vector<std::string>{"a_b", "a_b_2", "a_b_3"}));
}

TEST(Svg, SchemaStable) {
  std::vector<svg::Series> s{{"A", {1, 2, 3}, {1, 0.1, 0.01}}, {"B & C", {1, 2, 3}, {1, 0.5, 0.0}}};
  const svg::ChartSpec spec{"title", "t", "gap", false, true};
  const std::string a = svg::line_chart(s, spec), b = svg::line_chart(s, spec);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\"", 0), 0u);
  EXPECT_EQ(count(a, "<polyline"), 2u);
  EXPECT_NE(a.find("data-label=\"B &amp; C\""), std::string::npos);
  EXPECT_NE(a.find(">gap (log)</text>"), std::string::npos);
  EXPECT_NE(a.find(">t</text>"), std::string::npos);
  // the zero gap is dropped on the log axis: B keeps two vertices
  const auto pb = a.find("points=\"", a.find("data-label=\"B"));
  const std::string pts = a.substr(pb + 8, a.find('"', pb + 8) - pb - 8);
  EXPECT_EQ(count(pts, ","), 2u);
}

TEST(Svg, GoldenTinyChart) {
  const std::string got = svg::line_chart({{"x", {0, 1}, {0, 1}}}, {"T", "a", "b", false, false});
  EXPECT_NE(got.find("points=\"80.00,440.00 630.00,40.00\""), std::string::npos) << got;
}

TEST(Verify, SuitePassesAndFaultIsCaught) {
  std::ostringstream out;
  EXPECT_EQ(cli::cmd_verify({}, out), 0) << out.str();
  EXPECT_EQ(count(out.str(), "FAIL"), 0u);
  verify::Options bad;
  bad.inject_blob_sign_error = true;
  std::ostringstream out2;
  EXPECT_NE(cli::cmd_verify(bad, out2), 0);
  EXPECT_NE(out2.str().find("FAIL fd gradient: blob_kl"), std::string::npos) << out2.str();
}
