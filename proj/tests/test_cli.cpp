#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = ECBORROW_CLI_PATH;
const fs::path kSource = ECBORROW_SOURCE_DIR;
const std::string kLinear = "--estimators aipw,acw,acw_alasso";

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("ecborrow_cli_" + std::string(info->name()) + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "'" + kCli + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path write(const std::string& name, const std::string& text) const {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // The example trial with each data row passed through edit(row_index, cells).
  template <class F>
  fs::path edited_example(const std::string& name, F edit) const {
    std::ifstream in(kSource / "data" / "example_trial.csv");
    std::string line, text;
    std::getline(in, line);
    text = line + "\n";
    int row = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string c;
      while (std::getline(ss, c, ',')) cells.push_back(c);
      if (edit(row++, cells)) {
        std::string joined;
        for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? "," : "") + cells[i];
        text += joined + "\n";
      }
    }
    return write(name, text);
  }

  fs::path config_with(const json& patch) const {
    json cfg = json::parse(slurp(kSource / "configs" / "estimate.json"));
    cfg["input"] = (kSource / "data" / "example_trial.csv").string();
    if (patch.is_object() && !patch.empty()) cfg.merge_patch(patch);
    return write("config.json", cfg.dump());
  }

  fs::path out(const std::string& sub = "out") const { return dir_ / sub; }

  fs::path dir_;
};

// Column order of the example file: source, treatment, outcome, propensity, X1..X6.
constexpr std::size_t kSourceCol = 0, kTreatCol = 1, kX1Col = 4;

}  // namespace

TEST_F(Cli, EstimateWritesAllFourEstimators) {
  const auto cfg = config_with(json::object());
  const auto r = run("estimate --config '" + cfg.string() + "' --out '" + out().string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(out() / "report.json"));
  std::vector<std::string> names;
  for (const auto& e : report.at("estimates")) {
    names.push_back(e.at("estimator"));
    EXPECT_LE(e.at("ci_low").get<double>(), e.at("tau_hat").get<double>());
  }
  EXPECT_EQ(names, (std::vector<std::string>{"aipw", "acw", "acw_alasso", "acw_alasso_gbm"}));
  EXPECT_EQ(report.at("seed"), 2024);
  EXPECT_TRUE(report.at("config").at("pipeline").contains("calibration"));
  EXPECT_FALSE(report.contains("pooled"));
  EXPECT_TRUE(fs::exists(out() / "weights.csv"));
  EXPECT_TRUE(fs::exists(out() / "selection.csv"));
  EXPECT_TRUE(fs::exists(out() / "selection_gbm.csv"));
  EXPECT_EQ(slurp(out() / "selection.csv").substr(0, 37), "ec_record_id,b_hat,xi_hat,b_tilde,sel");
}

TEST_F(Cli, EstimateIsReproducible) {
  const auto cfg = config_with(json::object());
  ASSERT_EQ(run("estimate --config '" + cfg.string() + "' " + kLinear + " --out '" + out("a").string() + "'").code, 0);
  ASSERT_EQ(run("estimate --config '" + cfg.string() + "' " + kLinear + " --out '" + out("b").string() + "'").code, 0);
  EXPECT_EQ(slurp(out("a") / "report.json"), slurp(out("b") / "report.json"));
  EXPECT_EQ(slurp(out("a") / "selection.csv"), slurp(out("b") / "selection.csv"));
}

TEST_F(Cli, InvalidFileExitsOneWithoutOutputs) {
  const auto bad = edited_example("bad.csv", [](int, std::vector<std::string>& c) {
    if (c[kSourceCol] == "1" && c[kTreatCol] == "0") c[kTreatCol] = "1";
    return true;
  });
  const auto cfg = config_with({{"input", bad.string()}});
  const auto r = run("estimate --config '" + cfg.string() + "' --out '" + out().string() + "'");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(out() / "report.json"));
  EXPECT_FALSE(fs::exists(out() / "weights.csv"));
  const auto err = json::parse(r.err);
  EXPECT_EQ(err.at("exit_code"), 1);
  EXPECT_FALSE(err.at("violations").empty());
}

TEST_F(Cli, NonConvergenceExitsTwo) {
  const auto cfg = config_with({{"pipeline", {{"calibration", {{"max_iter", 1}}}}}});
  const auto r = run("estimate --config '" + cfg.string() + "' " + kLinear + " --out '" + out().string() + "'");
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(fs::exists(out() / "report.json"));
  EXPECT_EQ(json::parse(r.err).at("error"), "convergence");
}

TEST_F(Cli, InfeasibleCalibrationExitsThree) {
  const auto shifted = edited_example("shifted.csv", [](int, std::vector<std::string>& c) {
    if (c[kSourceCol] != "0") c[kX1Col] = std::to_string(std::stod(c[kX1Col]) + 100.0);
    return true;
  });
  const auto cfg = config_with({{"input", shifted.string()}});
  const auto r = run("estimate --config '" + cfg.string() + "' " + kLinear + " --out '" + out().string() + "'");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_FALSE(fs::exists(out() / "report.json"));
}

TEST_F(Cli, TwoGroupsAddPooledEstimate) {
  const auto two = edited_example("two.csv", [](int row, std::vector<std::string>& c) {
    if (c[kSourceCol] != "0" && row % 2 == 0) c[kSourceCol] = "2";
    return true;
  });
  const auto cfg = config_with({{"input", two.string()}});
  const auto r = run("estimate --config '" + cfg.string() + "' " + kLinear + " --out '" + out().string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(out() / "report.json"));
  ASSERT_TRUE(report.contains("pooled"));
  const auto& p = report.at("pooled");
  EXPECT_EQ(p.at("weights").size(), 2u);
  EXPECT_NEAR(p.at("weights")[0].get<double>() + p.at("weights")[1].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(report.at("groups").size(), 2u);
  const auto weights = slurp(out() / "weights.csv");
  EXPECT_EQ(weights.substr(0, weights.find('\n')), "record_id,weight,density_ratio_weight,group");
}

TEST_F(Cli, ValidateCleanFile) {
  const auto r = run("validate --input '" + (kSource / "data" / "example_trial.csv").string() + "'");
  EXPECT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j.at("valid").get<bool>());
  EXPECT_TRUE(j.at("violations").empty());
}

TEST_F(Cli, ValidateTreatedExternalRow) {
  const auto bad = edited_example("bad.csv", [](int, std::vector<std::string>& c) {
    static bool done = false;
    if (!done && c[kSourceCol] == "1") {
      c[kTreatCol] = "1";
      done = true;
    }
    return true;
  });
  const auto r = run("validate --input '" + bad.string() + "' --out '" + out().string() + "'");
  EXPECT_EQ(r.code, 1);
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.at("violations").size(), 1u);
  EXPECT_EQ(j.at("violations")[0].at("rule"), "ec_control_only");
  EXPECT_TRUE(fs::exists(out() / "violations.json"));
}

TEST_F(Cli, ValidateMissingCovariateColumn) {
  const auto cut = edited_example("cut.csv", [](int, std::vector<std::string>& c) {
    c.pop_back();
    return true;
  });
  // Drop X6 from the header too.
  auto text = slurp(cut);
  text.replace(text.find(",X6"), 3, "");
  write("cut.csv", text);
  const auto cfg = config_with({{"input", cut.string()}});
  const auto r = run("validate --config '" + cfg.string() + "'");
  EXPECT_EQ(r.code, 1);
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.at("violations").size(), 1u);
  EXPECT_EQ(j.at("violations")[0].at("rule"), "schema");
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("estimate --bogus").code, 1);
  EXPECT_EQ(run("estimate --input '" + (dir_ / "missing.csv").string() + "'").code, 1);
  const auto cfg = config_with(json::object());
  EXPECT_EQ(run("estimate --config '" + cfg.string() + "' --estimators nope").code, 1);
}

TEST_F(Cli, SimulateSmokeAndDeterminism) {
  json plan = json::parse(slurp(kSource / "configs" / "simulation.json"));
  plan["grid"]["omega"] = {0.3};
  plan["grid"]["scenarios"] = {"CC"};
  plan["scenario"]["n_e"] = 200;
  const auto cfg = write("plan.json", plan.dump());
  const std::string base = "simulate --config '" + cfg.string() + "' --replications 4 " + kLinear;
  ASSERT_EQ(run(base + " --out '" + out("a").string() + "'").code, 0);
  ASSERT_EQ(run(base + " --threads 3 --out '" + out("b").string() + "'").code, 0);
  const auto csv = slurp(out("a") / "metrics_CC_omega0.3.csv");
  EXPECT_EQ(csv, slurp(out("b") / "metrics_CC_omega0.3.csv"));
  EXPECT_EQ(slurp(out("a") / "simulation.json"), slurp(out("b") / "simulation.json"));
  // Header plus three N_c rows for each of three estimators.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  const auto run_json = json::parse(slurp(out("a") / "simulation.json"));
  EXPECT_EQ(run_json.at("config").at("scenario").at("replications"), 4);
}
