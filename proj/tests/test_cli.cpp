#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "svmf/experiments/mnist.hpp"
#include "svmf/io/idx.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::string kCli = SVMF_CLI_PATH;

fs::path fresh_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("svmf_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Runs the CLI with `args`, discarding output; returns the exit status.
int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + kCli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::vector<double>> read_csv(const fs::path& p, std::vector<std::string>* header = nullptr) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  if (header) {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header->push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

TEST(CliSample, UniformCaseHasSmallMeanResultant) {
  const auto dir = fresh_dir("uniform");
  ASSERT_EQ(run("sample --m 3 --kappa 0 --n 1000 --seed 4 --out " + dir.string()), 0);
  const json s = read_json(dir / "summary.json");
  EXPECT_LT(s["mean_resultant"].get<double>(), 3.0 / std::sqrt(1000.0));
  EXPECT_EQ(s["mean_attempts"].get<double>(), 1.0);
  const auto rows = read_csv(dir / "samples.csv");
  ASSERT_EQ(rows.size(), 1000u);
  for (const auto& r : rows) EXPECT_NEAR(r[2] * r[2] + r[3] * r[3] + r[4] * r[4], 1.0, 1e-12);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST(CliSample, AcceptanceCountMatchesTable) {
  const auto dir = fresh_dir("attempts");
  ASSERT_EQ(run("sample --m 5 --kappa 100 --n 10000 --seed 1 --out " + dir.string()), 0);
  EXPECT_NEAR(read_json(dir / "summary.json")["mean_attempts"].get<double>(), 1.397, 0.05);
}

TEST(CliSample, SameSeedGivesIdenticalBytes) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b"), c = fresh_dir("det_c");
  const std::string args = "sample --m 4 --kappa 7.5 --mu 1,2,0,-1 --n 500 --seed 11 --out ";
  ASSERT_EQ(run(args + a.string()), 0);
  ASSERT_EQ(run(args + b.string()), 0);
  ASSERT_EQ(run("sample --m 4 --kappa 7.5 --mu 1,2,0,-1 --n 500 --seed 12 --out " + c.string()), 0);
  for (const char* f : {"samples.csv", "summary.json", "config.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_NE(slurp(a / "samples.csv"), slurp(c / "samples.csv"));
}

TEST(CliSample, MuIsRenormalizedAndJsonFormatIsKeyed) {
  const auto dir = fresh_dir("mu");
  ASSERT_EQ(run("sample --m 3 --kappa 500 --mu 0,3,4 --n 200 --format json --out " + dir.string()), 0);
  const json cfg = read_json(dir / "config.json");
  EXPECT_DOUBLE_EQ(cfg["mu"][1].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(cfg["mu"][2].get<double>(), 0.8);
  const json rows = read_json(dir / "samples.json");
  ASSERT_EQ(rows.size(), 200u);
  EXPECT_GT(0.6 * rows[0]["z1"].get<double>() + 0.8 * rows[0]["z2"].get<double>(), 0.95);
}

TEST(CliKl, ZeroAndClosedFormRows) {
  const auto dir = fresh_dir("kl");
  ASSERT_EQ(run("kl --m 3 --kappa 0,2 --out " + dir.string()), 0);
  std::vector<std::string> header;
  const auto rows = read_csv(dir / "kl.csv", &header);
  ASSERT_EQ(header, (std::vector<std::string>{"m", "kappa", "kl", "grad_kappa", "fd_grad", "rel_err"}));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][2], 0.0);
  EXPECT_EQ(rows[0][3], 0.0);
  const long double k = 2.0L;
  const long double kl = k / std::tanh(k) - 1.0L + std::log(k / std::sinh(k));
  const long double grad = 1.0L / k - k / (std::sinh(k) * std::sinh(k));
  EXPECT_NEAR(rows[1][2], static_cast<double>(kl), 1e-14);
  EXPECT_NEAR(rows[1][3], static_cast<double>(grad), 1e-14);
}

TEST(CliGradcheck, DefaultGridPassesAndStrictToleranceFails) {
  const auto dir = fresh_dir("gradcheck");
  EXPECT_EQ(run("gradcheck --threads 3 --out " + dir.string()), 0);
  EXPECT_EQ(read_csv(dir / "gradcheck.csv").size(), 30u);
  const std::string serial = slurp(dir / "gradcheck.csv");
  EXPECT_EQ(run("gradcheck --out " + dir.string()), 0);
  EXPECT_EQ(slurp(dir / "gradcheck.csv"), serial);
  EXPECT_EQ(run("gradcheck --tolerance 1e-30 --out " + dir.string()), 3);
}

TEST(CliErrors, UsageCodes) {
  const auto dir = fresh_dir("usage");
  const std::string out = " --out " + dir.string();
  EXPECT_EQ(run("sample --m 3 --bogus 1" + out), 2);
  EXPECT_EQ(run("sample --m 3 --mu 0,0,0" + out), 2);
  EXPECT_EQ(run("sample --m 3 --mu 1,0" + out), 2);
  EXPECT_EQ(run("sample --m 3 --mu e4" + out), 2);
  EXPECT_EQ(run("sample --m 1" + out), 2);
  EXPECT_EQ(run("sample --kappa -1" + out), 2);
  EXPECT_EQ(run("sample --format xml" + out), 2);
  EXPECT_EQ(run("kl --kappa 1,x" + out), 2);
  EXPECT_EQ(run("train toy --model vae" + out), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST(CliErrors, IoAndMissingData) {
  const auto dir = fresh_dir("io");
  std::ofstream(dir / "file") << "x";
  EXPECT_EQ(run("sample --n 3 --out " + (dir / "file" / "sub").string()), 1);
  EXPECT_EQ(run("eval ll --checkpoint " + (dir / "absent.ckpt").string() + " --out " + dir.string()), 1);
  const auto empty = fresh_dir("empty_data");
  EXPECT_EQ(run("train mnist --out " + dir.string(), "SVMF_DATA_DIR=" + empty.string()), 4);
  EXPECT_EQ(run("train mnist --data-dir " + empty.string() + " --out " + dir.string()), 4);
}

TEST(CliTrain, ToyManifestAndDeterminism) {
  const auto a = fresh_dir("toy_a"), b = fresh_dir("toy_b");
  const std::string args = "train toy --model svae --epochs 2 --n-train 300 --n-val 100 --hidden 32 --seed 3 "
                           "--format json --out ";
  ASSERT_EQ(run(args + a.string()), 0);
  ASSERT_EQ(run(args + b.string()), 0);
  const json m = read_json(a / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_TRUE(m["summary"].contains("recovery"));
  EXPECT_EQ(m["files"]["latents"], "latents.csv");
  for (const char* f : {"manifest.json", "metrics.ndjson", "latents.csv", "config.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  std::istringstream lines(slurp(a / "metrics.ndjson"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const json r = json::parse(line);
    EXPECT_TRUE(r.contains("epoch") && r.contains("split") && r.contains("re") && r.contains("kl") &&
                r.contains("elbo"));
    ++n;
  }
  EXPECT_EQ(n, 4);
}

TEST(CliTrain, ImageRunFromDataDirThenEvaluate) {
  const auto data = fresh_dir("idx_data");
  const auto digits = svmf::experiments::synthetic_digits(120, 30, 2);
  svmf::io::write_idx_images((data / "train-images-idx3-ubyte.gz").string(), digits.train, 28, 28, true);
  svmf::io::write_idx_labels((data / "train-labels-idx1-ubyte.gz").string(), digits.train_labels, true);
  svmf::io::write_idx_images((data / "t10k-images-idx3-ubyte").string(), digits.test, 28, 28, false);
  svmf::io::write_idx_labels((data / "t10k-labels-idx1-ubyte").string(), digits.test_labels, false);

  const auto out = fresh_dir("img_run");
  ASSERT_EQ(run("train mnist --dim 2 --posterior vmf --n-train 100 --n-val 20 --n-test 30 --epochs 2 "
                "--ll-rows 10 --ll-samples 20 --hidden 16 --out " + out.string(),
                "SVMF_DATA_DIR=" + data.string()),
            0);
  const json m = read_json(out / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(read_json(out / "config.json")["data"]["source"], "mnist");
  EXPECT_TRUE(m["summary"].contains("test_ll"));
  EXPECT_TRUE(fs::exists(out / "model.ckpt"));

  const auto ev = fresh_dir("img_eval");
  ASSERT_EQ(run("eval ll --checkpoint " + (out / "model.ckpt").string() + " --samples 50 --rows 10 --data-dir " +
                data.string() + " --out " + ev.string()),
            0);
  const json e = read_json(ev / "manifest.json");
  EXPECT_GE(e["summary"]["ll"].get<double>(), e["summary"]["elbo"].get<double>());
  const std::string csv = slurp(ev / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("epoch,split,re,kl,elbo,ll\n0,test,", 0), 0u);
}

}  // namespace
