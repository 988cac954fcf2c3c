#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "svmf/experiments/manifest.hpp"
#include "svmf/experiments/mnist.hpp"
#include "svmf/experiments/stats.hpp"
#include "svmf/experiments/toy.hpp"

namespace {

using namespace svmf;
using namespace svmf::experiments;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch_dir() {
  const auto p = fs::temp_directory_path() /
                 (std::string("svmf_exp_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------- stats

TEST(Stats, MeanSeAndRunningAgree) {
  const std::vector<double> x{1.0, 2.0, 4.0, 7.0};
  const stats::MeanSe m = stats::mean_se(x);
  EXPECT_DOUBLE_EQ(m.mean, 3.5);
  EXPECT_NEAR(m.se, std::sqrt(7.0 / 4.0), 1e-14);
  stats::Running r;
  for (double v : x) r.add(v);
  EXPECT_EQ(r.count(), 4);
  EXPECT_NEAR(r.mean(), m.mean, 1e-15);
  EXPECT_NEAR(r.se(), m.se, 1e-14);
}

TEST(Stats, ChiSquaredTailReferenceValues) {
  EXPECT_NEAR(stats::chi2_sf(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(stats::chi2_sf(18.307038053275146, 10), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(stats::chi2_sf(0.0, 3), 1.0);
}

TEST(Stats, ChiSquaredTestPoolsSparseBins) {
  const auto r = stats::chi2_test({10, 20, 30, 1, 0}, {20, 20, 20, 0.5, 0.5});
  EXPECT_EQ(r.dof, 2);
  EXPECT_NEAR(r.statistic, 100.0 / 20 + 0.0 + (31 - 21.0) * (31 - 21.0) / 21.0, 1e-12);
}

TEST(Stats, KolmogorovTail) {
  EXPECT_NEAR(stats::kolmogorov_sf(1.3580986393225507), 0.05, 1e-6);
  EXPECT_NEAR(stats::kolmogorov_sf(1.6276236115189), 0.01, 1e-6);
  // Both series branches agree where they meet.
  EXPECT_NEAR(stats::kolmogorov_sf(0.2999999), stats::kolmogorov_sf(0.3000001), 1e-6);
  EXPECT_DOUBLE_EQ(stats::kolmogorov_sf(0.0), 1.0);
}

TEST(Stats, KsAcceptsMatchingAndRejectsShiftedSamples) {
  Rng rng(1);
  std::vector<double> a(4000), b(4000), c(4000);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : b) v = rng.uniform();
  for (auto& v : c) v = 0.1 + rng.uniform();
  auto cdf = [](double x) { return std::clamp(x, 0.0, 1.0); };
  EXPECT_GT(stats::ks_one_sample(a, cdf).p_value, 1e-3);
  EXPECT_LT(stats::ks_one_sample(c, cdf).p_value, 1e-6);
  EXPECT_GT(stats::ks_two_sample(a, b).p_value, 1e-3);
  EXPECT_LT(stats::ks_two_sample(a, c).p_value, 1e-6);
}

TEST(Stats, CircularAlignmentInvariances) {
  Rng rng(2);
  std::vector<double> a(500), rotated(500), reflected(500), noise(500);
  for (int i = 0; i < 500; ++i) {
    a[i] = 2 * kPi * rng.uniform() - kPi;
    rotated[i] = a[i] + 1.234;
    reflected[i] = 0.5 - a[i];
    noise[i] = 2 * kPi * rng.uniform();
  }
  EXPECT_NEAR(stats::circular_alignment(a, rotated), 1.0, 1e-12);
  EXPECT_NEAR(stats::circular_alignment(a, reflected), 1.0, 1e-12);
  EXPECT_LT(stats::circular_alignment(a, noise), 0.15);
}

// ---------------------------------------------------------------- toy data

TEST(ToyData, IdentityMapWithoutNoiseGivesUnitRows) {
  ToySpec spec;
  spec.ambient_dim = 2;
  spec.identity_transform = true;
  spec.noise_sigma = 0.0;
  Rng rng(3);
  const ToyData d = generate_toy_dataset(spec, 500, rng);
  for (Eigen::Index i = 0; i < d.data.rows(); ++i) {
    EXPECT_NEAR(d.data.row(i).norm(), 1.0, 1e-12);
    EXPECT_NEAR(std::atan2(d.data(i, 1), d.data(i, 0)), d.angles[i], 1e-12);
  }
}

TEST(ToyData, ConcentratedMixtureHasThreeModesAtTheMeans) {
  ToySpec spec;
  spec.component_kappas = {50.0, 50.0, 50.0};
  Rng rng(4);
  const ToyData d = generate_toy_dataset(spec, 6000, rng);
  // Histogram in 1-degree bins; the peak of each 60-degree window around a
  // mean must sit within 5 degrees of it.
  std::vector<int> hist(360, 0);
  for (double a : d.angles) {
    int deg = static_cast<int>(std::floor(a * 180.0 / kPi));
    hist[((deg % 360) + 360) % 360] += 1;
  }
  std::vector<double> smooth(360, 0.0);
  for (int i = 0; i < 360; ++i)
    for (int k = -3; k <= 3; ++k) smooth[i] += hist[((i + k) % 360 + 360) % 360];
  for (double mean_deg : {0.0, 120.0, 240.0}) {
    int best = 0;
    double top = -1.0;
    for (int off = -30; off <= 30; ++off) {
      const int i = ((static_cast<int>(mean_deg) + off) % 360 + 360) % 360;
      if (smooth[i] > top) {
        top = smooth[i];
        best = off;
      }
    }
    EXPECT_LE(std::abs(best + 0.5), 5.0) << "mode near " << mean_deg;
  }
  for (std::size_t i = 0; i < d.angles.size(); ++i) {
    const double diff = std::remainder(d.angles[i] - 2.0 * kPi * d.labels[i] / 3.0, 2.0 * kPi);
    EXPECT_LT(std::abs(diff), 1.0);
  }
}

TEST(ToyData, FixedSeedIsBitIdentical) {
  ToySpec spec;
  Rng a(9), b(9);
  const ToyData x = generate_toy_dataset(spec, 300, a);
  const ToyData y = generate_toy_dataset(spec, 300, b);
  EXPECT_EQ(x.data, y.data);
  EXPECT_EQ(x.angles, y.angles);
  EXPECT_EQ(x.data.cols(), 100);
}

TEST(ToyData, MapDependsOnlyOnTransformSeed) {
  ToySpec spec;
  spec.noise_sigma = 0.0;
  Tensor z(1, 2);
  z << 0.6, 0.8;
  EXPECT_EQ(ToyTransform(spec).apply(z), ToyTransform(spec).apply(z));
  ToySpec other = spec;
  other.transform_seed += 1;
  EXPECT_GT((ToyTransform(spec).apply(z) - ToyTransform(other).apply(z)).norm(), 0.1);
}

TEST(ToyData, RejectsInvalidSpecs) {
  ToySpec spec;
  spec.component_kappas[1] = 0.0;
  Rng rng(0);
  EXPECT_THROW(generate_toy_dataset(spec, 10, rng), std::invalid_argument);
  spec = ToySpec{};
  spec.ambient_dim = 1;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = ToySpec{};
  spec.identity_transform = true;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(ToyModelNames, RoundTrip) {
  for (ToyModel m : {ToyModel::AE, ToyModel::NVae, ToyModel::NVaeBeta, ToyModel::SVae})
    EXPECT_EQ(parse_toy_model(to_string(m)), m);
  EXPECT_FALSE(parse_toy_model("vae").has_value());
}

// ---------------------------------------------------------------- toy runs

ToySpec small_spec() {
  ToySpec spec;
  spec.n_train = 256;
  spec.n_val = 128;
  return spec;
}

TEST(ToyRun, ShortRunShapesAndDeterminism) {
  ToyTrainOptions opt;
  opt.epochs = 2;
  opt.hidden = {16};
  opt.seed = 5;
  const ToyResult a = run_toy_experiment(small_spec(), ToyModel::SVae, opt);
  const ToyResult b = run_toy_experiment(small_spec(), ToyModel::SVae, opt);
  ASSERT_FALSE(a.diverged) << a.error;
  EXPECT_EQ(a.metrics.size(), 4u);
  EXPECT_EQ(a.latents.rows(), 128);
  EXPECT_EQ(a.latents.cols(), 2);
  for (Eigen::Index i = 0; i < a.latents.rows(); ++i) EXPECT_NEAR(a.latents.row(i).norm(), 1.0, 1e-12);
  EXPECT_EQ(a.latents, b.latents);
  EXPECT_EQ(a.recovery, b.recovery);
  for (const auto& r : a.metrics) EXPECT_NEAR(r.elbo, r.re - r.kl, 1e-9);
}

TEST(ToyRun, AutoEncoderReconstructsBetterAndLowBetaPaysLessKl) {
  ToyTrainOptions opt;
  const ToySpec spec;
  const ToyResult ae = run_toy_experiment(spec, ToyModel::AE, opt);
  const ToyResult nv = run_toy_experiment(spec, ToyModel::NVae, opt);
  const ToyResult nb = run_toy_experiment(spec, ToyModel::NVaeBeta, opt);
  const auto& ae_val = ae.metrics.back();
  const auto& nv_val = nv.metrics.back();
  const auto& nb_val = nb.metrics.back();
  EXPECT_GT(ae_val.re, nv_val.re);
  EXPECT_LT(0.1 * nb_val.kl, nv_val.kl);
  EXPECT_EQ(ae_val.kl, 0.0);
}

TEST(ToyRun, SphericalModelRecoversTheCircle) {
  const ToyResult s = run_toy_experiment(ToySpec{}, ToyModel::SVae, ToyTrainOptions{});
  ASSERT_FALSE(s.diverged) << s.error;
  EXPECT_GT(s.recovery, 0.9);
  EXPECT_GT(s.angle_uniformity.p_value, 1e-3);
}

// ---------------------------------------------------------------- images

TEST(SyntheticDigits, DeterministicAndInRange) {
  const auto a = synthetic_digits(50, 10, 1);
  const auto b = synthetic_digits(50, 10, 1);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test_labels, b.test_labels);
  EXPECT_EQ(a.train.cols(), 784);
  EXPECT_GE(a.train.minCoeff(), 0.0);
  EXPECT_LE(a.train.maxCoeff(), 1.0);
  for (Eigen::Index i = 0; i < a.train.rows(); ++i) EXPECT_GT(a.train.row(i).sum(), 20.0);
}

TEST(SyntheticDigits, EightCoversEveryOtherDigit) {
  Rng r1(3), r2(3);
  const Tensor eight = draw_segment_digits({8}, r1);
  const Tensor one = draw_segment_digits({1}, r2);
  EXPECT_TRUE(((eight.array() - one.array()) >= -1e-15).all());
  EXPECT_GT(eight.sum(), 2.0 * one.sum());
  Rng r3(0);
  EXPECT_THROW(draw_segment_digits({10}, r3), std::invalid_argument);
}

TEST(ImageRun, LatentConventionAndBudgetChecks) {
  EXPECT_EQ(mnist_latent_dim(PosteriorKind::VonMisesFisher, 2), 3);
  EXPECT_EQ(mnist_latent_dim(PosteriorKind::Gaussian, 2), 2);
  const auto data = synthetic_digits(30, 10, 2);
  MnistBudget b;
  EXPECT_THROW(run_mnist_experiment(data, 2, PosteriorKind::Gaussian, b, 0), std::invalid_argument);
}

MnistBudget tiny_budget() {
  MnistBudget b;
  b.n_train = 200;
  b.n_val = 50;
  b.n_test = 40;
  b.epochs = 2;
  b.batch = 50;
  b.warmup_epochs = 2.0;
  b.ll_samples = 200;
  b.ll_rows = 40;
  b.encoder_hidden = {32};
  b.decoder_hidden = {32};
  return b;
}

TEST(ImageRun, TinyRunReportsConsistentMetrics) {
  const auto data = synthetic_digits(250, 40, 3);
  for (PosteriorKind kind : {PosteriorKind::Gaussian, PosteriorKind::VonMisesFisher}) {
    const MnistResult r = run_mnist_experiment(data, 2, kind, tiny_budget(), 4);
    ASSERT_FALSE(r.diverged) << r.error;
    ASSERT_TRUE(r.model.has_value());
    EXPECT_EQ(r.model->arch().latent_dim, mnist_latent_dim(kind, 2));
    EXPECT_NEAR(r.test.elbo, r.test.re - r.test.kl, 1e-9);
    ASSERT_TRUE(r.test.ll_estimate.has_value());
    EXPECT_GT(*r.test.ll_estimate, r.test.elbo);
    EXPECT_EQ(r.metrics.back().split, "test");
    const MnistResult again = run_mnist_experiment(data, 2, kind, tiny_budget(), 4);
    EXPECT_EQ(r.test.elbo, again.test.elbo);
  }
}

TEST(ImageRun, ReportedKlMatchesAnalyticAtInitialization) {
  const auto data = synthetic_digits(250, 40, 3);
  MnistBudget b = tiny_budget();
  b.epochs = 0;
  b.ll_samples = 0;
  const MnistResult r = run_mnist_experiment(data, 2, PosteriorKind::VonMisesFisher, b, 6);
  EXPECT_EQ(r.best_epoch, 0);
  Rng rng(1);
  const Tensor x = io::binarize(data.test, rng);
  const Encoded e = r.model->encode(x);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) kl += kl_to_uniform(3, e.scale(i, 0));
  EXPECT_NEAR(evaluate(*r.model, x, rng).kl, kl / x.rows(), 1e-12);
}

// ---------------------------------------------------------------- manifest

TEST(Manifest, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Manifest, DoublesRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 1.3970000000000002}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Manifest, HashFollowsConfigAndJsonHasNoClock) {
  RunManifest m;
  m.command = "train toy";
  m.config["model"] = "svae";
  m.seed = 3;
  m.files["metrics"] = "metrics.ndjson";
  const std::string h = m.config_hash();
  EXPECT_EQ(h.size(), 16u);
  RunManifest n = m;
  n.config["model"] = "nvae";
  EXPECT_NE(n.config_hash(), h);
  const auto j = m.to_json();
  EXPECT_EQ(j["config_hash"], h);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_FALSE(j.contains("time"));
  EXPECT_FALSE(j.contains("timestamp"));
  EXPECT_EQ(j.dump(), m.to_json().dump());
}

TEST(Manifest, MetricAndLatentFiles) {
  const fs::path dir = scratch_dir();
  std::vector<MetricRecord> recs{{1, "train", -90.5, 1.25, -91.75, std::nullopt},
                                 {1, "test", -90.0, 1.0, -91.0, -89.5}};
  write_metrics_ndjson((dir / "m.ndjson").string(), recs);
  std::istringstream lines(slurp((dir / "m.ndjson").string()));
  std::string line;
  std::vector<json> parsed;
  while (std::getline(lines, line)) parsed.push_back(json::parse(line));
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0]["split"], "train");
  EXPECT_FALSE(parsed[0].contains("ll"));
  EXPECT_EQ(parsed[1]["ll"], -89.5);

  write_metrics_csv((dir / "m.csv").string(), recs);
  EXPECT_EQ(slurp((dir / "m.csv").string()).substr(0, 27), "epoch,split,re,kl,elbo,ll\n1");

  Tensor z(2, 2);
  z << 0.1, 1.0 / 3.0, -1.0, 0.0;
  write_latents_csv((dir / "z.csv").string(), z, {2, 0});
  EXPECT_EQ(slurp((dir / "z.csv").string()),
            "index,label,z0,z1\n0,2,0.10000000000000001,0.33333333333333331\n1,0,-1,0\n");
  EXPECT_THROW(write_latents_csv((dir / "z.csv").string(), z, {1}), std::invalid_argument);
  EXPECT_THROW(write_json_file((dir / "missing" / "x.json").string(), json::object()), OutputError);
  fs::remove_all(dir);
}

}  // namespace
