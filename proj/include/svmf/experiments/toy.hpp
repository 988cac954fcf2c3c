// Latent-recovery experiment on the circle: data from a three-component vMF
// mixture on S^1, pushed through a fixed random nonlinear map into R^D with
// additive noise, then embedded by two-dimensional auto-encoders.
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/experiments/metrics.hpp"
#include "svmf/experiments/stats.hpp"
#include "svmf/nn/mlp.hpp"
#include "svmf/rng.hpp"
#include "svmf/sampler.hpp"
#include "svmf/vae.hpp"

namespace svmf::experiments {

using nn::Tensor;

struct ToySpec {
  std::array<double, 3> component_means{0.0, 2.0 * std::numbers::pi / 3.0, 4.0 * std::numbers::pi / 3.0};
  std::array<double, 3> component_kappas{4.0, 4.0, 4.0};
  int n_train = 2000;
  int n_val = 1000;
  int ambient_dim = 100;
  std::uint64_t transform_seed = 7;
  int transform_hidden = 16;
  /// Multiplies the output weights of the map, setting the signal strength
  /// against the unit-variance likelihood.
  double transform_scale = 0.2;
  double noise_sigma = 0.05;
  /// Skip the nonlinear map (requires ambient_dim == 2); rows are then the
  /// circle points plus noise.
  bool identity_transform = false;

  void validate() const {
    if (ambient_dim < 2) throw std::invalid_argument("ambient_dim must be >= 2");
    if (identity_transform && ambient_dim != 2)
      throw std::invalid_argument("identity transform needs ambient_dim == 2");
    for (double k : component_kappas)
      if (!(k > 0.0) || !std::isfinite(k)) throw std::invalid_argument("component kappas must be > 0");
    if (n_train < 1 || n_val < 1) throw std::invalid_argument("n_train and n_val must be >= 1");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (transform_hidden < 1) throw std::invalid_argument("transform_hidden must be >= 1");
    if (!(transform_scale > 0.0)) throw std::invalid_argument("transform_scale must be > 0");
  }
};

/// The fixed map R^2 -> R^D: x = tanh(z W1 + b1) W2 + b2, weights drawn from
/// transform_seed.
class ToyTransform {
 public:
  explicit ToyTransform(const ToySpec& spec) : identity_(spec.identity_transform) {
    if (identity_) return;
    Rng rng(spec.transform_seed);
    const int h = spec.transform_hidden;
    w1_.resize(2, h);
    b1_.resize(1, h);
    w2_.resize(h, spec.ambient_dim);
    b2_.resize(1, spec.ambient_dim);
    for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = 1.5 * rng.normal();
    for (Eigen::Index i = 0; i < b1_.size(); ++i) b1_.data()[i] = 0.5 * rng.normal();
    const double s2 = spec.transform_scale / std::sqrt(static_cast<double>(h));
    for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_.data()[i] = s2 * rng.normal();
    for (Eigen::Index i = 0; i < b2_.size(); ++i) b2_.data()[i] = 0.1 * rng.normal();
  }

  [[nodiscard]] Tensor apply(const Tensor& z) const {
    if (identity_) return z;
    Tensor hidden = z * w1_;
    hidden.rowwise() += b1_.row(0);
    Tensor out = Tensor(hidden.array().tanh().matrix()) * w2_;
    out.rowwise() += b2_.row(0);
    return out;
  }

 private:
  bool identity_;
  Tensor w1_, b1_, w2_, b2_;
};

struct ToyData {
  Tensor data;
  std::vector<double> angles;
  std::vector<int> labels;
};

/// Draws n points: component uniformly at random, angle from the component's
/// vMF on S^1, then the fixed map plus Gaussian noise.
inline ToyData generate_toy_dataset(const ToySpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("generate_toy_dataset needs n >= 1");
  ToyData out;
  Tensor circle(n, 2);
  out.angles.resize(n);
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.below(3));
    Vector mu(2);
    mu << std::cos(spec.component_means[c]), std::sin(spec.component_means[c]);
    const Vector z = sample_vmf(rng, VonMisesFisher(mu, spec.component_kappas[c])).z;
    circle.row(i) = z.transpose();
    out.angles[i] = std::atan2(z[1], z[0]);
    out.labels[i] = c;
  }
  out.data = ToyTransform(spec).apply(circle);
  if (spec.noise_sigma > 0.0)
    for (Eigen::Index i = 0; i < out.data.size(); ++i) out.data.data()[i] += spec.noise_sigma * rng.normal();
  return out;
}

enum class ToyModel { AE, NVae, NVaeBeta, SVae };

inline const char* to_string(ToyModel m) {
  switch (m) {
    case ToyModel::AE: return "ae";
    case ToyModel::NVae: return "nvae";
    case ToyModel::NVaeBeta: return "nvae-beta0.1";
    case ToyModel::SVae: return "svae";
  }
  return "?";
}

inline std::optional<ToyModel> parse_toy_model(const std::string& s) {
  for (ToyModel m : {ToyModel::AE, ToyModel::NVae, ToyModel::NVaeBeta, ToyModel::SVae})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

struct ToyTrainOptions {
  int epochs = 30;
  int batch = 64;
  double lr = 1e-3;
  std::vector<int> hidden{128, 64};
  std::uint64_t seed = 0;
};

struct ToyResult {
  ToyModel model = ToyModel::SVae;
  std::vector<MetricRecord> metrics;
  /// Validation latents [n_val, 2]: vMF mean directions, Gaussian means or codes.
  Tensor latents;
  std::vector<int> labels;
  std::vector<double> true_angles;
  double recovery = 0.0;
  /// Angles of one posterior draw per validation point (the aggregate
  /// posterior) against the uniform distribution on the circle.
  stats::Chi2Result angle_uniformity;
  /// Latent radii against the radius law of a standard 2-d normal (Rayleigh).
  stats::KsResult radius_vs_prior;
  double median_radius = 0.0;
  bool diverged = false;
  std::string error;
};

inline VaeArch toy_arch(ToyModel model, int data_dim, const std::vector<int>& hidden) {
  VaeArch a;
  a.data_dim = data_dim;
  a.encoder_hidden = hidden;
  a.decoder_hidden = {hidden.rbegin(), hidden.rend()};
  a.latent_dim = 2;
  a.likelihood = LikelihoodKind::Gaussian;
  a.activation = nn::Activation::ReLU;
  a.posterior = model == ToyModel::SVae ? PosteriorKind::VonMisesFisher
                : model == ToyModel::AE ? PosteriorKind::Deterministic
                                        : PosteriorKind::Gaussian;
  return a;
}

inline double toy_beta(ToyModel model) { return model == ToyModel::NVaeBeta ? 0.1 : 1.0; }

/// Chi-squared test of angles in (-pi, pi] against the uniform law.
inline stats::Chi2Result angle_uniformity_test(const std::vector<double>& angles, int bins) {
  const double pi = std::numbers::pi;
  return stats::chi2_against_cdf(angles, -pi, pi, bins, [pi](double t) { return (t + pi) / (2.0 * pi); });
}

inline stats::KsResult rayleigh_test(const std::vector<double>& radii) {
  return stats::ks_one_sample(radii, [](double r) { return r <= 0.0 ? 0.0 : -std::expm1(-0.5 * r * r); });
}

/// Trains one model on a freshly generated dataset and computes the
/// recovery diagnostics on the validation split.
inline ToyResult run_toy_experiment(const ToySpec& spec, ToyModel model, const ToyTrainOptions& opt) {
  spec.validate();
  if (opt.epochs < 0 || opt.batch < 1) throw std::invalid_argument("epochs must be >= 0 and batch >= 1");
  const Rng root(opt.seed);
  Rng data_rng = root.substream(1);
  Rng init_rng = root.substream(2);
  Rng train_rng = root.substream(3);
  Rng eval_rng = root.substream(4);
  const ToyData train = generate_toy_dataset(spec, spec.n_train, data_rng);
  const ToyData val = generate_toy_dataset(spec, spec.n_val, data_rng);

  ToyResult result;
  result.model = model;
  result.labels = val.labels;
  result.true_angles = val.angles;
  VaeModel vae(toy_arch(model, spec.ambient_dim, opt.hidden), init_rng);
  TrainConfig cfg;
  cfg.beta = toy_beta(model);
  cfg.lr = opt.lr;
  Trainer trainer(vae, cfg);

  std::vector<int> order(spec.n_train);
  for (int i = 0; i < spec.n_train; ++i) order[i] = i;
  try {
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
      for (int i = spec.n_train - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(train_rng.below(static_cast<std::uint64_t>(i) + 1))]);
      double re = 0.0, kl = 0.0;
      int seen = 0;
      for (int start = 0; start < spec.n_train; start += opt.batch) {
        const int n = std::min(opt.batch, spec.n_train - start);
        Tensor batch(n, spec.ambient_dim);
        for (int r = 0; r < n; ++r) batch.row(r) = train.data.row(order[start + r]);
        const ElboReport rep = trainer.step(batch, train_rng);
        re += rep.re * n;
        kl += rep.kl * n;
        seen += n;
      }
      result.metrics.push_back({epoch, "train", re / seen, kl / seen, (re - kl) / seen, std::nullopt});
      const ElboReport v = evaluate(vae, val.data, eval_rng);
      result.metrics.push_back({epoch, "val", v.re, v.kl, v.elbo, std::nullopt});
    }
  } catch (const NumericDivergence& e) {
    result.diverged = true;
    result.error = e.what();
    return result;
  }

  result.latents = vae.encode(val.data).loc;
  const Encoded enc = vae.encode(val.data);
  std::vector<double> angles(spec.n_val), radii(spec.n_val), drawn(spec.n_val);
  for (int i = 0; i < spec.n_val; ++i) {
    angles[i] = std::atan2(result.latents(i, 1), result.latents(i, 0));
    radii[i] = result.latents.row(i).norm();
    const Tensor z = sample_posterior(vae.arch(), enc, i, 1, eval_rng);
    drawn[i] = std::atan2(z(0, 1), z(0, 0));
  }
  result.recovery = stats::circular_alignment(val.angles, angles);
  result.angle_uniformity = angle_uniformity_test(drawn, 20);
  result.radius_vs_prior = rayleigh_test(radii);
  std::vector<double> sorted = radii;
  std::nth_element(sorted.begin(), sorted.begin() + spec.n_val / 2, sorted.end());
  result.median_radius = sorted[spec.n_val / 2];
  return result;
}

}  // namespace svmf::experiments
