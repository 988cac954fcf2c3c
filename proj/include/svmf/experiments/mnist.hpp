// Unsupervised binarized-image experiment: N-VAE against S-VAE on MNIST, or
// on a procedurally drawn seven-segment digit set when MNIST is not present.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/experiments/metrics.hpp"
#include "svmf/io/idx.hpp"
#include "svmf/rng.hpp"
#include "svmf/vae.hpp"

namespace svmf::experiments {

using nn::Tensor;

namespace detail {

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double t = std::clamp(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(px - ax - t * dx, py - ay - t * dy);
}

}  // namespace detail

/// 28x28 grayscale seven-segment digits with random position, size, slant
/// and stroke width. Returns rows of intensities in [0, 1].
inline Tensor draw_segment_digits(const std::vector<int>& labels, Rng& rng) {
  // Segments a..g as (u0, v0, u1, v1) in a unit box, v pointing down.
  static constexpr double kSeg[7][4] = {{0, 0, 1, 0},     {1, 0, 1, 0.5}, {1, 0.5, 1, 1}, {0, 1, 1, 1},
                                        {0, 0.5, 0, 1},   {0, 0, 0, 0.5}, {0, 0.5, 1, 0.5}};
  static constexpr const char* kDigits[10] = {"abcdef", "bc",     "abged", "abgcd",   "fgbc",
                                              "afgcd",  "afgedc", "abc",   "abcdefg", "abcdfg"};
  Tensor out = Tensor::Zero(static_cast<Eigen::Index>(labels.size()), 784);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int digit = labels[n];
    if (digit < 0 || digit > 9) throw std::invalid_argument("digit labels must be in 0..9");
    const double w = 8.0 + 4.0 * rng.uniform();
    const double h = 14.0 + 4.0 * rng.uniform();
    const double cx = 14.0 + 4.0 * (rng.uniform() - 0.5);
    const double cy = 14.0 + 4.0 * (rng.uniform() - 0.5);
    const double slant = 0.4 * (rng.uniform() - 0.5);
    const double radius = 1.0 + 0.8 * rng.uniform();
    auto map = [&](double u, double v, double& x, double& y) {
      y = cy + (v - 0.5) * h;
      x = cx + (u - 0.5) * w - slant * (y - cy);
    };
    for (const char* s = kDigits[digit]; *s; ++s) {
      const double* seg = kSeg[*s - 'a'];
      double ax, ay, bx, by;
      map(seg[0], seg[1], ax, ay);
      map(seg[2], seg[3], bx, by);
      for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) {
          const double d = detail::segment_distance(c + 0.5, r + 0.5, ax, ay, bx, by);
          double& px = out(static_cast<Eigen::Index>(n), r * 28 + c);
          px = std::max(px, std::clamp(radius + 0.5 - d, 0.0, 1.0));
        }
    }
  }
  return out;
}

/// Synthetic stand-in with the MNIST layout (train and test splits, labels 0..9).
inline io::ImageDataset synthetic_digits(int n_train, int n_test, std::uint64_t seed) {
  Rng rng(seed);
  io::ImageDataset d;
  d.train_labels.resize(n_train);
  d.test_labels.resize(n_test);
  for (int& l : d.train_labels) l = static_cast<int>(rng.below(10));
  for (int& l : d.test_labels) l = static_cast<int>(rng.below(10));
  d.train = draw_segment_digits(d.train_labels, rng);
  d.test = draw_segment_digits(d.test_labels, rng);
  return d;
}

struct MnistBudget {
  int n_train = 10000;
  int n_val = 1000;
  int n_test = 1000;
  int epochs = 50;
  int batch = 64;
  double lr = 1e-3;
  double warmup_epochs = 10.0;
  /// Stop when validation ELBO has not improved for this many epochs.
  int patience = 10;
  int ll_samples = 500;
  /// Test rows that receive the importance-sampled log-likelihood.
  int ll_rows = 200;
  std::vector<int> encoder_hidden{256, 128};
  std::vector<int> decoder_hidden{128, 256};

  static MnistBudget desk() { return {}; }

  static MnistBudget full() {
    MnistBudget b;
    b.n_train = 50000;
    b.n_val = 10000;
    b.n_test = 10000;
    b.epochs = 1000;
    b.warmup_epochs = 100.0;
    b.patience = 50;
    b.ll_rows = 10000;
    return b;
  }

  void validate() const {
    if (n_train < 1 || n_val < 1 || n_test < 1) throw std::invalid_argument("split sizes must be >= 1");
    if (epochs < 0 || batch < 1 || patience < 1) throw std::invalid_argument("invalid epoch/batch/patience");
    if (ll_samples < 0 || ll_rows < 0) throw std::invalid_argument("ll settings must be >= 0");
  }
};

/// Ambient latent size: the sphere S^d lives in R^{d+1}.
inline int mnist_latent_dim(PosteriorKind kind, int d) {
  return kind == PosteriorKind::VonMisesFisher ? d + 1 : d;
}

struct MnistResult {
  std::vector<MetricRecord> metrics;
  ElboReport test;
  std::optional<VaeModel> model;
  int best_epoch = 0;
  bool diverged = false;
  std::string error;
};

/// Trains on the first n_train training rows, early-stops on the next n_val,
/// and reports test ELBO, RE and KL on n_test rows plus importance-sampled
/// LL on the first ll_rows of those.
inline MnistResult run_mnist_experiment(const io::ImageDataset& data, int d, PosteriorKind kind,
                                        const MnistBudget& budget, std::uint64_t seed) {
  budget.validate();
  if (d < 1) throw std::invalid_argument("latent dimension must be >= 1");
  if (kind == PosteriorKind::Deterministic) throw std::invalid_argument("the image experiment needs a VAE");
  if (data.train.rows() < budget.n_train + budget.n_val)
    throw std::invalid_argument("training split has " + std::to_string(data.train.rows()) + " rows, budget needs " +
                                std::to_string(budget.n_train + budget.n_val));
  if (data.test.rows() < budget.n_test)
    throw std::invalid_argument("test split has " + std::to_string(data.test.rows()) + " rows, budget needs " +
                                std::to_string(budget.n_test));

  const Rng root(seed);
  Rng init_rng = root.substream(1);
  Rng train_rng = root.substream(2);
  Rng eval_rng = root.substream(3);
  Rng fixed_rng = root.substream(4);

  const Tensor train_gray = data.train.topRows(budget.n_train);
  const Tensor val = io::binarize(data.train.middleRows(budget.n_train, budget.n_val), fixed_rng);
  const Tensor test = io::binarize(data.test.topRows(budget.n_test), fixed_rng);

  VaeArch arch;
  arch.data_dim = static_cast<int>(data.train.cols());
  arch.encoder_hidden = budget.encoder_hidden;
  arch.decoder_hidden = budget.decoder_hidden;
  arch.latent_dim = mnist_latent_dim(kind, d);
  arch.posterior = kind;
  arch.likelihood = LikelihoodKind::Bernoulli;
  arch.activation = nn::Activation::ReLU;

  MnistResult result;
  VaeModel model(arch, init_rng);
  TrainConfig cfg;
  cfg.lr = budget.lr;
  Trainer trainer(model, cfg);

  std::vector<Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto* p : model.parameters()) best.push_back(p->value);
  };
  snapshot();
  double best_val = -std::numeric_limits<double>::infinity();

  std::vector<int> order(budget.n_train);
  for (int i = 0; i < budget.n_train; ++i) order[i] = i;
  try {
    for (int epoch = 1; epoch <= budget.epochs; ++epoch) {
      trainer.config().beta = warmup_beta(epoch, budget.warmup_epochs, 1.0);
      const Tensor train = io::binarize(train_gray, train_rng);
      for (int i = budget.n_train - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(train_rng.below(static_cast<std::uint64_t>(i) + 1))]);
      double re = 0.0, kl = 0.0;
      for (int start = 0; start < budget.n_train; start += budget.batch) {
        const int n = std::min(budget.batch, budget.n_train - start);
        Tensor batch(n, arch.data_dim);
        for (int r = 0; r < n; ++r) batch.row(r) = train.row(order[start + r]);
        const ElboReport rep = trainer.step(batch, train_rng);
        re += rep.re * n;
        kl += rep.kl * n;
      }
      re /= budget.n_train;
      kl /= budget.n_train;
      result.metrics.push_back({epoch, "train", re, kl, re - kl, std::nullopt});
      const ElboReport v = evaluate(model, val, eval_rng);
      result.metrics.push_back({epoch, "val", v.re, v.kl, v.elbo, std::nullopt});
      if (v.elbo > best_val) {
        best_val = v.elbo;
        result.best_epoch = epoch;
        snapshot();
      } else if (epoch - result.best_epoch >= budget.patience) {
        break;
      }
    }
  } catch (const NumericDivergence& e) {
    result.diverged = true;
    result.error = e.what();
    return result;
  }

  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  result.test = evaluate(model, test, eval_rng);
  if (budget.ll_samples > 0 && budget.ll_rows > 0) {
    const int rows = std::min(budget.ll_rows, budget.n_test);
    result.test.ll_estimate = evaluate(model, test.topRows(rows), eval_rng, budget.ll_samples).ll_estimate;
  }
  result.metrics.push_back({result.best_epoch, "test", result.test.re, result.test.kl, result.test.elbo,
                            result.test.ll_estimate});
  result.model = std::move(model);
  return result;
}

}  // namespace svmf::experiments
