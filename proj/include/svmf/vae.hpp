// Variational auto-encoders with a vMF (S-VAE), Gaussian (N-VAE) or
// deterministic (plain auto-encoder) latent, trained on the single-sample
// ELBO  E_q[log p(x|z)] - beta KL(q(z|x) || p(z)).
//
// The vMF head emits mu = raw / ||raw|| and kappa = softplus(raw) + 1. Its
// gradient is assembled by hand: the decoder tape gives grad_z log p(x|z),
// reparam_gradient() maps that onto (mu, kappa), the analytic KL gradient is
// added, and the encoder tape is seeded with the result.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/nn/mlp.hpp"
#include "svmf/nn/tape.hpp"
#include "svmf/reparam.hpp"
#include "svmf/rng.hpp"
#include "svmf/sampler.hpp"
#include "svmf/vmf.hpp"

namespace svmf {

using nn::Tensor;

enum class PosteriorKind { VonMisesFisher = 0, Gaussian = 1, Deterministic = 2 };
enum class LikelihoodKind { Bernoulli = 0, Gaussian = 1 };

inline const char* to_string(PosteriorKind k) {
  switch (k) {
    case PosteriorKind::VonMisesFisher: return "vmf";
    case PosteriorKind::Gaussian: return "normal";
    case PosteriorKind::Deterministic: return "deterministic";
  }
  return "?";
}

inline const char* to_string(LikelihoodKind k) {
  return k == LikelihoodKind::Bernoulli ? "bernoulli" : "gaussian";
}

struct VaeArch {
  int data_dim = 784;
  std::vector<int> encoder_hidden{256, 128};
  std::vector<int> decoder_hidden{128, 256};
  /// Size of the latent vector: the ambient m for the vMF (sphere S^{m-1}),
  /// the dimension d otherwise.
  int latent_dim = 3;
  PosteriorKind posterior = PosteriorKind::VonMisesFisher;
  LikelihoodKind likelihood = LikelihoodKind::Bernoulli;
  nn::Activation activation = nn::Activation::ReLU;

  void validate() const {
    if (data_dim < 1) throw std::invalid_argument("data_dim must be >= 1");
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (posterior == PosteriorKind::VonMisesFisher && latent_dim < 2)
      throw std::invalid_argument("vMF latent needs ambient dimension >= 2");
    for (int h : encoder_hidden)
      if (h < 1) throw std::invalid_argument("hidden sizes must be >= 1");
    for (int h : decoder_hidden)
      if (h < 1) throw std::invalid_argument("hidden sizes must be >= 1");
  }
};

/// Raised when the objective or a gradient stops being finite.
class NumericDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ElboReport {
  /// Mean reconstruction log-likelihood E_q[log p(x|z)] (nats, <= 0 for Bernoulli).
  double re = 0.0;
  double kl = 0.0;
  /// re - beta * kl.
  double elbo = 0.0;
  std::optional<double> ll_estimate;
  double beta = 1.0;
};

/// Per-row posterior parameters.
struct Encoded {
  /// vMF: unit mean directions; Gaussian: means; deterministic: codes.
  Tensor loc;
  /// vMF: kappa [n, 1]; Gaussian: log-variances [n, d]; deterministic: empty.
  Tensor scale;
};

class VaeModel {
 public:
  VaeModel() = default;

  VaeModel(VaeArch arch, Rng& init_rng) : arch_(std::move(arch)) {
    arch_.validate();
    build();
    encoder_.glorot_init(init_rng);
    loc_.glorot_init(init_rng);
    if (has_scale_head()) scale_.glorot_init(init_rng);
    decoder_.glorot_init(init_rng);
  }

  /// Uninitialized (zero) parameters; used by checkpoint loading.
  static VaeModel zeros(VaeArch arch) {
    VaeModel m;
    m.arch_ = std::move(arch);
    m.arch_.validate();
    m.build();
    return m;
  }

  [[nodiscard]] const VaeArch& arch() const { return arch_; }

  [[nodiscard]] bool has_scale_head() const {
    return arch_.posterior != PosteriorKind::Deterministic;
  }

  /// Trainable parameters in declaration order: encoder body, location head,
  /// scale head (if any), decoder.
  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    encoder_.collect(out);
    loc_.collect(out);
    if (has_scale_head()) scale_.collect(out);
    decoder_.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  nn::Mlp& encoder() { return encoder_; }
  nn::Dense& loc_head() { return loc_; }
  nn::Dense& scale_head() { return scale_; }
  nn::Mlp& decoder() { return decoder_; }

  [[nodiscard]] Encoded encode(const Tensor& x) const {
    const Tensor h = encoder_.eval(x);
    Encoded e;
    e.loc = loc_.eval(h);
    switch (arch_.posterior) {
      case PosteriorKind::VonMisesFisher: {
        Eigen::VectorXd norms = e.loc.rowwise().norm();
        e.loc = norms.cwiseInverse().asDiagonal() * e.loc;
        e.scale = scale_.eval(h).unaryExpr([](double v) { return nn::softplus(v) + 1.0; });
        break;
      }
      case PosteriorKind::Gaussian: e.scale = scale_.eval(h); break;
      case PosteriorKind::Deterministic: break;
    }
    return e;
  }

  /// Decoder output: Bernoulli logits or Gaussian means.
  [[nodiscard]] Tensor decode(const Tensor& z) const { return decoder_.eval(z); }

 private:
  void build() {
    std::vector<int> enc{arch_.data_dim};
    enc.insert(enc.end(), arch_.encoder_hidden.begin(), arch_.encoder_hidden.end());
    if (enc.size() < 2) throw std::invalid_argument("encoder needs at least one hidden layer");
    encoder_ = nn::Mlp(enc, arch_.activation, arch_.activation, "encoder");
    const int hidden = enc.back();
    loc_ = nn::Dense(hidden, arch_.latent_dim, "encoder.loc");
    switch (arch_.posterior) {
      case PosteriorKind::VonMisesFisher: scale_ = nn::Dense(hidden, 1, "encoder.kappa"); break;
      case PosteriorKind::Gaussian: scale_ = nn::Dense(hidden, arch_.latent_dim, "encoder.log_var"); break;
      case PosteriorKind::Deterministic: break;
    }
    std::vector<int> dec{arch_.latent_dim};
    dec.insert(dec.end(), arch_.decoder_hidden.begin(), arch_.decoder_hidden.end());
    dec.push_back(arch_.data_dim);
    decoder_ = nn::Mlp(dec, arch_.activation, nn::Activation::Identity, "decoder");
  }

  VaeArch arch_;
  nn::Mlp encoder_;
  nn::Dense loc_;
  nn::Dense scale_;
  nn::Mlp decoder_;
};

/// Row-wise log p(x | decoder output).
inline Eigen::VectorXd recon_loglik_rows(LikelihoodKind kind, const Tensor& out, const Tensor& x) {
  if (out.rows() != x.rows() || out.cols() != x.cols())
    throw std::invalid_argument("recon_loglik_rows shape mismatch " + nn::shape_string(out) +
                                " vs " + nn::shape_string(x));
  if (kind == LikelihoodKind::Bernoulli) {
    Tensor terms = x.cwiseProduct(out) - out.unaryExpr([](double v) { return nn::softplus(v); });
    return terms.rowwise().sum();
  }
  const double constant = -0.5 * static_cast<double>(x.cols()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * (x - out).rowwise().squaredNorm()).array() + constant;
}

/// Sum over pixels of the Bernoulli log-likelihood of binary x given logits.
inline double bernoulli_recon_loglik(const Tensor& logits, const Tensor& x_binary) {
  return recon_loglik_rows(LikelihoodKind::Bernoulli, logits, x_binary).sum();
}

inline nn::Tape::Var recon_node(nn::Tape& tape, LikelihoodKind kind, nn::Tape::Var out, const Tensor& x) {
  return kind == LikelihoodKind::Bernoulli ? tape.bernoulli_loglik_rows(out, x)
                                           : tape.gaussian_loglik_rows(out, x);
}

inline Tensor repeat_rows(const Tensor& x, int times) {
  if (times == 1) return x;
  Tensor out(x.rows() * times, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int s = 0; s < times; ++s) out.row(i * times + s) = x.row(i);
  return out;
}

struct TrainConfig {
  /// KL weight for this step (warm-up schedules change it between steps).
  double beta = 1.0;
  double lr = 1e-3;
  /// Posterior samples per datapoint.
  int samples = 1;
  ReparamOptions reparam{};
  OmegaMethod omega_method = OmegaMethod::Auto;
  /// Subtract an exponential moving average of log p(x|z) inside g_cor.
  bool running_baseline = false;
  double baseline_decay = 0.99;
};

namespace detail {

inline void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NumericDivergence("non-finite " + what);
}

inline std::string describe_trace(const SampleTrace& t, double kappa) {
  std::ostringstream os;
  os.precision(17);
  os << "trace{kappa=" << kappa << ", eps=" << t.epsilon << ", omega=" << t.omega
     << ", attempts=" << t.attempts << ", direct=" << t.direct << "}";
  return os.str();
}

}  // namespace detail

/// Computes the gradient of the loss -(1/B) sum_i [mean_s log p(x_i|z_is) - beta KL_i]
/// into every Parameter::grad (previous contents are cleared). `baseline` is the
/// value subtracted inside g_cor for vMF heads.
inline ElboReport accumulate_gradients(VaeModel& model, const Tensor& x, const TrainConfig& cfg,
                                       Rng& rng, double baseline = 0.0) {
  const VaeArch& arch = model.arch();
  if (x.cols() != arch.data_dim)
    throw std::invalid_argument("batch has " + std::to_string(x.cols()) + " columns, model expects " +
                                std::to_string(arch.data_dim));
  if (cfg.samples < 1) throw std::invalid_argument("samples must be >= 1");
  model.zero_grad();
  const auto batch = static_cast<int>(x.rows());
  const int samples = cfg.samples;
  const int draws = batch * samples;
  const int d = arch.latent_dim;
  const Tensor target = repeat_rows(x, samples);
  ElboReport report;
  report.beta = cfg.beta;

  nn::Tape enc;
  const auto xin = enc.constant(x);
  const auto hidden = model.encoder().forward(enc, xin);
  const auto loc = model.loc_head().forward(enc, hidden);

  switch (arch.posterior) {
    case PosteriorKind::VonMisesFisher: {
      const auto mu = enc.row_normalize(loc);
      const auto kappa = enc.add_scalar(enc.softplus(model.scale_head().forward(enc, hidden)), 1.0);
      const Tensor& mu_v = enc.value(mu);
      const Tensor& kappa_v = enc.value(kappa);

      std::vector<VonMisesFisher> dists;
      dists.reserve(batch);
      std::vector<SampleTrace> traces(draws);
      Tensor z(draws, d);
      for (int i = 0; i < batch; ++i) {
        const double k = kappa_v(i, 0);
        detail::require_finite(k, "kappa from encoder");
        dists.emplace_back(mu_v.row(i).transpose(), k);
        const Householder reflect(dists.back().mu());
        for (int s = 0; s < samples; ++s) {
          const int j = i * samples + s;
          traces[j] = sample_vmf(rng, dists.back(), reflect, cfg.omega_method);
          z.row(j) = traces[j].z.transpose();
        }
      }

      nn::Tape dec;
      const auto zin = dec.input(z);
      const auto rows = recon_node(dec, arch.likelihood, model.decoder().forward(dec, zin), target);
      dec.backward({{rows, Tensor::Constant(draws, 1, -1.0 / draws)}});
      const Tensor grad_z = dec.grad(zin) * (-static_cast<double>(draws));
      const Tensor& f = dec.value(rows);

      Tensor seed_mu = Tensor::Zero(batch, d);
      Tensor seed_kappa = Tensor::Zero(batch, 1);
      ReparamOptions options = cfg.reparam;
      options.baseline = baseline;
      double re = 0.0, kl = 0.0;
      for (int i = 0; i < batch; ++i) {
        for (int s = 0; s < samples; ++s) {
          const int j = i * samples + s;
          const ReparamGrad g =
              reparam_gradient(traces[j], dists[i], f(j, 0), grad_z.row(j).transpose(), options);
          if (!std::isfinite(g.grad_kappa) || !g.grad_mu.allFinite())
            throw NumericDivergence("non-finite reparameterization gradient at " +
                                    detail::describe_trace(traces[j], dists[i].kappa()));
          seed_mu.row(i) -= g.grad_mu.transpose() / draws;
          seed_kappa(i, 0) -= g.grad_kappa / draws;
          re += f(j, 0);
        }
        const double k = dists[i].kappa();
        kl += kl_to_uniform(d, k);
        seed_kappa(i, 0) += cfg.beta * kl_grad_kappa(d, k) / batch;
      }
      enc.backward({{mu, seed_mu}, {kappa, seed_kappa}});
      report.re = re / draws;
      report.kl = kl / batch;
      break;
    }
    case PosteriorKind::Gaussian: {
      const auto log_var = model.scale_head().forward(enc, hidden);
      Tensor noise(draws, d);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
      const auto eps = enc.constant(std::move(noise));
      const auto sd = enc.exp(enc.scale(log_var, 0.5));
      const auto z = enc.add(enc.repeat_rows(loc, samples), enc.mul(enc.repeat_rows(sd, samples), eps));
      const auto rows = recon_node(enc, arch.likelihood, model.decoder().forward(enc, z), target);
      const auto kl_terms = enc.add_scalar(
          enc.sub(enc.add(enc.square(loc), enc.exp(log_var)), log_var), -1.0);
      const auto kl_sum = enc.scale(enc.sum(kl_terms), 0.5);
      const auto loss = enc.add(enc.scale(enc.sum(rows), -1.0 / draws),
                                enc.scale(kl_sum, cfg.beta / batch));
      enc.backward(loss);
      report.re = enc.value(rows).sum() / draws;
      report.kl = enc.value(kl_sum)(0, 0) / batch;
      break;
    }
    case PosteriorKind::Deterministic: {
      const auto rows = recon_node(enc, arch.likelihood,
                                   model.decoder().forward(enc, enc.repeat_rows(loc, samples)), target);
      const auto loss = enc.scale(enc.sum(rows), -1.0 / draws);
      enc.backward(loss);
      report.re = enc.value(rows).sum() / draws;
      report.kl = 0.0;
      break;
    }
  }
  report.elbo = report.re - cfg.beta * report.kl;
  detail::require_finite(report.elbo, "ELBO");
  return report;
}

/// Owns the optimizer state for one model and applies ELBO ascent steps.
class Trainer {
 public:
  Trainer(VaeModel& model, TrainConfig config)
      : model_(&model), config_(config), adam_(config.lr) {}

  TrainConfig& config() { return config_; }
  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] long steps() const { return adam_.steps(); }

  /// One Adam step on the single-sample ELBO of `batch`.
  ElboReport step(const Tensor& batch, Rng& rng) {
    const double baseline = config_.running_baseline && baseline_ready_ ? baseline_ : 0.0;
    ElboReport r = accumulate_gradients(*model_, batch, config_, rng, baseline);
    auto params = model_->parameters();
    for (const auto* p : params)
      if (!p->grad.allFinite()) throw NumericDivergence("non-finite gradient in " + p->name);
    adam_.step(params);
    if (config_.running_baseline) {
      // Per-datapoint mean reconstruction, updated after use so the baseline
      // never depends on the current draw.
      baseline_ = baseline_ready_ ? config_.baseline_decay * baseline_ + (1.0 - config_.baseline_decay) * r.re
                                  : r.re;
      baseline_ready_ = true;
    }
    return r;
  }

 private:
  VaeModel* model_;
  TrainConfig config_;
  nn::Adam adam_;
  double baseline_ = 0.0;
  bool baseline_ready_ = false;
};

/// Linear KL warm-up: beta_t = min(1, epoch / warmup_epochs) * beta_final.
inline double warmup_beta(double epoch, double warmup_epochs, double beta_final) {
  if (warmup_epochs <= 0.0) return beta_final;
  return std::min(1.0, epoch / warmup_epochs) * beta_final;
}

/// log p(z) under the model prior: uniform on S^{m-1} or N(0, I).
inline double log_prior(const VaeArch& arch, const Eigen::Ref<const Eigen::VectorXd>& z) {
  switch (arch.posterior) {
    case PosteriorKind::VonMisesFisher: return -log_surface_area(arch.latent_dim);
    case PosteriorKind::Gaussian:
      return -0.5 * z.squaredNorm() - 0.5 * z.size() * std::log(2.0 * std::numbers::pi);
    case PosteriorKind::Deterministic: break;
  }
  throw std::logic_error("deterministic auto-encoder has no prior");
}

/// log q(z | x) for row `row` of an encoding.
inline double log_posterior(const VaeArch& arch, const Encoded& e, Eigen::Index row,
                            const Eigen::Ref<const Eigen::VectorXd>& z) {
  switch (arch.posterior) {
    case PosteriorKind::VonMisesFisher:
      return log_prob(VonMisesFisher(e.loc.row(row).transpose(), e.scale(row, 0)), z);
    case PosteriorKind::Gaussian: {
      const Eigen::VectorXd mean = e.loc.row(row).transpose();
      const Eigen::VectorXd lv = e.scale.row(row).transpose();
      return (-0.5 * ((z - mean).array().square() / lv.array().exp() + lv.array() +
                      std::log(2.0 * std::numbers::pi)))
          .sum();
    }
    case PosteriorKind::Deterministic: break;
  }
  throw std::logic_error("deterministic auto-encoder has no posterior density");
}

/// Draws `n` latents for row `row` of an encoding.
inline Tensor sample_posterior(const VaeArch& arch, const Encoded& e, Eigen::Index row, int n,
                               Rng& rng) {
  Tensor z(n, arch.latent_dim);
  switch (arch.posterior) {
    case PosteriorKind::VonMisesFisher: {
      const VonMisesFisher dist(e.loc.row(row).transpose(), e.scale(row, 0));
      const Householder reflect(dist.mu());
      for (int s = 0; s < n; ++s) z.row(s) = sample_vmf(rng, dist, reflect).z.transpose();
      break;
    }
    case PosteriorKind::Gaussian:
      for (int s = 0; s < n; ++s)
        for (int k = 0; k < arch.latent_dim; ++k)
          z(s, k) = e.loc(row, k) + std::exp(0.5 * e.scale(row, k)) * rng.normal();
      break;
    case PosteriorKind::Deterministic:
      for (int s = 0; s < n; ++s) z.row(s) = e.loc.row(row);
      break;
  }
  return z;
}

/// log p(x|z) + log p(z) - log q(z|x) for each row of z, for datapoint x [1, D].
inline Eigen::VectorXd log_importance_weights(const VaeModel& model, const Tensor& x,
                                              const Encoded& e, const Tensor& z) {
  const VaeArch& arch = model.arch();
  const Tensor out = model.decode(z);
  Eigen::VectorXd w = recon_loglik_rows(arch.likelihood, out, x.replicate(z.rows(), 1));
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const Eigen::VectorXd zs = z.row(s).transpose();
    w[s] += log_prior(arch, zs) - log_posterior(arch, e, 0, zs);
  }
  return w;
}

inline double log_mean_exp(const Eigen::VectorXd& w) {
  const double top = w.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((w.array() - top).exp().sum()) - std::log(static_cast<double>(w.size()));
}

/// Importance-sampled log-likelihood of one datapoint x [1, D] with
/// `n_samples` proposals from q(z|x).
inline double importance_ll(const VaeModel& model, const Tensor& x, int n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("importance_ll needs n_samples >= 1");
  if (x.rows() != 1) throw std::invalid_argument("importance_ll takes a single row");
  const Encoded e = model.encode(x);
  const Tensor z = sample_posterior(model.arch(), e, 0, n_samples, rng);
  return log_mean_exp(log_importance_weights(model, x, e, z));
}

/// Dataset-level metrics with beta = 1: single-sample RE, analytic KL,
/// ELBO = RE - KL and, when ll_samples > 0, the importance-sampled LL.
inline ElboReport evaluate(const VaeModel& model, const Tensor& x, Rng& rng, int ll_samples = 0,
                           int chunk = 256) {
  const VaeArch& arch = model.arch();
  double re = 0.0, kl = 0.0, ll = 0.0;
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, x.rows() - start);
    const Tensor xb = x.middleRows(start, n);
    const Encoded e = model.encode(xb);
    Tensor z(n, arch.latent_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      z.row(i) = sample_posterior(arch, e, i, 1, rng).row(0);
      switch (arch.posterior) {
        case PosteriorKind::VonMisesFisher: kl += kl_to_uniform(arch.latent_dim, e.scale(i, 0)); break;
        case PosteriorKind::Gaussian:
          kl += gaussian_kl_std_normal(e.loc.row(i).transpose(), e.scale.row(i).transpose());
          break;
        case PosteriorKind::Deterministic: break;
      }
    }
    re += recon_loglik_rows(arch.likelihood, model.decode(z), xb).sum();
    if (ll_samples > 0) {
      for (Eigen::Index i = 0; i < n; ++i) {
        Encoded one;
        one.loc = e.loc.row(i);
        one.scale = e.scale.row(i);
        const Tensor zs = sample_posterior(arch, one, 0, ll_samples, rng);
        ll += log_mean_exp(log_importance_weights(model, xb.row(i), one, zs));
      }
    }
  }
  const auto n = static_cast<double>(x.rows());
  ElboReport r;
  r.re = re / n;
  r.kl = kl / n;
  r.elbo = r.re - r.kl;
  r.beta = 1.0;
  if (ll_samples > 0) r.ll_estimate = ll / n;
  return r;
}

}  // namespace svmf
