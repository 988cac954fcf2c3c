// Command-line front end: sampling, KL tables, gradient checks, training and
// log-likelihood evaluation.
//
// Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numeric divergence
// or failed gradient check, 4 missing data.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "svmf/experiments/manifest.hpp"
#include "svmf/experiments/mnist.hpp"
#include "svmf/experiments/toy.hpp"
#include "svmf/io/checkpoint.hpp"
#include "svmf/io/idx.hpp"
#include "svmf/sampler.hpp"
#include "svmf/vae.hpp"
#include "svmf/vmf.hpp"

namespace {

using namespace svmf;
using namespace svmf::experiments;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kIo = 1, kUsage = 2, kDiverged = 3, kMissingData = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string out = "svmf-out";
  int threads = 1;
  std::string format = "csv";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads for grid loops")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  app->add_option("--format", c.format, "Table format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
}

json common_json(const Common& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["format"] = c.format;
  return j;
}

std::string prepare_out(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw OutputError("cannot create output directory '" + c.out + "': " + ec.message());
  return c.out;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw UsageError("cannot parse " + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(what + " list is empty");
  return out;
}

/// `e<k>` (1-based basis vector) or comma-separated coordinates, renormalized.
Vector parse_mu(const std::string& spec, int m) {
  Vector mu = Vector::Zero(m);
  if (spec.size() > 1 && spec[0] == 'e') {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(spec.substr(1), &used);
      if (used != spec.size() - 1) throw std::invalid_argument(spec);
    } catch (const std::exception&) {
      throw UsageError("bad mu shorthand '" + spec + "'");
    }
    if (k < 1 || k > m) throw UsageError("mu shorthand '" + spec + "' outside dimension " + std::to_string(m));
    mu[k - 1] = 1.0;
    return mu;
  }
  const auto coords = parse_list<double>(spec, "mu");
  if (static_cast<int>(coords.size()) != m)
    throw UsageError("mu has " + std::to_string(coords.size()) + " coordinates, m is " + std::to_string(m));
  for (int i = 0; i < m; ++i) mu[i] = coords[i];
  const double norm = mu.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw UsageError("mu must be a finite non-zero vector");
  return mu / norm;
}

/// Writes a table either as CSV (header row) or as a JSON array of objects.
void write_table(const std::string& dir, const std::string& stem, const Common& c,
                 const std::vector<std::string>& columns, const std::vector<std::vector<double>>& rows) {
  if (c.format == "csv") {
    const std::string path = path_in(dir, stem + ".csv");
    auto os = open_output(path);
    for (std::size_t k = 0; k < columns.size(); ++k) os << (k ? "," : "") << columns[k];
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << format_double(row[k]);
      os << '\n';
    }
    finish_output(os, path);
  } else {
    json arr = json::array();
    for (const auto& row : rows) {
      json obj;
      for (std::size_t k = 0; k < row.size(); ++k) obj[columns[k]] = row[k];
      arr.push_back(obj);
    }
    write_json_file(path_in(dir, stem + ".json"), arr);
  }
}

// ------------------------------------------------------------------ sample

struct SampleArgs {
  Common common;
  int m = 3;
  double kappa = 1.0;
  std::string mu = "e1";
  int n = 1000;
  std::string method = "auto";
};

int cmd_sample(const SampleArgs& a) {
  if (a.m < 2) throw UsageError("--m must be >= 2");
  if (!(a.kappa >= 0.0) || !std::isfinite(a.kappa)) throw UsageError("--kappa must be finite and >= 0");
  if (a.n < 1) throw UsageError("--n must be >= 1");
  const Vector mu = parse_mu(a.mu, a.m);
  const OmegaMethod method = a.method == "rejection" ? OmegaMethod::Rejection : OmegaMethod::Auto;

  const std::string dir = prepare_out(a.common);
  json config = common_json(a.common);
  config["command"] = "sample";
  config["m"] = a.m;
  config["kappa"] = a.kappa;
  config["mu"] = std::vector<double>(mu.data(), mu.data() + mu.size());
  config["n"] = a.n;
  config["method"] = a.method;
  write_json_file(path_in(dir, "config.json"), config);

  Rng rng(a.common.seed);
  const VonMisesFisher dist(mu, a.kappa);
  const Householder reflect(mu);
  std::vector<std::string> columns{"index", "attempts"};
  for (int k = 0; k < a.m; ++k) columns.push_back("z" + std::to_string(k));
  std::vector<std::vector<double>> rows;
  rows.reserve(a.n);
  Vector sum = Vector::Zero(a.m);
  double attempts = 0.0;
  for (int i = 0; i < a.n; ++i) {
    const SampleTrace t = sample_vmf(rng, dist, reflect, method);
    std::vector<double> row{static_cast<double>(i), static_cast<double>(t.attempts)};
    row.insert(row.end(), t.z.data(), t.z.data() + t.z.size());
    rows.push_back(std::move(row));
    sum += t.z;
    attempts += t.attempts;
  }
  write_table(dir, "samples", a.common, columns, rows);

  json summary;
  summary["n"] = a.n;
  summary["mean_resultant"] = sum.norm() / a.n;
  summary["expected_mean_resultant"] = mean_resultant_length(a.m, a.kappa);
  summary["mean_attempts"] = attempts / a.n;
  write_json_file(path_in(dir, "summary.json"), summary);
  std::cout << "mean_resultant=" << format_double(summary["mean_resultant"].get<double>())
            << " mean_attempts=" << format_double(summary["mean_attempts"].get<double>()) << '\n';
  return kOk;
}

// ------------------------------------------------------------- kl / gradcheck

struct KlArgs {
  Common common;
  std::string m = "3,5,10,20,40,64";
  std::string kappa = "0.1,1,10,100,1000";
  double tolerance = 1e-5;
};

struct KlRow {
  int m;
  double kappa, kl, grad, fd, rel_err;
};

/// Central difference with relative step; KL is even in kappa, so the
/// difference at kappa = 0 is exactly zero.
KlRow kl_row(int m, double kappa) {
  KlRow r{m, kappa, kl_to_uniform(m, kappa), kl_grad_kappa(m, kappa), 0.0, 0.0};
  if (kappa > 0.0) {
    const double h = 1e-5 * kappa;
    r.fd = (kl_to_uniform(m, kappa + h) - kl_to_uniform(m, kappa - h)) / (2.0 * h);
  }
  const double scale = std::abs(r.fd);
  r.rel_err = scale > 0.0 ? std::abs(r.grad - r.fd) / scale : std::abs(r.grad - r.fd);
  return r;
}

int cmd_kl(const KlArgs& a, bool check) {
  const auto ms = parse_list<int>(a.m, "m");
  const auto kappas = parse_list<double>(a.kappa, "kappa");
  for (int m : ms)
    if (m < 2) throw UsageError("m values must be >= 2");
  for (double k : kappas)
    if (!(k >= 0.0) || !std::isfinite(k)) throw UsageError("kappa values must be finite and >= 0");

  const std::string dir = prepare_out(a.common);
  json config = common_json(a.common);
  config["command"] = check ? "gradcheck" : "kl";
  config["m"] = ms;
  config["kappa"] = kappas;
  if (check) config["tolerance"] = a.tolerance;
  write_json_file(path_in(dir, "config.json"), config);

  std::vector<KlRow> rows(ms.size() * kappas.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < rows.size(); i += step)
      rows[i] = kl_row(ms[i / kappas.size()], kappas[i % kappas.size()]);
  };
  const auto workers = static_cast<std::size_t>(std::min<int>(a.common.threads, static_cast<int>(rows.size())));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work, t, workers);
  work(0, workers);
  for (auto& th : pool) th.join();

  std::vector<std::vector<double>> table;
  double worst = 0.0;
  for (const auto& r : rows) {
    table.push_back({static_cast<double>(r.m), r.kappa, r.kl, r.grad, r.fd, r.rel_err});
    worst = std::max(worst, r.rel_err);
  }
  write_table(dir, check ? "gradcheck" : "kl", a.common, {"m", "kappa", "kl", "grad_kappa", "fd_grad", "rel_err"},
              table);
  std::cout << "rows=" << rows.size() << " max_rel_err=" << format_double(worst);
  if (check) {
    const bool ok = worst < a.tolerance;
    std::cout << (ok ? " PASS" : " FAIL") << '\n';
    return ok ? kOk : kDiverged;
  }
  std::cout << '\n';
  return kOk;
}

// -------------------------------------------------------------------- train

struct ToyArgs {
  Common common;
  std::string model = "svae";
  ToySpec spec;
  ToyTrainOptions opt;
  std::string kappas = "4,4,4";
  std::string hidden = "128,64";
};

int write_manifest_and_report(const std::string& dir, RunManifest& m, bool diverged) {
  m.files["config"] = "config.json";
  write_json_file(path_in(dir, "manifest.json"), m.to_json());
  std::cout << m.summary.dump() << '\n';
  return diverged ? kDiverged : kOk;
}

int cmd_train_toy(ToyArgs& a) {
  const auto model = parse_toy_model(a.model);
  if (!model) throw UsageError("unknown --model '" + a.model + "' (ae, nvae, nvae-beta0.1, svae)");
  const auto ks = parse_list<double>(a.kappas, "kappas");
  if (ks.size() != 3) throw UsageError("--kappas needs three values");
  for (int i = 0; i < 3; ++i) a.spec.component_kappas[i] = ks[i];
  a.opt.hidden = parse_list<int>(a.hidden, "hidden");
  a.opt.seed = a.common.seed;
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const std::string dir = prepare_out(a.common);
  json config = common_json(a.common);
  config["command"] = "train toy";
  config["model"] = a.model;
  config["component_means"] = a.spec.component_means;
  config["component_kappas"] = a.spec.component_kappas;
  config["n_train"] = a.spec.n_train;
  config["n_val"] = a.spec.n_val;
  config["ambient_dim"] = a.spec.ambient_dim;
  config["transform_seed"] = a.spec.transform_seed;
  config["transform_hidden"] = a.spec.transform_hidden;
  config["transform_scale"] = a.spec.transform_scale;
  config["noise_sigma"] = a.spec.noise_sigma;
  config["epochs"] = a.opt.epochs;
  config["batch"] = a.opt.batch;
  config["lr"] = a.opt.lr;
  config["hidden"] = a.opt.hidden;
  write_json_file(path_in(dir, "config.json"), config);

  const ToyResult r = run_toy_experiment(a.spec, *model, a.opt);
  RunManifest man;
  man.command = "train toy";
  man.config = config;
  man.seed = a.common.seed;
  const std::string metrics = a.common.format == "csv" ? "metrics.csv" : "metrics.ndjson";
  if (a.common.format == "csv")
    write_metrics_csv(path_in(dir, metrics), r.metrics);
  else
    write_metrics_ndjson(path_in(dir, metrics), r.metrics);
  man.files["metrics"] = metrics;
  man.summary["model"] = a.model;
  if (r.diverged) {
    man.status = "failed";
    man.error = r.error;
  } else {
    write_latents_csv(path_in(dir, "latents.csv"), r.latents, r.labels);
    man.files["latents"] = "latents.csv";
    man.summary["recovery"] = r.recovery;
    man.summary["angle_uniformity_p"] = r.angle_uniformity.p_value;
    man.summary["radius_vs_prior_ks_p"] = r.radius_vs_prior.p_value;
    man.summary["median_radius"] = r.median_radius;
    const auto& last = r.metrics.back();
    man.summary["val_re"] = last.re;
    man.summary["val_kl"] = last.kl;
    man.summary["val_elbo"] = last.elbo;
  }
  return write_manifest_and_report(dir, man, r.diverged);
}

struct DataArgs {
  std::string data_dir;
  bool synthetic = false;
  std::uint64_t data_seed = 1;
};

void add_data_options(CLI::App* app, DataArgs& d) {
  app->add_option("--data-dir", d.data_dir, "Directory with MNIST IDX files (default: $SVMF_DATA_DIR, then ./data)");
  app->add_flag("--synthetic", d.synthetic, "Use procedurally drawn seven-segment digits instead of MNIST");
  app->add_option("--data-seed", d.data_seed, "Seed for the synthetic digits")->capture_default_str();
}

std::string resolve_data_dir(const DataArgs& d) {
  if (!d.data_dir.empty()) return d.data_dir;
  if (const char* env = std::getenv("SVMF_DATA_DIR"); env && *env) return env;
  return "data";
}

io::ImageDataset load_images(const DataArgs& d, int n_train, int n_test) {
  if (d.synthetic) return synthetic_digits(n_train, n_test, d.data_seed);
  const std::string dir = resolve_data_dir(d);
  auto data = io::load_mnist_idx(dir);
  if (!data) throw MissingData("MNIST IDX files not found in '" + dir + "' (set --data-dir or SVMF_DATA_DIR, or pass --synthetic)");
  return std::move(*data);
}

json data_json(const DataArgs& d) {
  json j;
  j["source"] = d.synthetic ? "synthetic" : "mnist";
  if (d.synthetic) j["data_seed"] = d.data_seed;
  return j;
}

struct MnistArgs {
  Common common;
  DataArgs data;
  int dim = 2;
  std::string posterior = "vmf";
  bool desk = false;
  bool full = false;
  std::optional<int> n_train, n_val, n_test, epochs, ll_samples, ll_rows, batch;
  std::optional<double> warmup;
  std::optional<std::string> hidden;
};

PosteriorKind parse_posterior(const std::string& s) {
  if (s == "vmf") return PosteriorKind::VonMisesFisher;
  if (s == "normal") return PosteriorKind::Gaussian;
  throw UsageError("unknown --posterior '" + s + "' (vmf, normal)");
}

int cmd_train_mnist(const MnistArgs& a) {
  if (a.desk && a.full) throw UsageError("--desk-scale and --full-budget are exclusive");
  const PosteriorKind kind = parse_posterior(a.posterior);
  if (a.dim < 1) throw UsageError("--dim must be >= 1");
  MnistBudget b = a.full ? MnistBudget::full() : MnistBudget::desk();
  if (a.n_train) b.n_train = *a.n_train;
  if (a.n_val) b.n_val = *a.n_val;
  if (a.n_test) b.n_test = *a.n_test;
  if (a.epochs) b.epochs = *a.epochs;
  if (a.ll_samples) b.ll_samples = *a.ll_samples;
  if (a.ll_rows) b.ll_rows = *a.ll_rows;
  if (a.batch) b.batch = *a.batch;
  if (a.warmup) b.warmup_epochs = *a.warmup;
  if (a.hidden) {
    b.encoder_hidden = parse_list<int>(*a.hidden, "hidden");
    b.decoder_hidden = {b.encoder_hidden.rbegin(), b.encoder_hidden.rend()};
  }
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const io::ImageDataset data = load_images(a.data, b.n_train + b.n_val, b.n_test);
  const std::string dir = prepare_out(a.common);
  json config = common_json(a.common);
  config["command"] = "train mnist";
  config["data"] = data_json(a.data);
  config["dim"] = a.dim;
  config["posterior"] = a.posterior;
  config["budget"] = a.full ? "full" : "desk";
  config["n_train"] = b.n_train;
  config["n_val"] = b.n_val;
  config["n_test"] = b.n_test;
  config["epochs"] = b.epochs;
  config["batch"] = b.batch;
  config["lr"] = b.lr;
  config["warmup_epochs"] = b.warmup_epochs;
  config["patience"] = b.patience;
  config["ll_samples"] = b.ll_samples;
  config["ll_rows"] = b.ll_rows;
  config["encoder_hidden"] = b.encoder_hidden;
  config["decoder_hidden"] = b.decoder_hidden;
  write_json_file(path_in(dir, "config.json"), config);

  MnistResult r;
  try {
    r = run_mnist_experiment(data, a.dim, kind, b, a.common.seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  RunManifest man;
  man.command = "train mnist";
  man.config = config;
  man.seed = a.common.seed;
  const std::string metrics = a.common.format == "csv" ? "metrics.csv" : "metrics.ndjson";
  if (a.common.format == "csv")
    write_metrics_csv(path_in(dir, metrics), r.metrics);
  else
    write_metrics_ndjson(path_in(dir, metrics), r.metrics);
  man.files["metrics"] = metrics;
  if (r.diverged) {
    man.status = "failed";
    man.error = r.error;
  } else {
    io::save_checkpoint(*r.model, path_in(dir, "model.ckpt"));
    man.files["checkpoint"] = "model.ckpt";
    man.summary["best_epoch"] = r.best_epoch;
    man.summary["test_re"] = r.test.re;
    man.summary["test_kl"] = r.test.kl;
    man.summary["test_elbo"] = r.test.elbo;
    if (r.test.ll_estimate) man.summary["test_ll"] = *r.test.ll_estimate;
  }
  return write_manifest_and_report(dir, man, r.diverged);
}

struct EvalArgs {
  Common common;
  DataArgs data;
  std::string checkpoint;
  int samples = 500;
  int rows = 1000;
};

int cmd_eval_ll(const EvalArgs& a) {
  if (a.samples < 1 || a.rows < 1) throw UsageError("--samples and --rows must be >= 1");
  VaeModel model = io::load_checkpoint(a.checkpoint);
  const io::ImageDataset data = load_images(a.data, 1, a.rows);
  if (data.test.cols() != model.arch().data_dim)
    throw UsageError("checkpoint expects " + std::to_string(model.arch().data_dim) + " inputs, data has " +
                     std::to_string(data.test.cols()));
  const int rows = std::min<int>(a.rows, static_cast<int>(data.test.rows()));

  const std::string dir = prepare_out(a.common);
  json config = common_json(a.common);
  config["command"] = "eval ll";
  config["data"] = data_json(a.data);
  config["checkpoint"] = fs::path(a.checkpoint).filename().string();
  config["samples"] = a.samples;
  config["rows"] = rows;
  write_json_file(path_in(dir, "config.json"), config);

  const Rng root(a.common.seed);
  Rng bin_rng = root.substream(1);
  Rng eval_rng = root.substream(2);
  const nn::Tensor x = io::binarize(data.test.topRows(rows), bin_rng);
  const ElboReport r = evaluate(model, x, eval_rng, a.samples);
  const std::vector<MetricRecord> rec{{0, "test", r.re, r.kl, r.elbo, r.ll_estimate}};
  const std::string metrics = a.common.format == "csv" ? "metrics.csv" : "metrics.ndjson";
  if (a.common.format == "csv")
    write_metrics_csv(path_in(dir, metrics), rec);
  else
    write_metrics_ndjson(path_in(dir, metrics), rec);

  RunManifest man;
  man.command = "eval ll";
  man.config = config;
  man.seed = a.common.seed;
  man.files["metrics"] = metrics;
  man.summary["ll"] = *r.ll_estimate;
  man.summary["elbo"] = r.elbo;
  man.summary["re"] = r.re;
  man.summary["kl"] = r.kl;
  return write_manifest_and_report(dir, man, false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspherical VAE toolkit: von Mises-Fisher sampling, KL, gradients and training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SVMF_REVISION));

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Draw vMF samples and report acceptance statistics");
  add_common(s, sample.common);
  s->add_option("--m", sample.m, "Ambient dimension")->capture_default_str();
  s->add_option("--kappa", sample.kappa, "Concentration")->capture_default_str();
  s->add_option("--mu", sample.mu, "Mean direction: e<k> or comma-separated coordinates")->capture_default_str();
  s->add_option("--n", sample.n, "Number of samples")->capture_default_str();
  s->add_option("--method", sample.method, "Marginal sampler")
      ->check(CLI::IsMember({"auto", "rejection"}))
      ->capture_default_str();

  KlArgs kl;
  auto* k = app.add_subcommand("kl", "Tabulate KL to the uniform prior and its kappa-gradient");
  add_common(k, kl.common);
  k->add_option("--m", kl.m, "Comma-separated dimensions")->capture_default_str();
  k->add_option("--kappa", kl.kappa, "Comma-separated concentrations")->capture_default_str();

  KlArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare the analytic KL gradient with finite differences");
  add_common(g, gc.common);
  g->add_option("--m", gc.m, "Comma-separated dimensions")->capture_default_str();
  g->add_option("--kappa", gc.kappa, "Comma-separated concentrations")->capture_default_str();
  g->add_option("--tolerance", gc.tolerance, "Largest accepted relative error")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);

  ToyArgs toy;
  auto* t = train->add_subcommand("toy", "Circle-recovery experiment");
  add_common(t, toy.common);
  t->add_option("--model", toy.model, "ae, nvae, nvae-beta0.1 or svae")->capture_default_str();
  t->add_option("--kappas", toy.kappas, "Three component concentrations")->capture_default_str();
  t->add_option("--n-train", toy.spec.n_train)->capture_default_str();
  t->add_option("--n-val", toy.spec.n_val)->capture_default_str();
  t->add_option("--ambient-dim", toy.spec.ambient_dim)->capture_default_str();
  t->add_option("--transform-seed", toy.spec.transform_seed)->capture_default_str();
  t->add_option("--transform-scale", toy.spec.transform_scale)->capture_default_str();
  t->add_option("--noise", toy.spec.noise_sigma, "Output noise standard deviation")->capture_default_str();
  t->add_option("--epochs", toy.opt.epochs)->capture_default_str();
  t->add_option("--batch", toy.opt.batch)->capture_default_str();
  t->add_option("--lr", toy.opt.lr)->capture_default_str();
  t->add_option("--hidden", toy.hidden, "Encoder hidden sizes; the decoder mirrors them")->capture_default_str();

  MnistArgs mn;
  auto* mc = train->add_subcommand("mnist", "Binarized-digit ELBO comparison");
  add_common(mc, mn.common);
  add_data_options(mc, mn.data);
  mc->add_option("--dim", mn.dim, "Latent dimension d (S-VAE uses the sphere S^d)")->capture_default_str();
  mc->add_option("--posterior", mn.posterior, "vmf or normal")->capture_default_str();
  mc->add_flag("--desk-scale", mn.desk, "Reduced budget (default)");
  mc->add_flag("--full-budget", mn.full, "Full-length training");
  mc->add_option("--n-train", mn.n_train);
  mc->add_option("--n-val", mn.n_val);
  mc->add_option("--n-test", mn.n_test);
  mc->add_option("--epochs", mn.epochs);
  mc->add_option("--batch", mn.batch);
  mc->add_option("--warmup-epochs", mn.warmup);
  mc->add_option("--ll-samples", mn.ll_samples);
  mc->add_option("--ll-rows", mn.ll_rows);
  mc->add_option("--hidden", mn.hidden, "Encoder hidden sizes; the decoder mirrors them");

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model");
  ev->require_subcommand(1);
  EvalArgs el;
  auto* ll = ev->add_subcommand("ll", "Importance-sampled test log-likelihood");
  add_common(ll, el.common);
  add_data_options(ll, el.data);
  ll->add_option("--checkpoint", el.checkpoint, "Model checkpoint")->required();
  ll->add_option("--samples", el.samples, "Importance samples per image")->capture_default_str();
  ll->add_option("--rows", el.rows, "Test images to evaluate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_sample(sample);
    if (k->parsed()) return cmd_kl(kl, false);
    if (g->parsed()) return cmd_kl(gc, true);
    if (t->parsed()) return cmd_train_toy(toy);
    if (mc->parsed()) return cmd_train_mnist(mn);
    if (ll->parsed()) return cmd_eval_ll(el);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const MissingData& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingData;
  } catch (const NumericDivergence& e) {
    std::cerr << "error: numeric divergence: " << e.what() << '\n';
    return kDiverged;
  } catch (const OutputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const io::IdxError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const io::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
