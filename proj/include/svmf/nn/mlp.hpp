// Dense layers, multi-layer perceptrons and the Adam optimizer.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/nn/tape.hpp"
#include "svmf/rng.hpp"

namespace svmf::nn {

enum class Activation { ReLU, Tanh, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Tape::Var activate(Tape& tape, Tape::Var x, Activation a) {
  switch (a) {
    case Activation::ReLU: return tape.relu(x);
    case Activation::Tanh: return tape.tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::ReLU: return x.cwiseMax(0.0);
    case Activation::Tanh: return x.array().tanh().matrix();
    case Activation::Identity: return x;
  }
  return x;
}

/// y = x W + b with W [in, out] and b [1, out].
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  Dense(int in, int out, const std::string& name)
      : weight(name + ".weight", Tensor::Zero(in, out)), bias(name + ".bias", Tensor::Zero(1, out)) {}

  [[nodiscard]] int in() const { return static_cast<int>(weight.value.rows()); }
  [[nodiscard]] int out() const { return static_cast<int>(weight.value.cols()); }

  /// Glorot-uniform weights U(-s, s), s = sqrt(6 / (in + out)); zero bias.
  void glorot_init(Rng& rng) {
    const double s = std::sqrt(6.0 / (in() + out()));
    for (Eigen::Index i = 0; i < weight.value.size(); ++i)
      weight.value.data()[i] = s * (2.0 * rng.uniform() - 1.0);
    bias.value.setZero();
  }

  Tape::Var forward(Tape& tape, Tape::Var x) {
    if (tape.value(x).cols() != in())
      throw std::invalid_argument("Dense '" + weight.name + "': input " +
                                  shape_string(tape.value(x)) + " does not match " +
                                  std::to_string(in()) + " inputs");
    return tape.add_row(tape.matmul(x, tape.param(weight)), tape.param(bias));
  }

  [[nodiscard]] Tensor eval(const Tensor& x) const {
    if (x.cols() != in())
      throw std::invalid_argument("Dense '" + weight.name + "': input " + shape_string(x) +
                                  " does not match " + std::to_string(in()) + " inputs");
    Tensor y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Stack of Dense layers. Hidden layers use `activation`; the last layer uses
/// `output_activation`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& sizes, Activation activation, Activation output_activation,
      const std::string& name)
      : activation_(activation), output_activation_(output_activation) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
      layers_.emplace_back(sizes[i], sizes[i + 1], name + "." + std::to_string(i));
  }

  void glorot_init(Rng& rng) {
    for (auto& layer : layers_) layer.glorot_init(rng);
  }

  Tape::Var forward(Tape& tape, Tape::Var x) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].forward(tape, x);
      x = activate(tape, x, i + 1 == layers_.size() ? output_activation_ : activation_);
    }
    return x;
  }

  /// Forward pass without recording.
  [[nodiscard]] Tensor eval(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      h = activate(layers_[i].eval(h), i + 1 == layers_.size() ? output_activation_ : activation_);
    return h;
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& layer : layers_) layer.collect(out);
  }

  [[nodiscard]] const std::vector<Dense>& layers() const { return layers_; }
  std::vector<Dense>& layers() { return layers_; }
  [[nodiscard]] int in() const { return layers_.front().in(); }
  [[nodiscard]] int out() const { return layers_.back().out(); }

 private:
  std::vector<Dense> layers_;
  Activation activation_ = Activation::ReLU;
  Activation output_activation_ = Activation::Identity;
};

/// Adam with bias correction. Minimizes: call step() with the loss gradient
/// already accumulated in each Parameter::grad.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params) {
    if (first_.empty()) {
      for (const Parameter* p : params) {
        first_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_.size() != params.size()) throw std::logic_error("Adam: parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * p.grad;
      second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -=
          lr_ * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps_);
    }
  }

  [[nodiscard]] long steps() const { return t_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace svmf::nn
