// Reverse-mode gradient tape over dense row-major matrices.
//
// Nodes are appended in evaluation order, so the node list is already a
// topological order; backward() walks it once in reverse. Only the ops the
// encoder/decoder stacks need are provided.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svmf::nn {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable array plus its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

inline std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + "]";
}

/// Numerically stable log(1 + e^x).
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class Tape {
 public:
  struct Var {
    std::size_t id;
  };

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr); }

  /// Leaf whose gradient is kept after backward() (e.g. a latent sample).
  Var input(Tensor value) { return constant(std::move(value)); }

  /// Leaf bound to a Parameter; backward() adds into parameter.grad.
  Var param(Parameter& parameter) {
    Var v = push(parameter.value, {}, nullptr);
    nodes_[v.id].parameter = &parameter;
    return v;
  }

  [[nodiscard]] const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the seeded objective with respect to v; zeros if v was not reached.
  [[nodiscard]] Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.rows())
      throw std::invalid_argument("matmul shape mismatch " + shape_string(av) + " x " +
                                  shape_string(bv));
    return push(av * bv, {a, b}, [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g * t.value(b).transpose());
      t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  /// x + 1 b for a [1, n] row b.
  Var add_row(Var x, Var row) {
    const Tensor& xv = value(x);
    const Tensor& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != xv.cols())
      throw std::invalid_argument("add_row shape mismatch " + shape_string(xv) + " + " +
                                  shape_string(rv));
    Tensor out = xv.rowwise() + rv.row(0);
    return push(std::move(out), {x, row}, [x, row](Tape& t, const Tensor& g) {
      t.accumulate(x, g);
      t.accumulate(row, g.colwise().sum());
    });
  }

  Var add(Var a, Var b) {
    require_same(a, b, "add");
    return push(value(a) + value(b), {a, b}, [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    require_same(a, b, "sub");
    return push(value(a) - value(b), {a, b}, [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, -g);
    });
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    require_same(a, b, "mul");
    Tensor out = value(a).cwiseProduct(value(b));
    return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g.cwiseProduct(t.value(b)));
      t.accumulate(b, g.cwiseProduct(t.value(a)));
    });
  }

  Var scale(Var a, double s) {
    return push(s * value(a), {a}, [a, s](Tape& t, const Tensor& g) { t.accumulate(a, s * g); });
  }

  Var add_scalar(Var a, double s) {
    Tensor out = value(a).array() + s;
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
  }

  Var relu(Var a) {
    Tensor out = value(a).cwiseMax(0.0);
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      t.accumulate(a, Tensor((t.value(a).array() > 0.0).select(g.array(), 0.0).matrix()));
    });
  }

  Var tanh(Var a) {
    Tensor out = value(a).array().tanh();
    const std::size_t self = nodes_.size();
    return push(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].value;
      t.accumulate(a, Tensor((g.array() * (1.0 - y.array().square())).matrix()));
    });
  }

  Var exp(Var a) {
    Tensor out = value(a).array().exp();
    const std::size_t self = nodes_.size();
    return push(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
      t.accumulate(a, g.cwiseProduct(t.nodes_[self].value));
    });
  }

  Var square(Var a) {
    Tensor out = value(a).array().square();
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      t.accumulate(a, 2.0 * g.cwiseProduct(t.value(a)));
    });
  }

  Var softplus(Var a) {
    Tensor out = value(a).unaryExpr([](double x) { return nn::softplus(x); });
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      t.accumulate(a, g.cwiseProduct(t.value(a).unaryExpr([](double x) { return sigmoid(x); })));
    });
  }

  /// Each row divided by its Euclidean norm.
  Var row_normalize(Var a) {
    const Tensor& av = value(a);
    Eigen::VectorXd norms = av.rowwise().norm();
    if ((norms.array() <= 0.0).any()) throw std::domain_error("row_normalize: zero row");
    Tensor out = norms.cwiseInverse().asDiagonal() * av;
    const std::size_t self = nodes_.size();
    return push(std::move(out), {a}, [a, self, norms](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_[self].value;
      // d(x/|x|) = (I - y y^T) dx / |x|
      Eigen::VectorXd proj = (g.cwiseProduct(y)).rowwise().sum();
      Tensor gx = g - proj.asDiagonal() * y;
      t.accumulate(a, norms.cwiseInverse().asDiagonal() * gx);
    });
  }

  /// Stack `times` copies of the rows: output row i*times + s is input row i.
  Var repeat_rows(Var a, int times) {
    const Tensor& av = value(a);
    Tensor out(av.rows() * times, av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i)
      for (int s = 0; s < times; ++s) out.row(i * times + s) = av.row(i);
    return push(std::move(out), {a}, [a, times](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      Tensor ga = Tensor::Zero(av.rows(), av.cols());
      for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (int s = 0; s < times; ++s) ga.row(i) += g.row(i * times + s);
      t.accumulate(a, ga);
    });
  }

  /// Scalar [1, 1] sum of all entries.
  Var sum(Var a) {
    Tensor out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      t.accumulate(a, Tensor::Constant(av.rows(), av.cols(), g(0, 0)));
    });
  }

  /// [n, 1] per-row sums.
  Var row_sum(Var a) {
    Tensor out = value(a).rowwise().sum();
    return push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      Tensor ga = g.col(0).replicate(1, av.cols());
      t.accumulate(a, ga);
    });
  }

  /// [n, 1] Bernoulli log-likelihood sum_j x log s(l) + (1 - x) log(1 - s(l)),
  /// evaluated as x l - softplus(l).
  Var bernoulli_loglik_rows(Var logits, const Tensor& target) {
    const Tensor& lv = value(logits);
    if (lv.rows() != target.rows() || lv.cols() != target.cols())
      throw std::invalid_argument("bernoulli_loglik_rows shape mismatch " + shape_string(lv) +
                                  " vs " + shape_string(target));
    Tensor terms = target.cwiseProduct(lv) - lv.unaryExpr([](double x) { return nn::softplus(x); });
    Tensor out = terms.rowwise().sum();
    return push(std::move(out), {logits}, [logits, target](Tape& t, const Tensor& g) {
      Tensor residual = target - t.value(logits).unaryExpr([](double x) { return sigmoid(x); });
      t.accumulate(logits, g.col(0).asDiagonal() * residual);
    });
  }

  /// [n, 1] unit-variance Gaussian log-likelihood -||x - mean||^2 / 2 - (D/2) log 2 pi.
  Var gaussian_loglik_rows(Var mean, const Tensor& target) {
    const Tensor& mv = value(mean);
    if (mv.rows() != target.rows() || mv.cols() != target.cols())
      throw std::invalid_argument("gaussian_loglik_rows shape mismatch " + shape_string(mv) +
                                  " vs " + shape_string(target));
    const double constant = -0.5 * static_cast<double>(mv.cols()) * std::log(2.0 * std::numbers::pi);
    Tensor out = (-0.5 * (target - mv).rowwise().squaredNorm()).array() + constant;
    return push(std::move(out), {mean}, [mean, target](Tape& t, const Tensor& g) {
      t.accumulate(mean, g.col(0).asDiagonal() * (target - t.value(mean)));
    });
  }

  /// Backpropagate from a [1, 1] node with seed 1.
  void backward(Var scalar) {
    if (value(scalar).size() != 1) throw std::invalid_argument("backward needs a scalar node");
    backward({{scalar, Tensor::Ones(1, 1)}});
  }

  /// Backpropagate several seeded nodes at once.
  void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    std::size_t last = 0;
    for (const auto& [v, g] : seeds) {
      const Tensor& val = value(v);
      if (g.rows() != val.rows() || g.cols() != val.cols())
        throw std::invalid_argument("backward seed shape " + shape_string(g) + " for node " +
                                    shape_string(val));
      accumulate(v, g);
      last = std::max(last, v.id);
    }
    for (std::size_t i = last + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.parameter) n.parameter->grad += n.grad;
    }
  }

 private:
  using Backward = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    Backward backward;
    Parameter* parameter = nullptr;
  };

  Var push(Tensor value, std::vector<Var> parents, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents), std::move(backward), nullptr});
    return Var{nodes_.size() - 1};
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void require_same(Var a, Var b, const char* op) const {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw std::invalid_argument(std::string(op) + " shape mismatch " + shape_string(av) + " vs " +
                                  shape_string(bv));
  }

  std::vector<Node> nodes_;
};

}  // namespace svmf::nn
