#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "svmf/nn/mlp.hpp"
#include "svmf/nn/tape.hpp"
#include "svmf/rng.hpp"
#include "svmf/vae.hpp"

namespace {

using namespace svmf;
using namespace svmf::nn;

Tensor random_tensor(Rng& rng, int r, int c, double scale = 1.0) {
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  return t;
}

// Builds a scalar from parameter `p` through `body` and compares the tape
// gradient with central differences on every entry.
void check_gradient(Parameter& p, const std::function<Tape::Var(Tape&, Tape::Var)>& body,
                    double tol = 1e-6) {
  auto eval = [&]() {
    Tape t;
    return t.value(t.sum(body(t, t.param(p))))(0, 0);
  };
  p.zero_grad();
  {
    Tape t;
    t.backward(t.sum(body(t, t.param(p))));
  }
  const Tensor analytic = p.grad;
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(p.value.data()[i]));
    const double orig = p.value.data()[i];
    p.value.data()[i] = orig + h;
    const double up = eval();
    p.value.data()[i] = orig - h;
    const double dn = eval();
    p.value.data()[i] = orig;
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(analytic.data()[i], fd, tol * std::max(1.0, std::abs(fd))) << p.name << "[" << i << "]";
  }
}

TEST(Tape, ElementwiseOpsMatchFiniteDifferences) {
  Rng rng(1);
  Parameter a("a", random_tensor(rng, 3, 4));
  const Tensor other = random_tensor(rng, 3, 4);
  const Tensor row = random_tensor(rng, 1, 4);
  const Tensor right = random_tensor(rng, 4, 2);

  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.matmul(x, t.constant(right)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.mul(t.add_row(x, t.constant(row)), x); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.sub(t.constant(other), t.square(x)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.scale(t.add(x, t.tanh(x)), -2.5); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.exp(t.scale(x, 0.3)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.softplus(t.add_scalar(x, 0.4)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.mul(t.relu(x), t.constant(other)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.mul(t.row_normalize(x), t.constant(other)); });
  check_gradient(a, [&](Tape& t, Tape::Var x) { return t.square(t.row_sum(t.repeat_rows(x, 3))); });
}

TEST(Tape, ParameterOnRightOfMatmulAndRowBias) {
  Rng rng(2);
  Parameter w("w", random_tensor(rng, 4, 2));
  Parameter b("b", random_tensor(rng, 1, 2));
  const Tensor x = random_tensor(rng, 5, 4);
  check_gradient(w, [&](Tape& t, Tape::Var p) { return t.tanh(t.matmul(t.constant(x), p)); });
  const Tensor base = random_tensor(rng, 5, 2);
  check_gradient(b, [&](Tape& t, Tape::Var p) { return t.square(t.add_row(t.constant(base), p)); });
}

TEST(Tape, LikelihoodNodes) {
  Rng rng(3);
  Parameter l("logits", random_tensor(rng, 3, 6, 2.0));
  Tensor x(3, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  check_gradient(l, [&](Tape& t, Tape::Var p) { return t.bernoulli_loglik_rows(p, x); });
  check_gradient(l, [&](Tape& t, Tape::Var p) { return t.gaussian_loglik_rows(p, x); });
}

TEST(Tape, SharedNodeAccumulates) {
  Parameter a("a", Tensor::Constant(1, 1, 3.0));
  Tape t;
  const auto x = t.param(a);
  t.backward(t.sum(t.mul(x, x)));
  EXPECT_DOUBLE_EQ(a.grad(0, 0), 6.0);
}

TEST(Tape, ShapeErrors) {
  Tape t;
  const auto a = t.constant(Tensor::Zero(2, 3));
  const auto b = t.constant(Tensor::Zero(2, 2));
  EXPECT_THROW(t.matmul(a, a), std::invalid_argument);
  EXPECT_THROW(t.add(a, b), std::invalid_argument);
  EXPECT_THROW(t.backward(a), std::invalid_argument);
  EXPECT_THROW(t.bernoulli_loglik_rows(a, Tensor::Zero(3, 3)), std::invalid_argument);
}

TEST(BernoulliLoglik, ZeroLogitsAndSaturation) {
  const Tensor zeros = Tensor::Zero(2, 5);
  Tensor x = Tensor::Ones(2, 5);
  x(0, 1) = 0.0;
  EXPECT_NEAR(bernoulli_recon_loglik(zeros, x), 10.0 * std::log(0.5), 1e-14);
  const Tensor big = Tensor::Constant(1, 3, 800.0);
  EXPECT_NEAR(bernoulli_recon_loglik(big, Tensor::Ones(1, 3)), 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(bernoulli_recon_loglik(-big, Tensor::Ones(1, 3))));
}

TEST(BernoulliLoglik, MatchesNaiveFormula) {
  Rng rng(4);
  const Tensor l = random_tensor(rng, 4, 20, 3.0);
  Tensor x(4, 20);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  double naive = 0.0;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-l.data()[i]));
    naive += x.data()[i] * std::log(p) + (1.0 - x.data()[i]) * std::log(1.0 - p);
  }
  EXPECT_NEAR(bernoulli_recon_loglik(l, x), naive, 1e-10);
  EXPECT_THROW(bernoulli_recon_loglik(l, Tensor::Zero(4, 3)), std::invalid_argument);
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  Mlp net({4, 8, 3}, Activation::ReLU, Activation::Identity, "net");
  Rng rng(5);
  EXPECT_EQ(net.eval(random_tensor(rng, 6, 4)).norm(), 0.0);
}

TEST(Mlp, SingleLinearLayer) {
  Rng rng(6);
  Mlp net({3, 2}, Activation::ReLU, Activation::Identity, "lin");
  net.glorot_init(rng);
  net.layers()[0].bias.value << 0.5, -1.0;
  const Tensor x = random_tensor(rng, 4, 3);
  Tensor expected = x * net.layers()[0].weight.value;
  expected.rowwise() += net.layers()[0].bias.value.row(0);
  EXPECT_NEAR((net.eval(x) - expected).norm(), 0.0, 1e-14);
  Tape t;
  EXPECT_NEAR((t.value(net.forward(t, t.constant(x))) - expected).norm(), 0.0, 1e-14);
  EXPECT_THROW(net.eval(random_tensor(rng, 2, 5)), std::invalid_argument);
}

TEST(Mlp, GlorotRange) {
  Rng rng(7);
  Dense d(30, 20, "d");
  d.glorot_init(rng);
  const double s = std::sqrt(6.0 / 50.0);
  EXPECT_LE(d.weight.value.cwiseAbs().maxCoeff(), s);
  EXPECT_GT(d.weight.value.cwiseAbs().maxCoeff(), 0.9 * s);
  EXPECT_EQ(d.bias.value.norm(), 0.0);
}

TEST(Mlp, TapeGradientMatchesFiniteDifferences) {
  for (Activation act : {Activation::Tanh, Activation::ReLU}) {
    Rng rng(8);
    Mlp net({5, 7, 6, 3}, act, Activation::Identity, "net");
    net.glorot_init(rng);
    for (auto& layer : net.layers()) layer.bias.value = random_tensor(rng, 1, layer.out(), 0.1);
    const Tensor x = random_tensor(rng, 4, 5);
    const Tensor target = random_tensor(rng, 4, 3);
    auto loss = [&]() {
      const Tensor y = net.eval(x);
      return 0.5 * (y - target).squaredNorm() + y.array().sin().sum();
    };
    std::vector<Parameter*> params;
    net.collect(params);
    for (auto* p : params) p->zero_grad();
    Tape t;
    const auto y = net.forward(t, t.constant(x));
    const Tensor yv = t.value(y);
    Tensor seed = (yv - target) + Tensor(yv.array().cos().matrix());
    t.backward({{y, seed}});
    for (auto* p : params)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double orig = p->value.data()[i];
        const double h = 1e-5;
        p->value.data()[i] = orig + h;
        const double up = loss();
        p->value.data()[i] = orig - h;
        const double dn = loss();
        p->value.data()[i] = orig;
        const double fd = (up - dn) / (2 * h);
        EXPECT_NEAR(p->grad.data()[i], fd, 1e-4 * std::max(1.0, std::abs(fd)))
            << to_string(act) << " " << p->name << "[" << i << "]";
      }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::Constant(1, 3, 1.0));
  p.grad << 2.0, -0.5, 0.0;
  Adam opt(0.1);
  opt.step({&p});
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p.value(0, 1), 1.1, 1e-6);
  EXPECT_DOUBLE_EQ(p.value(0, 2), 1.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  Parameter p("p", Tensor::Constant(2, 2, 3.0));
  Adam opt(0.05);
  for (int i = 0; i < 2000; ++i) {
    p.grad = 2.0 * (p.value.array() - 1.0).matrix();
    opt.step({&p});
  }
  EXPECT_NEAR((p.value.array() - 1.0).abs().maxCoeff(), 0.0, 1e-3);
}

}  // namespace
