#include "chordlm/neural.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

namespace chordlm::nn {
namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

TEST(Lstm, ZeroParamsGiveZeroHidden) {
  std::mt19937_64 rng(1);
  auto p = LstmParams::zeros(4, 3);
  std::vector<Matrix> xs{random_matrix(2, 4, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng)};
  auto f = lstm_forward(p, xs, LstmState::zeros(2, 3));
  for (const auto& h : f.hidden) EXPECT_EQ(h.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lstm, HandComputedSingleUnitStep) {
  LstmParams p = LstmParams::zeros(2, 1);
  // Rows: input, forget, cell, output gates.
  p.w_in << 0.5, -0.25, 0.1, 0.2, -0.3, 0.8, 1.0, 0.0;
  p.w_rec << 0.4, -0.6, 0.7, 0.2;
  p.bias << 0.1, 1.0, -0.2, 0.05;
  Matrix x(1, 2);
  x << 1.0, 2.0;
  LstmState s{Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, -0.5)};
  Matrix h = lstm_step(p, x, s);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sig(0.5 * 1 - 0.25 * 2 + 0.4 * 0.3 + 0.1);
  const double f = sig(0.1 * 1 + 0.2 * 2 - 0.6 * 0.3 + 1.0);
  const double g = std::tanh(-0.3 * 1 + 0.8 * 2 + 0.7 * 0.3 - 0.2);
  const double o = sig(1.0 * 1 + 0.0 * 2 + 0.2 * 0.3 + 0.05);
  const double c = f * -0.5 + i * g;
  EXPECT_NEAR(s.c(0, 0), c, 1e-12);
  EXPECT_NEAR(h(0, 0), o * std::tanh(c), 1e-12);
}

TEST(Lstm, WholeSequenceEqualsSteppedExactly) {
  std::mt19937_64 rng(2);
  auto p = LstmParams::glorot(5, 4, rng);
  std::vector<Matrix> xs;
  for (int t = 0; t < 6; ++t) xs.push_back(random_matrix(3, 5, rng));
  auto f = lstm_forward(p, xs, LstmState::zeros(3, 4));
  LstmState s = LstmState::zeros(3, 4);
  for (int t = 0; t < 6; ++t) {
    Matrix h = lstm_step(p, xs[static_cast<std::size_t>(t)], s);
    EXPECT_TRUE(h == f.hidden[static_cast<std::size_t>(t)]);
  }
  EXPECT_TRUE(s.c == f.final_state.c);
}

TEST(Lstm, ShapeMismatchIsContractError) {
  auto p = LstmParams::zeros(3, 2);
  LstmState s = LstmState::zeros(1, 2);
  EXPECT_THROW(lstm_step(p, Matrix::Zero(1, 4), s), ContractError);
  LstmCache empty;
  std::vector<Matrix> dh;
  EXPECT_THROW(lstm_backward(p, empty, dh), ContractError);
}

// Loss = sum_t <W_t, h_t> for fixed random W_t, checked against central
// finite differences for every LSTM parameter.
TEST(Lstm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto p = LstmParams::glorot(3, 4, rng);
  p.bias = random_matrix(1, 16, rng, 0.5);
  std::vector<Matrix> xs, ws;
  for (int t = 0; t < 5; ++t) {
    xs.push_back(random_matrix(2, 3, rng));
    ws.push_back(random_matrix(2, 4, rng));
  }
  auto loss = [&](const LstmParams& q) {
    auto f = lstm_forward(q, xs, LstmState::zeros(2, 4));
    double l = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) l += f.hidden[t].cwiseProduct(ws[t]).sum();
    return l;
  };
  auto f = lstm_forward(p, xs, LstmState::zeros(2, 4));
  auto b = lstm_backward(p, f.cache, ws);
  auto check = [&](Matrix LstmParams::*member, const Matrix& grad) {
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      LstmParams plus = p, minus = p;
      (plus.*member).data()[i] += 1e-5;
      (minus.*member).data()[i] -= 1e-5;
      const double numeric = (loss(plus) - loss(minus)) / 2e-5;
      EXPECT_NEAR(grad.data()[i], numeric, 1e-8 + 1e-6 * std::abs(numeric));
    }
  };
  check(&LstmParams::w_in, b.grads.w_in);
  check(&LstmParams::w_rec, b.grads.w_rec);
  check(&LstmParams::bias, b.grads.bias);

  // Input gradients as well.
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (Eigen::Index i = 0; i < xs[t].size(); ++i) {
      const double keep = xs[t].data()[i];
      xs[t].data()[i] = keep + 1e-5;
      const double up = loss(p);
      xs[t].data()[i] = keep - 1e-5;
      const double down = loss(p);
      xs[t].data()[i] = keep;
      EXPECT_NEAR(b.d_inputs[t].data()[i], (up - down) / 2e-5, 1e-8);
    }
  }
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto p = DenseParams::glorot(3, 2, rng);
  p.bias = random_matrix(1, 2, rng);
  Matrix x = random_matrix(4, 3, rng), w = random_matrix(4, 2, rng);
  auto loss = [&](const DenseParams& q) { return dense_forward(q, x).cwiseProduct(w).sum(); };
  auto g = DenseParams::zeros(3, 2);
  dense_backward(p, x, w, g);
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) {
    DenseParams a = p, b = p;
    a.weight.data()[i] += 1e-6;
    b.weight.data()[i] -= 1e-6;
    EXPECT_NEAR(g.weight.data()[i], (loss(a) - loss(b)) / 2e-6, 1e-7);
  }
  EXPECT_NEAR(g.bias(0, 1), w.col(1).sum(), 1e-12);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectPredictionHasZeroGradient) {
  Matrix logits(1, 3);
  logits << 1000.0, 0.0, 0.0;
  std::vector<int> target{0};
  std::vector<double> weight{1.0};
  Matrix d;
  const double loss = softmax_cross_entropy(logits, target, weight, &d);
  EXPECT_EQ(loss, 0.0);
  EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SoftmaxCrossEntropy, GradientScalesWithLoss) {
  std::mt19937_64 rng(5);
  Matrix logits = random_matrix(3, 5, rng, 3.0);
  std::vector<int> targets{0, 4, 2};
  std::vector<double> w1{1.0, 0.5, 0.25}, w2{2.0, 1.0, 0.5};
  Matrix d1, d2;
  const double l1 = softmax_cross_entropy(logits, targets, w1, &d1);
  const double l2 = softmax_cross_entropy(logits, targets, w2, &d2);
  EXPECT_NEAR(l2, 2.0 * l1, 1e-12);
  EXPECT_TRUE(d2.isApprox(2.0 * d1, 1e-14));
}

TEST(SoftmaxCrossEntropy, LogSoftmaxRowsNormalized) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logp = log_softmax_rows(random_matrix(4, 25, rng, 50.0));
    for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(logp.row(r).array().exp().sum(), 1.0, 1e-12);
  }
}

TEST(SgdMomentum, PlainSgdWhenMomentumZero) {
  Matrix p = Matrix::Constant(1, 2, 1.0), g(1, 2);
  g << 0.5, -2.0;
  std::vector<NamedTensor> params{{"p", &p}}, grads{{"p", &g}};
  SgdMomentum opt({0.1, 0.0, 10});
  opt.step(params, grads, 0);
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 1.0 + 0.1 * 2.0);
}

TEST(SgdMomentum, FinalEpochHasZeroLearningRate) {
  Matrix p = Matrix::Constant(1, 1, 3.0), g = Matrix::Constant(1, 1, 7.0);
  std::vector<NamedTensor> params{{"p", &p}}, grads{{"p", &g}};
  SgdMomentum opt({0.1, 0.0, 10});
  EXPECT_EQ(opt.learning_rate(10), 0.0);
  opt.step(params, grads, 10);
  EXPECT_EQ(p(0, 0), 3.0);
}

TEST(SgdMomentum, TwoHandComputedSteps) {
  Matrix p = Matrix::Constant(1, 1, 1.0), g = Matrix::Constant(1, 1, 0.5);
  std::vector<NamedTensor> params{{"p", &p}}, grads{{"p", &g}};
  SgdMomentum opt({0.1, 0.9, 10});
  opt.step(params, grads, 0);  // v = -0.05
  EXPECT_NEAR(opt.velocity()[0](0, 0), -0.05, 1e-15);
  EXPECT_NEAR(p(0, 0), 0.95, 1e-15);
  opt.step(params, grads, 1);  // lr = 0.09, v = 0.9 * -0.05 - 0.09 * 0.5 = -0.09
  EXPECT_NEAR(opt.velocity()[0](0, 0), -0.09, 1e-15);
  EXPECT_NEAR(p(0, 0), 0.86, 1e-15);
}

TEST(SgdMomentum, NonFiniteGradientRejected) {
  Matrix p = Matrix::Zero(1, 1), g = Matrix::Constant(1, 1, std::nan(""));
  std::vector<NamedTensor> params{{"p", &p}}, grads{{"p", &g}};
  SgdMomentum opt({0.1, 0.9, 10});
  EXPECT_THROW(opt.step(params, grads, 0), NumericalError);
  EXPECT_EQ(p(0, 0), 0.0);
}

TEST(Clipping, RescalesToMaxNorm) {
  Matrix a = Matrix::Constant(1, 1, 3.0), b = Matrix::Constant(1, 1, 4.0);
  std::vector<NamedTensor> grads{{"a", &a}, {"b", &b}};
  EXPECT_DOUBLE_EQ(clip_gradient_norm(grads, 1.0), 5.0);
  EXPECT_NEAR(gradient_norm(grads), 1.0, 1e-15);
  EXPECT_NEAR(a(0, 0), 0.6, 1e-15);
}

TEST(Checkpoint, SaveLoadExactAndShapeChecked) {
  std::mt19937_64 rng(7);
  auto p = LstmParams::glorot(3, 2, rng);
  std::vector<NamedTensor> tensors;
  p.append_tensors("l0", tensors);
  std::stringstream buf;
  save_tensors(buf, tensors);
  const std::string text = buf.str();

  auto q = LstmParams::zeros(3, 2);
  std::vector<NamedTensor> into;
  q.append_tensors("l0", into);
  std::stringstream in(text);
  load_tensors(in, into);
  EXPECT_TRUE(q.w_in == p.w_in && q.w_rec == p.w_rec && q.bias == p.bias);

  auto wrong = LstmParams::zeros(4, 2);
  std::vector<NamedTensor> wrong_t;
  wrong.append_tensors("l0", wrong_t);
  std::stringstream in2(text);
  EXPECT_THROW(load_tensors(in2, wrong_t), DataError);
}

}  // namespace
}  // namespace chordlm::nn
