#include <cmath>

#include <gtest/gtest.h>

#include "camulenet/ad/adam.hpp"
#include "camulenet/ad/checkpoint.hpp"
#include "camulenet/ad/nn.hpp"
#include "support/grad_suite.hpp"

using namespace camulenet;
using ad::Tensor;
using TD = Tensor<double>;

class GradientTest : public ::testing::TestWithParam<test_support::GradCase> {};

TEST_P(GradientTest, MatchesCentralDifferences) {
  const auto r = GetParam().run();
  EXPECT_GT(r.checked, 0u);
  EXPECT_LE(r.max_rel_err, 1e-3) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientTest, ::testing::ValuesIn(test_support::gradient_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Tape, LeafGradientsAccumulateAcrossSweeps) {
  TD x({2}, {1.0, 2.0}, true);
  auto loss = ad::sum(ad::mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tape, SharedSubexpressionReceivesBothPaths) {
  TD x = TD::scalar(3.0, true);
  const auto y = ad::mul(x, x);
  ad::add(y, ad::scale(y, 2.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Tape, NoGradGuardRecordsNothing) {
  TD x({2}, {1.0, 2.0}, true);
  ad::NoGradGuard guard;
  const auto y = ad::sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Tape, NonScalarBackwardIsRejected) {
  TD x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(ad::relu(x).backward(), ShapeError);
}

TEST(Tape, ShapeMismatchNamesBothShapes) {
  TD a({2, 3}, std::vector<double>(6, 1.0)), b({3, 2}, std::vector<double>(6, 1.0));
  try {
    ad::add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(3, 2)"), std::string::npos);
  }
}

TEST(Ops, LayerNormHandValues) {
  TD x({1, 3}, {1.0, 2.0, 3.0});
  const auto y = ad::layer_norm(x, TD::full({3}, 1.0), TD::zeros({3}), 0.0);
  EXPECT_NEAR(y[0], -1.224744871391589, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.224744871391589, 1e-12);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  CounterRng rng(1);
  const auto x = test_support::random_tensor({4, 7}, rng, 10.0);
  const auto y = ad::softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += y[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogC) {
  const auto l = ad::cross_entropy(TD::zeros({3, 4}), {0, 1, 3});
  EXPECT_NEAR(l.item(), std::log(4.0), 1e-12);
  EXPECT_THROW(ad::cross_entropy(TD::zeros({1, 4}), {4}), LabelError);
  EXPECT_THROW(ad::bce_with_logits(TD::zeros({1}), {2}), LabelError);
}

TEST(Ops, DropoutEvalIsIdentityAndRejectsBadRate) {
  CounterRng rng(1);
  const TD x({3}, {1.0, 2.0, 3.0});
  EXPECT_EQ(ad::dropout(x, 0.5, ad::Mode::eval, rng).vec(), x.vec());
  EXPECT_EQ(ad::dropout(x, 0.0, ad::Mode::train, rng).vec(), x.vec());
  EXPECT_THROW(ad::dropout(x, 1.0, ad::Mode::train, rng), ConfigError);
  const auto y = ad::dropout(TD::full({1000}, 1.0), 0.25, ad::Mode::train, rng);
  for (const double v : y.vec()) EXPECT_TRUE(v == 0.0 || std::abs(v - 4.0 / 3.0) < 1e-12);
}

TEST(Ops, MatmulHandValues) {
  const TD a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(ad::matmul(a, b).vec(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Ops, ConvMatchesDirectLoop) {
  CounterRng rng(3);
  const auto x = test_support::random_tensor({1, 2, 5, 5}, rng), w = test_support::random_tensor({3, 2, 3, 3}, rng);
  const auto y = ad::conv2d(x, w, nullptr, 2, 1);
  ASSERT_EQ(y.shape(), (ad::Shape{1, 3, 3, 3}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t oy = 0; oy < 3; ++oy)
      for (std::size_t ox = 0; ox < 3; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy * 2 + ky) - 1, ix = static_cast<long>(ox * 2 + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
              acc += x[(c * 5 + iy) * 5 + ix] * w[((o * 2 + c) * 3 + ky) * 3 + kx];
            }
        EXPECT_NEAR(y[(o * 3 + oy) * 3 + ox], acc, 1e-12);
      }
}

TEST(Ops, BatchNormUpdatesRunningStatsOnlyInTrainMode) {
  TD x({4, 1}, {1, 2, 3, 4});
  auto rm = TD::zeros({1}), rv = TD::full({1}, 1.0);
  const auto g = TD::full({1}, 1.0), b = TD::zeros({1});
  ad::batch_norm(x, g, b, rm, rv, ad::Mode::eval);
  EXPECT_EQ(rm[0], 0.0);
  ad::batch_norm(x, g, b, rm, rv, ad::Mode::train);
  EXPECT_NEAR(rm[0], 0.25, 1e-12);
  // unbiased variance 5/3
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(Gru, ScalarCaseMatchesHandComputation) {
  CounterRng rng(1);
  ad::GruCell<double> cell(1, 1, rng);
  // gate order r, z, n
  cell.input.weight = TD({3, 1}, {0.5, -0.3, 0.8}, true);
  cell.input.bias = TD({3}, {0.1, 0.2, -0.1}, true);
  cell.hidden.weight = TD({3, 1}, {-0.4, 0.6, 0.7}, true);
  cell.hidden.bias = TD({3}, {0.05, -0.05, 0.3}, true);
  const double x = 1.5, h = -0.2;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double r = sig(0.5 * x + 0.1 + -0.4 * h + 0.05);
  const double z = sig(-0.3 * x + 0.2 + 0.6 * h - 0.05);
  const double n = std::tanh(0.8 * x - 0.1 + r * (0.7 * h + 0.3));
  const double expected = (1.0 - z) * n + z * h;
  const auto out = cell.step(cell.input(TD({1, 1}, {x})), TD({1, 1}, {h}));
  EXPECT_NEAR(out.item(), expected, 1e-14);
}

TEST(Gru, BidirectionalShapesAndFinalState) {
  CounterRng rng(2);
  ad::BiGru<double> gru(3, 4, 2, 0.2, rng);
  const auto x = test_support::random_tensor({2, 5, 3}, rng);
  CounterRng d(1);
  const auto out = gru(x, ad::Mode::eval, d);
  ASSERT_EQ(out.sequence.shape(), (ad::Shape{2, 5, 8}));
  ASSERT_EQ(out.final_state.shape(), (ad::Shape{2, 8}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(out.final_state[b * 8 + j], out.sequence[(b * 5 + 4) * 8 + j]);       // forward, last step
      EXPECT_EQ(out.final_state[b * 8 + 4 + j], out.sequence[(b * 5 + 0) * 8 + 4 + j]);  // backward, first step
    }
  EXPECT_THROW(gru(TD::zeros({2, 0, 3}), ad::Mode::eval, d), EmptySequence);
}

TEST(Adam, MatchesHandRecurrence) {
  TD w({1}, {1.0}, true);
  ad::ParamList<double> ps{{"w", &w, true}};
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ad::Adam<double> opt(ps, {lr, b1, b2, eps});
  double ew = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    ad::sum(ad::mul(w, w)).backward();
    opt.step();
    const double g = 2.0 * ew;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    ew -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(w[0], ew, 1e-14) << "step " << t;
  }
  EXPECT_THROW(ad::Adam<double>(ps, {0.0}), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresValuesAndRejectsMismatch) {
  CounterRng rng(4);
  ad::Linear<float> a(3, 2, rng), b(3, 2, rng);
  ad::ParamList<float> pa, pb;
  a.collect(pa, "fc");
  b.collect(pb, "fc");
  const auto bytes = ad::encode_checkpoint(pa, {{"note", "x"}});
  const auto data = ad::decode_checkpoint(bytes, "mem");
  EXPECT_EQ(data.meta.at("note"), "x");
  ad::restore_params(data, pb);
  EXPECT_EQ(a.weight.vec(), b.weight.vec());
  EXPECT_EQ(a.bias.vec(), b.bias.vec());

  ad::Linear<float> c(4, 2, rng);
  ad::ParamList<float> pc;
  c.collect(pc, "fc");
  EXPECT_THROW(ad::restore_params(data, pc), ShapeError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(ad::decode_checkpoint(bad, "mem"), CorruptFile);
  EXPECT_THROW(ad::decode_checkpoint(std::span(bytes).first(bytes.size() - 3), "mem"), CorruptFile);
}

TEST(GradCheck, DetectsAWrongBackward) {
  TD x({3}, {0.3, -0.2, 0.9}, true);
  auto bad_square = [](const TD& v) {
    std::vector<double> out(v.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * v[i];
    return ad::make_result<double>("bad_square", v.shape(), std::move(out), {v}, [](ad::Node<double>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i] * p.data[i];  // missing factor 2
    });
  };
  const auto r = test_support::gradcheck([&] { return test_support::project(bad_square(x)); }, {{"x", &x}});
  EXPECT_GT(r.max_rel_err, 0.4);
}
