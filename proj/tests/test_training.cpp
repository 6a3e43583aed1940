#include <gtest/gtest.h>

#include "test_support.hpp"

namespace scma {
namespace {

using test::default_codebook;

std::vector<cplx> noisy(const Codebook& cb, const std::vector<int>& labels, double sigma2, Rng& rng) {
  ChannelRealization chan(cb.J(), cb.K(), sigma2);
  auto y = transmit(cb, labels, chan);
  const auto n = awgn_vector(cb.K(), sigma2, rng);
  for (int k = 0; k < cb.K(); ++k) y[k] += n[k];
  return y;
}

TEST(Loss, UniformLogits) {
  Logits l(6, 4);
  EXPECT_NEAR(loss(l, std::vector<int>{0, 1, 2, 3, 0, 1}), 8.317766166719343, 1e-12);
  Logits one(1, 4);
  one.values = {1, 1, 1, 1};
  EXPECT_NEAR(loss(one, std::vector<int>{2}), std::log(4.0), 1e-15);
}

TEST(Loss, SaturatedAndBounds) {
  Logits l(6, 4);
  const std::vector<int> labels = {3, 2, 1, 0, 1, 2};
  for (int j = 0; j < 6; ++j) l.user(j)[labels[j]] = 100.0;
  const double v = loss(l, labels);
  EXPECT_LT(v, 1e-40);
  EXPECT_GT(v, 0.0);
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    l.values = test::random_vector(24, rng, -30.0, 30.0);
    EXPECT_GE(loss(l, random_labels(6, 4, rng)), 0.0);
  }
}

TEST(Loss, Errors) {
  Logits l(2, 4);
  EXPECT_THROW(loss(l, std::vector<int>{0}), ValidationError);
  EXPECT_THROW(loss(l, std::vector<int>{0, 4}), ValidationError);
  l.values[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(loss(l, std::vector<int>{0, 0}), NumericError);
}

TEST(Backward, OneHotOutputGivesZeroGradient) {
  const auto& cb = default_codebook();
  ChannelRealization chan(6, 4, 1e-6);
  const auto ones = init_all_ones(cb.graph(), 2);
  const std::vector<int> labels = {1, 2, 3, 0, 1, 2};
  const auto fr = forward(transmit(cb, labels, chan), cb, chan, ones);
  const auto g = backward(fr.tape, labels, ones, cb);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

// Independent check over every parameter of one sample: central differences
// of forward+loss, skipping parameters whose perturbation moves a max route.
TEST(Backward, MatchesFiniteDifferencesOnEveryParameter) {
  const auto& cb = default_codebook();
  Rng rng(2);
  ChannelRealization chan(6, 4, snr_to_sigma2(6.0, cb));
  for (int trial = 0; trial < 3; ++trial) {
    NetworkParams p(cb.graph(), 2);
    p.values() = test::random_vector(p.size(), rng, 0.5, 1.5);
    const auto labels = random_labels(6, 4, rng);
    const auto y = noisy(cb, labels, chan.sigma2(), rng);
    const auto fr = forward(y, cb, chan, p);
    const auto g = backward(fr.tape, labels, p, cb);
    const double h = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      q.values()[i] = p.values()[i] + h;
      const auto up = forward(y, cb, chan, q);
      q.values()[i] = p.values()[i] - h;
      const auto down = forward(y, cb, chan, q);
      if (up.tape.winner != fr.tape.winner || down.tape.winner != fr.tape.winner) continue;
      const double numeric = (loss(up.logits, labels) - loss(down.logits, labels)) / (2 * h);
      EXPECT_NEAR(g.values()[i], numeric, 1e-6 + 1e-5 * std::abs(numeric)) << "parameter " << i;
      ++checked;
    }
    EXPECT_GT(checked, static_cast<int>(p.size()) * 9 / 10);
  }
}

TEST(Backward, ScaleIsLinear) {
  const auto& cb = default_codebook();
  Rng rng(3);
  ChannelRealization chan(6, 4, 0.3);
  NetworkParams p(cb.graph(), 3);
  p.values() = test::random_vector(p.size(), rng, 0.5, 1.5);
  const auto labels = random_labels(6, 4, rng);
  const auto fr = forward(noisy(cb, labels, 0.3, rng), cb, chan, p);
  auto one = p.zeros_like(), two = p.zeros_like();
  accumulate_gradient(fr.tape, labels, p, cb, 1.0, one);
  accumulate_gradient(fr.tape, labels, p, cb, 2.0, two);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(two.values()[i], 2.0 * one.values()[i]);
}

TEST(Backward, ShiftOnlyParametersHaveNoInfluence) {
  // a and b add the same amount to every symbol of a message, which the
  // per-user softmax cannot see.
  const auto& cb = default_codebook();
  Rng rng(4);
  ChannelRealization chan(6, 4, 0.3);
  NetworkParams p(cb.graph(), 2);
  p.values() = test::random_vector(p.size(), rng, 0.5, 1.5);
  const auto labels = random_labels(6, 4, rng);
  const auto fr = forward(noisy(cb, labels, 0.3, rng), cb, chan, p);
  const auto g = backward(fr.tape, labels, p, cb);
  for (int l = 0; l < 2; ++l) {
    for (int e = 0; e < 12; ++e) {
      EXPECT_NEAR(g.a(l, e), 0.0, 1e-12);
      EXPECT_NEAR(g.b(l, e), 0.0, 1e-12);
    }
  }
}

TEST(Backward, Mismatches) {
  const auto& cb = default_codebook();
  ChannelRealization chan(6, 4, 0.3);
  const auto p = init_all_ones(cb.graph(), 2);
  const auto fr = forward(std::vector<cplx>(4), cb, chan, p);
  EXPECT_THROW(backward(fr.tape, std::vector<int>{0, 0}, p, cb), ValidationError);
  const auto p3 = init_all_ones(cb.graph(), 3);
  EXPECT_THROW(backward(fr.tape, std::vector<int>(6, 0), p3, cb), ValidationError);
}

TEST(Adam, ZeroGradientLeavesParams) {
  const auto& cb = default_codebook();
  auto p = init_all_ones(cb.graph(), 1);
  AdamState st(p);
  for (int i = 0; i < 5; ++i) adam_step(p, p.zeros_like(), st, 0.001);
  for (double v : p.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(st.step, 5);
}

TEST(Adam, ConstantGradientStepIsBoundedByLr) {
  const auto& cb = default_codebook();
  auto p = init_all_ones(cb.graph(), 1);
  AdamState st(p);
  auto g = p.zeros_like();
  Rng rng(5);
  g.values() = test::random_vector(g.size(), rng, -2.0, 2.0);
  const double lr = 0.001;
  for (int s = 0; s < 200; ++s) {
    const auto before = p.values();
    adam_step(p, g, st, lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p.values()[i] - before[i];
      EXPECT_LE(std::abs(d), lr * 1.01);
      if (g.values()[i] != 0.0) {
        EXPECT_LT(d * g.values()[i], 0.0);
      }
    }
  }
}

TEST(Adam, FirstStepIsLrTimesSign) {
  const auto& cb = default_codebook();
  auto p = init_all_ones(cb.graph(), 1);
  AdamState st(p);
  auto g = p.zeros_like();
  std::fill(g.values().begin(), g.values().end(), 0.5);
  adam_step(p, g, st, 0.01);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  const auto other = init_all_ones(cb.graph(), 2);
  EXPECT_THROW(adam_step(p, other, st, 0.01), ValidationError);
}

TEST(Train, ZeroLearningRateKeepsAllOnes) {
  const auto& cb = default_codebook();
  TrainConfig cfg;
  cfg.blocks = 2;
  cfg.steps = 3;
  cfg.lr = 0.0;
  const auto r = train(cb, cfg);
  for (double v : r.params.values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.loss_history.size(), 3u);
}

TEST(Train, DeterministicAndIndependentOfWorkers) {
  const auto& cb = default_codebook();
  TrainConfig cfg;
  cfg.blocks = 2;
  cfg.steps = 3;
  cfg.seed = 42;
  const auto a = train(cb, cfg);
  cfg.workers = 4;
  const auto b = train(cb, cfg);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.params.values(), b.params.values());
  cfg.seed = 43;
  EXPECT_NE(train(cb, cfg).loss_history, a.loss_history);
}

TEST(Train, FirstLossIsTheMaxLogBaseline) {
  const auto& cb = default_codebook();
  TrainConfig cfg;
  cfg.blocks = 3;
  cfg.steps = 1;
  cfg.seed = 9;
  const auto r = train(cb, cfg);
  // Regenerate the step-0 batch and score max-log MPA on it.
  ChannelRealization chan(6, 4, snr_to_sigma2(cfg.train_snr_db, cb));
  DetectorConfig dc;
  dc.iterations = 3;
  dc.normalize = false;
  double total = 0.0;
  for (std::uint64_t c = 0; c < 4096 / kTrainChunk; ++c) {
    Rng rng = substream(cfg.seed, {0, c});
    double chunk = 0.0;
    for (std::uint64_t i = c * kTrainChunk; i < (c + 1) * kTrainChunk; ++i) {
      const auto s = make_sample(cb, chan, labels_from_index(i, 6, 4), rng);
      chunk += loss(run_mpa(s.y, cb, chan, dc), s.labels);
    }
    total += chunk;
  }
  ASSERT_TRUE(std::isfinite(r.loss_history[0]));
  EXPECT_DOUBLE_EQ(r.loss_history[0], total / 4096.0);
}

TEST(Train, TiedBetaCoefficientStaysEqualAcrossBlocks) {
  const auto& cb = default_codebook();
  TrainConfig cfg;
  cfg.blocks = 3;
  cfg.steps = 3;
  cfg.lr = 0.01;
  cfg.tie_a_across_blocks = true;
  const auto r = train(cb, cfg);
  EXPECT_TRUE(r.params.tie_a);
  for (int e = 0; e < 12; ++e) {
    EXPECT_EQ(r.params.a(1, e), r.params.a(0, e));
    EXPECT_EQ(r.params.a(2, e), r.params.a(0, e));
  }
}

TEST(Train, ConfigValidation) {
  const auto& cb = default_codebook();
  TrainConfig cfg;
  cfg.blocks = 0;
  EXPECT_THROW(train(cb, cfg), ConfigError);
  cfg = {};
  cfg.steps = 0;
  EXPECT_THROW(train(cb, cfg), ConfigError);
  cfg = {};
  cfg.lr = -1.0;
  EXPECT_THROW(train(cb, cfg), ConfigError);
}

TEST(Train, NonFiniteLossIsReported) {
  const auto& cb = default_codebook();
  ChannelRealization chan(6, 4, 0.1);
  auto p = init_all_ones(cb.graph(), 2);
  p.wq(1, 0)[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    evaluate_exhaustive_batch(cb, chan, p, 1, 0, 1);
    FAIL() << "expected a numeric failure";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block 2"), std::string::npos);
  }
  auto inf = init_all_ones(cb.graph(), 1);
  inf.b(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(evaluate_exhaustive_batch(cb, chan, inf, 1, 0, 1), NumericError);
}

TEST(Gradcheck, PassesAtDefaultSettings) {
  const auto& cb = default_codebook();
  const auto r = run_gradcheck(cb, 2, GradcheckConfig{}, 1);
  EXPECT_TRUE(r.passed) << "worst " << r.worst;
  EXPECT_EQ(r.probes.size(), 50u);
  EXPECT_LT(r.worst, 1e-4);
}

TEST(Gradcheck, CatchesAWrongGradient) {
  // A coarse step straddles route changes and curvature, which the check
  // must report rather than hide.
  const auto& cb = default_codebook();
  GradcheckConfig cfg;
  cfg.h = 0.5;
  const auto r = run_gradcheck(cb, 2, cfg, 1);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.worst, 1e-4);
}

}  // namespace
}  // namespace scma
