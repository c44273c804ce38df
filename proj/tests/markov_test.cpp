#include "chordlm/markov.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace chordlm {
namespace {

using Seqs = std::vector<std::vector<ClassId>>;
constexpr ClassId C = 0;
constexpr ClassId G = 7;

TEST(MarkovFit, SingleConstantSequence) {
  auto m = fit_markov(Seqs{{C, C, C}}, 0.0);
  EXPECT_DOUBLE_EQ(m.pi()[C], 1.0);
  EXPECT_DOUBLE_EQ(m.transition(C, C), 1.0);
  EXPECT_DOUBLE_EQ(m.sequence_logprob(std::vector<ClassId>{C, C, C}), 0.0);
}

TEST(MarkovFit, HandCounts) {
  auto m = fit_markov(Seqs{{C, G}, {C, C}}, 0.0);
  EXPECT_DOUBLE_EQ(m.pi()[C], 1.0);
  EXPECT_DOUBLE_EQ(m.transition(C, G), 0.5);
  EXPECT_DOUBLE_EQ(m.transition(C, C), 0.5);
}

TEST(MarkovFit, SmoothedUnseenRowIsUniform) {
  auto m = fit_markov(Seqs{{C, C, G}}, 1.0);
  for (int j = 0; j < kNumClasses; ++j) EXPECT_DOUBLE_EQ(m.transition(5, j), 1.0 / 25.0);
}

TEST(MarkovFit, UnseenRowRejectedWhenAsked) {
  EXPECT_THROW(fit_markov(Seqs{{C, C}}, 0.0, kNumClasses, UnseenRowPolicy::Reject), DataError);
  EXPECT_NO_THROW(fit_markov(Seqs{{0, 1, 0}}, 0.0, 2, UnseenRowPolicy::Reject));
}

TEST(MarkovFit, Preconditions) {
  EXPECT_THROW(fit_markov(Seqs{}, 1.0), ContractError);
  EXPECT_THROW(fit_markov(Seqs{{}}, 1.0), ContractError);
  EXPECT_THROW(fit_markov(Seqs{{C}}, -1.0), ContractError);
}

TEST(MarkovFit, RowsNormalizedAndPositive) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> cls(0, 24);
  for (int trial = 0; trial < 20; ++trial) {
    Seqs seqs(5, std::vector<ClassId>(50));
    for (auto& s : seqs)
      for (auto& c : s) c = cls(rng);
    const double alpha = trial % 2 ? 1.0 : 0.01;
    auto m = fit_markov(seqs, alpha);
    double pi_sum = 0.0;
    for (double p : m.pi()) {
      pi_sum += p;
      EXPECT_GT(p, 0.0);
    }
    EXPECT_NEAR(pi_sum, 1.0, 1e-12);
    for (int i = 0; i < kNumClasses; ++i) {
      double sum = 0.0;
      for (double p : m.row(i)) {
        sum += p;
        EXPECT_GT(p, 0.0);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(MarkovFit, InvariantToSequenceOrder) {
  Seqs a{{0, 1, 1, 2}, {2, 2, 0}, {1}};
  Seqs b{{1}, {2, 2, 0}, {0, 1, 1, 2}};
  auto ma = fit_markov(a, 0.5, 3), mb = fit_markov(b, 0.5, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ma.pi()[static_cast<std::size_t>(i)], mb.pi()[static_cast<std::size_t>(i)]);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(ma.transition(i, j), mb.transition(i, j));
  }
}

TEST(MarkovFit, SmoothingMovesRowsTowardUniform) {
  Seqs seqs{{0, 0, 0, 1, 0, 2, 0, 0}, {1, 1, 2}};
  double previous = 2.0;
  for (double alpha : {0.0, 0.1, 0.5, 1.0, 5.0, 100.0}) {
    auto m = fit_markov(seqs, alpha, 3);
    double max_entry = 0.0;
    for (int i = 0; i < 3; ++i)
      for (double p : m.row(i)) max_entry = std::max(max_entry, p);
    EXPECT_LE(max_entry, previous + 1e-15);
    previous = max_entry;
  }
}

TEST(MarkovScore, UniformModel) {
  auto m = MarkovModel::uniform();
  std::vector<ClassId> seq{3, 4, 4, 24, 0, 11, 7};
  EXPECT_NEAR(m.sequence_logprob(seq), 7 * std::log(1.0 / 25.0), 1e-12);
}

TEST(MarkovScore, MatchesDirectProductOracle) {
  MarkovModel m(3, 0.0, {0.2, 0.5, 0.3}, {0.1, 0.6, 0.3, 0.4, 0.4, 0.2, 0.25, 0.25, 0.5});
  std::vector<ClassId> seq{1, 0, 2, 2};
  const double product = 0.5 * 0.4 * 0.3 * 0.5;
  EXPECT_NEAR(m.sequence_logprob(seq), std::log(product), 1e-12);
}

TEST(MarkovScore, ZeroProbabilityStepIsNegativeInfinity) {
  auto m = fit_markov(Seqs{{C, C, C}}, 0.0);
  const double lp = m.sequence_logprob(std::vector<ClassId>{C, G});
  EXPECT_TRUE(std::isinf(lp) && lp < 0);
}

// Exhaustive enumeration: the probabilities of all sequences of a fixed
// length sum to one.
TEST(MarkovScore, TotalMassOverAllSequences) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int n = 1; n <= 4; ++n) {
    Seqs seqs(3, std::vector<ClassId>(20));
    for (auto& s : seqs)
      for (auto& c : s) c = cls(rng) % n;
    auto m = fit_markov(seqs, 0.3, n);
    for (int len = 1; len <= 5; ++len) {
      std::vector<ClassId> seq(static_cast<std::size_t>(len), 0);
      double mass = 0.0;
      while (true) {
        mass += std::exp(m.sequence_logprob(seq));
        int pos = 0;
        while (pos < len && ++seq[static_cast<std::size_t>(pos)] == n) seq[static_cast<std::size_t>(pos++)] = 0;
        if (pos == len) break;
      }
      EXPECT_NEAR(mass, 1.0, 1e-9) << "n=" << n << " len=" << len;
    }
  }
}

TEST(MarkovScore, ScorerInterfaceAgrees) {
  auto m = fit_markov(Seqs{{0, 1, 2, 24, 24, 3}}, 1.0);
  std::vector<ClassId> seq{24, 0, 0, 1, 5};
  const auto lp = per_symbol_logprobs(m, seq);
  double total = 0.0;
  for (double v : lp) total += v;
  EXPECT_NEAR(total, m.sequence_logprob(seq), 1e-12);
}

TEST(MarkovIo, SaveLoadIsExact) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cls(0, 24);
  Seqs seqs(4, std::vector<ClassId>(40));
  for (auto& s : seqs)
    for (auto& c : s) c = cls(rng);
  auto m = fit_markov(seqs, 0.7);
  std::stringstream buf;
  m.save(buf);
  auto back = MarkovModel::load(buf);
  EXPECT_EQ(back.alpha(), m.alpha());
  for (int i = 0; i < kNumClasses; ++i) {
    EXPECT_EQ(back.pi()[static_cast<std::size_t>(i)], m.pi()[static_cast<std::size_t>(i)]);
    for (int j = 0; j < kNumClasses; ++j) EXPECT_EQ(back.transition(i, j), m.transition(i, j));
  }
  std::stringstream bad("chordlm-markov 2\n");
  EXPECT_THROW(MarkovModel::load(bad), DataError);
}

}  // namespace
}  // namespace chordlm
