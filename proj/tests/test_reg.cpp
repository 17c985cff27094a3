#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dfflops/reg.hpp"
#include "test_support.hpp"

using namespace dfflops;
using dfflops::testing::densify;
using dfflops::testing::random_vector;
using dfflops::testing::rel_err;

namespace {

std::vector<SparseVector> random_batch(std::mt19937_64& rng, std::size_t vocab, std::size_t max_n) {
    std::uniform_int_distribution<std::size_t> n_dist(1, max_n);
    std::vector<SparseVector> batch;
    const auto n = n_dist(rng);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(random_vector(rng, vocab, vocab / 2));
    return batch;
}

PenaltyWeights random_weights(std::mt19937_64& rng, std::size_t vocab) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    PenaltyWeights w;
    for (std::size_t t = 0; t < vocab; ++t) w.w.push_back(d(rng));
    return w;
}

// Dense evaluation straight from the definition: sum over every term of the squared weighted mean.
double dense_loss(const std::vector<SparseVector>& batch, std::size_t vocab, const std::vector<double>& w) {
    double loss = 0.0;
    for (std::size_t t = 0; t < vocab; ++t) {
        double sum = 0.0;
        for (const auto& v : batch) sum += densify(v, vocab)[t];
        const double m = w[t] * sum / static_cast<double>(batch.size());
        loss += m * m;
    }
    return loss;
}

} // namespace

TEST(Activ, MidpointAndEndpoint) {
    for (double alpha : {0.01, 0.1, 0.5}) {
        for (double beta : {1.0, 5.0, 10.0}) {
            const ActivationParams p{alpha, beta};
            EXPECT_NEAR(activ(alpha, p), 0.5, 1e-12);
            EXPECT_NEAR(activ(1.0, p), 1.0, 1e-12);
            EXPECT_EQ(activ(0.0, p), 0.0);
        }
    }
}

TEST(Activ, ClosedFormAtOnePercent) {
    // 0.01 = 0.1^2, so x^(log_0.1 2) = 4 and (4 - 1)^10 = 59049.
    EXPECT_NEAR(activ(0.01, {0.1, 10.0}), 1.0 / 59050.0, 1e-12);
}

TEST(Activ, NonDecreasingOnGrid) {
    for (double alpha : {0.01, 0.1, 0.5}) {
        for (double beta : {1.0, 5.0, 10.0}) {
            const ActivationParams p{alpha, beta};
            double prev = 0.0;
            for (int i = 1; i <= 10000; ++i) {
                const double y = activ(i / 10000.0, p);
                EXPECT_GE(y, prev) << alpha << " " << beta << " " << i;
                prev = y;
            }
        }
    }
}

TEST(Activ, RejectsOutOfRange) {
    EXPECT_THROW(activ(-0.1, {}), std::domain_error);
    EXPECT_THROW(activ(1.5, {}), std::domain_error);
    EXPECT_THROW((ActivationParams{1.0, 10.0}.validate()), std::invalid_argument);
    EXPECT_THROW((ActivationParams{0.1, 0.0}.validate()), std::invalid_argument);
}

TEST(PenaltyWeights, FromDf) {
    DfTable df{{0, 10, 100}, 100, 0.0};
    const auto w = penalty_weights(df, {});
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w.w[0], 0.0);
    EXPECT_NEAR(w.w[1], 0.5, 1e-12);
    EXPECT_NEAR(w.w[2], 1.0, 1e-12);
}

TEST(Flops, HandExamples) {
    EXPECT_DOUBLE_EQ(flops_loss(std::vector{SparseVector("a", {{1, 1.0}, {2, 2.0}})}).loss, 5.0);
    EXPECT_DOUBLE_EQ(
        flops_loss(std::vector{SparseVector("a", {{1, 1.0}}), SparseVector("b", {{2, 1.0}})}).loss, 0.5);
    const auto zero = flops_loss(std::vector{SparseVector("a", {}), SparseVector("b", {})});
    EXPECT_EQ(zero.loss, 0.0);
    EXPECT_EQ(zero.grad(3), 0.0);
}

TEST(DfFlops, HandExamples) {
    PenaltyWeights w{{0.0, 0.5, 1.0}};
    EXPECT_DOUBLE_EQ(df_flops_loss(std::vector{SparseVector("a", {{1, 2.0}, {2, 3.0}})}, w).loss, 10.0);
    PenaltyWeights zeros{{0.0, 0.0, 0.0}};
    EXPECT_EQ(df_flops_loss(std::vector{SparseVector("a", {{1, 2.0}, {2, 3.0}})}, zeros).loss, 0.0);
}

TEST(DfFlops, UnitWeightsAreBitIdenticalToFlops) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t vocab = 30;
        const auto batch = random_batch(rng, vocab, 8);
        const auto a = flops_loss(batch);
        const auto b = df_flops_loss(batch, PenaltyWeights::ones(vocab));
        ASSERT_EQ(a.loss, b.loss);
        ASSERT_EQ(a.term_grad.size(), b.term_grad.size());
        for (std::size_t i = 0; i < a.term_grad.size(); ++i) {
            ASSERT_EQ(a.term_grad[i].term, b.term_grad[i].term);
            ASSERT_EQ(a.term_grad[i].value, b.term_grad[i].value);
        }
    }
}

TEST(DfFlops, NeverExceedsFlops) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t vocab = 30;
        const auto batch = random_batch(rng, vocab, 8);
        EXPECT_LE(df_flops_loss(batch, random_weights(rng, vocab)).loss, flops_loss(batch).loss);
    }
}

TEST(DfFlops, MatchesDenseOracleAndIsPermutationInvariant) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t vocab = 25;
        auto batch = random_batch(rng, vocab, 6);
        const auto w = random_weights(rng, vocab);
        const auto res = df_flops_loss(batch, w);
        EXPECT_LT(rel_err(res.loss, dense_loss(batch, vocab, w.w), 1e-300), 1e-12);
        std::shuffle(batch.begin(), batch.end(), rng);
        EXPECT_LT(rel_err(df_flops_loss(batch, w).loss, res.loss, 1e-300), 1e-12);
        EXPECT_LT(rel_err(flops_loss(batch).loss, dense_loss(batch, vocab, std::vector<double>(vocab, 1.0)),
                          1e-300),
                  1e-12);
    }
}

TEST(DfFlops, ZeroLossIffPenalisedMeansVanish) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t vocab = 10;
        const auto batch = random_batch(rng, vocab, 3);
        auto w = random_weights(rng, vocab);
        std::bernoulli_distribution zero(0.7);
        for (auto& x : w.w)
            if (zero(rng)) x = 0.0;
        bool all_vanish = true;
        for (const auto& v : batch)
            for (const auto& e : v.entries())
                if (w.w[e.term] > 0.0) all_vanish = false;
        EXPECT_EQ(df_flops_loss(batch, w).loss == 0.0, all_vanish);
    }
}

TEST(Regularisers, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(5);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t vocab = 12;
        auto batch = random_batch(rng, vocab, 5);
        const auto w = trial % 2 == 0 ? PenaltyWeights::ones(vocab) : random_weights(rng, vocab);
        const auto res = trial % 2 == 0 ? flops_loss(batch) : df_flops_loss(batch, w);
        for (std::size_t j = 0; j < batch.size(); ++j) {
            // Perturb stored entries only: the loss is not differentiable across the zero boundary.
            for (const auto& e : batch[j].entries()) {
                auto bumped = [&](double delta) {
                    auto copy = batch;
                    std::vector<Entry> entries(copy[j].entries().begin(), copy[j].entries().end());
                    for (auto& x : entries)
                        if (x.term == e.term) x.weight += delta;
                    copy[j] = SparseVector(copy[j].doc_id(), entries);
                    return dense_loss(copy, vocab, w.w);
                };
                const double fd = (bumped(h) - bumped(-h)) / (2 * h);
                EXPECT_LT(rel_err(res.grad(e.term), fd, 1e-4), 1e-5);
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 100);
}

TEST(LambdaSchedule, QuadraticWarmup) {
    const LambdaSchedule s{2.0, 100};
    EXPECT_EQ(lambda_at(0, s), 0.0);
    EXPECT_DOUBLE_EQ(lambda_at(50, s), 0.5);
    EXPECT_DOUBLE_EQ(lambda_at(100, s), 2.0);
    EXPECT_DOUBLE_EQ(lambda_at(1000, s), 2.0);
}
