#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "dfflops/index.hpp"
#include "test_support.hpp"

using namespace dfflops;
using dfflops::testing::random_query;
using dfflops::testing::random_vector;

namespace {

std::vector<SparseVector> random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t vocab,
                                        std::size_t max_len) {
    std::vector<SparseVector> docs;
    for (std::size_t i = 0; i < n; ++i) docs.push_back(random_vector(rng, vocab, max_len, "d" + std::to_string(i)));
    return docs;
}

// Full sort over every doc with a nonzero score, independent of the engine's heap logic.
std::vector<ScoredDoc> sorted_oracle(const std::vector<SparseVector>& docs, const QueryTerms& q,
                                     std::size_t k) {
    std::vector<ScoredDoc> all;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double s = 0.0;
        bool hit = false;
        for (const auto& e : docs[d].entries()) {
            if (std::binary_search(q.begin(), q.end(), e.term)) {
                s += e.weight;
                hit = true;
            }
        }
        if (hit) all.push_back({static_cast<DocNum>(d), s});
    }
    std::sort(all.begin(), all.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score != b.score ? a.score > b.score : a.doc < b.doc;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

std::size_t union_oracle(const std::vector<SparseVector>& docs, const QueryTerms& q) {
    std::set<std::size_t> hit;
    for (std::size_t d = 0; d < docs.size(); ++d)
        for (auto t : q)
            if (docs[d].weight(t) > 0.0) hit.insert(d);
    return hit.size();
}

} // namespace

TEST(Prune, HandExample) {
    const SparseVector v("x", {{1, 0.2}, {2, 0.9}, {3, 0.5}});
    EXPECT_EQ(prune_topk(v, 2), SparseVector("x", {{2, 0.9}, {3, 0.5}}));
    EXPECT_EQ(prune_topk(v, 3), v);
    EXPECT_EQ(prune_topk(v, 10), v);
}

TEST(Prune, TiesGoToSmallerTerm) {
    const SparseVector v("x", {{4, 1.0}, {7, 1.0}, {9, 1.0}});
    EXPECT_EQ(prune_topk(v, 2), SparseVector("x", {{4, 1.0}, {7, 1.0}}));
}

TEST(Prune, MatchesSortOracle) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        auto v = random_vector(rng, 2000, 700);
        // Coarse weights force plenty of ties.
        std::vector<Entry> coarse;
        for (const auto& e : v.entries()) coarse.push_back({e.term, std::ceil(e.weight * 4.0)});
        v = SparseVector("x", coarse);
        std::vector<Entry> sorted(v.entries().begin(), v.entries().end());
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Entry& a, const Entry& b) { return a.weight > b.weight; });
        if (sorted.size() > 150) sorted.resize(150);
        EXPECT_EQ(prune_topk(v, 150), SparseVector::from_unsorted("x", sorted));
    }
}

TEST(BuildIndex, HandExample) {
    const std::vector<SparseVector> docs{SparseVector("d1", {{0, 1.0}}),
                                         SparseVector("d2", {{0, 1.0}, {1, 2.0}})};
    const auto idx = build_index(docs, 3);
    EXPECT_EQ(idx.list(0).postings.size(), 2u);
    EXPECT_EQ(idx.list(1).postings.size(), 1u);
    EXPECT_EQ(idx.list(2).postings.size(), 0u);
    EXPECT_EQ(idx.total_postings(), 3u);
    EXPECT_EQ(idx.doc_lengths()[1], 2u);
}

TEST(BuildIndex, Errors) {
    EXPECT_THROW(build_index(std::vector<SparseVector>{}, 3), std::invalid_argument);
    const std::vector<SparseVector> dup{SparseVector("a", {{0, 1.0}}), SparseVector("a", {{1, 1.0}})};
    EXPECT_THROW(build_index(dup, 3), std::invalid_argument);
    const std::vector<SparseVector> oov{SparseVector("a", {{5, 1.0}})};
    EXPECT_THROW(build_index(oov, 3), std::out_of_range);
}

TEST(BuildIndex, PostingCountsEqualDf) {
    std::mt19937_64 rng(2);
    const auto docs = random_corpus(rng, 3000, 300, 40);
    const auto idx = build_index(docs, 300);
    const auto df = estimate_df(docs, 300, 0.0);
    std::size_t lengths = 0;
    for (auto l : idx.doc_lengths()) lengths += l;
    EXPECT_EQ(lengths, idx.total_postings());
    for (TermId t = 0; t < 300; ++t) {
        EXPECT_EQ(idx.list(t).postings.size(), df.df[t]);
        for (std::size_t i = 1; i < idx.list(t).postings.size(); ++i)
            EXPECT_LT(idx.list(t).postings[i - 1].doc, idx.list(t).postings[i].doc);
    }
}

TEST(MatchCount, HandExamples) {
    const std::vector<SparseVector> docs{SparseVector("d1", {{0, 1.0}, {1, 1.0}}),
                                         SparseVector("d2", {{1, 1.0}, {2, 1.0}})};
    const auto idx = build_index(docs, 3);
    EXPECT_EQ(match_count(idx, std::vector<TermId>{0}), 1u);
    EXPECT_EQ(match_count(idx, std::vector<TermId>{1}), 2u);
    EXPECT_EQ(match_count(idx, std::vector<TermId>{}), 0u);
}

TEST(MatchCount, UnionOracleAndSubadditivity) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto docs = random_corpus(rng, 200, 50, 8);
        const auto idx = build_index(docs, 50);
        const auto q1 = random_query(rng, 50, 4);
        const auto q2 = random_query(rng, 50, 4);
        QueryTerms both = q1;
        both.insert(both.end(), q2.begin(), q2.end());
        std::sort(both.begin(), both.end());
        both.erase(std::unique(both.begin(), both.end()), both.end());
        const auto m1 = match_count(idx, q1), m2 = match_count(idx, q2), m12 = match_count(idx, both);
        EXPECT_EQ(m1, union_oracle(docs, q1));
        EXPECT_LE(m12, m1 + m2);
        EXPECT_GE(m12, std::max(m1, m2));
    }
}

TEST(Search, SingleTermFollowsPostingWeights) {
    const std::vector<SparseVector> docs{SparseVector("a", {{0, 0.5}}), SparseVector("b", {{0, 2.0}}),
                                         SparseVector("c", {{1, 9.0}}), SparseVector("d", {{0, 0.5}})};
    const auto idx = build_index(docs, 2);
    const auto r = search(idx, std::vector<TermId>{0}, 10);
    ASSERT_EQ(r.hits.size(), 3u);
    EXPECT_EQ(r.hits[0], (ScoredDoc{1, 2.0}));
    EXPECT_EQ(r.hits[1], (ScoredDoc{0, 0.5}));
    EXPECT_EQ(r.hits[2], (ScoredDoc{3, 0.5}));
    EXPECT_EQ(r.matches, 3u);
    const auto empty = search(idx, std::vector<TermId>{}, 10);
    EXPECT_TRUE(empty.hits.empty());
    EXPECT_EQ(empty.matches, 0u);
}

TEST(Search, EqualsBruteForceAndSortOracle) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> n_docs(1, 2000), vocab_dist(5, 200), k_dist(1, 30);
    SearchScratch scratch;
    for (int trial = 0; trial < 200; ++trial) {
        const auto vocab = vocab_dist(rng);
        auto docs = random_corpus(rng, n_docs(rng), vocab, 12);
        if (trial % 3 == 0) {
            // Quantised weights create many exact score ties.
            for (auto& d : docs) {
                std::vector<Entry> q;
                for (const auto& e : d.entries()) q.push_back({e.term, std::ceil(e.weight * 2.0) / 2.0});
                d = SparseVector(d.doc_id(), q);
            }
        }
        const auto idx = build_index(docs, vocab);
        for (int qi = 0; qi < 5; ++qi) {
            const auto q = random_query(rng, vocab, 5);
            const auto k = k_dist(rng);
            const auto got = search(idx, q, k, scratch);
            const auto ref = brute_force_search(docs, q, k);
            ASSERT_EQ(got.hits, ref.hits) << "trial " << trial;
            ASSERT_EQ(got.hits, sorted_oracle(docs, q, k)) << "trial " << trial;
            ASSERT_EQ(got.matches, union_oracle(docs, q));
            ASSERT_EQ(got.matches, ref.matches);
            for (std::size_t i = 1; i < got.hits.size(); ++i) EXPECT_GE(got.hits[i - 1].score, got.hits[i].score);
        }
    }
}

TEST(Search, PrunedIndexBoundsPostings) {
    std::mt19937_64 rng(5);
    auto docs = random_corpus(rng, 300, 400, 200);
    for (auto& d : docs) d = prune_topk(d, 20);
    const auto idx = build_index(docs, 400);
    for (auto l : idx.doc_lengths()) EXPECT_LE(l, 20u);
    EXPECT_LE(idx.total_postings(), 20u * 300u);
}

TEST(DfReport, OrderAndPercent) {
    const std::vector<SparseVector> docs{SparseVector("a", {{2, 1.0}, {5, 1.0}}),
                                         SparseVector("b", {{2, 1.0}, {4, 1.0}}),
                                         SparseVector("c", {{2, 1.0}, {4, 1.0}, {5, 1.0}}),
                                         SparseVector("d", {{1, 1.0}})};
    const auto rows = df_report(build_index(docs, 6), 3);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].term, 2u);
    EXPECT_DOUBLE_EQ(rows[0].df_pct, 75.0);
    EXPECT_EQ(rows[1].term, 4u); // tie with 5 goes to the smaller id
    EXPECT_EQ(rows[2].term, 5u);
    EXPECT_EQ(rows[2].df, 2u);
}
