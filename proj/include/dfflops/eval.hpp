#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dfflops/core.hpp"
#include "dfflops/index.hpp"

namespace dfflops {

/// query id -> (doc id -> relevance grade).
using Qrels = std::map<std::string, std::map<std::string, int>>;

/// query id -> doc ids in rank order.
using Run = std::map<std::string, std::vector<std::string>>;

/// Queries without a positively graded document are excluded from every mean below.
double mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k);
double recall_at_k(const Run& run, const Qrels& qrels, std::size_t k);
/// Gain 2^grade - 1, discount log2(rank + 1), normalised by the ideal ordering.
double ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k);

struct BenchQuery {
    std::string id;
    std::string text;
};

struct BenchReport {
    double latency_avg_ms = 0.0;
    double latency_p99_ms = 0.0;
    double matches_avg = 0.0;
    double top1_df_pct = 0.0;
    double avg_emb_length = 0.0;
    /// raw_ms[q][r]: wall clock of query q in repeat r.
    std::vector<std::vector<double>> raw_ms;
};

/// Nearest-rank percentile (p in (0, 100]) of unsorted values.
double percentile_nearest_rank(std::vector<double> values, double p);

/// Times tokenisation, vocabulary lookup and top_k search for every query, `repeats`
/// times after one discarded warm-up pass. Single-threaded.
BenchReport bench_latency(const InvertedIndex& index, const Vocabulary& vocab,
                          std::span<const BenchQuery> queries, std::size_t repeats = 3,
                          std::size_t top_k = 10);

std::string bench_report_json(const BenchReport& report, bool include_raw = false);
std::string bench_report_table(std::span<const std::pair<std::string, BenchReport>> rows);

} // namespace dfflops
