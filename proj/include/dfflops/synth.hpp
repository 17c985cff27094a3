#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dfflops/eval.hpp"
#include "dfflops/io.hpp"

namespace dfflops {

/// Zipf-distributed synthetic collection with one relevant document per query.
struct SynthConfig {
    std::size_t num_docs = 10000;
    std::size_t vocab_types = 2000;
    double zipf_exponent = 1.1;
    std::size_t min_doc_len = 20;
    std::size_t max_doc_len = 60;
    std::size_t train_queries = 10000;
    std::size_t validation_queries = 200;
    std::size_t test_queries = 500;
    std::size_t min_query_terms = 2;
    std::size_t max_query_terms = 4;
    /// A term is informative when its document frequency ratio is at most this value.
    double informative_max_df = 0.02;
    /// Probability of appending one high-frequency noise term to a query.
    double noise_probability = 0.5;
    /// Noise terms are drawn uniformly from the most frequent `noise_head` types.
    std::size_t noise_head = 20;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthCollection {
    std::vector<io::Document> docs;
    std::vector<io::QueryRecord> train;
    std::vector<io::QueryRecord> validation;
    std::vector<io::QueryRecord> test;

    /// Binary judgments: each query's source document has grade 1.
    [[nodiscard]] static Qrels qrels_of(const std::vector<io::QueryRecord>& queries);
};

/// Word form of the type with frequency rank `rank` (0 = most frequent).
std::string synth_word(std::size_t rank);

SynthCollection generate_collection(const SynthConfig& config);

} // namespace dfflops
