#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfflops/core.hpp"

namespace dfflops {

/// Position of a document in the indexed collection.
using DocNum = std::uint32_t;

struct Posting {
    DocNum doc;
    float weight;
    friend bool operator==(const Posting&, const Posting&) = default;
};

struct PostingList {
    TermId term = 0;
    std::vector<Posting> postings; // strictly increasing doc, weight > 0
};

/// Term-at-a-time inverted index over learned sparse vectors. Immutable after build.
class InvertedIndex {
public:
    InvertedIndex() = default;
    InvertedIndex(std::vector<PostingList> lists, std::vector<std::string> doc_ids);

    [[nodiscard]] std::size_t vocab_size() const noexcept { return lists_.size(); }
    [[nodiscard]] std::size_t doc_count() const noexcept { return doc_ids_.size(); }
    [[nodiscard]] const PostingList& list(TermId t) const { return lists_.at(t); }
    [[nodiscard]] const std::vector<PostingList>& lists() const noexcept { return lists_; }
    [[nodiscard]] const std::string& doc_id(DocNum d) const { return doc_ids_.at(d); }
    [[nodiscard]] const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
    [[nodiscard]] std::span<const std::uint32_t> doc_lengths() const noexcept { return doc_lengths_; }
    [[nodiscard]] std::size_t total_postings() const noexcept;

private:
    std::vector<PostingList> lists_;
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
};

struct ScoredDoc {
    DocNum doc;
    double score;
    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

struct SearchResult {
    std::vector<ScoredDoc> hits; // score descending, ties by ascending doc
    std::size_t matches = 0;     // documents sharing at least one query term
};

/// Keeps the k largest weights; ties go to the smaller term id.
SparseVector prune_topk(const SparseVector& vector, std::size_t k);

/// Weights are narrowed to float; entries that round to zero are dropped.
/// Throws on empty input, duplicate doc ids, or term ids >= vocab_size.
InvertedIndex build_index(std::span<const SparseVector> docs, std::size_t vocab_size);

std::size_t match_count(const InvertedIndex& index, std::span<const TermId> query);

/// Reusable scratch space for term-at-a-time accumulation.
class SearchScratch {
public:
    void reset(std::size_t doc_count);

private:
    friend SearchResult search(const InvertedIndex&, std::span<const TermId>, std::size_t,
                               SearchScratch&);
    std::vector<double> acc_;
    std::vector<std::uint8_t> seen_;
    std::vector<DocNum> touched_;
};

/// Exhaustive scoring of every document in the union of the query's posting lists.
SearchResult search(const InvertedIndex& index, std::span<const TermId> query, std::size_t top_k,
                    SearchScratch& scratch);
SearchResult search(const InvertedIndex& index, std::span<const TermId> query, std::size_t top_k);

/// Reference scorer: sparse_dot against every document, same ordering as search().
SearchResult brute_force_search(std::span<const SparseVector> docs, std::span<const TermId> query,
                                std::size_t top_k);

struct DfRow {
    TermId term;
    std::size_t df;
    double df_pct;
};

/// The top_n terms by posting-list length, descending; ties by ascending term id.
std::vector<DfRow> df_report(const InvertedIndex& index, std::size_t top_n);

} // namespace dfflops
