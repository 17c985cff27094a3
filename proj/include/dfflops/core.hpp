#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dfflops {

using TermId = std::uint32_t;
using Tokens = std::vector<std::string>;

/// Frozen lexicon. Ids are dense and follow lexicographic term order.
class Vocabulary {
public:
    Vocabulary() = default;
    /// Terms must be unique; ids are assigned by position.
    explicit Vocabulary(std::vector<std::string> terms);

    [[nodiscard]] std::size_t size() const noexcept { return terms_.size(); }
    [[nodiscard]] bool contains(std::string_view term) const;
    /// Returns -1 for out-of-vocabulary terms.
    [[nodiscard]] std::int64_t lookup(std::string_view term) const;
    [[nodiscard]] const std::string& term(TermId id) const { return terms_.at(id); }
    [[nodiscard]] const std::vector<std::string>& terms() const noexcept { return terms_; }

    /// FNV-1a 64 over the newline-joined term list; used to bind checkpoints to a lexicon.
    [[nodiscard]] std::uint64_t hash() const noexcept;

private:
    struct StringHash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const noexcept {
            return std::hash<std::string_view>{}(s);
        }
    };
    std::vector<std::string> terms_;
    std::unordered_map<std::string, TermId, StringHash, std::equal_to<>> ids_;
};

struct Entry {
    TermId term;
    double weight;
    friend bool operator==(const Entry&, const Entry&) = default;
};

/// Sparse term-weight vector. Entries are sorted by term, strictly increasing,
/// and every stored weight is strictly positive.
class SparseVector {
public:
    SparseVector() = default;
    SparseVector(std::string doc_id, std::vector<Entry> entries);

    /// Builds from unsorted (term, weight) pairs. Duplicate terms are summed,
    /// non-positive weights dropped.
    static SparseVector from_unsorted(std::string doc_id, std::vector<Entry> entries);

    [[nodiscard]] const std::string& doc_id() const noexcept { return doc_id_; }
    [[nodiscard]] std::span<const Entry> entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    /// 0 when the term is absent.
    [[nodiscard]] double weight(TermId term) const noexcept;
    [[nodiscard]] TermId max_term() const;

    friend bool operator==(const SparseVector&, const SparseVector&) = default;

private:
    std::string doc_id_;
    std::vector<Entry> entries_;
};

using DocBatch = std::vector<SparseVector>;

/// One partial derivative with respect to a term weight.
struct TermGrad {
    TermId term;
    double value;
    friend bool operator==(const TermGrad&, const TermGrad&) = default;
};

/// Sorted, deduplicated binary query.
using QueryTerms = std::vector<TermId>;

struct DfTable {
    std::vector<std::uint32_t> df;
    std::uint32_t sample_size = 0;
    double epsilon = 0.0;

    [[nodiscard]] std::size_t vocab_size() const noexcept { return df.size(); }
};

/// Lowercase, split on runs of non-alphanumeric bytes. Non-ASCII bytes are separators.
Tokens tokenize(std::string_view text);

/// Terms present in at least `min_df` distinct documents, sorted lexicographically.
Vocabulary build_vocab(std::span<const Tokens> corpus, std::size_t min_df);

SparseVector vectorize_counts(std::span<const std::string> tokens, const Vocabulary& vocab,
                              std::string doc_id = {});

/// In-vocabulary query tokens as a sorted set of ids.
QueryTerms query_terms(std::span<const std::string> tokens, const Vocabulary& vocab);

/// Binary query against weighted document: sum of matched document weights.
double sparse_dot(std::span<const TermId> query, const SparseVector& doc) noexcept;

/// DF_t counts vectors with weight(t) > epsilon.
DfTable estimate_df(std::span<const SparseVector> vectors, std::size_t vocab_size,
                    double epsilon = 0.0);

double avg_active_terms(std::span<const SparseVector> vectors);

} // namespace dfflops
