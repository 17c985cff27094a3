#include "dfflops/core.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <unordered_set>

#include "dfflops/hash.hpp"

namespace dfflops {

Vocabulary::Vocabulary(std::vector<std::string> terms) : terms_(std::move(terms)) {
    ids_.reserve(terms_.size());
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        auto [it, inserted] = ids_.emplace(terms_[i], static_cast<TermId>(i));
        if (!inserted) {
            throw std::invalid_argument("duplicate vocabulary term: " + terms_[i]);
        }
    }
}

bool Vocabulary::contains(std::string_view term) const {
    return ids_.find(term) != ids_.end();
}

std::int64_t Vocabulary::lookup(std::string_view term) const {
    auto it = ids_.find(term);
    return it == ids_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::uint64_t Vocabulary::hash() const noexcept {
    std::uint64_t h = kFnvOffset;
    for (const auto& t : terms_) {
        h = fnv1a(t, h);
        h = fnv1a("\n", h);
    }
    return h;
}

SparseVector::SparseVector(std::string doc_id, std::vector<Entry> entries)
    : doc_id_(std::move(doc_id)), entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!(entries_[i].weight > 0.0)) {
            throw std::invalid_argument("sparse vector weights must be positive");
        }
        if (i > 0 && entries_[i - 1].term >= entries_[i].term) {
            throw std::invalid_argument("sparse vector terms must be strictly increasing");
        }
    }
}

SparseVector SparseVector::from_unsorted(std::string doc_id, std::vector<Entry> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.term < b.term; });
    std::vector<Entry> merged;
    merged.reserve(entries.size());
    for (const auto& e : entries) {
        if (!merged.empty() && merged.back().term == e.term) {
            merged.back().weight += e.weight;
        } else {
            merged.push_back(e);
        }
    }
    std::erase_if(merged, [](const Entry& e) { return !(e.weight > 0.0); });
    SparseVector v;
    v.doc_id_ = std::move(doc_id);
    v.entries_ = std::move(merged);
    return v;
}

double SparseVector::weight(TermId term) const noexcept {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), term,
                               [](const Entry& e, TermId t) { return e.term < t; });
    return (it != entries_.end() && it->term == term) ? it->weight : 0.0;
}

TermId SparseVector::max_term() const {
    if (entries_.empty()) {
        throw std::logic_error("max_term of empty vector");
    }
    return entries_.back().term;
}

Tokens tokenize(std::string_view text) {
    Tokens out;
    std::string cur;
    for (unsigned char c : text) {
        if (c < 0x80 && std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

Vocabulary build_vocab(std::span<const Tokens> corpus, std::size_t min_df) {
    if (min_df < 1) {
        throw std::invalid_argument("min_df must be >= 1");
    }
    std::unordered_map<std::string, std::size_t> df;
    std::unordered_set<std::string_view> seen;
    for (const auto& doc : corpus) {
        seen.clear();
        for (const auto& tok : doc) {
            if (seen.insert(tok).second) {
                ++df[tok];
            }
        }
    }
    std::vector<std::string> terms;
    for (const auto& [term, count] : df) {
        if (count >= min_df) {
            terms.push_back(term);
        }
    }
    if (terms.empty()) {
        throw std::invalid_argument("empty vocabulary: no token reaches min_df=" +
                                    std::to_string(min_df));
    }
    std::sort(terms.begin(), terms.end());
    return Vocabulary(std::move(terms));
}

SparseVector vectorize_counts(std::span<const std::string> tokens, const Vocabulary& vocab,
                              std::string doc_id) {
    std::vector<Entry> entries;
    entries.reserve(tokens.size());
    for (const auto& tok : tokens) {
        auto id = vocab.lookup(tok);
        if (id >= 0) {
            entries.push_back({static_cast<TermId>(id), 1.0});
        }
    }
    return SparseVector::from_unsorted(std::move(doc_id), std::move(entries));
}

QueryTerms query_terms(std::span<const std::string> tokens, const Vocabulary& vocab) {
    QueryTerms q;
    for (const auto& tok : tokens) {
        auto id = vocab.lookup(tok);
        if (id >= 0) {
            q.push_back(static_cast<TermId>(id));
        }
    }
    std::sort(q.begin(), q.end());
    q.erase(std::unique(q.begin(), q.end()), q.end());
    return q;
}

double sparse_dot(std::span<const TermId> query, const SparseVector& doc) noexcept {
    double score = 0.0;
    for (TermId t : query) {
        score += doc.weight(t);
    }
    return score;
}

DfTable estimate_df(std::span<const SparseVector> vectors, std::size_t vocab_size,
                    double epsilon) {
    if (vectors.empty()) {
        throw std::invalid_argument("estimate_df: empty vector list");
    }
    if (epsilon < 0.0) {
        throw std::invalid_argument("estimate_df: epsilon must be >= 0");
    }
    DfTable table;
    table.df.assign(vocab_size, 0);
    table.sample_size = static_cast<std::uint32_t>(vectors.size());
    table.epsilon = epsilon;
    for (const auto& v : vectors) {
        for (const auto& e : v.entries()) {
            if (e.term >= vocab_size) {
                throw std::out_of_range("estimate_df: term id beyond vocabulary");
            }
            if (e.weight > epsilon) {
                ++table.df[e.term];
            }
        }
    }
    return table;
}

double avg_active_terms(std::span<const SparseVector> vectors) {
    if (vectors.empty()) {
        throw std::invalid_argument("avg_active_terms: empty vector list");
    }
    std::size_t total = 0;
    for (const auto& v : vectors) {
        total += v.size();
    }
    return static_cast<double>(total) / static_cast<double>(vectors.size());
}

} // namespace dfflops
