#include "dfflops/index.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace dfflops {

namespace {

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) noexcept {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.doc < b.doc;
}

void keep_top(std::vector<ScoredDoc>& hits, std::size_t top_k) {
    if (hits.size() > top_k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top_k),
                          hits.end(), ranks_before);
        hits.resize(top_k);
    } else {
        std::sort(hits.begin(), hits.end(), ranks_before);
    }
}

} // namespace

InvertedIndex::InvertedIndex(std::vector<PostingList> lists, std::vector<std::string> doc_ids)
    : lists_(std::move(lists)), doc_ids_(std::move(doc_ids)), doc_lengths_(doc_ids_.size(), 0) {
    for (std::size_t t = 0; t < lists_.size(); ++t) {
        const auto& pl = lists_[t];
        if (pl.term != t) {
            throw std::invalid_argument("posting list term does not match its slot");
        }
        for (std::size_t i = 0; i < pl.postings.size(); ++i) {
            const auto& p = pl.postings[i];
            if (p.doc >= doc_ids_.size()) {
                throw std::invalid_argument("posting references unknown document");
            }
            if (i > 0 && pl.postings[i - 1].doc >= p.doc) {
                throw std::invalid_argument("posting doc ids must be strictly increasing");
            }
            if (!(p.weight > 0.0F)) {
                throw std::invalid_argument("posting weights must be positive");
            }
            ++doc_lengths_[p.doc];
        }
    }
}

std::size_t InvertedIndex::total_postings() const noexcept {
    std::size_t n = 0;
    for (const auto& pl : lists_) {
        n += pl.postings.size();
    }
    return n;
}

SparseVector prune_topk(const SparseVector& vector, std::size_t k) {
    if (k < 1) {
        throw std::invalid_argument("prune_topk: k must be >= 1");
    }
    if (vector.size() <= k) {
        return vector;
    }
    std::vector<Entry> entries(vector.entries().begin(), vector.entries().end());
    std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k),
                     entries.end(), [](const Entry& a, const Entry& b) {
                         return a.weight != b.weight ? a.weight > b.weight : a.term < b.term;
                     });
    entries.resize(k);
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.term < b.term; });
    return SparseVector(vector.doc_id(), std::move(entries));
}

InvertedIndex build_index(std::span<const SparseVector> docs, std::size_t vocab_size) {
    if (docs.empty()) {
        throw std::invalid_argument("build_index: empty corpus");
    }
    std::vector<PostingList> lists(vocab_size);
    for (std::size_t t = 0; t < vocab_size; ++t) {
        lists[t].term = static_cast<TermId>(t);
    }
    std::vector<std::string> ids;
    ids.reserve(docs.size());
    std::unordered_set<std::string> seen;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const auto& doc = docs[d];
        if (!seen.insert(doc.doc_id()).second) {
            throw std::invalid_argument("build_index: duplicate doc id '" + doc.doc_id() + "'");
        }
        ids.push_back(doc.doc_id());
        for (const auto& e : doc.entries()) {
            if (e.term >= vocab_size) {
                throw std::out_of_range("build_index: term id beyond vocabulary");
            }
            const auto w = static_cast<float>(e.weight);
            if (w > 0.0F) {
                lists[e.term].postings.push_back({static_cast<DocNum>(d), w});
            }
        }
    }
    return InvertedIndex(std::move(lists), std::move(ids));
}

std::size_t match_count(const InvertedIndex& index, std::span<const TermId> query) {
    std::vector<std::uint8_t> seen(index.doc_count(), 0);
    std::size_t n = 0;
    for (TermId t : query) {
        for (const auto& p : index.list(t).postings) {
            if (!seen[p.doc]) {
                seen[p.doc] = 1;
                ++n;
            }
        }
    }
    return n;
}

void SearchScratch::reset(std::size_t doc_count) {
    if (acc_.size() != doc_count) {
        acc_.assign(doc_count, 0.0);
        seen_.assign(doc_count, 0);
    }
    touched_.clear();
}

SearchResult search(const InvertedIndex& index, std::span<const TermId> query, std::size_t top_k,
                    SearchScratch& scratch) {
    if (top_k < 1) {
        throw std::invalid_argument("search: top_k must be >= 1");
    }
    scratch.reset(index.doc_count());
    auto& acc = scratch.acc_;
    auto& seen = scratch.seen_;
    auto& touched = scratch.touched_;
    // Query terms are visited in ascending order so every document's score is summed
    // in the same order sparse_dot uses.
    QueryTerms terms(query.begin(), query.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (TermId t : terms) {
        for (const auto& p : index.list(t).postings) {
            if (!seen[p.doc]) {
                seen[p.doc] = 1;
                touched.push_back(p.doc);
            }
            acc[p.doc] += static_cast<double>(p.weight);
        }
    }
    SearchResult res;
    res.matches = touched.size();
    res.hits.reserve(touched.size());
    for (DocNum d : touched) {
        res.hits.push_back({d, acc[d]});
        acc[d] = 0.0;
        seen[d] = 0;
    }
    keep_top(res.hits, top_k);
    return res;
}

SearchResult search(const InvertedIndex& index, std::span<const TermId> query, std::size_t top_k) {
    SearchScratch scratch;
    return search(index, query, top_k, scratch);
}

SearchResult brute_force_search(std::span<const SparseVector> docs, std::span<const TermId> query,
                                std::size_t top_k) {
    if (top_k < 1) {
        throw std::invalid_argument("brute_force_search: top_k must be >= 1");
    }
    QueryTerms terms(query.begin(), query.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    SearchResult res;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        bool shares = false;
        for (TermId t : terms) {
            if (docs[d].weight(t) > 0.0) {
                shares = true;
                break;
            }
        }
        if (!shares) {
            continue;
        }
        ++res.matches;
        res.hits.push_back({static_cast<DocNum>(d), sparse_dot(terms, docs[d])});
    }
    keep_top(res.hits, top_k);
    return res;
}

std::vector<DfRow> df_report(const InvertedIndex& index, std::size_t top_n) {
    if (top_n < 1) {
        throw std::invalid_argument("df_report: top_n must be >= 1");
    }
    std::vector<DfRow> rows;
    rows.reserve(index.vocab_size());
    const double n = static_cast<double>(index.doc_count());
    for (const auto& pl : index.lists()) {
        const auto df = pl.postings.size();
        rows.push_back({pl.term, df, n > 0 ? 100.0 * static_cast<double>(df) / n : 0.0});
    }
    const auto keep = std::min(top_n, rows.size());
    std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(keep), rows.end(),
                      [](const DfRow& a, const DfRow& b) {
                          return a.df != b.df ? a.df > b.df : a.term < b.term;
                      });
    rows.resize(keep);
    return rows;
}

} // namespace dfflops
