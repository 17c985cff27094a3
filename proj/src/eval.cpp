#include "dfflops/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dfflops {

namespace {

const std::vector<std::string>& ranked(const Run& run, const std::string& qid) {
    static const std::vector<std::string> empty;
    auto it = run.find(qid);
    return it == run.end() ? empty : it->second;
}

bool has_relevant(const std::map<std::string, int>& judged) {
    return std::any_of(judged.begin(), judged.end(), [](const auto& kv) { return kv.second > 0; });
}

void require_k(std::size_t k) {
    if (k < 1) {
        throw std::invalid_argument("metric cutoff k must be >= 1");
    }
}

} // namespace

double mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
    require_k(k);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [qid, judged] : qrels) {
        if (!has_relevant(judged)) {
            continue;
        }
        ++n;
        const auto& docs = ranked(run, qid);
        const auto depth = std::min(k, docs.size());
        for (std::size_t i = 0; i < depth; ++i) {
            auto it = judged.find(docs[i]);
            if (it != judged.end() && it->second > 0) {
                sum += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double recall_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
    require_k(k);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [qid, judged] : qrels) {
        std::size_t relevant = 0;
        for (const auto& [doc, grade] : judged) {
            relevant += grade > 0 ? 1 : 0;
        }
        if (relevant == 0) {
            continue;
        }
        ++n;
        const auto& docs = ranked(run, qid);
        const auto depth = std::min(k, docs.size());
        std::size_t found = 0;
        for (std::size_t i = 0; i < depth; ++i) {
            auto it = judged.find(docs[i]);
            found += (it != judged.end() && it->second > 0) ? 1 : 0;
        }
        sum += static_cast<double>(found) / static_cast<double>(relevant);
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
    require_k(k);
    auto gain = [](int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; };
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [qid, judged] : qrels) {
        std::vector<int> grades;
        for (const auto& [doc, grade] : judged) {
            if (grade > 0) {
                grades.push_back(grade);
            }
        }
        std::sort(grades.begin(), grades.end(), std::greater<>());
        double ideal = 0.0;
        for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
            ideal += gain(grades[i]) / std::log2(static_cast<double>(i + 2));
        }
        if (ideal <= 0.0) {
            continue;
        }
        const auto& docs = ranked(run, qid);
        double dcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
            auto it = judged.find(docs[i]);
            if (it != judged.end() && it->second > 0) {
                dcg += gain(it->second) / std::log2(static_cast<double>(i + 2));
            }
        }
        sum += dcg / ideal;
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) {
        throw std::invalid_argument("percentile of empty sample");
    }
    if (!(p > 0.0 && p <= 100.0)) {
        throw std::invalid_argument("percentile must lie in (0, 100]");
    }
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

BenchReport bench_latency(const InvertedIndex& index, const Vocabulary& vocab,
                          std::span<const BenchQuery> queries, std::size_t repeats,
                          std::size_t top_k) {
    if (queries.empty()) {
        throw std::invalid_argument("bench_latency: empty query set");
    }
    if (repeats < 1) {
        throw std::invalid_argument("bench_latency: repeats must be >= 1");
    }
    using clock = std::chrono::steady_clock;
    SearchScratch scratch;
    std::size_t sink = 0;
    auto run_one = [&](const BenchQuery& q) {
        const auto tokens = tokenize(q.text);
        const auto terms = query_terms(tokens, vocab);
        const auto res = search(index, terms, top_k, scratch);
        sink += res.hits.size();
    };

    for (const auto& q : queries) {
        run_one(q);
    }

    BenchReport rep;
    rep.raw_ms.assign(queries.size(), std::vector<double>(repeats, 0.0));
    for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto start = clock::now();
            run_one(queries[i]);
            const auto stop = clock::now();
            rep.raw_ms[i][r] =
                std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count() / 1e6;
        }
    }
    (void)sink;

    std::vector<double> per_query(queries.size(), 0.0);
    double matches = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        double s = 0.0;
        for (double ms : rep.raw_ms[i]) {
            s += ms;
        }
        per_query[i] = s / static_cast<double>(repeats);
        matches += static_cast<double>(
            match_count(index, query_terms(tokenize(queries[i].text), vocab)));
    }
    double total = 0.0;
    for (double ms : per_query) {
        total += ms;
    }
    const double nq = static_cast<double>(queries.size());
    rep.latency_avg_ms = total / nq;
    rep.latency_p99_ms = percentile_nearest_rank(per_query, 99.0);
    rep.matches_avg = matches / nq;
    const auto top = df_report(index, 1);
    rep.top1_df_pct = top.empty() ? 0.0 : top.front().df_pct;
    rep.avg_emb_length = index.doc_count() == 0
                             ? 0.0
                             : static_cast<double>(index.total_postings()) /
                                   static_cast<double>(index.doc_count());
    return rep;
}

std::string bench_report_json(const BenchReport& report, bool include_raw) {
    nlohmann::ordered_json j;
    j["latency_avg_ms"] = report.latency_avg_ms;
    j["latency_p99_ms"] = report.latency_p99_ms;
    j["matches_avg"] = report.matches_avg;
    j["top1_df_pct"] = report.top1_df_pct;
    j["avg_emb_length"] = report.avg_emb_length;
    if (include_raw) {
        j["raw_ms"] = report.raw_ms;
    }
    return j.dump(2);
}

std::string bench_report_table(std::span<const std::pair<std::string, BenchReport>> rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %12s %12s %12s %10s %10s\n", "run", "lat_avg_ms",
                  "lat_p99_ms", "matches_avg", "top1_df%", "avg_len");
    out << line;
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof line, "%-24s %12.4f %12.4f %12.1f %9.1f%% %10.1f\n",
                      name.c_str(), r.latency_avg_ms, r.latency_p99_ms, r.matches_avg,
                      r.top1_df_pct, r.avg_emb_length);
        out << line;
    }
    return out.str();
}

} // namespace dfflops
