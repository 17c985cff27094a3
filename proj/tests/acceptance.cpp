// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "dfflops/encoder.hpp"
#include "dfflops/experiment.hpp"
#include "dfflops/index.hpp"
#include "dfflops/io.hpp"
#include "dfflops/reg.hpp"
#include "test_support.hpp"

using namespace dfflops;
using dfflops::testing::random_query;
using dfflops::testing::random_vector;
using dfflops::testing::rel_err;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<SparseVector> random_batch(std::mt19937_64& rng, std::size_t vocab, std::size_t max_n) {
    std::uniform_int_distribution<std::size_t> n_dist(1, max_n);
    std::vector<SparseVector> batch;
    const auto n = n_dist(rng);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(random_vector(rng, vocab, vocab / 2));
    return batch;
}

PenaltyWeights uniform_weights(std::mt19937_64& rng, std::size_t vocab) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    PenaltyWeights w;
    for (std::size_t t = 0; t < vocab; ++t) w.w.push_back(d(rng));
    return w;
}

// ---- 1 -------------------------------------------------------------------------------

Outcome activation_exactness() {
    double worst = 0.0;
    for (double a : {0.01, 0.1, 0.5}) {
        for (double b : {1.0, 5.0, 10.0}) {
            worst = std::max(worst, std::abs(activ(a, {a, b}) - 0.5));
            worst = std::max(worst, std::abs(activ(1.0, {a, b}) - 1.0));
        }
    }
    const double closed = std::abs(activ(0.01, {0.1, 10.0}) - 1.0 / 59050.0);
    return {worst <= 1e-12 && closed <= 1e-12,
            fmt("max grid error %.2e, closed-form error %.2e (tol 1e-12)", worst, closed)};
}

// ---- 2, 3 ----------------------------------------------------------------------------

Outcome flops_equivalence() {
    std::mt19937_64 rng(2);
    int identical = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto batch = random_batch(rng, 40, 10);
        const auto a = flops_loss(batch);
        const auto b = df_flops_loss(batch, PenaltyWeights::ones(40));
        bool same = a.loss == b.loss && a.term_grad.size() == b.term_grad.size();
        for (std::size_t i = 0; same && i < a.term_grad.size(); ++i) {
            same = a.term_grad[i] == b.term_grad[i];
        }
        identical += same ? 1 : 0;
    }
    return {identical == 1000, fmt("%d / 1000 batches bit-identical (loss and gradient)", identical)};
}

Outcome dominance() {
    std::mt19937_64 rng(3);
    int held = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto batch = random_batch(rng, 40, 10);
        held += df_flops_loss(batch, uniform_weights(rng, 40)).loss <= flops_loss(batch).loss ? 1 : 0;
    }
    return {held == 1000, fmt("%d / 1000 batches with df_flops <= flops", held)};
}

// ---- 4 -------------------------------------------------------------------------------

// Central difference of f around x, perturbing only the value behind `slot`.
double central(double& slot, double h, const std::function<double()>& f) {
    const double x = slot;
    slot = x + h;
    const double up = f();
    slot = x - h;
    const double down = f();
    slot = x;
    return (up - down) / (2.0 * h);
}

// Relative error with a floor so coordinates whose true gradient is (near) zero do not blow
// up: central differences at h = 1e-5 carry ~1e-11 of round-off, so gradients far below
// the floor are compared in absolute terms.
constexpr double kFdFloor = 1e-5;
constexpr double kFdStep = 1e-5;

double reg_instance_error(std::mt19937_64& rng, bool weighted) {
    const std::size_t vocab = 15;
    auto batch = random_batch(rng, vocab, 6);
    const auto w = weighted ? uniform_weights(rng, vocab) : PenaltyWeights::ones(vocab);
    const auto res = weighted ? df_flops_loss(batch, w) : flops_loss(batch);
    // Mutable dense copy; the loss is re-evaluated through the library on rebuilt vectors.
    std::vector<std::vector<double>> dense;
    for (const auto& v : batch) dense.push_back(dfflops::testing::densify(v, vocab));
    auto eval = [&] {
        std::vector<SparseVector> b;
        for (const auto& d : dense) {
            std::vector<Entry> e;
            for (std::size_t t = 0; t < vocab; ++t)
                if (d[t] > 0.0) e.push_back({static_cast<TermId>(t), d[t]});
            b.emplace_back("", e);
        }
        return weighted ? df_flops_loss(b, w).loss : flops_loss(b).loss;
    };
    double worst = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        for (const auto& e : batch[j].entries()) {
            const double fd = central(dense[j][e.term], kFdStep, eval);
            worst = std::max(worst, rel_err(res.grad(e.term), fd, kFdFloor));
        }
    }
    return worst;
}

double rank_instance_error(std::mt19937_64& rng) {
    const std::size_t vocab = 12;
    std::vector<SparseVector> docs;
    for (int d = 0; d < 8; ++d) docs.push_back(random_vector(rng, vocab, 8, std::to_string(d)));
    std::vector<QueryTerms> queries;
    std::vector<std::size_t> pos;
    std::vector<std::vector<std::size_t>> neg;
    for (std::size_t q = 0; q < 4; ++q) {
        queries.push_back(random_query(rng, vocab, 4));
        pos.push_back(q);
        std::vector<std::size_t> n;
        for (std::size_t d = 0; d < docs.size(); ++d)
            if (d != q) n.push_back(d);
        neg.push_back(n);
    }
    const auto res = rank_loss(queries, docs, pos, neg);
    double worst = 0.0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        std::vector<Entry> entries(docs[d].entries().begin(), docs[d].entries().end());
        for (auto& e : entries) {
            auto eval = [&] {
                auto copy = docs;
                copy[d] = SparseVector(docs[d].doc_id(), entries);
                return rank_loss(queries, copy, pos, neg).loss;
            };
            const double fd = central(e.weight, kFdStep, eval);
            double analytic = 0.0;
            for (const auto& g : res.grad[d])
                if (g.term == e.term) analytic = g.value;
            worst = std::max(worst, rel_err(analytic, fd, kFdFloor));
        }
    }
    return worst;
}

double objective_instance_error(std::mt19937_64& rng, int trial) {
    const std::size_t vocab = 20, k = 4, n_docs = 6;
    auto p = EncoderParams::random(vocab, k, 500 + static_cast<std::uint64_t>(trial), trial % 3 == 0);
    std::uniform_real_distribution<double> bias(-0.3, 0.3);
    for (Eigen::Index t = 0; t < p.b.size(); ++t) p.b[t] = bias(rng);
    TrainBatch b;
    for (std::size_t d = 0; d < n_docs; ++d) {
        auto v = random_vector(rng, vocab, 8, "d" + std::to_string(d), 3.0);
        std::vector<Entry> counts;
        for (const auto& e : v.entries()) counts.push_back({e.term, std::round(e.weight) + 1.0});
        b.docs.emplace_back(v.doc_id(), counts);
    }
    for (std::size_t q = 0; q < 3; ++q) {
        auto terms = random_query(rng, vocab, 4);
        if (terms.empty()) terms.push_back(static_cast<TermId>(q));
        b.queries.push_back(terms);
        b.positives.push_back(q);
        std::vector<std::size_t> neg;
        for (std::size_t d = 0; d < n_docs; ++d)
            if (d != q) neg.push_back(d);
        b.negatives.push_back(neg);
    }
    const auto reg = trial % 2 == 0 ? Regularizer::Flops : Regularizer::DfFlops;
    const auto w = reg == Regularizer::Flops ? PenaltyWeights::ones(vocab) : uniform_weights(rng, vocab);
    const double lambda = 0.5;
    const auto obj = objective(p, b, lambda, w, reg);
    auto eval = [&] { return objective(p, b, lambda, w, reg).total; };
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.U.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.U.cols(); ++j) {
            worst = std::max(worst, rel_err(obj.grad.U(i, j), central(p.U(i, j), kFdStep, eval), kFdFloor));
            worst = std::max(worst, rel_err(obj.grad.Vp(i, j), central(p.Vp(i, j), kFdStep, eval), kFdFloor));
        }
        worst = std::max(worst, rel_err(obj.grad.b[i], central(p.b[i], kFdStep, eval), kFdFloor));
    }
    return worst;
}

Outcome gradient_correctness() {
    std::mt19937_64 rng(4);
    const int n = 60;
    double flops = 0.0, df = 0.0, rank = 0.0, obj = 0.0;
    for (int i = 0; i < n; ++i) {
        flops = std::max(flops, reg_instance_error(rng, false));
        df = std::max(df, reg_instance_error(rng, true));
        rank = std::max(rank, rank_instance_error(rng));
        obj = std::max(obj, objective_instance_error(rng, i));
    }
    const bool ok = std::max({flops, df, rank, obj}) < 1e-4;
    return {ok, fmt("%d instances each; max rel err flops %.1e, df_flops %.1e, rank %.1e, "
                    "objective %.1e (tol 1e-4)",
                    n, flops, df, rank, obj)};
}

// ---- 5 -------------------------------------------------------------------------------

Outcome engine_exactness() {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> n_docs(1, 2000), vocab_dist(5, 300), k_dist(1, 50);
    int search_ok = 0, match_ok = 0;
    const int instances = 200;
    SearchScratch scratch;
    for (int trial = 0; trial < instances; ++trial) {
        const auto vocab = vocab_dist(rng);
        std::vector<SparseVector> docs;
        const auto n = n_docs(rng);
        for (std::size_t i = 0; i < n; ++i) {
            auto v = random_vector(rng, vocab, 15, "d" + std::to_string(i));
            if (trial % 2 == 0) {
                // Coarse weights produce exact score ties.
                std::vector<Entry> q;
                for (const auto& e : v.entries()) q.push_back({e.term, std::ceil(e.weight * 2.0) / 2.0});
                v = SparseVector(v.doc_id(), q);
            }
            docs.push_back(std::move(v));
        }
        const auto idx = build_index(docs, vocab);
        const auto q = random_query(rng, vocab, 6);
        const auto k = k_dist(rng);
        const auto got = search(idx, q, k, scratch);
        const auto ref = brute_force_search(docs, q, k);
        search_ok += got.hits == ref.hits ? 1 : 0;
        std::set<std::size_t> hit;
        for (std::size_t d = 0; d < docs.size(); ++d)
            for (auto t : q)
                if (docs[d].weight(t) > 0.0) hit.insert(d);
        match_ok += (match_count(idx, q) == hit.size() && got.matches == hit.size()) ? 1 : 0;
    }
    return {search_ok == instances && match_ok == instances,
            fmt("search == brute force on %d / %d, match_count == union on %d / %d", search_ok,
                instances, match_ok, instances)};
}

// ---- 6, 7, 8 -------------------------------------------------------------------------

std::vector<ExperimentResult>& experiment_runs() {
    static std::vector<ExperimentResult> runs = [] {
        std::vector<ExperimentResult> out;
        const ExperimentConfig config;
        for (std::uint64_t seed : {1, 2, 3}) {
            out.push_back(run_experiment(config, seed, [](const std::string& msg) {
                std::fprintf(stderr, "    %s\n", msg.c_str());
            }));
            std::fprintf(stderr, "  seed %llu\n%s", static_cast<unsigned long long>(seed),
                         format_report(out.back(), config.recall_k).c_str());
        }
        return out;
    }();
    return runs;
}

Outcome table1_analog() {
    const auto& runs = experiment_runs();
    int df_ok = 0, match_ok = 0, mrr_ok = 0, lat_ok = 0;
    std::string detail;
    for (const auto& r : runs) {
        const auto& f = r.flops();
        const auto& d = r.df_flops();
        const double df_ratio = d.bench.top1_df_pct / f.bench.top1_df_pct;
        const double m_ratio = d.bench.matches_avg / f.bench.matches_avg;
        const double drop = (f.mrr10 - d.mrr10) / f.mrr10;
        df_ok += df_ratio <= 0.5 ? 1 : 0;
        match_ok += m_ratio <= 0.5 ? 1 : 0;
        mrr_ok += drop <= 0.15 ? 1 : 0;
        lat_ok += d.bench.latency_avg_ms < f.bench.latency_avg_ms ? 1 : 0;
        detail += fmt("\n      seed %llu %s vs %s: top1 %.1f%%/%.1f%% (x%.2f) matches x%.2f "
                      "mrr drop %.1f%% latency %.4f/%.4f ms",
                      static_cast<unsigned long long>(r.seed), d.name.c_str(), f.name.c_str(),
                      d.bench.top1_df_pct, f.bench.top1_df_pct, df_ratio, m_ratio, 100.0 * drop,
                      d.bench.latency_avg_ms, f.bench.latency_avg_ms);
    }
    const bool ok = df_ok >= 2 && match_ok >= 2 && mrr_ok >= 2 && lat_ok >= 2;
    return {ok, fmt("seeds holding (need 2/3): (a) top1 %d (b) matches %d (c) mrr %d (d) latency %d",
                    df_ok, match_ok, mrr_ok, lat_ok) +
                    detail};
}

Outcome pruning_analog() {
    const auto& runs = experiment_runs();
    int keep_ok = 0, reduce_ok = 0;
    std::string detail;
    for (const auto& r : runs) {
        const double shift = r.best_flops_pruned.bench.top1_df_pct - r.flops().bench.top1_df_pct;
        const bool reduce = r.df_flops_pruned.bench.matches_avg < r.df_flops().bench.matches_avg;
        keep_ok += std::abs(shift) <= 2.0 ? 1 : 0;
        reduce_ok += reduce ? 1 : 0;
        detail += fmt("\n      seed %llu FLOPS top1 %.1f%% -> %.1f%% (%+.1f pp); DF-FLOPS matches %.1f -> %.1f",
                      static_cast<unsigned long long>(r.seed), r.flops().bench.top1_df_pct,
                      r.best_flops_pruned.bench.top1_df_pct, shift, r.df_flops().bench.matches_avg,
                      r.df_flops_pruned.bench.matches_avg);
    }
    const auto n = static_cast<int>(runs.size());
    return {keep_ok == n && reduce_ok == n,
            fmt("seeds holding (need all): top1 within 2 pp %d/%d, DF-FLOPS matches reduced %d/%d",
                keep_ok, n, reduce_ok, n) +
                detail};
}

Outcome lambda_tradeoff() {
    const auto& runs = experiment_runs();
    int ok = 0;
    std::string detail;
    for (const auto& r : runs) {
        const auto sweep = r.flops_sweep();
        bool len_ok = true;
        std::string lens, mrrs;
        for (std::size_t i = 0; i < sweep.size(); ++i) {
            if (i > 0 && sweep[i]->bench.avg_emb_length > sweep[i - 1]->bench.avg_emb_length) len_ok = false;
            lens += fmt("%s%.1f", i ? " > " : "", sweep[i]->bench.avg_emb_length);
            mrrs += fmt("%s%.4f", i ? " / " : "", sweep[i]->mrr10);
        }
        // The grid is {1e-3, 1e-1, 1}; the quality claim is about the last two points.
        const bool mrr_ok = sweep.size() >= 2 && sweep.back()->mrr10 <= sweep[sweep.size() - 2]->mrr10;
        ok += len_ok && mrr_ok ? 1 : 0;
        detail += fmt("\n      seed %llu length %s; MRR@10 %s",
                      static_cast<unsigned long long>(r.seed), lens.c_str(), mrrs.c_str());
    }
    const auto n = static_cast<int>(runs.size());
    return {ok == n, fmt("seeds holding (need all): %d/%d", ok, n) + detail};
}

// ---- 9 -------------------------------------------------------------------------------

int sh(const std::string& cmd) {
    const auto full = cmd + " > /dev/null 2>&1";
    return std::system(full.c_str());
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "dfflops_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = DFFLOPS_CLI;
    const auto d = dir.string();
    {
        std::ofstream(dir / "synth.cfg") << "synth_num_docs = 2000\nsynth_train_queries = 1000\n";
    }
    int rc = sh(cli + " --seed 7 --out-dir " + d + "/data synth --config " + d + "/synth.cfg");
    rc |= sh(cli + " build-vocab --corpus " + d + "/data/corpus.jsonl --min-df 2 --out " + d + "/vocab.txt");
    {
        std::ofstream cfg(dir / "train.cfg");
        cfg << "corpus = " << d << "/data/corpus.jsonl\nqueries = " << d
            << "/data/train_queries.tsv\nvocab = " << d << "/vocab.txt\n"
            << "regularizer = df_flops\npeak_lambda = 1\ntotal_steps = 200\nwarmup_steps = 120\n"
            << "df_refresh_interval = 20\ndf_sample_size = 256\noptimizer = adam\n"
            << "learning_rate = 0.003\nrank = 32\nprecision = single\n";
    }
    for (const char* run : {"a", "b"}) {
        rc |= sh(cli + " --seed 11 --out-dir " + d + "/" + run + " train --quiet --config " + d + "/train.cfg");
    }
    if (rc != 0) return {false, "CLI pipeline failed before comparison"};
    rc |= sh(cli + " encode --checkpoint " + d + "/a/checkpoint.bin --corpus " + d +
             "/data/corpus.jsonl --vocab " + d + "/vocab.txt --out " + d + "/vectors.jsonl");
    for (const char* run : {"a", "b"}) {
        rc |= sh(cli + " index --vectors " + d + "/vectors.jsonl --vocab " + d + "/vocab.txt --out " + d +
                 "/" + run + ".idx");
    }
    if (rc != 0) return {false, "CLI encode/index failed"};
    const auto ca = io::file_digest(dir / "a/checkpoint.bin"), cb = io::file_digest(dir / "b/checkpoint.bin");
    const auto ia = io::file_digest(dir / "a.idx"), ib = io::file_digest(dir / "b.idx");
    fs::remove_all(dir);
    return {ca == cb && ia == ib, fmt("checkpoint %s / %s, index %s / %s", ca.c_str(), cb.c_str(),
                                      ia.c_str(), ib.c_str())};
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    const std::vector<Criterion> criteria{
        {1, "activation exactness", 1.0, activation_exactness},
        {2, "FLOPS / DF-FLOPS equivalence", 5.0, flops_equivalence},
        {3, "dominance", 5.0, dominance},
        {4, "gradient correctness", 60.0, gradient_correctness},
        {5, "engine exactness", 60.0, engine_exactness},
        // 7 and 8 reuse the experiment that 6 runs; their budgets cover only the extra work.
        {6, "desk-scale regime comparison", 900.0, table1_analog},
        {7, "pruning analog", 900.0, pruning_analog},
        {8, "lambda-strength tradeoff", 600.0, lambda_tradeoff},
        {9, "determinism", 300.0, determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("[%s] %d %s: %s (%.1f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", OVER BUDGET");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
