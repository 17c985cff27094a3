#include "dfflops/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "dfflops/index.hpp"

namespace dfflops {

namespace {

std::vector<double> parse_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
        } catch (const std::exception&) {
            throw std::invalid_argument("config key '" + key + "': bad list item '" + item + "'");
        }
    }
    if (out.empty()) {
        throw std::invalid_argument("config key '" + key + "': empty list");
    }
    return out;
}

std::size_t to_size(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(key);
        }
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': not an integer: '" + value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(key);
        }
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': not a number: '" + value + "'");
    }
}

} // namespace

TrainConfig experiment_train_defaults() {
    TrainConfig c;
    c.optimizer = Optimizer::Adam;
    c.learning_rate = 0.003;
    c.rank = 128;
    c.batch_size = 32;
    c.total_steps = 1000;
    c.warmup_steps = 600;
    c.df_refresh_interval = 5;
    c.df_sample_size = 512;
    c.precision = Precision::Single;
    return c;
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::string> train_kv;
    for (const auto& [key, value] : kv) {
        if (key == "synth_num_docs") synth.num_docs = to_size(key, value);
        else if (key == "synth_vocab_types") synth.vocab_types = to_size(key, value);
        else if (key == "synth_zipf_exponent") synth.zipf_exponent = to_double(key, value);
        else if (key == "synth_min_doc_len") synth.min_doc_len = to_size(key, value);
        else if (key == "synth_max_doc_len") synth.max_doc_len = to_size(key, value);
        else if (key == "synth_train_queries") synth.train_queries = to_size(key, value);
        else if (key == "synth_validation_queries") synth.validation_queries = to_size(key, value);
        else if (key == "synth_test_queries") synth.test_queries = to_size(key, value);
        else if (key == "synth_min_query_terms") synth.min_query_terms = to_size(key, value);
        else if (key == "synth_max_query_terms") synth.max_query_terms = to_size(key, value);
        else if (key == "synth_informative_max_df") synth.informative_max_df = to_double(key, value);
        else if (key == "synth_noise_probability") synth.noise_probability = to_double(key, value);
        else if (key == "synth_noise_head") synth.noise_head = to_size(key, value);
        else if (key == "min_df") min_df = to_size(key, value);
        else if (key == "flops_lambdas") flops_lambdas = parse_list(key, value);
        else if (key == "df_flops_lambdas") df_flops_lambdas = parse_list(key, value);
        else if (key == "prune_k") prune_k = to_size(key, value);
        else if (key == "bench_repeats") bench_repeats = to_size(key, value);
        else if (key == "recall_k") recall_k = to_size(key, value);
        else if (key == "quality_tolerance") quality_tolerance = to_double(key, value);
        else if (key == "df_curve_ranks") df_curve_ranks = to_size(key, value);
        else if (key == "seeds" || key == "regularizer" || key == "peak_lambda") {
            throw std::invalid_argument("config key '" + key +
                                        "' is set per regime by the experiment; remove it");
        } else train_kv.emplace(key, value);
    }
    io::apply_train_config(train, train_kv);
}

std::vector<const RegimeRow*> ExperimentResult::flops_sweep() const {
    std::vector<const RegimeRow*> out;
    for (const auto& r : sweep) {
        if (r.regularizer == Regularizer::Flops) {
            out.push_back(&r);
        }
    }
    return out;
}

std::vector<const RegimeRow*> ExperimentResult::report_rows() const {
    std::vector<const RegimeRow*> rows{&raw_counts};
    for (const auto& r : sweep) {
        if (r.regularizer == Regularizer::Flops) {
            rows.push_back(&r);
        }
    }
    rows.push_back(&best_flops_pruned);
    for (const auto& r : sweep) {
        if (r.regularizer != Regularizer::Flops) {
            rows.push_back(&r);
        }
    }
    rows.push_back(&df_flops_pruned);
    return rows;
}

namespace {

struct Prepared {
    Vocabulary vocab;
    std::vector<SparseVector> counts;
    std::vector<TrainingQuery> train;
    std::vector<io::QueryRecord> validation;
    std::vector<io::QueryRecord> test;
    Qrels validation_qrels;
    Qrels test_qrels;
    std::vector<BenchQuery> bench_queries;
};

Prepared prepare(const ExperimentConfig& config, std::uint64_t seed) {
    auto synth = config.synth;
    synth.seed = seed;
    auto coll = generate_collection(synth);

    Prepared p;
    std::vector<Tokens> tokens;
    tokens.reserve(coll.docs.size());
    for (const auto& d : coll.docs) {
        tokens.push_back(tokenize(d.text));
    }
    p.vocab = build_vocab(tokens, config.min_df);
    std::unordered_map<std::string, std::size_t> doc_index;
    p.counts.reserve(coll.docs.size());
    for (std::size_t i = 0; i < coll.docs.size(); ++i) {
        p.counts.push_back(vectorize_counts(tokens[i], p.vocab, coll.docs[i].id));
        doc_index.emplace(coll.docs[i].id, i);
    }
    for (const auto& q : coll.train) {
        p.train.push_back({q.id, query_terms(tokenize(q.text), p.vocab), doc_index.at(q.positive_doc)});
    }
    p.validation_qrels = SynthCollection::qrels_of(coll.validation);
    p.test_qrels = SynthCollection::qrels_of(coll.test);
    for (const auto& q : coll.test) {
        p.bench_queries.push_back({q.id, q.text});
    }
    p.validation = std::move(coll.validation);
    p.test = std::move(coll.test);
    return p;
}

Run run_queries(const InvertedIndex& index, const Vocabulary& vocab,
                const std::vector<io::QueryRecord>& queries, std::size_t depth) {
    Run run;
    SearchScratch scratch;
    for (const auto& q : queries) {
        const auto res = search(index, query_terms(tokenize(q.text), vocab), depth, scratch);
        auto& ranked = run[q.id];
        for (const auto& h : res.hits) {
            ranked.push_back(index.doc_id(h.doc));
        }
    }
    return run;
}

void evaluate(RegimeRow& row, const std::vector<SparseVector>& vectors, const Prepared& data,
              const ExperimentConfig& config) {
    const auto index = build_index(vectors, data.vocab.size());
    const auto depth = std::max<std::size_t>(config.recall_k, 10);
    const auto val_run = run_queries(index, data.vocab, data.validation, 10);
    row.val_mrr10 = mrr_at_k(val_run, data.validation_qrels, 10);
    const auto test_run = run_queries(index, data.vocab, data.test, depth);
    row.mrr10 = mrr_at_k(test_run, data.test_qrels, 10);
    row.recall = recall_at_k(test_run, data.test_qrels, config.recall_k);
    row.ndcg10 = ndcg_at_k(test_run, data.test_qrels, 10);
    row.bench = bench_latency(index, data.vocab, data.bench_queries, config.bench_repeats, 10);
    row.df_curve.clear();
    for (const auto& r : df_report(index, config.df_curve_ranks)) {
        row.df_curve.push_back(r.df_pct);
    }
}

std::string lambda_label(double lambda) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lambda);
    return buf;
}

std::vector<SparseVector> pruned(const std::vector<SparseVector>& vectors, std::size_t k) {
    std::vector<SparseVector> out;
    out.reserve(vectors.size());
    for (const auto& v : vectors) {
        out.push_back(prune_topk(v, k));
    }
    return out;
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const ProgressFn& progress) {
    auto say = [&](const std::string& msg) {
        if (progress) {
            progress(msg);
        }
    };
    if (config.flops_lambdas.empty() || config.df_flops_lambdas.empty()) {
        throw std::invalid_argument("experiment: both lambda grids must be non-empty");
    }
    const auto data = prepare(config, seed);
    ExperimentResult res;
    res.seed = seed;
    res.vocab_size = data.vocab.size();
    say("prepared collection: |V|=" + std::to_string(data.vocab.size()) +
        ", docs=" + std::to_string(data.counts.size()));

    res.raw_counts.name = "raw-counts";
    res.raw_counts.trained = false;
    evaluate(res.raw_counts, data.counts, data, config);

    std::vector<EncoderParams> params;
    auto run_regime = [&](Regularizer reg, double lambda) {
        RegimeRow row;
        row.regularizer = reg;
        row.peak_lambda = lambda;
        row.name = to_string(reg) + " l=" + lambda_label(lambda);
        auto tc = config.train;
        tc.regularizer = reg;
        tc.peak_lambda = lambda;
        tc.seed = seed;
        const auto start = std::chrono::steady_clock::now();
        auto trained = train(tc, data.counts, data.train, data.vocab.size());
        row.train_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto vectors = encode_all(trained.params, data.counts, config.threads);
        evaluate(row, vectors, data, config);
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "%-22s train %.1fs  val_mrr %.4f  mrr %.4f  matches %.1f  top1 %.1f%%  len %.1f",
                      row.name.c_str(), row.train_seconds, row.val_mrr10, row.mrr10,
                      row.bench.matches_avg, row.bench.top1_df_pct, row.bench.avg_emb_length);
        say(buf);
        res.sweep.push_back(std::move(row));
        params.push_back(std::move(trained.params));
    };

    for (double l : config.flops_lambdas) {
        run_regime(Regularizer::Flops, l);
    }
    for (double l : config.df_flops_lambdas) {
        run_regime(Regularizer::DfFlops, l);
    }

    const auto n_flops = config.flops_lambdas.size();
    res.best_flops = 0;
    for (std::size_t i = 1; i < n_flops; ++i) {
        if (res.sweep[i].val_mrr10 > res.sweep[res.best_flops].val_mrr10) {
            res.best_flops = i;
        }
    }
    const double floor = (1.0 - config.quality_tolerance) * res.sweep[res.best_flops].val_mrr10;
    std::optional<std::size_t> strongest;
    std::size_t best_df = n_flops;
    for (std::size_t i = n_flops; i < res.sweep.size(); ++i) {
        const auto& row = res.sweep[i];
        if (row.val_mrr10 >= floor &&
            (!strongest || row.peak_lambda > res.sweep[*strongest].peak_lambda)) {
            strongest = i;
        }
        if (row.val_mrr10 > res.sweep[best_df].val_mrr10) {
            best_df = i;
        }
    }
    res.chosen_df_flops = strongest.value_or(best_df);

    auto prune_row = [&](std::size_t src, RegimeRow& out) {
        out = RegimeRow{};
        out.regularizer = res.sweep[src].regularizer;
        out.peak_lambda = res.sweep[src].peak_lambda;
        out.prune_k = config.prune_k;
        out.name = res.sweep[src].name + " +prune@" + std::to_string(config.prune_k);
        const auto vectors = encode_all(params[src], data.counts, config.threads);
        evaluate(out, pruned(vectors, config.prune_k), data, config);
    };
    prune_row(res.best_flops, res.best_flops_pruned);
    prune_row(res.chosen_df_flops, res.df_flops_pruned);
    say("selected " + res.flops().name + " vs " + res.df_flops().name);
    return res;
}

std::string format_report(const ExperimentResult& result, std::size_t recall_k) {
    std::ostringstream out;
    char line[512];
    const std::string recall_col = "R@" + std::to_string(recall_k);
    std::snprintf(line, sizeof line, "%-30s %8s %8s %8s %11s %11s %12s %9s %9s\n", "regime",
                  "MRR@10", recall_col.c_str(), "nDCG@10", "lat_avg_ms", "lat_p99_ms",
                  "matches_avg", "top1_df%", "avg_len");
    out << line;
    for (const auto* row : result.report_rows()) {
        std::string name = row->name;
        if (row == &result.flops()) name += " *";
        if (row == &result.df_flops()) name += " *";
        std::snprintf(line, sizeof line,
                      "%-30s %8.4f %8.4f %8.4f %11.4f %11.4f %12.1f %8.1f%% %9.1f\n",
                      name.c_str(), row->mrr10, row->recall, row->ndcg10,
                      row->bench.latency_avg_ms, row->bench.latency_p99_ms,
                      row->bench.matches_avg, row->bench.top1_df_pct, row->bench.avg_emb_length);
        out << line;
    }
    return out.str();
}

std::string format_df_curve_csv(const ExperimentResult& result) {
    std::ostringstream out;
    out << "rank,flops_df_pct,df_flops_df_pct\n";
    const auto& a = result.flops().df_curve;
    const auto& b = result.df_flops().df_curve;
    const auto n = std::max(a.size(), b.size());
    char line[128];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(line, sizeof line, "%zu,%.4f,%.4f\n", i + 1, i < a.size() ? a[i] : 0.0,
                      i < b.size() ? b[i] : 0.0);
        out << line;
    }
    return out.str();
}

} // namespace dfflops
