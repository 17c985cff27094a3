// dfflops: command-line driver for corpus preparation, training, indexing, search,
// evaluation, benchmarking and the FLOPS vs DF-FLOPS comparison experiment.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "dfflops/core.hpp"
#include "dfflops/encoder.hpp"
#include "dfflops/eval.hpp"
#include "dfflops/experiment.hpp"
#include "dfflops/hash.hpp"
#include "dfflops/index.hpp"
#include "dfflops/io.hpp"
#include "dfflops/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace dfflops;

namespace {

constexpr const char* kToolVersion = "dfflops 0.1.0";

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 1;
    fs::path out_dir = ".";
};

/// Failure tagged with the pipeline stage that raised it.
struct StageError : std::runtime_error {
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(what), stage(std::move(stage)) {}
    std::string stage;
};

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

class Manifest {
public:
    Manifest(std::string command, const Globals& g) {
        doc_["tool_version"] = kToolVersion;
        doc_["command"] = std::move(command);
        doc_["threads"] = g.threads;
        doc_["inputs"] = ordered_json::array();
        doc_["outputs"] = ordered_json::array();
    }
    void seed(std::uint64_t s) { doc_["seed"] = s; }
    void config(const std::map<std::string, std::string>& kv) {
        auto& c = doc_["config"] = ordered_json::object();
        for (const auto& [k, v] : kv) {
            c[k] = v;
        }
    }
    void input(const fs::path& p) { doc_["inputs"].push_back(entry(p)); }
    void output(const fs::path& p) { doc_["outputs"].push_back(entry(p)); }
    void write(const fs::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        out << doc_.dump(2) << '\n';
    }

private:
    static ordered_json entry(const fs::path& p) {
        return {{"path", p.string()}, {"fnv1a64", io::file_digest(p)}};
    }
    ordered_json doc_;
};

std::vector<std::string> tokens_of(const std::string& text) { return tokenize(text); }

std::vector<SparseVector> count_vectors(const std::vector<io::Document>& docs,
                                        const Vocabulary& vocab) {
    std::vector<SparseVector> out;
    out.reserve(docs.size());
    for (const auto& d : docs) {
        out.push_back(vectorize_counts(tokens_of(d.text), vocab, d.id));
    }
    return out;
}

std::string require(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) {
        throw std::invalid_argument("config is missing required key '" + key + "'");
    }
    return it->second;
}

fs::path resolve(const fs::path& config_path, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : config_path.parent_path() / path;
}

// ---- synth ---------------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& config_path) {
    SynthConfig sc;
    if (!config_path.empty()) {
        ExperimentConfig ec;
        ec.apply(io::read_key_values(config_path));
        sc = ec.synth;
    }
    if (g.seed_set) {
        sc.seed = g.seed;
    }
    const auto coll = stage("synth", [&] { return generate_collection(sc); });
    fs::create_directories(g.out_dir);
    io::write_corpus(g.out_dir / "corpus.jsonl", coll.docs);
    io::write_queries(g.out_dir / "train_queries.tsv", coll.train);
    io::write_queries(g.out_dir / "validation_queries.tsv", coll.validation);
    io::write_queries(g.out_dir / "test_queries.tsv", coll.test);
    io::write_qrels(g.out_dir / "validation.qrels", SynthCollection::qrels_of(coll.validation));
    io::write_qrels(g.out_dir / "test.qrels", SynthCollection::qrels_of(coll.test));
    std::cout << "wrote " << coll.docs.size() << " docs, " << coll.train.size() << " train / "
              << coll.validation.size() << " validation / " << coll.test.size()
              << " test queries to " << g.out_dir.string() << '\n';
    return 0;
}

// ---- build-vocab ---------------------------------------------------------------------

int cmd_build_vocab(const std::string& corpus_path, std::size_t min_df, const std::string& out) {
    const auto docs = stage("read-corpus", [&] { return io::read_corpus(corpus_path); });
    std::vector<Tokens> tokens;
    tokens.reserve(docs.size());
    for (const auto& d : docs) {
        tokens.push_back(tokenize(d.text));
    }
    const auto vocab = stage("build-vocab", [&] { return build_vocab(tokens, min_df); });
    io::write_vocab(out, vocab);
    std::cerr << "vocabulary: " << vocab.size() << " terms, hash " << hex64(vocab.hash()) << '\n';
    return 0;
}

// ---- train ---------------------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& config_path, bool quiet) {
    const auto kv = stage("config", [&] { return io::read_key_values(config_path); });
    TrainConfig tc;
    stage("config", [&] {
        io::apply_train_config(tc, kv, {"corpus", "queries", "vocab"});
        if (g.seed_set) {
            tc.seed = g.seed;
        }
        tc.validate();
        return 0;
    });
    const auto corpus_path = resolve(config_path, stage("config", [&] { return require(kv, "corpus"); }));
    const auto queries_path = resolve(config_path, stage("config", [&] { return require(kv, "queries"); }));
    const auto vocab_path = resolve(config_path, stage("config", [&] { return require(kv, "vocab"); }));

    const auto docs = stage("read-corpus", [&] { return io::read_corpus(corpus_path); });
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    const auto records = stage("read-queries", [&] { return io::read_queries(queries_path); });
    const auto counts = count_vectors(docs, vocab);

    std::unordered_map<std::string, std::size_t> doc_index;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        doc_index.emplace(docs[i].id, i);
    }
    std::vector<TrainingQuery> queries;
    stage("read-queries", [&] {
        for (const auto& r : records) {
            auto it = doc_index.find(r.positive_doc);
            if (it == doc_index.end()) {
                throw std::invalid_argument("query '" + r.id + "' has unknown positive doc '" +
                                            r.positive_doc + "'");
            }
            queries.push_back({r.id, query_terms(tokenize(r.text), vocab), it->second});
        }
        return 0;
    });

    const auto result = stage("train", [&] {
        return train(tc, counts, queries, vocab.size(), [&](const StepRecord& rec) {
            if (!quiet && (rec.step + 1) % 100 == 0) {
                std::fprintf(stderr, "step %zu rank %.5f reg %.5f lambda %.4g\n", rec.step + 1,
                             rec.rank_loss, rec.reg_loss, rec.lambda);
            }
        });
    });

    fs::create_directories(g.out_dir);
    const auto ckpt = g.out_dir / "checkpoint.bin";
    const auto log_path = g.out_dir / "train_log.jsonl";
    io::write_checkpoint(ckpt, result.params, vocab.hash());
    {
        std::ofstream log(log_path, std::ios::trunc);
        for (const auto& s : result.log.steps) {
            ordered_json j{{"step", s.step},        {"rank_loss", s.rank_loss},
                           {"reg_loss", s.reg_loss}, {"lambda", s.lambda},
                           {"total", s.total}};
            log << j.dump() << '\n';
        }
        for (const auto& s : result.log.snapshots) {
            ordered_json j{{"snapshot_step", s.step},
                           {"top1_df_pct", s.top1_df_pct},
                           {"avg_active", s.avg_active},
                           {"mean_penalty", s.mean_penalty}};
            log << j.dump() << '\n';
        }
    }
    Manifest m("train", g);
    m.seed(tc.seed);
    m.config(kv);
    m.input(config_path);
    m.input(corpus_path);
    m.input(queries_path);
    m.input(vocab_path);
    m.output(ckpt);
    m.output(log_path);
    m.write(g.out_dir / "manifest.json");
    if (!result.log.snapshots.empty()) {
        std::cerr << "final top-1 DF " << result.log.snapshots.back().top1_df_pct << "%\n";
    }
    return 0;
}

// ---- encode --------------------------------------------------------------------------

int cmd_encode(const Globals& g, const std::string& checkpoint, const std::string& corpus_path,
               const std::string& vocab_path, std::size_t prune_k, const std::string& out) {
    const auto ck = stage("read-checkpoint", [&] { return io::read_checkpoint(checkpoint); });
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    if (ck.vocab_hash != vocab.hash() || ck.params.vocab_size() != vocab.size()) {
        throw StageError("encode", "vocabulary hash mismatch: checkpoint " + hex64(ck.vocab_hash) +
                                       ", vocabulary " + hex64(vocab.hash()));
    }
    const auto docs = stage("read-corpus", [&] { return io::read_corpus(corpus_path); });
    auto vectors = encode_all(ck.params, count_vectors(docs, vocab), g.threads);
    if (prune_k > 0) {
        for (auto& v : vectors) {
            v = prune_topk(v, prune_k);
        }
    }
    io::write_vectors(out, vectors, vocab);
    std::cerr << "encoded " << vectors.size() << " docs, avg length "
              << (vectors.empty() ? 0.0 : avg_active_terms(vectors)) << '\n';
    return 0;
}

// ---- index ---------------------------------------------------------------------------

int cmd_index(const std::string& vectors_path, const std::string& vocab_path,
              const std::string& out) {
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    const auto vectors = stage("read-vectors", [&] { return io::read_vectors(vectors_path, vocab); });
    const auto index = stage("index", [&] { return build_index(vectors, vocab.size()); });
    io::write_index(out, index);
    std::cerr << "indexed " << index.doc_count() << " docs, " << index.total_postings()
              << " postings\n";
    return 0;
}

// ---- search --------------------------------------------------------------------------

std::vector<io::QueryRecord> gather_queries(const std::string& file, const std::string& text) {
    if (!text.empty()) {
        return {{"q0", text, {}}};
    }
    return stage("read-queries", [&] { return io::read_queries(file); });
}

int cmd_search(const std::string& index_path, const std::string& vocab_path,
               const std::string& queries_file, const std::string& query_text, std::size_t top_k,
               const std::string& tag) {
    const auto index = stage("read-index", [&] { return io::read_index(index_path); });
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    if (vocab.size() != index.vocab_size()) {
        throw StageError("search", "index and vocabulary disagree on |V|");
    }
    const auto queries = gather_queries(queries_file, query_text);
    SearchScratch scratch;
    std::vector<io::RunLine> lines;
    for (const auto& q : queries) {
        const auto res = search(index, query_terms(tokenize(q.text), vocab), top_k, scratch);
        for (std::size_t r = 0; r < res.hits.size(); ++r) {
            lines.push_back({q.id, index.doc_id(res.hits[r].doc), r + 1, res.hits[r].score});
        }
    }
    io::write_run(std::cout, lines, tag);
    return 0;
}

// ---- eval ----------------------------------------------------------------------------

int cmd_eval(const std::string& run_path, const std::string& qrels_path, std::size_t recall_k) {
    const auto run = stage("read-run", [&] { return io::read_run(run_path); });
    const auto qrels = stage("read-qrels", [&] { return io::read_qrels(qrels_path); });
    std::printf("MRR@10\t%.6f\n", mrr_at_k(run, qrels, 10));
    std::printf("nDCG@10\t%.6f\n", ndcg_at_k(run, qrels, 10));
    std::printf("Recall@%zu\t%.6f\n", recall_k, recall_at_k(run, qrels, recall_k));
    return 0;
}

// ---- bench ---------------------------------------------------------------------------

int cmd_bench(const std::string& index_path, const std::string& vocab_path,
              const std::string& queries_file, std::size_t repeats, std::size_t top_k,
              const std::string& json_out) {
    const auto index = stage("read-index", [&] { return io::read_index(index_path); });
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    const auto records = stage("read-queries", [&] { return io::read_queries(queries_file); });
    std::vector<BenchQuery> queries;
    for (const auto& r : records) {
        queries.push_back({r.id, r.text});
    }
    const auto report = stage("bench", [&] { return bench_latency(index, vocab, queries, repeats, top_k); });
    const std::vector<std::pair<std::string, BenchReport>> rows{{fs::path(index_path).filename().string(), report}};
    std::cout << bench_report_table(rows);
    if (!json_out.empty()) {
        std::ofstream out(json_out, std::ios::trunc);
        out << bench_report_json(report, true) << '\n';
    }
    return 0;
}

// ---- stats ---------------------------------------------------------------------------

int cmd_stats(const std::string& index_path, const std::string& vocab_path, std::size_t top_n) {
    const auto index = stage("read-index", [&] { return io::read_index(index_path); });
    const auto vocab = stage("read-vocab", [&] { return io::read_vocab(vocab_path); });
    std::printf("rank\tterm\tdf\tdf_pct\n");
    std::size_t rank = 0;
    for (const auto& row : df_report(index, top_n)) {
        std::printf("%zu\t%s\t%zu\t%.4f\n", ++rank, vocab.term(row.term).c_str(), row.df,
                    row.df_pct);
    }
    return 0;
}

// ---- compare -------------------------------------------------------------------------

int cmd_compare(const Globals& g, const std::string& config_path, std::vector<std::uint64_t> seeds) {
    ExperimentConfig ec;
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) {
        kv = stage("config", [&] { return io::read_key_values(config_path); });
        auto it = kv.find("seeds");
        if (it != kv.end()) {
            if (seeds.empty()) {
                std::stringstream ss(it->second);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    seeds.push_back(std::stoull(item));
                }
            }
            kv.erase(it);
        }
        stage("config", [&] {
            ec.apply(kv);
            return 0;
        });
    }
    ec.threads = g.threads;
    if (seeds.empty()) {
        seeds.push_back(g.seed_set ? g.seed : 1);
    }
    fs::create_directories(g.out_dir);
    for (auto seed : seeds) {
        const auto res = stage("experiment", [&] {
            return run_experiment(ec, seed, [](const std::string& msg) {
                std::cerr << "  " << msg << '\n';
            });
        });
        const auto report = format_report(res, ec.recall_k);
        std::cout << "== seed " << seed << " (|V|=" << res.vocab_size << ")\n" << report << '\n';
        const auto stem = "seed" + std::to_string(seed);
        std::ofstream(g.out_dir / (stem + "_report.txt"), std::ios::trunc) << report;
        std::ofstream(g.out_dir / (stem + "_df_curve.csv"), std::ios::trunc)
            << format_df_curve_csv(res);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Training frees and reallocates the same multi-megabyte matrices every step. Keeping
    // them off mmap lets the allocator recycle the pages instead of faulting them in again.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Learned sparse retrieval with FLOPS / DF-FLOPS regularisation"};
    app.require_subcommand(1);
    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for encoding")->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

    std::string config_path, corpus, vocab, out, checkpoint, vectors, index, queries, query, run,
        qrels, json_out, tag = "dfflops";
    std::size_t min_df = 2, prune_k = 0, top_k = 10, repeats = 3, top_n = 100, recall_k = 100;
    bool quiet = false;
    std::vector<std::uint64_t> seeds;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic Zipf collection");
    synth->add_option("--config", config_path, "key=value file with synth_* keys");

    auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from a JSONL corpus");
    bv->add_option("--corpus", corpus)->required();
    bv->add_option("--min-df", min_df)->capture_default_str();
    bv->add_option("--out", out)->required();

    auto* tr = app.add_subcommand("train", "Train the sparse encoder");
    tr->add_option("--config", config_path)->required();
    tr->add_flag("--quiet", quiet);

    auto* enc = app.add_subcommand("encode", "Encode a corpus with a checkpoint");
    enc->add_option("--checkpoint", checkpoint)->required();
    enc->add_option("--corpus", corpus)->required();
    enc->add_option("--vocab", vocab)->required();
    enc->add_option("--prune-k", prune_k, "Keep the k largest weights per document (0 = off)");
    enc->add_option("--out", out)->required();

    auto* idx = app.add_subcommand("index", "Build an inverted index from encoded vectors");
    idx->add_option("--vectors", vectors)->required();
    idx->add_option("--vocab", vocab)->required();
    idx->add_option("--out", out)->required();

    auto* se = app.add_subcommand("search", "Search an index; prints a TREC run");
    se->add_option("--index", index)->required();
    se->add_option("--vocab", vocab)->required();
    auto* qf = se->add_option("--queries", queries, "TSV query file");
    se->add_option("--query", query, "Single query text")->excludes(qf);
    se->add_option("--top-k", top_k)->capture_default_str();
    se->add_option("--tag", tag)->capture_default_str();

    auto* ev = app.add_subcommand("eval", "Evaluate a TREC run against qrels");
    ev->add_option("--run", run)->required();
    ev->add_option("--qrels", qrels)->required();
    ev->add_option("--recall-k", recall_k)->capture_default_str();

    auto* be = app.add_subcommand("bench", "Latency benchmark over a query set");
    be->add_option("--index", index)->required();
    be->add_option("--vocab", vocab)->required();
    be->add_option("--queries", queries)->required();
    be->add_option("--repeats", repeats)->capture_default_str();
    be->add_option("--top-k", top_k)->capture_default_str();
    be->add_option("--json", json_out, "Write the report (with raw timings) as JSON");

    auto* st = app.add_subcommand("stats", "Top-N document-frequency table of an index");
    st->add_option("--index", index)->required();
    st->add_option("--vocab", vocab)->required();
    st->add_option("--top-n", top_n)->capture_default_str();

    auto* cmp = app.add_subcommand("compare", "Run the regime comparison experiment");
    cmp->add_option("--config", config_path, "key=value experiment file");
    cmp->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;
    if (se->parsed() && queries.empty() && query.empty()) {
        std::cerr << "dfflops: error: search: one of --queries or --query is required\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(g, config_path);
        if (bv->parsed()) return cmd_build_vocab(corpus, min_df, out);
        if (tr->parsed()) return cmd_train(g, config_path, quiet);
        if (enc->parsed()) return cmd_encode(g, checkpoint, corpus, vocab, prune_k, out);
        if (idx->parsed()) return cmd_index(vectors, vocab, out);
        if (se->parsed()) return cmd_search(index, vocab, queries, query, top_k, tag);
        if (ev->parsed()) return cmd_eval(run, qrels, recall_k);
        if (be->parsed()) return cmd_bench(index, vocab, queries, repeats, top_k, json_out);
        if (st->parsed()) return cmd_stats(index, vocab, top_n);
        if (cmp->parsed()) return cmd_compare(g, config_path, seeds);
    } catch (const StageError& e) {
        std::cerr << "dfflops: error: " << e.stage << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "dfflops: error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
