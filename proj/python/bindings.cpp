#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dfflops/core.hpp"
#include "dfflops/encoder.hpp"
#include "dfflops/eval.hpp"
#include "dfflops/experiment.hpp"
#include "dfflops/index.hpp"
#include "dfflops/io.hpp"
#include "dfflops/reg.hpp"
#include "dfflops/synth.hpp"

namespace py = pybind11;
using namespace dfflops;

namespace {

std::vector<Entry> to_entries(const std::vector<std::pair<TermId, double>>& pairs) {
    std::vector<Entry> out;
    out.reserve(pairs.size());
    for (const auto& [t, w] : pairs) out.push_back({t, w});
    return out;
}

std::vector<std::pair<TermId, double>> to_pairs(std::span<const TermGrad> grads) {
    std::vector<std::pair<TermId, double>> out;
    out.reserve(grads.size());
    for (const auto& g : grads) out.emplace_back(g.term, g.value);
    return out;
}

py::dict reg_dict(const RegResult& r) {
    py::dict d;
    d["loss"] = r.loss;
    d["grad"] = to_pairs(r.term_grad);
    return d;
}

py::list hits_list(const SearchResult& r) {
    py::list out;
    for (const auto& h : r.hits) out.append(py::make_tuple(h.doc, h.score));
    return out;
}

} // namespace

PYBIND11_MODULE(_dfflops, m) {
    m.doc() = "Learned sparse retrieval with FLOPS and DF-FLOPS regularisation";
    m.attr("__version__") = "0.1.0";

    py::class_<SparseVector>(m, "SparseVector")
        .def(py::init([](std::string id, const std::vector<std::pair<TermId, double>>& entries) {
                 return SparseVector(std::move(id), to_entries(entries));
             }),
             py::arg("doc_id"), py::arg("entries"))
        .def_static("from_unsorted",
                    [](std::string id, const std::vector<std::pair<TermId, double>>& entries) {
                        return SparseVector::from_unsorted(std::move(id), to_entries(entries));
                    })
        .def_property_readonly("doc_id", &SparseVector::doc_id)
        .def_property_readonly("entries",
                               [](const SparseVector& v) {
                                   std::vector<std::pair<TermId, double>> out;
                                   for (const auto& e : v.entries()) out.emplace_back(e.term, e.weight);
                                   return out;
                               })
        .def("weight", &SparseVector::weight)
        .def("__len__", &SparseVector::size)
        .def(py::self == py::self)
        .def("__repr__", [](const SparseVector& v) {
            return "<SparseVector '" + v.doc_id() + "' nnz=" + std::to_string(v.size()) + ">";
        });

    py::class_<Vocabulary>(m, "Vocabulary")
        .def(py::init<std::vector<std::string>>())
        .def("lookup", &Vocabulary::lookup)
        .def("term", &Vocabulary::term)
        .def_property_readonly("terms", &Vocabulary::terms)
        .def("__len__", &Vocabulary::size)
        .def("__contains__", &Vocabulary::contains);

    m.def("tokenize", &tokenize);
    m.def("build_vocab", [](const std::vector<Tokens>& corpus, std::size_t min_df) {
        return build_vocab(corpus, min_df);
    });
    m.def("vectorize_counts", [](const Tokens& tokens, const Vocabulary& v, std::string id) {
        return vectorize_counts(tokens, v, std::move(id));
    }, py::arg("tokens"), py::arg("vocab"), py::arg("doc_id") = "");
    m.def("query_terms", [](const Tokens& tokens, const Vocabulary& v) { return query_terms(tokens, v); });
    m.def("estimate_df", [](const std::vector<SparseVector>& vs, std::size_t vocab, double eps) {
        return estimate_df(vs, vocab, eps).df;
    }, py::arg("vectors"), py::arg("vocab_size"), py::arg("epsilon") = 0.0);

    py::class_<ActivationParams>(m, "ActivationParams")
        .def(py::init([](double a, double b) { return ActivationParams{a, b}; }), py::arg("alpha") = 0.1,
             py::arg("beta") = 10.0)
        .def_readwrite("alpha", &ActivationParams::alpha)
        .def_readwrite("beta", &ActivationParams::beta);

    m.def("activ", [](double x, double alpha, double beta) { return activ(x, {alpha, beta}); },
          py::arg("x"), py::arg("alpha") = 0.1, py::arg("beta") = 10.0);
    m.def("penalty_weights", [](const std::vector<std::uint32_t>& df, std::uint32_t sample, double alpha,
                                double beta) {
        return penalty_weights(DfTable{df, sample, 0.0}, {alpha, beta}).w;
    }, py::arg("df"), py::arg("sample_size"), py::arg("alpha") = 0.1, py::arg("beta") = 10.0);
    m.def("flops_loss", [](const std::vector<SparseVector>& b) { return reg_dict(flops_loss(b)); });
    m.def("df_flops_loss", [](const std::vector<SparseVector>& b, const std::vector<double>& w) {
        return reg_dict(df_flops_loss(b, PenaltyWeights{w}));
    });
    m.def("lambda_at", [](std::size_t step, double peak, std::size_t warmup) {
        return lambda_at(step, {peak, warmup});
    }, py::arg("step"), py::arg("peak_lambda"), py::arg("warmup_steps"));

    py::class_<EncoderParams>(m, "EncoderParams")
        .def_static("zeros", &EncoderParams::zeros)
        .def_static("random", &EncoderParams::random, py::arg("vocab_size"), py::arg("rank"),
                    py::arg("seed"), py::arg("tied") = false)
        .def_readwrite("U", &EncoderParams::U)
        .def_readwrite("Vp", &EncoderParams::Vp)
        .def_readwrite("b", &EncoderParams::b)
        .def_property_readonly("vocab_size", &EncoderParams::vocab_size)
        .def_property_readonly("rank", &EncoderParams::rank);

    m.def("encode", [](const EncoderParams& p, const SparseVector& x) { return encode(p, x); });
    m.def("encode_all", [](const EncoderParams& p, const std::vector<SparseVector>& xs, std::size_t threads) {
        return encode_all(p, xs, threads);
    }, py::arg("params"), py::arg("counts"), py::arg("threads") = 1);

    py::enum_<Regularizer>(m, "Regularizer")
        .value("FLOPS", Regularizer::Flops)
        .value("DF_FLOPS", Regularizer::DfFlops)
        .value("DF_FLOPS_STATIC", Regularizer::DfFlopsStatic);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def("set", [](TrainConfig& c, const std::map<std::string, std::string>& kv) {
            io::apply_train_config(c, kv);
        }, "Apply key = value settings as accepted in config files.")
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("total_steps", &TrainConfig::total_steps)
        .def_readwrite("peak_lambda", &TrainConfig::peak_lambda)
        .def_readwrite("warmup_steps", &TrainConfig::warmup_steps)
        .def_readwrite("df_refresh_interval", &TrainConfig::df_refresh_interval)
        .def_readwrite("df_sample_size", &TrainConfig::df_sample_size)
        .def_readwrite("regularizer", &TrainConfig::regularizer)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("rank", &TrainConfig::rank);

    py::class_<TrainingQuery>(m, "TrainingQuery")
        .def(py::init([](std::string id, QueryTerms terms, std::size_t pos) {
                 return TrainingQuery{std::move(id), std::move(terms), pos};
             }),
             py::arg("id"), py::arg("terms"), py::arg("positive"));

    m.def("train", [](const TrainConfig& c, const std::vector<SparseVector>& corpus,
                      const std::vector<TrainingQuery>& queries, std::size_t vocab) {
        py::gil_scoped_release release;
        auto r = train(c, corpus, queries, vocab);
        std::vector<double> rank, reg;
        for (const auto& s : r.log.steps) {
            rank.push_back(s.rank_loss);
            reg.push_back(s.reg_loss);
        }
        return std::make_tuple(std::move(r.params), rank, reg);
    }, "Returns (params, rank_losses, reg_losses).");

    py::class_<InvertedIndex>(m, "InvertedIndex")
        .def_property_readonly("doc_count", &InvertedIndex::doc_count)
        .def_property_readonly("vocab_size", &InvertedIndex::vocab_size)
        .def_property_readonly("total_postings", &InvertedIndex::total_postings)
        .def("doc_id", &InvertedIndex::doc_id);

    m.def("build_index", [](const std::vector<SparseVector>& docs, std::size_t vocab) {
        return build_index(docs, vocab);
    });
    m.def("prune_topk", &prune_topk);
    m.def("match_count", [](const InvertedIndex& idx, const QueryTerms& q) { return match_count(idx, q); });
    m.def("search", [](const InvertedIndex& idx, const QueryTerms& q, std::size_t k) {
        return hits_list(search(idx, q, k));
    }, "List of (doc number, score), best first.");
    m.def("brute_force_search", [](const std::vector<SparseVector>& docs, const QueryTerms& q, std::size_t k) {
        return hits_list(brute_force_search(docs, q, k));
    });
    m.def("df_report", [](const InvertedIndex& idx, std::size_t n) {
        py::list out;
        for (const auto& r : df_report(idx, n)) out.append(py::make_tuple(r.term, r.df, r.df_pct));
        return out;
    });

    m.def("mrr_at_k", &mrr_at_k);
    m.def("recall_at_k", &recall_at_k);
    m.def("ndcg_at_k", &ndcg_at_k);
    m.def("percentile_nearest_rank", &percentile_nearest_rank);

    m.def("write_index", [](const std::filesystem::path& p, const InvertedIndex& idx) { io::write_index(p, idx); });
    m.def("read_index", [](const std::filesystem::path& p) { return io::read_index(p); });
    m.def("file_digest", &io::file_digest);

    py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);
}
