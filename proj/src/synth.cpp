#include "dfflops/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace dfflops {

void SynthConfig::validate() const {
    if (num_docs < 2) throw std::invalid_argument("synth: num_docs must be >= 2");
    if (vocab_types < 2) throw std::invalid_argument("synth: vocab_types must be >= 2");
    if (min_doc_len < 1 || min_doc_len > max_doc_len)
        throw std::invalid_argument("synth: need 1 <= min_doc_len <= max_doc_len");
    if (min_query_terms < 1 || min_query_terms > max_query_terms)
        throw std::invalid_argument("synth: need 1 <= min_query_terms <= max_query_terms");
    if (!(zipf_exponent > 0.0)) throw std::invalid_argument("synth: zipf_exponent must be > 0");
    if (!(noise_probability >= 0.0 && noise_probability <= 1.0))
        throw std::invalid_argument("synth: noise_probability must lie in [0, 1]");
    if (noise_head < 1 || noise_head > vocab_types)
        throw std::invalid_argument("synth: noise_head must lie in [1, vocab_types]");
}

Qrels SynthCollection::qrels_of(const std::vector<io::QueryRecord>& queries) {
    Qrels q;
    for (const auto& r : queries) {
        q[r.id][r.positive_doc] = 1;
    }
    return q;
}

std::string synth_word(std::size_t rank) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%05zu", rank);
    return buf;
}

SynthCollection generate_collection(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);

    std::vector<double> zipf(config.vocab_types);
    for (std::size_t r = 0; r < zipf.size(); ++r) {
        zipf[r] = 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
    }
    std::discrete_distribution<std::size_t> word_dist(zipf.begin(), zipf.end());
    std::uniform_int_distribution<std::size_t> len_dist(config.min_doc_len, config.max_doc_len);

    SynthCollection out;
    std::vector<std::vector<std::size_t>> doc_types(config.num_docs);
    std::vector<std::size_t> df(config.vocab_types, 0);
    out.docs.reserve(config.num_docs);
    for (std::size_t d = 0; d < config.num_docs; ++d) {
        const auto len = len_dist(rng);
        std::string text;
        std::unordered_set<std::size_t> distinct;
        for (std::size_t i = 0; i < len; ++i) {
            const auto w = word_dist(rng);
            if (i > 0) {
                text.push_back(' ');
            }
            text += synth_word(w);
            distinct.insert(w);
        }
        auto& types = doc_types[d];
        types.assign(distinct.begin(), distinct.end());
        std::sort(types.begin(), types.end());
        for (auto w : types) {
            ++df[w];
        }
        char id[32];
        std::snprintf(id, sizeof id, "d%06zu", d);
        out.docs.push_back({id, std::move(text)});
    }

    const double n_docs = static_cast<double>(config.num_docs);
    auto informative_terms = [&](std::size_t d) {
        std::vector<std::size_t> terms;
        for (auto w : doc_types[d]) {
            if (df[w] >= 2 && static_cast<double>(df[w]) / n_docs <= config.informative_max_df) {
                terms.push_back(w);
            }
        }
        return terms;
    };

    std::uniform_int_distribution<std::size_t> doc_pick(0, config.num_docs - 1);
    std::uniform_int_distribution<std::size_t> qlen_dist(config.min_query_terms,
                                                         config.max_query_terms);
    std::uniform_int_distribution<std::size_t> noise_pick(0, config.noise_head - 1);
    std::bernoulli_distribution add_noise(config.noise_probability);

    auto make_queries = [&](std::size_t count, const char* prefix) {
        std::vector<io::QueryRecord> qs;
        qs.reserve(count);
        std::size_t attempts = 0;
        while (qs.size() < count) {
            if (++attempts > 100 * count + 1000) {
                throw std::runtime_error("synth: too few documents with informative terms");
            }
            const auto d = doc_pick(rng);
            auto terms = informative_terms(d);
            if (terms.size() < config.min_query_terms) {
                continue;
            }
            const auto want = std::min(qlen_dist(rng), terms.size());
            std::vector<std::size_t> chosen;
            std::sample(terms.begin(), terms.end(), std::back_inserter(chosen), want, rng);
            if (add_noise(rng)) {
                chosen.push_back(noise_pick(rng));
            }
            std::shuffle(chosen.begin(), chosen.end(), rng);
            std::string text;
            for (std::size_t i = 0; i < chosen.size(); ++i) {
                if (i > 0) {
                    text.push_back(' ');
                }
                text += synth_word(chosen[i]);
            }
            char id[32];
            std::snprintf(id, sizeof id, "%s%06zu", prefix, qs.size());
            qs.push_back({id, std::move(text), out.docs[d].id});
        }
        return qs;
    };
    out.train = make_queries(config.train_queries, "tr");
    out.validation = make_queries(config.validation_queries, "va");
    out.test = make_queries(config.test_queries, "te");
    return out;
}

} // namespace dfflops
