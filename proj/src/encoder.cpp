#include "dfflops/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "dfflops/index.hpp"

namespace dfflops {

EncoderParams EncoderParams::zeros(std::size_t vocab_size, std::size_t rank) {
    EncoderParams p;
    const auto v = static_cast<Eigen::Index>(vocab_size);
    const auto k = static_cast<Eigen::Index>(rank);
    p.U = Eigen::MatrixXd::Zero(v, k);
    p.Vp = Eigen::MatrixXd::Zero(v, k);
    p.b = Eigen::VectorXd::Zero(v);
    return p;
}

EncoderParams EncoderParams::random(std::size_t vocab_size, std::size_t rank, std::uint64_t seed,
                                    bool tied) {
    if (rank < 1) {
        throw std::invalid_argument("encoder rank must be >= 1");
    }
    auto p = zeros(vocab_size, rank);
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rank));
    std::uniform_real_distribution<double> dist(-bound, bound);
    // Row-major fill order keeps the draw sequence independent of Eigen's storage order.
    for (Eigen::Index i = 0; i < p.U.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.U.cols(); ++j) {
            p.U(i, j) = dist(rng);
        }
    }
    if (tied) {
        p.Vp = p.U;
        return p;
    }
    for (Eigen::Index i = 0; i < p.Vp.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.Vp.cols(); ++j) {
            p.Vp(i, j) = dist(rng);
        }
    }
    return p;
}

void EncoderParams::validate() const {
    if (U.cols() < 1) {
        throw std::invalid_argument("encoder rank must be >= 1");
    }
    if (U.rows() != Vp.rows() || U.cols() != Vp.cols() || b.size() != U.rows()) {
        throw std::invalid_argument("encoder parameter shapes disagree");
    }
    if (!U.allFinite() || !Vp.allFinite() || !b.allFinite()) {
        throw std::invalid_argument("encoder parameters must be finite");
    }
}

bool EncoderParams::operator==(const EncoderParams& o) const {
    return U.rows() == o.U.rows() && U.cols() == o.U.cols() && U == o.U && Vp == o.Vp &&
           b == o.b;
}

namespace {

constexpr std::size_t kEncodeBlock = 64;

// Fills hidden (k x n) and preact (|V| x n) for a run of documents with one GEMM.
void encode_block(const EncoderParams& params, std::span<const SparseVector> docs,
                  Eigen::MatrixXd& hidden, Eigen::MatrixXd& preact) {
    const auto n = static_cast<Eigen::Index>(docs.size());
    hidden.setZero(params.U.cols(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
        for (const auto& e : docs[c].entries()) {
            if (e.term >= params.vocab_size()) {
                throw std::out_of_range("encode: term id beyond encoder vocabulary");
            }
            hidden.col(c).noalias() += e.weight * params.Vp.row(e.term).transpose();
        }
    }
    preact = params.b.replicate(1, n);
    preact.noalias() += params.U * hidden;
}

// log(1 + max(0, a)), elementwise. Written as log of a sum so Eigen can vectorise it.
Eigen::MatrixXd saturate_dense(const Eigen::MatrixXd& preact) {
    return (preact.array().max(0.0) + 1.0).log().matrix();
}

SparseVector sparsify(const std::string& doc_id, const Eigen::Ref<const Eigen::VectorXd>& r) {
    std::vector<Entry> out;
    for (Eigen::Index t = 0; t < r.size(); ++t) {
        if (r[t] > 0.0) {
            out.push_back({static_cast<TermId>(t), r[t]});
        }
    }
    return SparseVector(doc_id, std::move(out));
}

void encode_range(const EncoderParams& params, std::span<const SparseVector> counts,
                  std::span<SparseVector> out) {
    Eigen::MatrixXd hidden, preact;
    for (std::size_t lo = 0; lo < counts.size(); lo += kEncodeBlock) {
        const auto n = std::min(kEncodeBlock, counts.size() - lo);
        encode_block(params, counts.subspan(lo, n), hidden, preact);
        const auto r = saturate_dense(preact);
        for (std::size_t i = 0; i < n; ++i) {
            out[lo + i] = sparsify(counts[lo + i].doc_id(), r.col(static_cast<Eigen::Index>(i)));
        }
    }
}

} // namespace

SparseVector encode(const EncoderParams& params, const SparseVector& counts, EncodeTrace* trace) {
    Eigen::MatrixXd hidden, preact;
    encode_block(params, std::span(&counts, 1), hidden, preact);
    auto out = sparsify(counts.doc_id(), saturate_dense(preact).col(0));
    if (trace != nullptr) {
        trace->hidden = hidden.col(0);
        trace->preact = preact.col(0);
    }
    return out;
}

std::vector<SparseVector> encode_all(const EncoderParams& params,
                                     std::span<const SparseVector> counts, std::size_t threads) {
    std::vector<SparseVector> out(counts.size());
    const std::size_t blocks = (counts.size() + kEncodeBlock - 1) / kEncodeBlock;
    threads = std::max<std::size_t>(1, std::min(threads, blocks));
    if (threads == 1) {
        encode_range(params, counts, out);
        return out;
    }
    // Work is split on block boundaries so results do not depend on the thread count.
    std::vector<std::jthread> workers;
    const std::size_t per = (blocks + threads - 1) / threads * kEncodeBlock;
    for (std::size_t lo = 0; lo < counts.size(); lo += per) {
        const auto n = std::min(per, counts.size() - lo);
        workers.emplace_back([&, lo, n] {
            encode_range(params, counts.subspan(lo, n), std::span(out).subspan(lo, n));
        });
    }
    return out;
}

RankLossResult rank_loss(std::span<const QueryTerms> queries, std::span<const SparseVector> docs,
                         std::span<const std::size_t> positives,
                         std::span<const std::vector<std::size_t>> negatives) {
    if (queries.size() != positives.size() || queries.size() != negatives.size()) {
        throw std::invalid_argument("rank_loss: queries, positives and negatives disagree in size");
    }
    if (queries.empty()) {
        throw std::invalid_argument("rank_loss: no queries");
    }
    // Per-document (term, grad) contributions in query order; merged after the loop.
    std::vector<std::vector<TermGrad>> acc(docs.size());
    RankLossResult res;
    const double inv_q = 1.0 / static_cast<double>(queries.size());
    std::vector<std::size_t> cands;
    std::vector<double> scores;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto pos = positives[q];
        if (pos >= docs.size()) {
            throw std::invalid_argument("rank_loss: query " + std::to_string(q) +
                                        " has no positive document in the batch");
        }
        cands.assign(1, pos);
        for (auto n : negatives[q]) {
            if (n >= docs.size()) {
                throw std::out_of_range("rank_loss: negative index out of range");
            }
            if (n == pos) {
                throw std::invalid_argument("rank_loss: positive listed among negatives");
            }
            cands.push_back(n);
        }
        scores.resize(cands.size());
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cands.size(); ++c) {
            scores[c] = sparse_dot(queries[q], docs[cands[c]]);
            best = std::max(best, scores[c]);
        }
        double z = 0.0;
        for (double s : scores) {
            z += std::exp(s - best);
        }
        const double lse = best + std::log(z);
        res.loss += (lse - scores[0]) * inv_q;
        for (std::size_t c = 0; c < cands.size(); ++c) {
            const double p = std::exp(scores[c] - lse);
            const double g = (p - (c == 0 ? 1.0 : 0.0)) * inv_q;
            auto& slot = acc[cands[c]];
            for (TermId t : queries[q]) {
                slot.push_back({t, g});
            }
        }
    }
    res.grad.resize(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        auto& parts = acc[d];
        std::stable_sort(parts.begin(), parts.end(),
                         [](const TermGrad& a, const TermGrad& b) { return a.term < b.term; });
        auto& g = res.grad[d];
        for (const auto& x : parts) {
            if (!g.empty() && g.back().term == x.term) {
                g.back().value += x.value;
            } else {
                g.push_back(x);
            }
        }
    }
    return res;
}

std::string to_string(Regularizer r) {
    switch (r) {
    case Regularizer::Flops: return "flops";
    case Regularizer::DfFlops: return "df_flops";
    case Regularizer::DfFlopsStatic: return "df_flops_static";
    }
    return "unknown";
}

Regularizer regularizer_from_string(const std::string& s) {
    if (s == "flops") return Regularizer::Flops;
    if (s == "df_flops") return Regularizer::DfFlops;
    if (s == "df_flops_static") return Regularizer::DfFlopsStatic;
    throw std::invalid_argument("unknown regularizer '" + s + "'");
}

std::string to_string(Optimizer o) {
    return o == Optimizer::Adam ? "adam" : "sgd";
}

Optimizer optimizer_from_string(const std::string& s) {
    if (s == "sgd") return Optimizer::Sgd;
    if (s == "adam") return Optimizer::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
    if (batch_size < 2) {
        throw std::invalid_argument("batch_size must be >= 2");
    }
    if (warmup_steps < 1 || warmup_steps > std::max<std::size_t>(total_steps, 1)) {
        throw std::invalid_argument("warmup_steps must lie in [1, total_steps]");
    }
    if (df_refresh_interval < 1) {
        throw std::invalid_argument("df_refresh_interval must be >= 1");
    }
    if (df_sample_size < 1) {
        throw std::invalid_argument("df_sample_size must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be finite and >= 0");
    }
    if (!(peak_lambda >= 0.0) || !std::isfinite(peak_lambda)) {
        throw std::invalid_argument("peak_lambda must be finite and >= 0");
    }
    if (!(max_grad_norm >= 0.0) || !std::isfinite(max_grad_norm)) {
        throw std::invalid_argument("max_grad_norm must be finite and >= 0");
    }
    if (!(epsilon >= 0.0)) {
        throw std::invalid_argument("epsilon must be >= 0");
    }
    if (rank < 1) {
        throw std::invalid_argument("rank must be >= 1");
    }
    if (hard_negative_pool < hard_negatives) {
        throw std::invalid_argument("hard_negative_pool must be >= hard_negatives");
    }
    activation.validate();
}

namespace {

template <typename S>
ObjectiveResult objective_impl(const EncoderParams& params, const TrainBatch& batch, double lambda,
                               const PenaltyWeights& weights, Regularizer reg) {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    const auto n_docs = static_cast<Eigen::Index>(batch.docs.size());
    const auto vocab = params.U.rows();
    const auto k = params.U.cols();
    if (n_docs == 0) {
        throw std::invalid_argument("objective: empty batch");
    }
    if (batch.queries.size() != batch.positives.size() ||
        batch.queries.size() != batch.negatives.size() || batch.queries.empty()) {
        throw std::invalid_argument("objective: queries, positives and negatives disagree in size");
    }
    if (reg != Regularizer::Flops && weights.size() != static_cast<std::size_t>(vocab)) {
        throw std::invalid_argument("objective: penalty weights do not cover the vocabulary");
    }

    Eigen::MatrixXd hidden_d(k, n_docs);
    hidden_d.setZero();
    for (Eigen::Index c = 0; c < n_docs; ++c) {
        for (const auto& e : batch.docs[c].entries()) {
            if (e.term >= params.vocab_size()) {
                throw std::out_of_range("objective: term id beyond encoder vocabulary");
            }
            hidden_d.col(c).noalias() += e.weight * params.Vp.row(e.term).transpose();
        }
    }
    const Mat U = params.U.template cast<S>();
    const Mat hidden = hidden_d.template cast<S>();
    Mat preact = params.b.template cast<S>().replicate(1, n_docs);
    preact.noalias() += U * hidden;
    const Mat r = (preact.array().max(S(0)) + S(1)).log().matrix();

    // Rank loss on the dense representation: a query scores a document by summing its terms.
    Mat gr = Mat::Zero(vocab, n_docs);
    const double inv_q = 1.0 / static_cast<double>(batch.queries.size());
    double rank = 0.0;
    std::vector<std::size_t> cands;
    std::vector<double> scores;
    for (std::size_t q = 0; q < batch.queries.size(); ++q) {
        const auto pos = batch.positives[q];
        if (pos >= batch.docs.size()) {
            throw std::invalid_argument("objective: query " + std::to_string(q) +
                                        " has no positive document in the batch");
        }
        cands.assign(1, pos);
        for (auto n : batch.negatives[q]) {
            if (n >= batch.docs.size() || n == pos) {
                throw std::invalid_argument("objective: bad negative index");
            }
            cands.push_back(n);
        }
        scores.assign(cands.size(), 0.0);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cands.size(); ++c) {
            for (TermId t : batch.queries[q]) {
                scores[c] += static_cast<double>(r(t, static_cast<Eigen::Index>(cands[c])));
            }
            best = std::max(best, scores[c]);
        }
        double z = 0.0;
        for (double x : scores) {
            z += std::exp(x - best);
        }
        const double lse = best + std::log(z);
        rank += (lse - scores[0]) * inv_q;
        for (std::size_t c = 0; c < cands.size(); ++c) {
            const double g = (std::exp(scores[c] - lse) - (c == 0 ? 1.0 : 0.0)) * inv_q;
            for (TermId t : batch.queries[q]) {
                gr(t, static_cast<Eigen::Index>(cands[c])) += static_cast<S>(g);
            }
        }
    }

    // Regulariser on the per-term batch mean; FLOPS is the unit-weight case.
    const Eigen::VectorXd mean =
        r.rowwise().sum().template cast<double>() / static_cast<double>(n_docs);
    double reg_loss = 0.0;
    Vec coeff(vocab);
    for (Eigen::Index t = 0; t < vocab; ++t) {
        const double w = reg == Regularizer::Flops ? 1.0 : weights.w[static_cast<std::size_t>(t)];
        const double m = w * mean[t];
        reg_loss += m * m;
        coeff[t] = static_cast<S>(lambda * 2.0 * w * m / static_cast<double>(n_docs));
    }

    // d total / d preact: upstream gradient times d log(1 + a) / da on the active side.
    Mat& gpre = gr;
    for (Eigen::Index c = 0; c < n_docs; ++c) {
        S* g = gpre.col(c).data();
        const S* a = preact.col(c).data();
        for (Eigen::Index t = 0; t < vocab; ++t) {
            g[t] = a[t] > S(0) ? (g[t] + coeff[t]) / (a[t] + S(1)) : S(0);
        }
    }

    ObjectiveResult out;
    out.rank_loss = rank;
    out.reg_loss = reg_loss;
    out.total = rank + lambda * reg_loss;
    out.grad.U = (gpre * hidden.transpose()).template cast<double>();
    out.grad.b = gpre.rowwise().sum().template cast<double>();
    const Eigen::MatrixXd ghidden = (U.transpose() * gpre).template cast<double>();
    out.grad.Vp = Eigen::MatrixXd::Zero(vocab, k);
    for (Eigen::Index c = 0; c < n_docs; ++c) {
        for (const auto& e : batch.docs[c].entries()) {
            out.grad.Vp.row(e.term).noalias() += e.weight * ghidden.col(c).transpose();
        }
    }
    return out;
}

} // namespace

ObjectiveResult objective(const EncoderParams& params, const TrainBatch& batch, double lambda,
                          const PenaltyWeights& weights, Regularizer reg, Precision precision) {
    return precision == Precision::Single
               ? objective_impl<float>(params, batch, lambda, weights, reg)
               : objective_impl<double>(params, batch, lambda, weights, reg);
}

std::string to_string(Precision p) {
    return p == Precision::Single ? "single" : "double";
}

Precision precision_from_string(const std::string& s) {
    if (s == "single") return Precision::Single;
    if (s == "double") return Precision::Double;
    throw std::invalid_argument("unknown precision '" + s + "'");
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

template <typename M>
void adam_apply(M& param, M& m, M& v, const M& g, double lr, double c1, double c2) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
}

void adam_update(TrainerState& state, const EncoderParams& grad, double lr) {
    auto& mom = state.moments;
    if (mom.m.U.size() != state.params.U.size()) {
        mom.m = EncoderParams::zeros(state.params.vocab_size(), state.params.rank());
        mom.v = mom.m;
    }
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    adam_apply(state.params.U, mom.m.U, mom.v.U, grad.U, lr, c1, c2);
    adam_apply(state.params.Vp, mom.m.Vp, mom.v.Vp, grad.Vp, lr, c1, c2);
    adam_apply(state.params.b, mom.m.b, mom.v.b, grad.b, lr, c1, c2);
}

} // namespace

StepRecord train_step(TrainerState& state, const TrainBatch& batch, double lambda,
                      const TrainConfig& config) {
    auto obj = objective(state.params, batch, lambda, state.weights, config.regularizer,
                         config.precision);
    if (!std::isfinite(obj.total) || !obj.grad.U.allFinite() || !obj.grad.Vp.allFinite() ||
        !obj.grad.b.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite objective at step " << state.step << " (rank=" << obj.rank_loss
            << ", reg=" << obj.reg_loss << ", lambda=" << lambda << ")";
        throw std::runtime_error(msg.str());
    }
    double lr = config.learning_rate;
    if (config.max_grad_norm > 0.0) {
        const double norm = std::sqrt(obj.grad.U.squaredNorm() + obj.grad.Vp.squaredNorm() +
                                      obj.grad.b.squaredNorm());
        if (norm > config.max_grad_norm) {
            lr *= config.max_grad_norm / norm;
        }
    }
    if (config.optimizer == Optimizer::Sgd) {
        state.params.U -= lr * obj.grad.U;
        state.params.Vp -= lr * obj.grad.Vp;
        state.params.b -= lr * obj.grad.b;
    } else {
        adam_update(state, obj.grad, lr);
    }
    StepRecord rec{state.step, obj.rank_loss, obj.reg_loss, lambda, obj.total};
    ++state.step;
    return rec;
}

namespace {

struct DfProbe {
    DfTable df;
    double avg_active = 0.0;
};

DfProbe probe_df(const EncoderParams& params, std::span<const SparseVector> docs, double epsilon) {
    const auto encoded = encode_all(params, docs);
    return {estimate_df(encoded, params.vocab_size(), epsilon), avg_active_terms(encoded)};
}

double top1_pct(const DfTable& df) {
    const auto top = df.df.empty() ? 0U : *std::max_element(df.df.begin(), df.df.end());
    return 100.0 * static_cast<double>(top) / static_cast<double>(df.sample_size);
}

double mean_of(const PenaltyWeights& w) {
    if (w.w.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : w.w) {
        s += x;
    }
    return s / static_cast<double>(w.w.size());
}

} // namespace

PenaltyWeights refresh_penalties(const TrainerState& state,
                                 std::span<const SparseVector> validation_docs,
                                 const TrainConfig& config) {
    if (validation_docs.empty()) {
        throw std::invalid_argument("refresh_penalties: empty validation sample");
    }
    if (state.step % config.df_refresh_interval != 0) {
        throw std::logic_error("refresh_penalties: step is not on the refresh cadence");
    }
    const auto vocab = state.params.vocab_size();
    if (state.step == 0 || config.pin_penalties) {
        return PenaltyWeights::ones(vocab);
    }
    const auto probe = probe_df(state.params, validation_docs, config.epsilon);
    return penalty_weights(probe.df, config.activation);
}

std::vector<std::vector<std::size_t>> hard_negative_pools(std::span<const SparseVector> corpus,
                                                          std::span<const TrainingQuery> queries,
                                                          std::size_t vocab_size,
                                                          std::size_t pool) {
    std::vector<SparseVector> named;
    named.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        named.emplace_back(std::to_string(i),
                           std::vector<Entry>(corpus[i].entries().begin(), corpus[i].entries().end()));
    }
    const auto index = build_index(named, vocab_size);
    std::vector<std::vector<std::size_t>> out(queries.size());
    SearchScratch scratch;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto res = search(index, queries[q].terms, pool + 1, scratch);
        for (const auto& h : res.hits) {
            if (h.doc != queries[q].positive && out[q].size() < pool) {
                out[q].push_back(h.doc);
            }
        }
    }
    return out;
}

namespace {

class BatchSampler {
public:
    BatchSampler(std::span<const SparseVector> corpus, std::span<const TrainingQuery> queries,
                 std::vector<std::vector<std::size_t>> pools, const TrainConfig& config,
                 std::mt19937_64& rng)
        : corpus_(corpus), queries_(queries), pools_(std::move(pools)), config_(config),
          rng_(rng), order_(queries.size()) {
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = i;
        }
        cursor_ = order_.size();
    }

    TrainBatch next() {
        TrainBatch batch;
        std::unordered_map<std::size_t, std::size_t> slot;
        auto add_doc = [&](std::size_t corpus_idx) {
            auto [it, fresh] = slot.emplace(corpus_idx, batch.docs.size());
            if (fresh) {
                batch.docs.push_back(corpus_[corpus_idx]);
            }
            return it->second;
        };
        const auto n = std::min(config_.batch_size, queries_.size());
        std::vector<std::size_t> picked;
        for (std::size_t i = 0; i < n; ++i) {
            if (cursor_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                cursor_ = 0;
            }
            picked.push_back(order_[cursor_++]);
        }
        for (auto qi : picked) {
            const auto& q = queries_[qi];
            batch.queries.push_back(q.terms);
            batch.positives.push_back(add_doc(q.positive));
            std::vector<std::size_t> hard;
            std::sample(pools_[qi].begin(), pools_[qi].end(), std::back_inserter(hard),
                        config_.hard_negatives, rng_);
            for (auto h : hard) {
                add_doc(h);
            }
        }
        for (auto pos : batch.positives) {
            std::vector<std::size_t> neg;
            neg.reserve(batch.docs.size() - 1);
            for (std::size_t d = 0; d < batch.docs.size(); ++d) {
                if (d != pos) {
                    neg.push_back(d);
                }
            }
            batch.negatives.push_back(std::move(neg));
        }
        return batch;
    }

private:
    std::span<const SparseVector> corpus_;
    std::span<const TrainingQuery> queries_;
    std::vector<std::vector<std::size_t>> pools_;
    const TrainConfig& config_;
    std::mt19937_64& rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

} // namespace

TrainResult train(const TrainConfig& config, std::span<const SparseVector> corpus,
                  std::span<const TrainingQuery> queries, std::size_t vocab_size,
                  const StepObserver& observer) {
    config.validate();
    if (corpus.empty()) {
        throw std::invalid_argument("train: empty corpus");
    }
    for (const auto& q : queries) {
        if (q.positive >= corpus.size()) {
            throw std::invalid_argument("train: query '" + q.id + "' has no positive document");
        }
    }
    TrainerState state{EncoderParams::random(vocab_size, config.rank, config.seed, config.tied_init), 0,
                       PenaltyWeights::ones(vocab_size), {}};
    TrainResult result;
    if (config.total_steps == 0 || queries.empty()) {
        result.params = std::move(state.params);
        return result;
    }

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> sample_idx;
    {
        std::vector<std::size_t> all(corpus.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = i;
        }
        std::sample(all.begin(), all.end(), std::back_inserter(sample_idx),
                    std::min(config.df_sample_size, corpus.size()), rng);
    }
    std::vector<SparseVector> validation;
    validation.reserve(sample_idx.size());
    for (auto i : sample_idx) {
        validation.push_back(corpus[i]);
    }

    if (config.regularizer == Regularizer::DfFlopsStatic && !config.pin_penalties) {
        state.weights = penalty_weights(estimate_df(validation, vocab_size, config.epsilon),
                                        config.activation);
    }

    BatchSampler sampler(corpus, queries,
                         hard_negative_pools(corpus, queries, vocab_size, config.hard_negative_pool),
                         config, rng);
    const LambdaSchedule schedule{config.peak_lambda, config.warmup_steps};

    auto snapshot = [&](std::size_t step) {
        const auto probe = probe_df(state.params, validation, config.epsilon);
        if (config.regularizer == Regularizer::DfFlops && step % config.df_refresh_interval == 0 &&
            step < config.total_steps) {
            state.weights = (step == 0 || config.pin_penalties)
                                ? PenaltyWeights::ones(vocab_size)
                                : penalty_weights(probe.df, config.activation);
        }
        result.log.snapshots.push_back(
            {step, top1_pct(probe.df), probe.avg_active, mean_of(state.weights)});
    };

    result.log.steps.reserve(config.total_steps);
    for (std::size_t s = 0; s < config.total_steps; ++s) {
        if (s % config.df_refresh_interval == 0) {
            snapshot(s);
        }
        const auto batch = sampler.next();
        const auto rec = train_step(state, batch, lambda_at(s, schedule), config);
        result.log.steps.push_back(rec);
        if (observer) {
            observer(rec);
        }
    }
    snapshot(config.total_steps);
    result.params = std::move(state.params);
    return result;
}

} // namespace dfflops
