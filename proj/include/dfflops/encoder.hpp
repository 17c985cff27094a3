#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dfflops/core.hpp"
#include "dfflops/reg.hpp"

namespace dfflops {

/// Rank-k bilinear sparse encoder:
///   r = log(1 + max(0, U * (Vp^T * x) + b))
/// with x the raw term counts of a document. U and Vp are |V| x k, b has |V| entries.
struct EncoderParams {
    Eigen::MatrixXd U;
    Eigen::MatrixXd Vp;
    Eigen::VectorXd b;

    [[nodiscard]] std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(U.rows()); }
    [[nodiscard]] std::size_t rank() const noexcept { return static_cast<std::size_t>(U.cols()); }

    static EncoderParams zeros(std::size_t vocab_size, std::size_t rank);
    /// U, Vp uniform in [-1/sqrt(k), 1/sqrt(k)], b = 0.
    /// Uniform in [-1/sqrt(k), 1/sqrt(k)]. With `tied`, Vp starts as a copy of U.
    static EncoderParams random(std::size_t vocab_size, std::size_t rank, std::uint64_t seed,
                                bool tied = false);

    void validate() const;
    bool operator==(const EncoderParams& o) const;
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct EncodeTrace {
    Eigen::VectorXd hidden;     // Vp^T x, length k
    Eigen::VectorXd preact;     // U hidden + b, length |V|
};

SparseVector encode(const EncoderParams& params, const SparseVector& counts,
                    EncodeTrace* trace = nullptr);

/// Encodes every document; output order matches input. Results are identical to
/// calling encode() one document at a time, for any thread count.
std::vector<SparseVector> encode_all(const EncoderParams& params,
                                     std::span<const SparseVector> counts,
                                     std::size_t threads = 1);

struct RankLossResult {
    double loss = 0.0;
    /// grad[c] holds d loss / d r[c][t] for every term t of a query that scored document c,
    /// ascending by term.
    std::vector<std::vector<TermGrad>> grad;
};

/// Softmax cross-entropy of each query's positive against its negatives, averaged over
/// queries. Scores are sparse_dot of the binary query with the document representation.
RankLossResult rank_loss(std::span<const QueryTerms> queries, std::span<const SparseVector> docs,
                         std::span<const std::size_t> positives,
                         std::span<const std::vector<std::size_t>> negatives);

enum class Regularizer { Flops, DfFlops, DfFlopsStatic };

std::string to_string(Regularizer r);
Regularizer regularizer_from_string(const std::string& s);

enum class Optimizer { Sgd, Adam };

std::string to_string(Optimizer o);
/// Accepts "sgd" and "adam".
Optimizer optimizer_from_string(const std::string& s);

/// Arithmetic used for the dense products of a training step.
enum class Precision { Double, Single };

std::string to_string(Precision p);
/// Accepts "double" and "single".
Precision precision_from_string(const std::string& s);

struct TrainConfig {
    double learning_rate = 0.05;
    Optimizer optimizer = Optimizer::Sgd;
    /// Rescales the step when the global gradient norm exceeds this value; 0 disables.
    double max_grad_norm = 0.0;
    std::size_t batch_size = 32;       // queries per step
    std::size_t total_steps = 1000;
    double peak_lambda = 1e-3;
    std::size_t warmup_steps = 600;
    std::size_t df_refresh_interval = 100;
    std::size_t df_sample_size = 2048;
    std::size_t hard_negatives = 7;
    std::size_t hard_negative_pool = 50;
    ActivationParams activation{};
    Regularizer regularizer = Regularizer::Flops;
    double epsilon = 0.0;
    std::uint64_t seed = 42;
    std::size_t rank = 64;
    /// Forces every penalty to 1 regardless of DF; DF_FLOPS then follows the FLOPS trajectory.
    bool pin_penalties = false;
    /// Start with Vp = U so U*Vp^T begins near a scaled identity.
    bool tied_init = true;
    Precision precision = Precision::Double;

    void validate() const;
};

struct TrainingQuery {
    std::string id;
    QueryTerms terms;
    std::size_t positive; // index into the corpus
};

/// Documents and queries of one training step. Every query's candidates are its
/// positive plus all other documents of the batch.
struct TrainBatch {
    std::vector<QueryTerms> queries;
    std::vector<SparseVector> docs; // raw counts, unique
    std::vector<std::size_t> positives;
    std::vector<std::vector<std::size_t>> negatives;
};

struct ObjectiveResult {
    double rank_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
    EncoderParams grad;
};

/// rank_loss + lambda * regulariser over the encoded batch, and its exact parameter gradient.
/// Single precision runs the dense products in float; parameters and results stay double.
ObjectiveResult objective(const EncoderParams& params, const TrainBatch& batch, double lambda,
                          const PenaltyWeights& weights, Regularizer reg,
                          Precision precision = Precision::Double);

struct StepRecord {
    std::size_t step;
    double rank_loss;
    double reg_loss;
    double lambda;
    double total;
};

struct DfSnapshot {
    std::size_t step;
    double top1_df_pct;
    double avg_active;
    double mean_penalty;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<DfSnapshot> snapshots;
};

/// First and second moment estimates for Adam; empty until the first Adam step.
struct AdamMoments {
    EncoderParams m;
    EncoderParams v;
};

struct TrainerState {
    EncoderParams params;
    std::size_t step = 0;
    PenaltyWeights weights;
    AdamMoments moments;
};

/// One optimizer step (plain gradient descent or Adam, per config). Throws std::runtime_error when the objective is not finite.
StepRecord train_step(TrainerState& state, const TrainBatch& batch, double lambda,
                      const TrainConfig& config);

/// Penalties for the current step: all ones before the first refresh, afterwards
/// activ(DF / |C|) over the current encodings of the validation sample.
PenaltyWeights refresh_penalties(const TrainerState& state,
                                 std::span<const SparseVector> validation_docs,
                                 const TrainConfig& config);

/// For each query, the `pool` non-relevant documents with the largest raw-count overlap.
std::vector<std::vector<std::size_t>> hard_negative_pools(std::span<const SparseVector> corpus,
                                                          std::span<const TrainingQuery> queries,
                                                          std::size_t vocab_size,
                                                          std::size_t pool);

struct TrainResult {
    EncoderParams params;
    TrainLog log;
};

/// Called after each step; used for progress reporting.
using StepObserver = std::function<void(const StepRecord&)>;

TrainResult train(const TrainConfig& config, std::span<const SparseVector> corpus,
                  std::span<const TrainingQuery> queries, std::size_t vocab_size,
                  const StepObserver& observer = {});

} // namespace dfflops
