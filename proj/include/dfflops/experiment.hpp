#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dfflops/encoder.hpp"
#include "dfflops/eval.hpp"
#include "dfflops/synth.hpp"

namespace dfflops {

/// Training recipe used by the comparison. Differs from the TrainConfig defaults: Adam at a
/// small step size, rank 128, and a DF refresh every 5 steps on 512 documents so a
/// 1000-step run sees the penalties move. Dense products run in single precision.
TrainConfig experiment_train_defaults();

/// End-to-end comparison of regularisation regimes on one synthetic collection.
struct ExperimentConfig {
    SynthConfig synth{};
    TrainConfig train = experiment_train_defaults();
    std::size_t min_df = 2;
    std::vector<double> flops_lambdas{1e-3, 1e-1, 1.0};
    std::vector<double> df_flops_lambdas{0.3, 1.0, 3.0};
    std::size_t prune_k = 150;
    std::size_t bench_repeats = 3;
    std::size_t recall_k = 100;
    /// The DF-FLOPS run kept for comparison is the strongest one whose validation MRR@10
    /// stays within this relative distance of the best FLOPS run.
    double quality_tolerance = 0.15;
    std::size_t df_curve_ranks = 100;
    std::size_t threads = 1;

    /// Recognises synth_*, grid and train keys; unknown keys raise std::invalid_argument.
    void apply(const std::map<std::string, std::string>& kv);
};

struct RegimeRow {
    std::string name;
    Regularizer regularizer = Regularizer::Flops;
    double peak_lambda = 0.0;
    std::size_t prune_k = 0; // 0: unpruned
    bool trained = true;     // false for the raw-count baseline
    double val_mrr10 = 0.0;
    double mrr10 = 0.0;
    double recall = 0.0;
    double ndcg10 = 0.0;
    BenchReport bench;
    std::vector<double> df_curve; // DF% by rank, descending
    double train_seconds = 0.0;
};

struct ExperimentResult {
    std::uint64_t seed = 0;
    std::size_t vocab_size = 0;
    std::vector<RegimeRow> sweep;   // every trained configuration, unpruned
    RegimeRow raw_counts;
    std::size_t best_flops = 0;     // index into sweep
    std::size_t chosen_df_flops = 0;
    RegimeRow best_flops_pruned;
    RegimeRow df_flops_pruned;

    /// Rows in report order: raw counts, FLOPS sweep, FLOPS best + prune,
    /// DF-FLOPS sweep, DF-FLOPS chosen + prune.
    [[nodiscard]] std::vector<const RegimeRow*> report_rows() const;
    [[nodiscard]] const RegimeRow& flops() const { return sweep.at(best_flops); }
    [[nodiscard]] const RegimeRow& df_flops() const { return sweep.at(chosen_df_flops); }
    [[nodiscard]] std::vector<const RegimeRow*> flops_sweep() const;
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const ProgressFn& progress = {});

/// Aligned text table with quality and efficiency columns.
std::string format_report(const ExperimentResult& result, std::size_t recall_k);

/// CSV `rank,flops_df_pct,df_flops_df_pct`.
std::string format_df_curve_csv(const ExperimentResult& result);

} // namespace dfflops
