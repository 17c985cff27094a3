#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dfflops/core.hpp"

namespace dfflops {

/// Shape of the document-frequency penalty curve.
///   alpha: DF ratio at which the penalty reaches one half; ratios above it are penalised hard.
///   beta:  steepness of the transition around alpha.
struct ActivationParams {
    double alpha = 0.1;
    double beta = 10.0;

    /// Throws std::invalid_argument unless 0 < alpha < 1 and beta > 0.
    void validate() const;
};

/// Per-term multiplier in [0, 1] applied inside the squared batch mean.
struct PenaltyWeights {
    std::vector<double> w;

    static PenaltyWeights ones(std::size_t vocab_size) { return {std::vector<double>(vocab_size, 1.0)}; }
    [[nodiscard]] std::size_t size() const noexcept { return w.size(); }
};

/// Loss and gradient of a batch regulariser.
///
/// Both regularisers have a gradient that does not depend on which vector of the batch
/// is differentiated: d loss / d r[j][t] = coeff[t] for every j. Only terms with a
/// nonzero batch mean are stored; every other partial derivative is zero.
struct RegResult {
    double loss = 0.0;
    std::vector<TermGrad> term_grad;

    /// d loss / d r[vector][term]; identical for every vector in the batch.
    [[nodiscard]] double grad(TermId term) const noexcept;
};

/// 1 / (1 + (x^(log_alpha 2) - 1)^beta), with activ(0) = 0. Requires 0 <= x <= 1.
double activ(double x, const ActivationParams& params);

PenaltyWeights penalty_weights(const DfTable& df, const ActivationParams& params);

RegResult flops_loss(std::span<const SparseVector> batch);
RegResult df_flops_loss(std::span<const SparseVector> batch, const PenaltyWeights& weights);

struct LambdaSchedule {
    double peak_lambda = 0.0;
    std::size_t warmup_steps = 1;
};

/// Quadratic warmup: peak * min(1, (step / warmup)^2).
double lambda_at(std::size_t step, const LambdaSchedule& schedule);

} // namespace dfflops
