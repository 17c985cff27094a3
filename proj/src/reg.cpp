#include "dfflops/reg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dfflops {

void ActivationParams::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("activation alpha must lie in (0, 1)");
    }
    if (!(beta > 0.0)) {
        throw std::invalid_argument("activation beta must be positive");
    }
}

double RegResult::grad(TermId term) const noexcept {
    auto it = std::lower_bound(term_grad.begin(), term_grad.end(), term,
                               [](const TermGrad& g, TermId t) { return g.term < t; });
    return (it != term_grad.end() && it->term == term) ? it->value : 0.0;
}

double activ(double x, const ActivationParams& params) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw std::domain_error("activ: x must lie in [0, 1]");
    }
    if (x == 0.0) {
        return 0.0;
    }
    // log_alpha(2) < 0, so x^exponent >= 1 on (0, 1] and the base below is never negative.
    const double exponent = std::log(2.0) / std::log(params.alpha);
    const double base = std::pow(x, exponent) - 1.0;
    if (base <= 0.0) {
        return 1.0;
    }
    return 1.0 / (1.0 + std::pow(base, params.beta));
}

PenaltyWeights penalty_weights(const DfTable& df, const ActivationParams& params) {
    params.validate();
    if (df.sample_size < 1) {
        throw std::invalid_argument("penalty_weights: DF sample size must be >= 1");
    }
    PenaltyWeights out;
    out.w.resize(df.df.size());
    const double n = static_cast<double>(df.sample_size);
    for (std::size_t t = 0; t < df.df.size(); ++t) {
        out.w[t] = activ(static_cast<double>(df.df[t]) / n, params);
    }
    return out;
}

namespace {

// Sum of r[i][t] over the batch for every term that occurs, ascending term order.
// Each column is summed in batch order.
std::vector<Entry> column_sums(std::span<const SparseVector> batch) {
    std::size_t width = 0;
    for (const auto& v : batch) {
        if (!v.empty()) {
            width = std::max<std::size_t>(width, v.max_term() + 1);
        }
    }
    std::vector<double> sums(width, 0.0);
    std::vector<std::uint8_t> seen(width, 0);
    for (const auto& v : batch) {
        for (const auto& e : v.entries()) {
            sums[e.term] += e.weight;
            seen[e.term] = 1;
        }
    }
    std::vector<Entry> out;
    for (std::size_t t = 0; t < width; ++t) {
        if (seen[t]) {
            out.push_back({static_cast<TermId>(t), sums[t]});
        }
    }
    return out;
}

template <typename WeightOf>
RegResult weighted_flops(std::span<const SparseVector> batch, WeightOf weight_of) {
    if (batch.empty()) {
        throw std::invalid_argument("regulariser: empty batch");
    }
    const double n = static_cast<double>(batch.size());
    RegResult res;
    for (const auto& [t, sum] : column_sums(batch)) {
        const double mean = sum / n;
        const double w = weight_of(t);
        const double scaled = w * mean;
        res.loss += scaled * scaled;
        const double g = 2.0 * (w * w) * mean / n;
        if (g != 0.0) {
            res.term_grad.push_back({t, g});
        }
    }
    return res;
}

} // namespace

RegResult flops_loss(std::span<const SparseVector> batch) {
    return weighted_flops(batch, [](TermId) { return 1.0; });
}

RegResult df_flops_loss(std::span<const SparseVector> batch, const PenaltyWeights& weights) {
    return weighted_flops(batch, [&](TermId t) {
        if (t >= weights.size()) {
            throw std::out_of_range("df_flops_loss: term id beyond penalty weights");
        }
        return weights.w[t];
    });
}

double lambda_at(std::size_t step, const LambdaSchedule& schedule) {
    if (schedule.warmup_steps < 1) {
        throw std::invalid_argument("lambda_at: warmup_steps must be >= 1");
    }
    const double ratio =
        static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
    return schedule.peak_lambda * std::min(1.0, ratio * ratio);
}

} // namespace dfflops
