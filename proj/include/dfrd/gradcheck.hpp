#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "dfrd/error.hpp"
#include "dfrd/mlp.hpp"

// Central finite-difference verification of the analytic gradients. Slow by
// design; meant for small models.

namespace dfrd {

// Mean cross-entropy over a labeled batch, forward pass only.
inline double dataset_loss(const MlpModel& model, const LabeledDataset& data) {
    if (data.samples.empty()) throw InvalidInput("dataset_loss: empty dataset");
    MlpScratch scratch;
    scratch.resize(model);
    double sum = 0.0;
    for (const auto& s : data.samples) {
        const ScoreVector& logits = forward_logits(model, s.input, scratch);
        if (s.label.class_id >= logits.size()) throw InvalidInput("dataset_loss: label out of range");
        double mx = 0.0;
        const double lse = log_sum_exp(logits, mx);
        sum -= logits[s.label.class_id] - mx - lse;
    }
    return sum / static_cast<double>(data.samples.size());
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t params_checked = 0;
};

// Compares every analytic partial derivative against (L(w+h) - L(w-h)) / 2h.
// Relative error uses a floored denominator so near-zero gradients do not
// blow the ratio up.
inline GradCheckReport gradient_check(const MlpModel& model, const LabeledDataset& data,
                                      double fd_step = 1e-4) {
    if (!(fd_step > 0.0)) throw InvalidInput("gradient_check: step must be positive");
    const MlpGradients analytic = loss_and_grad(model, data).second;
    MlpModel probe = model;

    GradCheckReport report;
    auto check_param = [&](double& slot, double grad) {
        const double saved = slot;
        slot = saved + fd_step;
        const double up = dataset_loss(probe, data);
        slot = saved - fd_step;
        const double down = dataset_loss(probe, data);
        slot = saved;
        const double numeric = (up - down) / (2.0 * fd_step);
        const double denom = std::max({std::abs(grad), std::abs(numeric), 1e-6});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(grad - numeric) / denom);
        ++report.params_checked;
    };

    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        Layer& layer = probe.layers[l];
        const Layer& g = analytic.layers[l];
        for (std::size_t i = 0; i < layer.w.size(); ++i) check_param(layer.w[i], g.w[i]);
        for (std::size_t i = 0; i < layer.b.size(); ++i) check_param(layer.b[i], g.b[i]);
    }
    return report;
}

}  // namespace dfrd
