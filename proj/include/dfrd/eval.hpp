#pragma once

#include <cstddef>

#include "dfrd/error.hpp"
#include "dfrd/mlp.hpp"

namespace dfrd {

// Fraction of samples whose rank-1 prediction equals the label. argmax over
// logits equals the rank-1 index of the softmax (both break ties toward the
// lower index), so the softmax itself is skipped.
inline double top1_accuracy(const MlpModel& model, const LabeledDataset& test) {
    if (test.samples.empty()) throw InvalidInput("top1_accuracy: empty test set");
    MlpScratch scratch;
    scratch.resize(model);
    std::size_t hits = 0;
    for (const auto& s : test.samples) {
        if (argmax_label(model, s.input, scratch) == s.label.class_id) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test.samples.size());
}

}  // namespace dfrd
