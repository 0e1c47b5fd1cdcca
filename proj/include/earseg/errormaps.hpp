#pragma once

#include <string>

#include "earseg/types.hpp"

namespace earseg {

// Per-pixel argmax over the two channels; tie goes to background.
template <typename T>
PredictedMask binarize(const SemanticLogits<T>& logits) {
    if (logits.data.c != 2) throw InputError("binarize: expected 2-channel logits");
    PredictedMask m;
    m.data = Mask(logits.data.h, logits.data.w);
    for (int y = 0; y < logits.data.h; ++y)
        for (int x = 0; x < logits.data.w; ++x)
            m.data.at(y, x) = logits.data.at(y, x, 1) > logits.data.at(y, x, 0) ? 1 : 0;
    return m;
}

// Em = 1 where gt > m1 (stage-1 false negative), 0 elsewhere.
inline ErrorMap generate_error_map(const Mask& gt, const PredictedMask& m1) {
    if (!gt.same_shape(m1.data))
        throw InputError("generate_error_map: shape mismatch " + std::to_string(gt.h) + "x" + std::to_string(gt.w) + " vs " +
                         std::to_string(m1.data.h) + "x" + std::to_string(m1.data.w));
    ErrorMap em;
    em.resolution = ErrorMapResolution::Full;
    em.data = Mask(gt.h, gt.w);
    for (std::size_t i = 0; i < gt.size(); ++i) em.data.data[i] = gt.data[i] > m1.data.data[i] ? 1 : 0;
    return em;
}

// Max-pool with window = stride. A false-negative pixel anywhere in the
// window marks the whole aligned cell; mean-pooling would wash sparse
// errors out.
inline ErrorMap align_error_map(const ErrorMap& em, int stride) {
    if (stride < 1 || em.data.h % stride != 0 || em.data.w % stride != 0)
        throw InputError("align_error_map: dims " + std::to_string(em.data.h) + "x" + std::to_string(em.data.w) +
                         " not divisible by stride " + std::to_string(stride));
    ErrorMap out;
    out.resolution = ErrorMapResolution::Aligned;
    out.data = Mask(em.data.h / stride, em.data.w / stride);
    for (int y = 0; y < em.data.h; ++y)
        for (int x = 0; x < em.data.w; ++x)
            if (em.data.at(y, x)) out.data.at(y / stride, x / stride) = 1;
    return out;
}

}  // namespace earseg
