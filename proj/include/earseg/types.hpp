#pragma once

#include <optional>
#include <string>

#include "earseg/tensor.hpp"

namespace earseg {

// Per-pixel 2-class scores (channel 0 background, channel 1 vessel) at a
// given stride relative to the input image.
template <typename T>
struct SemanticLogits {
    Tensor<T> data;  // h x w x 2
    int stride = 1;
};

template <typename T>
struct FeatureMap {
    Tensor<T> data;  // h x w x C
    int stride = 4;
};

// Single-channel map in [0,1] emitted by the error-attention subnetwork.
template <typename T>
struct AttentionMap {
    Tensor<T> data;  // h x w x 1
    int stride = 4;
};

// Single-channel scale-attention map in [0,1] for two-scale logits fusion.
template <typename T>
struct ScaleAttentionMap {
    Tensor<T> data;  // h x w x 1
};

enum class ErrorMapResolution { Full, Aligned };

// Binary map of stage-1 false negatives (1 where GT=1 and prediction=0).
struct ErrorMap {
    Mask data;
    ErrorMapResolution resolution = ErrorMapResolution::Full;
};

// Binary segmentation prediction at full resolution.
struct PredictedMask {
    Mask data;
};

struct RetinalSample {
    std::string id;
    Tensorf image;             // H x W x 3 in [0,1]
    Mask gt;                   // H x W in {0,1}
    std::optional<Mask> fov;   // H x W in {0,1}
};

}  // namespace earseg
