#pragma once

#include <cmath>
#include <string>

#include "earseg/layers.hpp"
#include "earseg/types.hpp"

namespace earseg {

// Error-attention subnetwork: two conv3x3-BN-ReLU units followed by a 1x1
// conv and a sigmoid. Attached at the stride-4 feature tap; parameters live
// in the shared store under "eam.*".
template <typename T>
struct Eam {
    int channels = 32;
    Conv2d<T> c1, c2, c3;
    BatchNorm<T> bn1, bn2;

    Tensor<T> z1, z2;      // pre-ReLU activations
    Tensor<T> cached_am;   // sigmoid output

    explicit Eam(int channels_ = 32) : channels(channels_) {
        c1 = {"eam.conv1", 3, channels, channels, 1};
        c2 = {"eam.conv2", 3, channels, channels, 1};
        c3 = {"eam.conv3", 1, channels, 1, 1};
        bn1 = {"eam.bn1", channels};
        bn2 = {"eam.bn2", channels};
    }

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        c1.register_params(ps, rng);
        c2.register_params(ps, rng);
        c3.register_params(ps, rng);
        bn1.register_params(ps, rng);
        bn2.register_params(ps, rng);
    }

    AttentionMap<T> forward(ParamStore<T>& ps, const FeatureMap<T>& fm, bool train) {
        if (fm.data.c != channels)
            throw InputError("eam_forward: feature channels " + std::to_string(fm.data.c) + " != " + std::to_string(channels));
        z1 = bn1.forward(ps, c1.forward(ps, fm.data), train);
        z2 = bn2.forward(ps, c2.forward(ps, relu(z1)), train);
        cached_am = sigmoid(c3.forward(ps, relu(z2)));
        return {cached_am, fm.stride};
    }

    // Returns grad wrt the input feature map.
    Tensor<T> backward(ParamStore<T>& ps, const Tensor<T>& grad_am) {
        Tensor<T> g = c3.backward(ps, sigmoid_backward(grad_am, cached_am));
        g = c1.backward(ps, bn1.backward(ps, relu_backward(c2.backward(ps, bn2.backward(ps, relu_backward(g, z2))), z1)));
        return g;
    }
};

// Logits refinement: l_a = Am * l (broadcast over channels),
// l_final = lambda*l + mu*l_a = (lambda + mu*Am) * l.
template <typename T>
SemanticLogits<T> refine_logits(const SemanticLogits<T>& l, const AttentionMap<T>& am, double lambda, double mu) {
    if (lambda < 0 || mu < 0 || std::abs(lambda + mu - 1.0) > 1e-9)
        throw InputError("refine_logits: lambda and mu must be non-negative with lambda+mu=1");
    if (am.data.h != l.data.h || am.data.w != l.data.w || am.data.c != 1)
        throw InputError("refine_logits: attention map dims must match logits");
    SemanticLogits<T> out;
    out.stride = l.stride;
    out.data = Tensor<T>(l.data.h, l.data.w, l.data.c);
    for (int y = 0; y < l.data.h; ++y)
        for (int x = 0; x < l.data.w; ++x) {
            T s = T(lambda) + T(mu) * am.data.at(y, x, 0);
            for (int ch = 0; ch < l.data.c; ++ch) out.data.at(y, x, ch) = s * l.data.at(y, x, ch);
        }
    return out;
}

template <typename T>
struct RefineGrads {
    Tensor<T> grad_l;   // same shape as l
    Tensor<T> grad_am;  // h x w x 1
};

// Adjoint of refine_logits. detach_attention drops the gradient path into
// the attention map (ablation switch).
template <typename T>
RefineGrads<T> refine_logits_backward(const SemanticLogits<T>& l, const AttentionMap<T>& am, double lambda, double mu,
                                      const Tensor<T>& grad_out, bool detach_attention = false) {
    RefineGrads<T> g;
    g.grad_l = Tensor<T>(l.data.h, l.data.w, l.data.c);
    g.grad_am = Tensor<T>(l.data.h, l.data.w, 1);
    for (int y = 0; y < l.data.h; ++y)
        for (int x = 0; x < l.data.w; ++x) {
            T s = T(lambda) + T(mu) * am.data.at(y, x, 0);
            T ga = T(0);
            for (int ch = 0; ch < l.data.c; ++ch) {
                T go = grad_out.at(y, x, ch);
                g.grad_l.at(y, x, ch) = s * go;
                ga += T(mu) * l.data.at(y, x, ch) * go;
            }
            g.grad_am.at(y, x, 0) = detach_attention ? T(0) : ga;
        }
    return g;
}

}  // namespace earseg
