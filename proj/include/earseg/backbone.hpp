#pragma once

#include <string>

#include "earseg/layers.hpp"
#include "earseg/types.hpp"

namespace earseg {

struct BackboneConfig {
    int channels = 32;  // feature width C at the stride-4 tap
};

// Trainable parameter count of the trunk for a given C (convs + BN affine,
// running stats excluded): 54*C^2 + 52*C + 4.
inline std::size_t backbone_param_count(const BackboneConfig& cfg) {
    std::size_t c = std::size_t(cfg.channels);
    return 54 * c * c + 52 * c + 4;
}

template <typename T>
struct BackboneOut {
    FeatureMap<T> feat;          // stride 4, C channels
    SemanticLogits<T> l_s4;      // main logits at the attention stride
    SemanticLogits<T> aux_s4;    // deep-supervision head at stride 4
    SemanticLogits<T> logits_s1; // main logits upsampled to stride 1
};

// Compact encoder-decoder trunk: three stride-2 down blocks
// (conv3x3-BN-ReLU x2), bilinear x2 up with a skip from the stride-4 block,
// 1x1 heads for main and auxiliary logits, bilinear x4 to full resolution.
template <typename T>
struct Backbone {
    BackboneConfig cfg;
    Conv2d<T> d1a, d1b, d2a, d2b, d3a, d3b, uconv, head, aux;
    BatchNorm<T> bn1a, bn1b, bn2a, bn2b, bn3a, bn3b, bnu;

    // forward caches for backward
    Tensor<T> z1a, z1b, z2a, z2b, z3a, z3b, zu;  // pre-ReLU activations
    int in_h = 0, in_w = 0;

    explicit Backbone(const BackboneConfig& cfg_ = {}) : cfg(cfg_) {
        const int C = cfg.channels;
        d1a = {"backbone.d1a", 3, 3, C, 2};
        d1b = {"backbone.d1b", 3, C, C, 1};
        d2a = {"backbone.d2a", 3, C, C, 2};
        d2b = {"backbone.d2b", 3, C, C, 1};
        d3a = {"backbone.d3a", 3, C, C, 2};
        d3b = {"backbone.d3b", 3, C, C, 1};
        uconv = {"backbone.uconv", 3, C, C, 1};
        head = {"backbone.head", 1, C, 2, 1};
        aux = {"backbone.aux", 1, C, 2, 1};
        bn1a = {"backbone.bn1a", C};
        bn1b = {"backbone.bn1b", C};
        bn2a = {"backbone.bn2a", C};
        bn2b = {"backbone.bn2b", C};
        bn3a = {"backbone.bn3a", C};
        bn3b = {"backbone.bn3b", C};
        bnu = {"backbone.bnu", C};
    }

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        for (const Conv2d<T>* cv : {&d1a, &d1b, &d2a, &d2b, &d3a, &d3b, &uconv, &head, &aux}) cv->register_params(ps, rng);
        for (const BatchNorm<T>* bn : {&bn1a, &bn1b, &bn2a, &bn2b, &bn3a, &bn3b, &bnu}) bn->register_params(ps, rng);
    }

    BackboneOut<T> forward(ParamStore<T>& ps, const Tensor<T>& image, bool train) {
        if (image.c != 3) throw InputError("backbone_forward: expected 3-channel image");
        if (image.h % 8 != 0 || image.w % 8 != 0)
            throw InputError("backbone_forward: dims " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                             " must be divisible by 8; pad to " + std::to_string((image.h + 7) / 8 * 8) + "x" +
                             std::to_string((image.w + 7) / 8 * 8));
        in_h = image.h;
        in_w = image.w;

        z1a = bn1a.forward(ps, d1a.forward(ps, image), train);
        z1b = bn1b.forward(ps, d1b.forward(ps, relu(z1a)), train);
        Tensor<T> x1 = relu(z1b);  // stride 2

        z2a = bn2a.forward(ps, d2a.forward(ps, x1), train);
        z2b = bn2b.forward(ps, d2b.forward(ps, relu(z2a)), train);
        Tensor<T> x2 = relu(z2b);  // stride 4

        z3a = bn3a.forward(ps, d3a.forward(ps, x2), train);
        z3b = bn3b.forward(ps, d3b.forward(ps, relu(z3a)), train);
        Tensor<T> x3 = relu(z3b);  // stride 8

        Tensor<T> u = bilinear_resize(x3, x2.h, x2.w);
        for (std::size_t i = 0; i < u.data.size(); ++i) u.data[i] += x2.data[i];  // skip connection
        zu = bnu.forward(ps, uconv.forward(ps, u), train);
        Tensor<T> feat = relu(zu);  // stride 4, C channels

        BackboneOut<T> out;
        out.feat = {feat, 4};
        out.l_s4 = {head.forward(ps, feat), 4};
        out.aux_s4 = {aux.forward(ps, feat), 4};
        out.logits_s1 = {bilinear_resize(out.l_s4.data, image.h, image.w), 1};
        return out;
    }

    // Backward from gradients on the stride-4 heads and an external gradient
    // on the feature tap (from the attention module; may be empty).
    void backward(ParamStore<T>& ps, const Tensor<T>& grad_l_s4, const Tensor<T>& grad_aux_s4, const Tensor<T>& grad_feat_ext) {
        Tensor<T> g_feat = head.backward(ps, grad_l_s4);
        {
            Tensor<T> g = aux.backward(ps, grad_aux_s4);
            for (std::size_t i = 0; i < g_feat.data.size(); ++i) g_feat.data[i] += g.data[i];
        }
        if (grad_feat_ext.size() == g_feat.size())
            for (std::size_t i = 0; i < g_feat.data.size(); ++i) g_feat.data[i] += grad_feat_ext.data[i];

        Tensor<T> g_su = uconv.backward(ps, bnu.backward(ps, relu_backward(g_feat, zu)));
        Tensor<T> g_x2 = g_su;  // skip branch
        Tensor<T> g_x3 = bilinear_resize_backward(g_su, z3b.h, z3b.w);

        {
            Tensor<T> g = d3a.backward(ps, bn3a.backward(ps, relu_backward(d3b.backward(ps, bn3b.backward(ps, relu_backward(g_x3, z3b))), z3a)));
            for (std::size_t i = 0; i < g_x2.data.size(); ++i) g_x2.data[i] += g.data[i];
        }
        Tensor<T> g_x1 = d2a.backward(ps, bn2a.backward(ps, relu_backward(d2b.backward(ps, bn2b.backward(ps, relu_backward(g_x2, z2b))), z2a)));
        d1a.backward(ps, bn1a.backward(ps, relu_backward(d1b.backward(ps, bn1b.backward(ps, relu_backward(g_x1, z1b))), z1a)));
    }

    // Maps a full-resolution logits gradient back to the stride-4 head.
    Tensor<T> grad_s1_to_s4(const Tensor<T>& grad_logits_s1) const {
        return bilinear_resize_backward(grad_logits_s1, in_h / 4, in_w / 4);
    }
};

template <typename T>
ParamStore<T> init_params(std::uint32_t seed, const BackboneConfig& cfg) {
    ParamStore<T> ps;
    Rng rng = make_rng(seed);
    Backbone<T> net(cfg);
    net.register_params(ps, rng);
    return ps;
}

// Two-scale relative-attention fusion: U(l_low * a_low) + (1 - U(a_low)) * l_full,
// with U = 2x bilinear upsampling and * the Hadamard product broadcast over
// channels.
template <typename T>
SemanticLogits<T> scale_attention_fuse(const SemanticLogits<T>& l_low, const SemanticLogits<T>& l_full, const ScaleAttentionMap<T>& a_low) {
    const Tensor<T>& ll = l_low.data;
    const Tensor<T>& lf = l_full.data;
    const Tensor<T>& a = a_low.data;
    if (a.h != ll.h || a.w != ll.w || a.c != 1) throw InputError("scale_attention_fuse: a_low dims must match l_low");
    if (lf.h != 2 * ll.h || lf.w != 2 * ll.w || lf.c != ll.c) throw InputError("scale_attention_fuse: l_full dims must be 2x l_low");

    Tensor<T> weighted(ll.h, ll.w, ll.c);
    for (int y = 0; y < ll.h; ++y)
        for (int x = 0; x < ll.w; ++x)
            for (int ch = 0; ch < ll.c; ++ch) weighted.at(y, x, ch) = ll.at(y, x, ch) * a.at(y, x, 0);

    Tensor<T> up_weighted = bilinear_resize(weighted, lf.h, lf.w);
    Tensor<T> up_a = bilinear_resize(a, lf.h, lf.w);

    SemanticLogits<T> out;
    out.stride = l_full.stride;
    out.data = Tensor<T>(lf.h, lf.w, lf.c);
    for (int y = 0; y < lf.h; ++y)
        for (int x = 0; x < lf.w; ++x)
            for (int ch = 0; ch < lf.c; ++ch)
                out.data.at(y, x, ch) = up_weighted.at(y, x, ch) + (T(1) - up_a.at(y, x, 0)) * lf.at(y, x, ch);
    return out;
}

}  // namespace earseg
