#pragma once

#include <cmath>

#include "earseg/types.hpp"

namespace earseg {

struct LossWeights {
    double eta = 1.0;      // cross-entropy term
    double gamma = 0.4;    // auxiliary heatmap term
    double epsilon = 0.5;  // error-attention term
};

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;  // wrt the loss input, same shape
};

// Mean over pixels of 2-class softmax cross-entropy. Reduction is a fixed
// sequential sum in double so runs are reproducible.
template <typename T>
LossResult<T> ce_loss(const SemanticLogits<T>& logits, const Mask& gt) {
    const Tensor<T>& l = logits.data;
    if (l.c != 2 || l.h != gt.h || l.w != gt.w) throw InputError("ce_loss: logits/gt shape mismatch");
    LossResult<T> r;
    r.grad = Tensor<T>(l.h, l.w, 2);
    const double inv_n = 1.0 / (double(l.h) * l.w);
    double total = 0.0;
    for (int y = 0; y < l.h; ++y)
        for (int x = 0; x < l.w; ++x) {
            double a = l.at(y, x, 0), b = l.at(y, x, 1);
            double m = std::max(a, b);
            double ea = std::exp(a - m), eb = std::exp(b - m);
            double z = ea + eb;
            double p0 = ea / z, p1 = eb / z;
            int t = gt.at(y, x) ? 1 : 0;
            total += -(std::log(t ? p1 : p0));
            r.grad.at(y, x, 0) = T((p0 - (t == 0 ? 1.0 : 0.0)) * inv_n);
            r.grad.at(y, x, 1) = T((p1 - (t == 1 ? 1.0 : 0.0)) * inv_n);
        }
    r.value = total * inv_n;
    return r;
}

// Auxiliary deep-supervision loss on the stride-4 head: same cross-entropy,
// computed after the caller upsamples the aux logits to full resolution.
template <typename T>
LossResult<T> hm_loss(const SemanticLogits<T>& aux_logits, const Mask& gt) {
    return ce_loss(aux_logits, gt);
}

// Mean squared difference between the aligned error map and the attention map.
template <typename T>
LossResult<T> ea_loss(const ErrorMap& em, const AttentionMap<T>& am) {
    const Tensor<T>& a = am.data;
    if (a.c != 1 || a.h != em.data.h || a.w != em.data.w) throw InputError("ea_loss: error map / attention map shape mismatch");
    LossResult<T> r;
    r.grad = Tensor<T>(a.h, a.w, 1);
    const double inv_n = 1.0 / (double(a.h) * a.w);
    double total = 0.0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            double d = double(a.at(y, x, 0)) - double(em.data.at(y, x));
            total += d * d;
            r.grad.at(y, x, 0) = T(2.0 * d * inv_n);
        }
    r.value = total * inv_n;
    return r;
}

inline double total_loss(double lce, double lhm, double lea, const LossWeights& w) {
    return w.eta * lce + w.gamma * lhm + w.epsilon * lea;
}

}  // namespace earseg
