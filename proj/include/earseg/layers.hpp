#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "earseg/tensor.hpp"

namespace earseg {

// Flat named parameter store. Every trainable tensor, BN running stat and
// optimizer momentum buffer lives here, keyed by name, so checkpointing and
// SGD are uniform over the whole network. std::map keeps iteration order
// stable for byte-identical serialization.
template <typename T>
struct ParamStore {
    struct Entry {
        std::vector<int> shape;
        std::vector<T> value;
        std::vector<T> grad;      // empty for non-trainable entries
        std::vector<T> momentum;  // lazily sized by the optimizer
        bool trainable = true;
    };

    std::map<std::string, Entry> entries;

    Entry& add(const std::string& name, std::vector<int> shape, bool trainable = true) {
        std::size_t n = 1;
        for (int d : shape) n *= std::size_t(d);
        Entry e;
        e.shape = std::move(shape);
        e.value.assign(n, T(0));
        if (trainable) e.grad.assign(n, T(0));
        e.trainable = trainable;
        return entries.emplace(name, std::move(e)).first->second;
    }

    Entry& get(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw StateError("missing parameter: " + name);
        return it->second;
    }
    const Entry& get(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw StateError("missing parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [k, e] : entries)
            std::fill(e.grad.begin(), e.grad.end(), T(0));
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (auto& [k, e] : entries)
            if (e.trainable) n += e.value.size();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (auto& [k, e] : entries) {
            typename ParamStore<U>::Entry ne;
            ne.shape = e.shape;
            ne.trainable = e.trainable;
            ne.value.assign(e.value.begin(), e.value.end());
            if (e.trainable) ne.grad.assign(e.value.size(), U(0));
            out.entries.emplace(k, std::move(ne));
        }
        return out;
    }
};

// He fan-in init for a conv kernel laid out [kh][kw][cin][cout].
template <typename T>
void he_init(std::vector<T>& w, int kh, int kw, int cin, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (kh * kw * cin)));
    for (auto& v : w) v = T(dist(rng));
}

// 2D convolution, square kernel, replicate padding = (k-1)/2, configurable
// stride. Replicate (edge-clamp) padding keeps constant inputs constant
// through the whole trunk. Weight layout [ky][kx][cin][cout]; bias [cout].
template <typename T>
struct Conv2d {
    std::string name;
    int k = 3, cin = 0, cout = 0, stride = 1;
    Tensor<T> cached_in;  // kept by forward for the backward pass

    Conv2d() = default;
    Conv2d(std::string name_, int k_, int cin_, int cout_, int stride_) : name(std::move(name_)), k(k_), cin(cin_), cout(cout_), stride(stride_) {}

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        auto& w = ps.add(name + ".w", {k, k, cin, cout});
        he_init(w.value, k, k, cin, rng);
        ps.add(name + ".b", {cout});
    }

    Tensor<T> forward(ParamStore<T>& ps, const Tensor<T>& in) {
        if (in.c != cin) throw InputError(name + ": channel mismatch, got " + std::to_string(in.c) + " expected " + std::to_string(cin));
        cached_in = in;
        const auto& w = ps.get(name + ".w").value;
        const auto& b = ps.get(name + ".b").value;
        const int pad = (k - 1) / 2;
        const int oh = (in.h + 2 * pad - k) / stride + 1;
        const int ow = (in.w + 2 * pad - k) / stride + 1;
        Tensor<T> out(oh, ow, cout);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T* o = &out.at(oy, ox, 0);
                for (int ch = 0; ch < cout; ++ch) o[ch] = b[ch];
                for (int ky = 0; ky < k; ++ky) {
                    int iy = std::clamp(oy * stride - pad + ky, 0, in.h - 1);
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = std::clamp(ox * stride - pad + kx, 0, in.w - 1);
                        const T* iv = &in.at(iy, ix, 0);
                        const T* wv = &w[((std::size_t(ky) * k + kx) * cin) * cout];
                        for (int ci = 0; ci < cin; ++ci) {
                            T x = iv[ci];
                            const T* wr = wv + std::size_t(ci) * cout;
                            for (int ch = 0; ch < cout; ++ch) o[ch] += x * wr[ch];
                        }
                    }
                }
            }
        }
        return out;
    }

    // Accumulates weight/bias grads into the store, returns grad wrt input.
    Tensor<T> backward(ParamStore<T>& ps, const Tensor<T>& grad_out) {
        const Tensor<T>& in = cached_in;
        const auto& w = ps.get(name + ".w").value;
        auto& gw = ps.get(name + ".w").grad;
        auto& gb = ps.get(name + ".b").grad;
        const int pad = (k - 1) / 2;
        Tensor<T> grad_in(in.h, in.w, cin);
        for (int oy = 0; oy < grad_out.h; ++oy) {
            for (int ox = 0; ox < grad_out.w; ++ox) {
                const T* go = &grad_out.at(oy, ox, 0);
                for (int ch = 0; ch < cout; ++ch) gb[ch] += go[ch];
                for (int ky = 0; ky < k; ++ky) {
                    int iy = std::clamp(oy * stride - pad + ky, 0, in.h - 1);
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = std::clamp(ox * stride - pad + kx, 0, in.w - 1);
                        const T* iv = &in.at(iy, ix, 0);
                        T* gi = &grad_in.at(iy, ix, 0);
                        std::size_t base = (std::size_t(ky) * k + kx) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const T* wr = &w[base + std::size_t(ci) * cout];
                            T* gwr = &gw[base + std::size_t(ci) * cout];
                            T x = iv[ci];
                            T acc = T(0);
                            for (int ch = 0; ch < cout; ++ch) {
                                acc += wr[ch] * go[ch];
                                gwr[ch] += x * go[ch];
                            }
                            gi[ci] += acc;
                        }
                    }
                }
            }
        }
        return grad_in;
    }
};

// Per-channel batch normalization over the spatial extent. Train mode uses
// batch statistics and updates running stats (momentum 0.1); eval mode uses
// the running stats.
template <typename T>
struct BatchNorm {
    std::string name;
    int c = 0;
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    // backward cache
    Tensor<T> cached_xhat;
    std::vector<double> cached_invstd;

    BatchNorm() = default;
    BatchNorm(std::string name_, int c_) : name(std::move(name_)), c(c_) {}

    void register_params(ParamStore<T>& ps, Rng&) const {
        auto& g = ps.add(name + ".gamma", {c});
        std::fill(g.value.begin(), g.value.end(), T(1));
        ps.add(name + ".beta", {c});
        ps.add(name + ".running_mean", {c}, /*trainable=*/false);
        auto& rv = ps.add(name + ".running_var", {c}, /*trainable=*/false);
        std::fill(rv.value.begin(), rv.value.end(), T(1));
    }

    Tensor<T> forward(ParamStore<T>& ps, const Tensor<T>& in, bool train) {
        const auto& gamma = ps.get(name + ".gamma").value;
        const auto& beta = ps.get(name + ".beta").value;
        auto& rmean = ps.get(name + ".running_mean").value;
        auto& rvar = ps.get(name + ".running_var").value;
        const std::size_t n = std::size_t(in.h) * in.w;
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        if (train) {
            for (std::size_t i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) mean[ch] += in.data[i * c + ch];
            for (int ch = 0; ch < c; ++ch) mean[ch] /= double(n);
            for (std::size_t i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    double d = in.data[i * c + ch] - mean[ch];
                    var[ch] += d * d;
                }
            for (int ch = 0; ch < c; ++ch) var[ch] /= double(n);
            for (int ch = 0; ch < c; ++ch) {
                rmean[ch] = T((1.0 - kMomentum) * rmean[ch] + kMomentum * mean[ch]);
                rvar[ch] = T((1.0 - kMomentum) * rvar[ch] + kMomentum * var[ch]);
            }
        } else {
            for (int ch = 0; ch < c; ++ch) {
                mean[ch] = rmean[ch];
                var[ch] = rvar[ch];
            }
        }
        Tensor<T> out(in.h, in.w, c);
        cached_xhat = Tensor<T>(in.h, in.w, c);
        cached_invstd.assign(c, 0.0);
        for (int ch = 0; ch < c; ++ch) cached_invstd[ch] = 1.0 / std::sqrt(var[ch] + kEps);
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                T xh = T((in.data[i * c + ch] - mean[ch]) * cached_invstd[ch]);
                cached_xhat.data[i * c + ch] = xh;
                out.data[i * c + ch] = gamma[ch] * xh + beta[ch];
            }
        return out;
    }

    // Backward for train-mode statistics (the only mode that backprops).
    Tensor<T> backward(ParamStore<T>& ps, const Tensor<T>& grad_out) {
        const auto& gamma = ps.get(name + ".gamma").value;
        auto& ggamma = ps.get(name + ".gamma").grad;
        auto& gbeta = ps.get(name + ".beta").grad;
        const std::size_t n = std::size_t(grad_out.h) * grad_out.w;
        std::vector<double> sum_gy(c, 0.0), sum_gy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                double gy = grad_out.data[i * c + ch];
                sum_gy[ch] += gy;
                sum_gy_xhat[ch] += gy * cached_xhat.data[i * c + ch];
            }
        for (int ch = 0; ch < c; ++ch) {
            ggamma[ch] += T(sum_gy_xhat[ch]);
            gbeta[ch] += T(sum_gy[ch]);
        }
        Tensor<T> grad_in(grad_out.h, grad_out.w, c);
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                double gy = grad_out.data[i * c + ch];
                double xh = cached_xhat.data[i * c + ch];
                double gi = gamma[ch] * cached_invstd[ch] * (gy - sum_gy[ch] / double(n) - xh * sum_gy_xhat[ch] / double(n));
                grad_in.data[i * c + ch] = T(gi);
            }
        return grad_in;
    }
};

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
    Tensor<T> out = in;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& fwd_in) {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (fwd_in.data[i] <= T(0)) g.data[i] = T(0);
    return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& in) {
    Tensor<T> out = in;
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& fwd_out) {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= fwd_out.data[i] * (T(1) - fwd_out.data[i]);
    return g;
}

// One SGD+momentum step over all trainable entries: m = mom*m + g; v -= lr*m.
template <typename T>
void sgd_step(ParamStore<T>& ps, double lr, double momentum) {
    for (auto& [k, e] : ps.entries) {
        if (!e.trainable) continue;
        if (e.momentum.size() != e.value.size()) e.momentum.assign(e.value.size(), T(0));
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            e.momentum[i] = T(momentum) * e.momentum[i] + e.grad[i];
            e.value[i] -= T(lr) * e.momentum[i];
        }
    }
}

}  // namespace earseg
