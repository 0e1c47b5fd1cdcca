#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "earseg/common.hpp"

namespace earseg {

// Dense H x W x C tensor, row-major with channels innermost.
template <typename T>
struct Tensor {
    int h = 0, w = 0, c = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int h_, int w_, int c_, T fill = T(0)) : h(h_), w(w_), c(c_), data(std::size_t(h_) * w_ * c_, fill) {}

    T& at(int y, int x, int ch) { return data[(std::size_t(y) * w + x) * c + ch]; }
    const T& at(int y, int x, int ch) const { return data[(std::size_t(y) * w + x) * c + ch]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(h, w, c);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Binary H x W mask stored as uint8 {0,1}.
struct Mask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int h_, int w_, std::uint8_t fill = 0) : h(h_), w(w_), data(std::size_t(h_) * w_, fill) {}

    std::uint8_t& at(int y, int x) { return data[std::size_t(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return data[std::size_t(y) * w + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Mask& o) const { return h == o.h && w == o.w; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

// Bilinear resize, align_corners=false. Works for up- and downscaling.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& in, int oh, int ow) {
    Tensor<T> out(oh, ow, in.c);
    const double sy = double(in.h) / oh;
    const double sx = double(in.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, in.h - 1);
        int y1c = std::clamp(y0 + 1, 0, in.h - 1);
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, in.w - 1);
            int x1c = std::clamp(x0 + 1, 0, in.w - 1);
            for (int ch = 0; ch < in.c; ++ch) {
                double v00 = in.at(y0c, x0c, ch), v01 = in.at(y0c, x1c, ch);
                double v10 = in.at(y1c, x0c, ch), v11 = in.at(y1c, x1c, ch);
                double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                out.at(y, x, ch) = T(v);
            }
        }
    }
    return out;
}

// Adjoint of bilinear_resize: scatters output-space gradients back to input space.
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, int ih, int iw) {
    Tensor<T> grad_in(ih, iw, grad_out.c);
    const double sy = double(ih) / grad_out.h;
    const double sx = double(iw) / grad_out.w;
    for (int y = 0; y < grad_out.h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = int(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, ih - 1);
        int y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int x = 0; x < grad_out.w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = int(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, iw - 1);
            int x1c = std::clamp(x0 + 1, 0, iw - 1);
            for (int ch = 0; ch < grad_out.c; ++ch) {
                T g = grad_out.at(y, x, ch);
                grad_in.at(y0c, x0c, ch) += T((1 - wy) * (1 - wx)) * g;
                grad_in.at(y0c, x1c, ch) += T((1 - wy) * wx) * g;
                grad_in.at(y1c, x0c, ch) += T(wy * (1 - wx)) * g;
                grad_in.at(y1c, x1c, ch) += T(wy * wx) * g;
            }
        }
    }
    return grad_in;
}

}  // namespace earseg
