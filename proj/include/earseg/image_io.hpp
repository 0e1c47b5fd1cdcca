#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "earseg/tensor.hpp"

namespace earseg {

// RGB image scaled to [0,1]. Grayscale files are replicated across channels.
inline Tensorf load_image_rgb(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw InputError("failed to decode image: " + path.string());
    Tensorf out(img.rows, img.cols, 3);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
            out.at(y, x, 0) = bgr[2] / 255.0f;
            out.at(y, x, 1) = bgr[1] / 255.0f;
            out.at(y, x, 2) = bgr[0] / 255.0f;
        }
    return out;
}

// Binary mask, thresholded at half of the file's max value so 8-bit
// anti-aliased ground truth still binarizes cleanly.
inline Mask load_mask(const std::filesystem::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw InputError("failed to decode mask: " + path.string());
    double minv = 0, maxv = 0;
    cv::minMaxLoc(img, &minv, &maxv);
    const double thr = maxv > 0 ? 0.5 * maxv : 0.5;
    Mask m(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) m.at(y, x) = img.at<std::uint8_t>(y, x) >= thr ? 1 : 0;
    return m;
}

inline void save_mask_png(const std::filesystem::path& path, const Mask& m) {
    cv::Mat img(m.h, m.w, CV_8UC1);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) img.at<std::uint8_t>(y, x) = m.at(y, x) ? 255 : 0;
    if (!cv::imwrite(path.string(), img)) throw InputError("failed to write " + path.string());
}

inline void save_rgb_png(const std::filesystem::path& path, const Tensorf& t) {
    cv::Mat img(t.h, t.w, CV_8UC3);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x) {
            auto q = [&](int ch) { return std::uint8_t(std::clamp(t.at(y, x, ch), 0.0f, 1.0f) * 255.0f + 0.5f); };
            img.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
        }
    if (!cv::imwrite(path.string(), img)) throw InputError("failed to write " + path.string());
}

}  // namespace earseg
