#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "earseg/image_io.hpp"
#include "earseg/types.hpp"

namespace earseg {

namespace fs = std::filesystem;

enum class Layout { Drive, Stare, Generic };

inline Layout parse_layout(const std::string& s) {
    if (s == "drive") return Layout::Drive;
    if (s == "stare") return Layout::Stare;
    if (s == "generic") return Layout::Generic;
    throw InputError("unknown layout: " + s + " (expected drive|stare|generic)");
}

struct DatasetManifest {
    std::string root;
    std::string split;
    std::vector<std::string> sample_ids;  // unique, lexicographically sorted
};

namespace detail {

inline bool has_ext(const fs::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    for (const char* x : exts)
        if (e == x) return true;
    return false;
}

inline std::vector<fs::path> list_files(const fs::path& dir, std::initializer_list<const char*> exts) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && (exts.size() == 0 || has_ext(e.path(), exts))) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::string numeric_prefix(const fs::path& p) {
    std::string stem = p.stem().string();
    std::string out;
    for (char c : stem) {
        if (!std::isdigit(static_cast<unsigned char>(c))) break;
        out += c;
    }
    return out;
}

inline void check_sample(const RetinalSample& s) {
    if (s.gt.h != s.image.h || s.gt.w != s.image.w)
        throw InputError("sample " + s.id + ": image " + std::to_string(s.image.h) + "x" + std::to_string(s.image.w) +
                         " and mask " + std::to_string(s.gt.h) + "x" + std::to_string(s.gt.w) + " dimensions differ");
    if (s.fov && (s.fov->h != s.image.h || s.fov->w != s.image.w))
        throw InputError("sample " + s.id + ": FOV dimensions differ from image");
}

}  // namespace detail

// Loads a dataset from a DRIVE/STARE/generic directory layout. Samples come
// back sorted by id; masks are binarized at half their max value.
inline std::vector<RetinalSample> load_dataset(const fs::path& root, Layout layout) {
    if (!fs::is_directory(root)) throw InputError("dataset root not found: " + root.string());
    std::vector<RetinalSample> samples;

    auto by_key = [](const std::vector<fs::path>& files, auto key_fn) {
        std::map<std::string, fs::path> m;
        for (const auto& f : files) {
            std::string k = key_fn(f);
            if (!k.empty()) m.emplace(k, f);
        }
        return m;
    };

    if (layout == Layout::Drive) {
        auto images = detail::list_files(root / "images", {".png", ".tif", ".tiff"});
        auto gts = by_key(detail::list_files(root / "1st_manual", {".png", ".gif"}), detail::numeric_prefix);
        auto fovs = by_key(detail::list_files(root / "mask", {".png", ".gif"}), detail::numeric_prefix);
        for (const auto& img : images) {
            std::string id = detail::numeric_prefix(img);
            if (id.empty()) continue;
            auto git = gts.find(id);
            if (git == gts.end()) throw InputError("sample " + id + ": no matching manual annotation in 1st_manual/");
            RetinalSample s;
            s.id = id;
            s.image = load_image_rgb(img);
            s.gt = load_mask(git->second);
            if (auto fit = fovs.find(id); fit != fovs.end()) s.fov = load_mask(fit->second);
            detail::check_sample(s);
            samples.push_back(std::move(s));
        }
    } else if (layout == Layout::Stare) {
        auto images = detail::list_files(root / "images", {".png", ".ppm"});
        auto stem_key = [](const fs::path& p) { return p.stem().string(); };
        auto gts = by_key(detail::list_files(root / "labels", {".png"}), stem_key);
        auto fovs = by_key(detail::list_files(root / "fov", {".png"}), stem_key);
        for (const auto& img : images) {
            std::string id = img.stem().string();
            auto git = gts.find(id);
            if (git == gts.end()) throw InputError("sample " + id + ": no matching label in labels/");
            RetinalSample s;
            s.id = id;
            s.image = load_image_rgb(img);
            s.gt = load_mask(git->second);
            if (auto fit = fovs.find(id); fit != fovs.end()) s.fov = load_mask(fit->second);
            detail::check_sample(s);
            samples.push_back(std::move(s));
        }
    } else {
        auto images = detail::list_files(root / "images", {});
        auto stem_key = [](const fs::path& p) { return p.stem().string(); };
        auto gts = by_key(detail::list_files(root / "gt", {}), stem_key);
        auto fovs = by_key(detail::list_files(root / "fov", {}), stem_key);
        for (const auto& img : images) {
            std::string id = img.stem().string();
            auto git = gts.find(id);
            if (git == gts.end()) throw InputError("sample " + id + ": no matching mask in gt/");
            RetinalSample s;
            s.id = id;
            s.image = load_image_rgb(img);
            s.gt = load_mask(git->second);
            if (auto fit = fovs.find(id); fit != fovs.end()) s.fov = load_mask(fit->second);
            detail::check_sample(s);
            samples.push_back(std::move(s));
        }
    }

    if (samples.empty()) throw InputError("no samples found under " + root.string());
    std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return samples;
}

// Contiguous k-fold partition over the sorted id list; fold sizes differ by
// at most 1 (earlier folds take the remainder).
inline std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> make_folds(const std::vector<std::string>& sorted_ids, int k) {
    const int n = int(sorted_ids.size());
    if (k < 2) throw InputError("make_folds: k must be >= 2");
    if (k > n) throw InputError("make_folds: k=" + std::to_string(k) + " exceeds sample count " + std::to_string(n));
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> folds;
    int start = 0;
    for (int f = 0; f < k; ++f) {
        int sz = n / k + (f < n % k ? 1 : 0);
        std::vector<std::string> test(sorted_ids.begin() + start, sorted_ids.begin() + start + sz);
        std::vector<std::string> train;
        train.insert(train.end(), sorted_ids.begin(), sorted_ids.begin() + start);
        train.insert(train.end(), sorted_ids.begin() + start + sz, sorted_ids.end());
        folds.emplace_back(std::move(train), std::move(test));
        start += sz;
    }
    return folds;
}

inline std::vector<std::string> ids_of(const std::vector<RetinalSample>& samples) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    return ids;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPlan {
    bool hflip = false;
    bool vflip = false;
    int rot_quarters = 0;  // 0..3 counter-clockwise quarter turns
    bool add_noise = false;
};

inline AugmentPlan draw_augment_plan(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AugmentPlan p;
    p.hflip = u(rng) < 0.5;
    p.vflip = u(rng) < 0.5;
    if (u(rng) < 0.5) p.rot_quarters = std::uniform_int_distribution<int>(1, 3)(rng);
    p.add_noise = u(rng) < 0.5;
    return p;
}

namespace detail {

template <typename F>
void transform_grid(int h, int w, const AugmentPlan& p, int& oh, int& ow, F&& place) {
    // place(sy, sx, dy, dx) copies source pixel (sy,sx) to destination (dy,dx)
    oh = (p.rot_quarters % 2) ? w : h;
    ow = (p.rot_quarters % 2) ? h : w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int ty = y, tx = x;
            if (p.hflip) tx = w - 1 - tx;
            if (p.vflip) ty = h - 1 - ty;
            int dy = ty, dx = tx;
            switch (p.rot_quarters) {
                case 1: dy = w - 1 - tx; dx = ty; break;
                case 2: dy = h - 1 - ty; dx = w - 1 - tx; break;
                case 3: dy = tx; dx = h - 1 - ty; break;
                default: break;
            }
            place(y, x, dy, dx);
        }
}

}  // namespace detail

// Applies a fixed plan; rng is consumed only when the plan adds noise.
inline RetinalSample apply_augment(const RetinalSample& in, const AugmentPlan& p, Rng& rng) {
    int oh = 0, ow = 0;
    RetinalSample out;
    out.id = in.id;
    {
        Tensorf img;
        detail::transform_grid(in.image.h, in.image.w, p, oh, ow, [&](int sy, int sx, int dy, int dx) {
            if (img.size() == 0) img = Tensorf(oh, ow, 3);
            for (int c = 0; c < 3; ++c) img.at(dy, dx, c) = in.image.at(sy, sx, c);
        });
        out.image = std::move(img);
    }
    {
        Mask gt;
        detail::transform_grid(in.gt.h, in.gt.w, p, oh, ow, [&](int sy, int sx, int dy, int dx) {
            if (gt.size() == 0) gt = Mask(oh, ow);
            gt.at(dy, dx) = in.gt.at(sy, sx);
        });
        out.gt = std::move(gt);
    }
    if (in.fov) {
        Mask fov;
        detail::transform_grid(in.fov->h, in.fov->w, p, oh, ow, [&](int sy, int sx, int dy, int dx) {
            if (fov.size() == 0) fov = Mask(oh, ow);
            fov.at(dy, dx) = in.fov->at(sy, sx);
        });
        out.fov = std::move(fov);
    }
    if (p.add_noise) {
        std::normal_distribution<double> noise(0.0, 0.02);
        for (auto& v : out.image.data) v = std::clamp(v + float(noise(rng)), 0.0f, 1.0f);
    }
    return out;
}

// Random flips, quarter-turn rotation and pixel noise, each drawn with
// probability 0.5. Geometry is applied identically to image, gt and fov;
// noise touches the image only.
inline RetinalSample augment(const RetinalSample& in, Rng& rng) {
    return apply_augment(in, draw_augment_plan(rng), rng);
}

// ---------------------------------------------------------------------------
// Synthetic vessel-like dataset (desk-scale stand-in for DRIVE/STARE).

namespace detail {

struct Segment {
    double x0, y0, x1, y1, half_width;
};

inline double point_segment_dist(double px, double py, const Segment& s) {
    double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? std::clamp(((px - s.x0) * dx + (py - s.y0) * dy) / len2, 0.0, 1.0) : 0.0;
    double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::hypot(px - cx, py - cy);
}

}  // namespace detail

// Generates vessel-like samples: 2-4 anti-aliased dark polylines of width
// 2-4 px over a textured light background; gt is the exact raster of the
// polylines. Redraws until the foreground fraction lands in [0.02, 0.20].
inline std::vector<RetinalSample> synth_vessels(int n, int size, Rng& rng) {
    if (n < 0) throw InputError("synth_vessels: n must be >= 0");
    if (n > 0 && size < 16) throw InputError("synth_vessels: size must be >= 16");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<RetinalSample> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        RetinalSample s;
        {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "synth_%03d", i);
            s.id = buf;
        }
        for (int attempt = 0;; ++attempt) {
            std::vector<detail::Segment> segs;
            int n_lines = std::uniform_int_distribution<int>(2, 4)(rng);
            for (int l = 0; l < n_lines; ++l) {
                double width = std::uniform_int_distribution<int>(2, 4)(rng);
                double x = u(rng) * size, y = u(rng) * size;
                double angle = u(rng) * 2.0 * M_PI;
                int n_segs = std::uniform_int_distribution<int>(2, 4)(rng);
                for (int sg = 0; sg < n_segs; ++sg) {
                    double len = size * (0.15 + 0.20 * u(rng));
                    double nx = x + len * std::cos(angle), ny = y + len * std::sin(angle);
                    segs.push_back({x, y, nx, ny, width / 2.0});
                    x = nx;
                    y = ny;
                    angle += (u(rng) - 0.5) * 1.2;  // gentle meander
                }
            }
            Mask gt(size, size);
            Tensorf alpha(size, size, 1);
            for (int py = 0; py < size; ++py)
                for (int px = 0; px < size; ++px) {
                    double best = 1e9;
                    for (const auto& sg : segs) best = std::min(best, detail::point_segment_dist(px + 0.5, py + 0.5, sg));
                    double a = 0.0;
                    for (const auto& sg : segs) {
                        double d = detail::point_segment_dist(px + 0.5, py + 0.5, sg);
                        a = std::max(a, std::clamp(sg.half_width + 0.5 - d, 0.0, 1.0));
                    }
                    alpha.at(py, px, 0) = float(a);
                    // exact raster: pixel center within the stroke half-width
                    bool fg = false;
                    for (const auto& sg : segs)
                        if (detail::point_segment_dist(px + 0.5, py + 0.5, sg) <= sg.half_width) {
                            fg = true;
                            break;
                        }
                    gt.at(py, px) = fg ? 1 : 0;
                    (void)best;
                }
            double frac = double(gt.count()) / double(gt.size());
            if (frac < 0.02 || frac > 0.20) {
                if (attempt > 200) throw StateError("synth_vessels: could not reach target foreground fraction");
                continue;
            }
            // textured light background with a smooth gradient and grain
            double base = 0.65 + 0.2 * u(rng);
            double gx = (u(rng) - 0.5) * 0.3 / size, gy = (u(rng) - 0.5) * 0.3 / size;
            std::normal_distribution<double> grain(0.0, 0.03);
            Tensorf img(size, size, 3);
            for (int py = 0; py < size; ++py)
                for (int px = 0; px < size; ++px) {
                    double bg = base + gx * px + gy * py + grain(rng);
                    double a = alpha.at(py, px, 0);
                    double v = bg * (1.0 - 0.85 * a);  // dark vessel over light ground
                    img.at(py, px, 0) = float(std::clamp(v * 0.9, 0.0, 1.0));
                    img.at(py, px, 1) = float(std::clamp(v, 0.0, 1.0));
                    img.at(py, px, 2) = float(std::clamp(v * 0.8, 0.0, 1.0));
                }
            s.image = std::move(img);
            s.gt = std::move(gt);
            break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace earseg
