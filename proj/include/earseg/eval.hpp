#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "earseg/trainer.hpp"

#include "json.hpp"

namespace earseg {

struct ConfusionCounts {
    long long tp = 0, tn = 0, fp = 0, fn = 0;
    long long total() const { return tp + tn + fp + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

// Counts restricted to fov=1 pixels when a FOV mask is given.
inline ConfusionCounts confusion(const PredictedMask& pred, const Mask& gt, const Mask* fov = nullptr) {
    if (!pred.data.same_shape(gt) || (fov && !fov->same_shape(gt))) throw InputError("confusion: shape mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (fov && !fov->data[i]) continue;
        bool p = pred.data.data[i], g = gt.data[i];
        if (p && g)
            ++c.tp;
        else if (!p && !g)
            ++c.tn;
        else if (p)
            ++c.fp;
        else
            ++c.fn;
    }
    return c;
}

struct MetricsEntry {
    std::string id;
    ConfusionCounts counts;
    double acc = 0, se = 0, sp = 0, miou = 0;
    bool degenerate = false;  // some denominator was empty and defaulted to 1
};

// ACC=(TP+TN)/all, SE=TP/(TP+FN), SP=TN/(TN+FP),
// mIoU = mean of foreground and background IoU. An empty denominator means
// the metric is vacuously perfect; it is set to 1 and flagged.
inline MetricsEntry metrics(const ConfusionCounts& c, std::string id = {}) {
    if (c.total() <= 0) throw InputError("metrics: no evaluated pixels");
    MetricsEntry m;
    m.id = std::move(id);
    m.counts = c;
    auto ratio = [&m](long long num, long long den) {
        if (den == 0) {
            m.degenerate = true;
            return 1.0;
        }
        return double(num) / double(den);
    };
    m.acc = double(c.tp + c.tn) / double(c.total());
    m.se = ratio(c.tp, c.tp + c.fn);
    m.sp = ratio(c.tn, c.tn + c.fp);
    m.miou = 0.5 * (ratio(c.tp, c.tp + c.fp + c.fn) + ratio(c.tn, c.tn + c.fp + c.fn));
    return m;
}

struct MetricsReport {
    std::vector<MetricsEntry> per_image;
    MetricsEntry aggregate;  // micro: metrics over summed counts
    bool fov_restricted = false;
    bool fused = false;
};

// Eval-mode inference for one image; fuse applies the trained attention
// module and the logits refinement before upsampling.
inline PredictedMask predict_mask(Backbone<float>& net, Eam<float>* eam, ParamStore<float>& ps, const RetinalSample& s,
                                  bool fuse, double lambda, double mu) {
    auto out = net.forward(ps, s.image, /*train=*/false);
    if (!fuse) return binarize(out.logits_s1);
    AttentionMap<float> am = eam->forward(ps, out.feat, /*train=*/false);
    SemanticLogits<float> l_final = refine_logits(out.l_s4, am, lambda, mu);
    SemanticLogits<float> s1{bilinear_resize(l_final.data, s.image.h, s.image.w), 1};
    return binarize(s1);
}

inline MetricsReport evaluate(const Checkpoint& ck, const std::vector<RetinalSample>& data, bool fuse, const TrainConfig& cfg,
                              bool use_fov = true) {
    if (data.empty()) throw InputError("evaluate: no samples");
    if (fuse && !ck.has_eam()) throw InputError("evaluate: checkpoint has no EAM weights but fuse was requested");
    ParamStore<float> ps = ck.params;
    Backbone<float> net(cfg.backbone);
    std::optional<Eam<float>> eam;
    if (fuse) eam.emplace(cfg.backbone.channels);

    MetricsReport rep;
    rep.fov_restricted = use_fov;
    rep.fused = fuse;
    ConfusionCounts total;
    for (const auto& s : data) {
        PredictedMask m = predict_mask(net, fuse ? &*eam : nullptr, ps, s, fuse, cfg.lambda, cfg.mu);
        const Mask* fov = (use_fov && s.fov) ? &*s.fov : nullptr;
        ConfusionCounts c = confusion(m, s.gt, fov);
        rep.per_image.push_back(metrics(c, s.id));
        total += c;
    }
    rep.aggregate = metrics(total, "aggregate");
    return rep;
}

// TP green, FP red, FN blue, TN keeps the source pixel.
inline Tensorf render_overlay(const Tensorf& image, const PredictedMask& pred, const Mask& gt) {
    if (image.h != gt.h || image.w != gt.w || !pred.data.same_shape(gt)) throw InputError("render_overlay: shape mismatch");
    Tensorf out = image;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            bool p = pred.data.at(y, x), g = gt.at(y, x);
            float r = 0, gr = 0, b = 0;
            if (p && g)
                gr = 1;  // TP
            else if (p && !g)
                r = 1;  // FP
            else if (!p && g)
                b = 1;  // FN
            else
                continue;  // TN untinted
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = gr;
            out.at(y, x, 2) = b;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Report serialization (JSON + fixed-column CSV)

inline nlohmann::json metrics_entry_json(const MetricsEntry& m) {
    return {
        {"id", m.id},
        {"tp", m.counts.tp},
        {"tn", m.counts.tn},
        {"fp", m.counts.fp},
        {"fn", m.counts.fn},
        {"acc", m.acc},
        {"se", m.se},
        {"sp", m.sp},
        {"miou", m.miou},
        {"miou_percent", 100.0 * m.miou},
        {"degenerate", m.degenerate},
    };
}

inline nlohmann::json report_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["fov_restricted"] = rep.fov_restricted;
    j["fused"] = rep.fused;
    j["aggregate"] = metrics_entry_json(rep.aggregate);
    j["per_image"] = nlohmann::json::array();
    for (const auto& m : rep.per_image) j["per_image"].push_back(metrics_entry_json(m));
    return j;
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& rep) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write report: " + path.string());
    os << "id,tp,tn,fp,fn,acc,se,sp,miou\n";
    auto row = [&os](const MetricsEntry& m) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%lld,%lld,%.9g,%.9g,%.9g,%.9g\n", m.id.c_str(), m.counts.tp, m.counts.tn,
                      m.counts.fp, m.counts.fn, m.acc, m.se, m.sp, m.miou);
        os << buf;
    };
    for (const auto& m : rep.per_image) row(m);
    row(rep.aggregate);
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CrossValReport {
    std::vector<MetricsReport> folds;
    // macro mean over fold aggregates
    double acc = 0, se = 0, sp = 0, miou = 0;
};

// Full two-stage protocol per fold; the report mean is the macro average of
// the per-fold aggregate metrics.
inline CrossValReport cross_validate(const std::vector<RetinalSample>& data, int k, const TrainConfig& cfg,
                                     const std::filesystem::path& cache_dir, bool use_fov = true) {
    auto folds = make_folds(ids_of(data), k);
    CrossValReport rep;
    int fold_no = 0;
    for (const auto& [train_ids, test_ids] : folds) {
        auto pick = [&data](const std::vector<std::string>& ids) {
            std::vector<RetinalSample> out;
            for (const auto& s : data)
                if (std::find(ids.begin(), ids.end(), s.id) != ids.end()) out.push_back(s);
            return out;
        };
        std::vector<RetinalSample> train = pick(train_ids), test = pick(test_ids);

        TrainResult s1 = train_stage1(train, cfg);
        std::filesystem::path fold_cache = cache_dir / ("fold" + std::to_string(fold_no));
        MaskGenResult masks = generate_initial_masks(s1.ckpt, train, fold_cache, cfg);
        auto ems = generate_error_maps(masks.masks, train, fold_cache);
        TrainResult s2 = train_stage2(s1.ckpt, train, ems, cfg);

        MetricsReport fold_rep = evaluate(s2.ckpt, test, /*fuse=*/true, cfg, use_fov);
        rep.acc += fold_rep.aggregate.acc;
        rep.se += fold_rep.aggregate.se;
        rep.sp += fold_rep.aggregate.sp;
        rep.miou += fold_rep.aggregate.miou;
        rep.folds.push_back(std::move(fold_rep));
        ++fold_no;
    }
    rep.acc /= k;
    rep.se /= k;
    rep.sp /= k;
    rep.miou /= k;
    return rep;
}

}  // namespace earseg
