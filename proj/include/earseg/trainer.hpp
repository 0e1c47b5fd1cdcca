#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "earseg/backbone.hpp"
#include "earseg/checkpoint.hpp"
#include "earseg/dataio.hpp"
#include "earseg/eam.hpp"
#include "earseg/errormaps.hpp"
#include "earseg/losses.hpp"

#include "json.hpp"

namespace earseg {

struct TrainConfig {
    int stage1_epochs = 50;
    int stage2_epochs = 15;
    double lr_stage1 = 0.005;
    double lr_stage2 = 0.001;
    double momentum = 0.9;
    double poly_power = 0.9;
    std::uint32_t seed = 1;
    LossWeights weights;       // eta=1, gamma=0.4, epsilon=0.5
    double lambda = 0.5;       // fusion weight on original logits
    double mu = 0.5;           // fusion weight on attended logits
    int batch_size = 4;
    BackboneConfig backbone;
    bool augment = false;            // stage-1 only; stage 2 keeps geometry fixed
    bool detach_attention = false;   // ablation: cut the CE gradient path through Am

    void validate() const {
        if (std::abs(lambda + mu - 1.0) > 1e-9 || lambda < 0 || mu < 0)
            throw InputError("config: lambda and mu must be non-negative with lambda+mu=1");
        if (lr_stage1 < 0 || lr_stage2 < 0 || batch_size < 1) throw InputError("config: rates must be >= 0 and batch size >= 1");
        if (weights.eta < 0 || weights.gamma < 0 || weights.epsilon < 0) throw InputError("config: loss weights must be >= 0");
    }

    std::uint64_t hash() const {
        std::ostringstream os;
        os << stage1_epochs << '|' << stage2_epochs << '|' << lr_stage1 << '|' << lr_stage2 << '|' << momentum << '|' << poly_power
           << '|' << seed << '|' << weights.eta << '|' << weights.gamma << '|' << weights.epsilon << '|' << lambda << '|' << mu << '|'
           << batch_size << '|' << backbone.channels << '|' << augment << '|' << detach_attention;
        return fnv1a(os.str());
    }
};

// Polynomial decay: base * (1 - epoch/total)^power.
inline double lr_schedule(double base_lr, int epoch, int total, double power = 0.9) {
    if (epoch < 0 || epoch >= total) throw InputError("lr_schedule: epoch out of range");
    return base_lr * std::pow(1.0 - double(epoch) / double(total), power);
}

struct EpochRow {
    int epoch = 0;
    double lce = 0, lhm = 0, lea = 0, total = 0;
    double lr = 0;
};

struct TrainResult {
    Checkpoint ckpt;
    std::vector<EpochRow> epochs;
    bool aborted_on_nan = false;
};

namespace trainer_detail {

inline void log_step(std::ostream* csv, long step, double lce, double lhm, double lea, double total) {
    if (!csv) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g\n", step, lce, lhm, lea, total);
    *csv << buf;
}

inline std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < n; i += batch_size)
        batches.emplace_back(order.begin() + i, order.begin() + std::min(i + batch_size, n));
    return batches;
}

}  // namespace trainer_detail

// Stage-1 training: cross-entropy + auxiliary head only (no attention term).
inline TrainResult train_stage1(const std::vector<RetinalSample>& data, const TrainConfig& cfg, std::ostream* step_csv = nullptr) {
    cfg.validate();
    if (data.empty()) throw InputError("train_stage1: empty training set");

    ParamStore<float> ps = init_params<float>(cfg.seed, cfg.backbone);
    Backbone<float> net(cfg.backbone);
    Rng rng = make_rng(cfg.seed ^ 0x9e3779b9u);

    TrainResult res;
    ParamStore<float> last_good = ps;
    long step = 0;
    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        double lr = lr_schedule(cfg.lr_stage1, epoch, cfg.stage1_epochs, cfg.poly_power);
        EpochRow row;
        row.epoch = epoch;
        row.lr = lr;
        int seen = 0;
        for (const auto& batch : trainer_detail::make_batches(int(data.size()), cfg.batch_size, rng)) {
            ps.zero_grad();
            const double inv_nb = 1.0 / double(batch.size());
            double b_lce = 0, b_lhm = 0;
            for (int idx : batch) {
                RetinalSample aug;
                const RetinalSample* s = &data[idx];
                if (cfg.augment) {
                    aug = augment(*s, rng);
                    s = &aug;
                }
                auto out = net.forward(ps, s->image, /*train=*/true);
                auto lce = ce_loss(out.logits_s1, s->gt);
                SemanticLogits<float> aux_s1{bilinear_resize(out.aux_s4.data, s->image.h, s->image.w), 1};
                auto lhm = hm_loss(aux_s1, s->gt);
                b_lce += lce.value;
                b_lhm += lhm.value;

                Tensorf g_l1 = lce.grad;
                for (auto& v : g_l1.data) v *= float(cfg.weights.eta * inv_nb);
                Tensorf g_aux1 = lhm.grad;
                for (auto& v : g_aux1.data) v *= float(cfg.weights.gamma * inv_nb);
                net.backward(ps, net.grad_s1_to_s4(g_l1), bilinear_resize_backward(g_aux1, out.aux_s4.data.h, out.aux_s4.data.w), {});
            }
            b_lce *= inv_nb;
            b_lhm *= inv_nb;
            double b_total = total_loss(b_lce, b_lhm, 0.0, {cfg.weights.eta, cfg.weights.gamma, 0.0});
            if (!std::isfinite(b_total)) {
                res.aborted_on_nan = true;
                ps = last_good;
                break;
            }
            sgd_step(ps, lr, cfg.momentum);
            trainer_detail::log_step(step_csv, step++, b_lce, b_lhm, 0.0, b_total);
            row.lce += b_lce * double(batch.size());
            row.lhm += b_lhm * double(batch.size());
            seen += int(batch.size());
        }
        if (res.aborted_on_nan) break;
        row.lce /= seen;
        row.lhm /= seen;
        row.total = total_loss(row.lce, row.lhm, 0.0, {cfg.weights.eta, cfg.weights.gamma, 0.0});
        res.epochs.push_back(row);
        last_good = ps;
        res.ckpt.epoch = std::uint32_t(epoch + 1);
    }
    res.ckpt.config_hash = cfg.hash();
    res.ckpt.params = std::move(ps);
    return res;
}

// ---------------------------------------------------------------------------
// Stage-1 prediction cache

struct MaskGenResult {
    std::map<std::string, PredictedMask> masks;
    int forward_passes = 0;  // 0 on a cache hit
};

// Fingerprint covering config hash, epoch and all parameter bytes, so any
// checkpoint change invalidates the cache.
inline std::uint64_t checkpoint_fingerprint(const Checkpoint& ck) {
    std::string bytes;
    for (const auto& [name, e] : ck.params.entries) {
        bytes += name;
        bytes.append(reinterpret_cast<const char*>(e.value.data()), e.value.size() * sizeof(float));
    }
    std::ostringstream os;
    os << ck.config_hash << '|' << ck.epoch << '|' << fnv1a(bytes);
    return fnv1a(os.str());
}

// Eval-mode forward + argmax for every sample, cached under
// cache_dir/masks/<id>_m1.png with a fingerprinted JSON index.
inline MaskGenResult generate_initial_masks(const Checkpoint& ck, const std::vector<RetinalSample>& data,
                                            const std::filesystem::path& cache_dir, const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    fs::path dir = cache_dir / "masks";
    fs::create_directories(dir);
    const std::uint64_t fp = checkpoint_fingerprint(ck);

    MaskGenResult res;
    fs::path index_path = dir / "index.json";
    if (fs::exists(index_path)) {
        try {
            nlohmann::json idx = nlohmann::json::parse(std::ifstream(index_path));
            if (idx.value("fingerprint", std::string()) == std::to_string(fp)) {
                bool ok = true;
                for (const auto& s : data)
                    if (!fs::exists(dir / (s.id + "_m1.png"))) {
                        ok = false;
                        break;
                    }
                if (ok) {
                    for (const auto& s : data) {
                        PredictedMask m;
                        m.data = load_mask(dir / (s.id + "_m1.png"));
                        res.masks.emplace(s.id, std::move(m));
                    }
                    return res;
                }
            }
        } catch (const nlohmann::json::exception&) {
            // unreadable index: fall through and regenerate
        }
    }

    ParamStore<float> ps = ck.params;
    Backbone<float> net(cfg.backbone);
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : data) {
        auto out = net.forward(ps, s.image, /*train=*/false);
        PredictedMask m = binarize(out.logits_s1);
        ++res.forward_passes;
        save_mask_png(dir / (s.id + "_m1.png"), m.data);
        ids.push_back(s.id);
        res.masks.emplace(s.id, std::move(m));
    }
    nlohmann::json idx;
    idx["fingerprint"] = std::to_string(fp);
    idx["ids"] = ids;
    std::ofstream(index_path) << idx.dump(2) << "\n";
    return res;
}

// Full-resolution Eq.-style error maps, cached as <id>_em.png + JSON index.
inline std::map<std::string, ErrorMap> generate_error_maps(const std::map<std::string, PredictedMask>& masks,
                                                           const std::vector<RetinalSample>& data,
                                                           const std::filesystem::path& cache_dir) {
    namespace fs = std::filesystem;
    fs::path dir = cache_dir / "errormaps";
    fs::create_directories(dir);
    std::map<std::string, ErrorMap> out;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : data) {
        auto it = masks.find(s.id);
        if (it == masks.end()) throw StateError("generate_error_maps: missing stage-1 mask for id " + s.id);
        ErrorMap em = generate_error_map(s.gt, it->second);
        save_mask_png(dir / (s.id + "_em.png"), em.data);
        ids.push_back(s.id);
        out.emplace(s.id, std::move(em));
    }
    nlohmann::json idx;
    idx["ids"] = ids;
    std::ofstream(dir / "index.json") << idx.dump(2) << "\n";
    return out;
}

// Stage-2 joint fine-tuning: trunk initialized from the stage-1 checkpoint,
// attention module initialized fresh, all three loss terms active. Logits
// are fused at the attention stride before the CE head.
inline TrainResult train_stage2(const Checkpoint& stage1, const std::vector<RetinalSample>& data,
                                const std::map<std::string, ErrorMap>& error_maps, const TrainConfig& cfg,
                                std::ostream* step_csv = nullptr) {
    cfg.validate();
    if (data.empty()) throw InputError("train_stage2: empty training set");
    for (const auto& s : data)
        if (!error_maps.count(s.id)) throw InputError("train_stage2: missing error map for id " + s.id);

    ParamStore<float> ps = stage1.params;
    for (auto& [k, e] : ps.entries) e.momentum.clear();  // fresh optimizer state for the refinement phase
    Backbone<float> net(cfg.backbone);
    Eam<float> eam(cfg.backbone.channels);
    {
        Rng eam_rng = make_rng(cfg.seed ^ 0x51f15eedu);
        eam.register_params(ps, eam_rng);
    }
    Rng rng = make_rng(cfg.seed ^ 0x2545f491u);

    // aligned error maps are fixed for the whole stage
    std::map<std::string, ErrorMap> aligned;
    for (const auto& s : data) aligned.emplace(s.id, align_error_map(error_maps.at(s.id), 4));

    TrainResult res;
    ParamStore<float> last_good = ps;
    long step = 0;
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        double lr = lr_schedule(cfg.lr_stage2, epoch, cfg.stage2_epochs, cfg.poly_power);
        EpochRow row;
        row.epoch = epoch;
        row.lr = lr;
        int seen = 0;
        for (const auto& batch : trainer_detail::make_batches(int(data.size()), cfg.batch_size, rng)) {
            ps.zero_grad();
            const double inv_nb = 1.0 / double(batch.size());
            double b_lce = 0, b_lhm = 0, b_lea = 0;
            for (int idx : batch) {
                const RetinalSample& s = data[idx];
                auto out = net.forward(ps, s.image, /*train=*/true);
                AttentionMap<float> am = eam.forward(ps, out.feat, /*train=*/true);
                SemanticLogits<float> l_final_s4 = refine_logits(out.l_s4, am, cfg.lambda, cfg.mu);
                SemanticLogits<float> logits_s1{bilinear_resize(l_final_s4.data, s.image.h, s.image.w), 1};

                auto lce = ce_loss(logits_s1, s.gt);
                SemanticLogits<float> aux_s1{bilinear_resize(out.aux_s4.data, s.image.h, s.image.w), 1};
                auto lhm = hm_loss(aux_s1, s.gt);
                auto lea = ea_loss(aligned.at(s.id), am);
                b_lce += lce.value;
                b_lhm += lhm.value;
                b_lea += lea.value;

                Tensorf g_l1 = lce.grad;
                for (auto& v : g_l1.data) v *= float(cfg.weights.eta * inv_nb);
                Tensorf g_lfinal = bilinear_resize_backward(g_l1, l_final_s4.data.h, l_final_s4.data.w);
                RefineGrads<float> rg = refine_logits_backward(out.l_s4, am, cfg.lambda, cfg.mu, g_lfinal, cfg.detach_attention);

                Tensorf g_am = rg.grad_am;
                for (std::size_t i = 0; i < g_am.data.size(); ++i)
                    g_am.data[i] += float(cfg.weights.epsilon * inv_nb) * lea.grad.data[i];

                Tensorf g_aux1 = lhm.grad;
                for (auto& v : g_aux1.data) v *= float(cfg.weights.gamma * inv_nb);

                Tensorf g_feat_ext = eam.backward(ps, g_am);
                net.backward(ps, rg.grad_l, bilinear_resize_backward(g_aux1, out.aux_s4.data.h, out.aux_s4.data.w), g_feat_ext);
            }
            b_lce *= inv_nb;
            b_lhm *= inv_nb;
            b_lea *= inv_nb;
            double b_total = total_loss(b_lce, b_lhm, b_lea, cfg.weights);
            if (!std::isfinite(b_total)) {
                res.aborted_on_nan = true;
                ps = last_good;
                break;
            }
            sgd_step(ps, lr, cfg.momentum);
            trainer_detail::log_step(step_csv, step++, b_lce, b_lhm, b_lea, b_total);
            row.lce += b_lce * double(batch.size());
            row.lhm += b_lhm * double(batch.size());
            row.lea += b_lea * double(batch.size());
            seen += int(batch.size());
        }
        if (res.aborted_on_nan) break;
        row.lce /= seen;
        row.lhm /= seen;
        row.lea /= seen;
        row.total = total_loss(row.lce, row.lhm, row.lea, cfg.weights);
        res.epochs.push_back(row);
        last_good = ps;
        res.ckpt.epoch = std::uint32_t(epoch + 1);
    }
    res.ckpt.config_hash = cfg.hash();
    res.ckpt.params = std::move(ps);
    return res;
}

}  // namespace earseg
