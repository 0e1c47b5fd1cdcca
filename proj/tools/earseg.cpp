// earseg: two-stage retinal vessel segmentation with supervised error attention.
//
// Commands: synth, train, refine, predict, evaluate, crossval.
// Exit codes: 0 success, 2 input error, 3 state/parse error, 1 internal.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "earseg/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    std::string dataset_root;
    std::string layout = "generic";
    std::string out_dir = "out";
    bool use_fov = true;
    int folds = 0;  // 0 = plain evaluation
    earseg::TrainConfig train;
};

void apply_config_file(RunConfig& rc, const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw earseg::InputError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw earseg::StateError("config parse error in " + path.string() + ": " + e.what());
    }
    rc.dataset_root = j.value("dataset_root", rc.dataset_root);
    rc.layout = j.value("layout", rc.layout);
    rc.out_dir = j.value("out", rc.out_dir);
    rc.use_fov = j.value("use_fov", rc.use_fov);
    rc.folds = j.value("folds", rc.folds);
    auto& t = rc.train;
    t.stage1_epochs = j.value("stage1_epochs", t.stage1_epochs);
    t.stage2_epochs = j.value("stage2_epochs", t.stage2_epochs);
    t.lr_stage1 = j.value("lr_stage1", t.lr_stage1);
    t.lr_stage2 = j.value("lr_stage2", t.lr_stage2);
    t.momentum = j.value("momentum", t.momentum);
    t.poly_power = j.value("poly_power", t.poly_power);
    t.seed = j.value("seed", t.seed);
    t.weights.eta = j.value("eta", t.weights.eta);
    t.weights.gamma = j.value("gamma", t.weights.gamma);
    t.weights.epsilon = j.value("epsilon", t.weights.epsilon);
    t.lambda = j.value("lambda", t.lambda);
    t.mu = j.value("mu", t.mu);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.backbone.channels = j.value("channels", t.backbone.channels);
    t.augment = j.value("augment", t.augment);
    t.detach_attention = j.value("detach_attention", t.detach_attention);
}

json resolved_config_json(const RunConfig& rc) {
    const auto& t = rc.train;
    return {
        {"dataset_root", rc.dataset_root},
        {"layout", rc.layout},
        {"out", rc.out_dir},
        {"use_fov", rc.use_fov},
        {"folds", rc.folds},
        {"stage1_epochs", t.stage1_epochs},
        {"stage2_epochs", t.stage2_epochs},
        {"lr_stage1", t.lr_stage1},
        {"lr_stage2", t.lr_stage2},
        {"momentum", t.momentum},
        {"poly_power", t.poly_power},
        {"seed", t.seed},
        {"eta", t.weights.eta},
        {"gamma", t.weights.gamma},
        {"epsilon", t.weights.epsilon},
        {"lambda", t.lambda},
        {"mu", t.mu},
        {"batch_size", t.batch_size},
        {"channels", t.backbone.channels},
        {"augment", t.augment},
        {"detach_attention", t.detach_attention},
    };
}

void write_snapshot(const RunConfig& rc, const std::string& command) {
    fs::create_directories(rc.out_dir);
    json j = resolved_config_json(rc);
    j["command"] = command;
    std::ofstream(fs::path(rc.out_dir) / "config.resolved.json") << j.dump(2) << "\n";
}

fs::path cache_dir(const RunConfig& rc) {
    if (const char* env = std::getenv("EARSEG_CACHE_DIR")) return fs::path(env);
    return fs::path(rc.out_dir) / "cache";
}

std::vector<earseg::RetinalSample> load_data(const RunConfig& rc) {
    if (rc.dataset_root.empty()) throw earseg::InputError("no dataset root given (--data or config dataset_root)");
    return earseg::load_dataset(rc.dataset_root, earseg::parse_layout(rc.layout));
}

fs::path stage_ckpt_path(const RunConfig& rc, const std::string& stage, std::uint32_t epoch) {
    fs::path dir = fs::path(rc.out_dir) / "checkpoints" / stage;
    fs::create_directories(dir);
    return dir / (std::to_string(epoch) + ".ckpt");
}

// Highest-numbered checkpoint in out/checkpoints/<stage>/.
std::optional<fs::path> find_latest_ckpt(const RunConfig& rc, const std::string& stage) {
    fs::path dir = fs::path(rc.out_dir) / "checkpoints" / stage;
    if (!fs::is_directory(dir)) return std::nullopt;
    std::optional<fs::path> best;
    long best_epoch = -1;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".ckpt") continue;
        long ep = std::atol(e.path().stem().string().c_str());
        if (ep > best_epoch) {
            best_epoch = ep;
            best = e.path();
        }
    }
    return best;
}

void print_metrics_line(const std::string& tag, const earseg::MetricsEntry& m) {
    // column order follows the reporting convention: ACC SP SE mIoU
    std::printf("%s ACC %.4f SP %.4f SE %.4f mIoU %.4f (%.2f%%)\n", tag.c_str(), m.acc, m.sp, m.se, m.miou, 100.0 * m.miou);
}

void write_reports(const RunConfig& rc, const earseg::MetricsReport& rep, const std::string& name,
                   const std::vector<earseg::RetinalSample>& data, earseg::Checkpoint& ck) {
    fs::path rep_dir = fs::path(rc.out_dir) / "reports";
    fs::create_directories(rep_dir / "overlays");
    std::ofstream(rep_dir / (name + ".json")) << earseg::report_json(rep).dump(2) << "\n";
    earseg::write_report_csv(rep_dir / (name + ".csv"), rep);

    earseg::ParamStore<float> ps = ck.params;
    earseg::Backbone<float> net(rc.train.backbone);
    std::optional<earseg::Eam<float>> eam;
    if (rep.fused) eam.emplace(rc.train.backbone.channels);
    for (const auto& s : data) {
        auto m = earseg::predict_mask(net, rep.fused ? &*eam : nullptr, ps, s, rep.fused, rc.train.lambda, rc.train.mu);
        earseg::save_rgb_png(rep_dir / "overlays" / (s.id + "_" + name + ".png"), earseg::render_overlay(s.image, m, s.gt));
    }
}

int cmd_synth(const RunConfig& rc, int n, int size) {
    auto rng = earseg::make_rng(rc.train.seed);
    auto samples = earseg::synth_vessels(n, size, rng);
    fs::path root = rc.dataset_root.empty() ? fs::path(rc.out_dir) / "synth" : fs::path(rc.dataset_root);
    fs::create_directories(root / "images");
    fs::create_directories(root / "gt");
    for (const auto& s : samples) {
        earseg::save_rgb_png(root / "images" / (s.id + ".png"), s.image);
        earseg::save_mask_png(root / "gt" / (s.id + ".png"), s.gt);
    }
    std::printf("wrote %d synthetic samples to %s (generic layout)\n", int(samples.size()), root.string().c_str());
    return 0;
}

int cmd_train(RunConfig& rc) {
    auto data = load_data(rc);
    write_snapshot(rc, "train");
    fs::create_directories(fs::path(rc.out_dir) / "logs");
    std::ofstream csv(fs::path(rc.out_dir) / "logs" / "train.csv");
    csv << "step,lce,lhm,lea,total\n";
    auto res = earseg::train_stage1(data, rc.train, &csv);
    earseg::save_checkpoint(stage_ckpt_path(rc, "stage1", res.ckpt.epoch), res.ckpt);
    if (res.aborted_on_nan) std::fprintf(stderr, "warning: NaN loss, stopped at last good checkpoint (epoch %u)\n", res.ckpt.epoch);
    std::printf("stage-1 done: %zu epochs, final loss %.6f\n", res.epochs.size(), res.epochs.empty() ? 0.0 : res.epochs.back().total);
    return 0;
}

int cmd_refine(RunConfig& rc, const std::string& ckpt_flag) {
    auto data = load_data(rc);
    fs::path ckpt_path;
    if (!ckpt_flag.empty()) {
        ckpt_path = ckpt_flag;
    } else {
        auto latest = find_latest_ckpt(rc, "stage1");
        if (!latest) throw earseg::InputError("no stage-1 checkpoint found under " + rc.out_dir + "/checkpoints/stage1 (run train first)");
        ckpt_path = *latest;
    }
    earseg::Checkpoint ck = earseg::load_checkpoint(ckpt_path);
    write_snapshot(rc, "refine");

    auto masks = earseg::generate_initial_masks(ck, data, cache_dir(rc), rc.train);
    auto ems = earseg::generate_error_maps(masks.masks, data, cache_dir(rc));
    std::printf("initial masks: %d forward passes (%s)\n", masks.forward_passes, masks.forward_passes ? "generated" : "cache hit");

    fs::create_directories(fs::path(rc.out_dir) / "logs");
    std::ofstream csv(fs::path(rc.out_dir) / "logs" / "refine.csv");
    csv << "step,lce,lhm,lea,total\n";
    auto res = earseg::train_stage2(ck, data, ems, rc.train, &csv);
    earseg::save_checkpoint(stage_ckpt_path(rc, "stage2", res.ckpt.epoch), res.ckpt);
    if (res.aborted_on_nan) std::fprintf(stderr, "warning: NaN loss, stopped at last good checkpoint (epoch %u)\n", res.ckpt.epoch);
    std::printf("refinement done: %zu epochs", res.epochs.size());
    if (!res.epochs.empty()) std::printf(", final lea %.6f", res.epochs.back().lea);
    std::printf("\n");
    return 0;
}

int cmd_predict(RunConfig& rc, const std::string& ckpt_flag) {
    if (ckpt_flag.empty()) throw earseg::InputError("predict requires --ckpt");
    auto data = load_data(rc);
    earseg::Checkpoint ck = earseg::load_checkpoint(ckpt_flag);
    write_snapshot(rc, "predict");
    bool fuse = ck.has_eam();
    earseg::ParamStore<float> ps = ck.params;
    earseg::Backbone<float> net(rc.train.backbone);
    std::optional<earseg::Eam<float>> eam;
    if (fuse) eam.emplace(rc.train.backbone.channels);
    fs::path dir = fs::path(rc.out_dir) / "predictions";
    fs::create_directories(dir);
    for (const auto& s : data) {
        auto m = earseg::predict_mask(net, fuse ? &*eam : nullptr, ps, s, fuse, rc.train.lambda, rc.train.mu);
        earseg::save_mask_png(dir / (s.id + "_pred.png"), m.data);
    }
    std::printf("wrote %zu predictions to %s (fuse=%s)\n", data.size(), dir.string().c_str(), fuse ? "on" : "off");
    return 0;
}

int cmd_evaluate(RunConfig& rc, const std::string& ckpt_flag) {
    auto data = load_data(rc);
    write_snapshot(rc, "evaluate");
    if (rc.folds > 0) {
        auto rep = earseg::cross_validate(data, rc.folds, rc.train, cache_dir(rc) / "crossval", rc.use_fov);
        fs::path rep_dir = fs::path(rc.out_dir) / "reports";
        fs::create_directories(rep_dir);
        json j;
        j["folds"] = json::array();
        int i = 0;
        for (const auto& f : rep.folds) {
            print_metrics_line("fold" + std::to_string(i++), f.aggregate);
            j["folds"].push_back(earseg::report_json(f));
        }
        j["mean"] = {{"acc", rep.acc}, {"sp", rep.sp}, {"se", rep.se}, {"miou", rep.miou}};
        std::ofstream(rep_dir / "crossval.json") << j.dump(2) << "\n";
        std::printf("mean ACC %.4f SP %.4f SE %.4f mIoU %.4f\n", rep.acc, rep.sp, rep.se, rep.miou);
        return 0;
    }
    if (ckpt_flag.empty()) throw earseg::InputError("evaluate requires --ckpt (or --folds for cross-validation)");
    earseg::Checkpoint ck = earseg::load_checkpoint(ckpt_flag);
    bool fuse = ck.has_eam();
    auto rep = earseg::evaluate(ck, data, fuse, rc.train, rc.use_fov);
    write_reports(rc, rep, fuse ? "refined" : "stage1", data, ck);
    print_metrics_line(fuse ? "refined" : "stage1", rep.aggregate);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage vessel segmentation with supervised error attention"};
    app.require_subcommand(1);

    RunConfig rc;
    std::string config_file, ckpt_flag;
    int synth_n = 40, synth_size = 64;
    bool no_fov = false;
    std::optional<int> epochs_flag;

    app.add_option("--config", config_file, "JSON config file (flags override)");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--data", rc.dataset_root, "dataset root directory");
        sub->add_option("--layout", rc.layout, "drive|stare|generic");
        sub->add_option("--out", rc.out_dir, "output directory");
        sub->add_option("--seed", rc.train.seed, "RNG seed");
        sub->add_option("--channels", rc.train.backbone.channels, "backbone feature width");
        sub->add_option("--batch-size", rc.train.batch_size, "images per optimizer step");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic vessel dataset");
    add_common(synth);
    synth->add_option("--n", synth_n, "number of samples");
    synth->add_option("--size", synth_size, "image side length");

    auto* train = app.add_subcommand("train", "stage-1 training");
    add_common(train);
    train->add_option("--epochs", epochs_flag, "stage-1 epochs");
    train->add_flag("--augment", rc.train.augment, "random flip/rotate/noise augmentation");

    auto* refine = app.add_subcommand("refine", "error-map generation + stage-2 fine-tuning");
    add_common(refine);
    refine->add_option("--epochs", epochs_flag, "stage-2 epochs");
    refine->add_option("--ckpt", ckpt_flag, "stage-1 checkpoint (default: latest in out dir)");
    refine->add_flag("--detach-attention", rc.train.detach_attention, "cut the CE gradient path through the attention map");

    auto* predict = app.add_subcommand("predict", "write predicted masks");
    add_common(predict);
    predict->add_option("--ckpt", ckpt_flag, "checkpoint to run");

    auto* evaluate = app.add_subcommand("evaluate", "metrics report + overlays");
    add_common(evaluate);
    evaluate->add_option("--ckpt", ckpt_flag, "checkpoint to evaluate");
    evaluate->add_flag("--no-fov", no_fov, "count all pixels, ignore FOV masks");
    evaluate->add_option("--folds", rc.folds, "run k-fold cross-validation instead");

    auto* crossval = app.add_subcommand("crossval", "k-fold cross-validated two-stage protocol");
    add_common(crossval);
    crossval->add_option("--folds", rc.folds, "number of folds (default 4)");
    crossval->add_flag("--no-fov", no_fov, "count all pixels, ignore FOV masks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_file.empty()) {
            RunConfig from_file;
            apply_config_file(from_file, config_file);
            // file provides defaults; explicit flags already parsed into rc win
            auto keep = [&](auto& dst, const auto& file_v, const auto& def_v) {
                if (dst == def_v) dst = file_v;
            };
            RunConfig defaults;
            keep(rc.dataset_root, from_file.dataset_root, defaults.dataset_root);
            keep(rc.layout, from_file.layout, defaults.layout);
            keep(rc.out_dir, from_file.out_dir, defaults.out_dir);
            if (rc.folds == defaults.folds) rc.folds = from_file.folds;
            keep(rc.train.seed, from_file.train.seed, defaults.train.seed);
            keep(rc.train.batch_size, from_file.train.batch_size, defaults.train.batch_size);
            keep(rc.train.backbone.channels, from_file.train.backbone.channels, defaults.train.backbone.channels);
            // values only settable via file
            rc.train.stage1_epochs = from_file.train.stage1_epochs;
            rc.train.stage2_epochs = from_file.train.stage2_epochs;
            rc.train.lr_stage1 = from_file.train.lr_stage1;
            rc.train.lr_stage2 = from_file.train.lr_stage2;
            rc.train.momentum = from_file.train.momentum;
            rc.train.poly_power = from_file.train.poly_power;
            rc.train.weights = from_file.train.weights;
            rc.train.lambda = from_file.train.lambda;
            rc.train.mu = from_file.train.mu;
            rc.use_fov = from_file.use_fov;
            if (!rc.train.augment) rc.train.augment = from_file.train.augment;
            if (!rc.train.detach_attention) rc.train.detach_attention = from_file.train.detach_attention;
        }
        if (epochs_flag) {
            if (app.got_subcommand(train)) rc.train.stage1_epochs = *epochs_flag;
            if (app.got_subcommand(refine)) rc.train.stage2_epochs = *epochs_flag;
        }
        if (no_fov) rc.use_fov = false;
        if (app.got_subcommand(crossval) && rc.folds == 0) rc.folds = 4;
        rc.train.validate();

        if (app.got_subcommand(synth)) return cmd_synth(rc, synth_n, synth_size);
        if (app.got_subcommand(train)) return cmd_train(rc);
        if (app.got_subcommand(refine)) return cmd_refine(rc, ckpt_flag);
        if (app.got_subcommand(predict)) return cmd_predict(rc, ckpt_flag);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(rc, ckpt_flag);
        if (app.got_subcommand(crossval)) return cmd_evaluate(rc, "");
        return 1;
    } catch (const earseg::InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const earseg::StateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
