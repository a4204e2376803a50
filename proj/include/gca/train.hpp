#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gca/checkpoint.hpp"
#include "gca/coco.hpp"
#include "gca/config.hpp"
#include "gca/data.hpp"
#include "gca/detector.hpp"
#include "gca/metrics.hpp"

namespace gca {

inline Dataset dataset_from_config(const ExperimentConfig& cfg) {
    if (!cfg.coco_annotations.empty())
        return import_coco(cfg.coco_annotations, cfg.coco_image_dir);
    return make_dataset(cfg.scene_spec(), cfg.num_scenes);
}

template <typename T>
MetricsReport evaluate_model(const Detector<T>& model, const Dataset& data) {
    check(!data.scenes.empty(), "evaluate: empty dataset");
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GtObject>> gts;
    for (const auto& scene : data.scenes) {
        auto img = scene_to_tensor<T>(scene);
        auto d = model.detect(img);
        dets.push_back(std::move(d[0]));
        std::vector<GtObject> g;
        for (size_t i = 0; i < scene.boxes.size(); ++i)
            g.push_back({scene.boxes[i], scene.labels[i]});
        gts.push_back(std::move(g));
    }
    auto rep = evaluate_detections(dets, gts, data.num_classes);
    if (data.num_classes % 2 == 0)
        rep.pair_accuracy = hue_pair_accuracy(dets, gts, data.num_classes);
    return rep;
}

struct TrainOptions {
    std::string out_dir;          // empty: no files written
    bool verbose = false;
    int eval_every_epochs = 0;    // 0: never
    double stop_at_ap50 = -1;     // early exit once reached (checked at eval points)
    const Dataset* eval_dataset = nullptr;  // defaults to the training set
};

struct IterationLog {
    int iteration = 0;
    double total = 0, rpn_cls = 0, rpn_reg = 0, head_cls = 0, head_reg = 0;
};

struct TrainResult {
    std::vector<IterationLog> log;
    double initial_smoothed = 0, final_smoothed = 0;
    int iterations = 0;
    int epochs_run = 0;
    double final_ap50 = -1;
    std::string checkpoint_path;
};

namespace detail {

inline double smoothed_window(const std::vector<IterationLog>& log, size_t begin,
                              size_t end) {
    double s = 0;
    for (size_t i = begin; i < end; ++i) s += log[i].total;
    return end > begin ? s / double(end - begin) : 0.0;
}

template <typename T>
void dump_grad_norms(Detector<T>& model, int iteration) {
    std::fprintf(stderr, "non-finite loss at iteration %d; parameter grad norms:\n",
                 iteration);
    for (const Param<T>* p : model.params()) {
        double norm = 0;
        for (T g : p->value.node()->grad) norm += double(g) * g;
        std::fprintf(stderr, "  %-40s %.6g\n", p->path.c_str(), std::sqrt(norm));
    }
}

}  // namespace detail

// SGD training loop: batch size one image, per-epoch deterministic shuffle,
// optional horizontal flip, step-decay schedule, checkpoints at schedule
// boundaries and at the end. Fully determined by (config, seed).
template <typename T = float>
TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts = {},
                  Detector<T>* model_out = nullptr) {
    namespace fs = std::filesystem;
    Dataset data = dataset_from_config(cfg);
    check(!data.scenes.empty(), "train: empty dataset");

    auto model = std::make_unique<Detector<T>>(cfg.detection());
    model->init(cfg.seed);
    auto params = model->params();
    Sgd<T> opt(params, T(cfg.learning_rate), T(cfg.momentum), T(cfg.weight_decay));
    std::mt19937_64 rng(derive_seed(cfg.seed, "train"));

    const Dataset& eval_set = opts.eval_dataset ? *opts.eval_dataset : data;
    TrainResult result;
    if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

    auto write_ckpt = [&](const std::string& name, i64 iter) {
        if (opts.out_dir.empty()) return std::string();
        auto path = (fs::path(opts.out_dir) / name).string();
        write_checkpoint(path, snapshot_params(params, iter));
        return path;
    };

    int iteration = 0;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        double lr = cfg.learning_rate;
        for (int boundary : cfg.lr_decay_epochs)
            if (epoch >= boundary) lr *= cfg.lr_decay_factor;
        opt.set_lr(T(lr));

        std::vector<int> order(data.scenes.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        for (int idx : order) {
            Scene scene = data.scenes[size_t(idx)];
            if (cfg.horizontal_flip && (rng() & 1)) scene = flip_horizontal(scene);
            auto img = scene_to_tensor<T>(scene);
            std::vector<std::vector<Box>> gt_boxes{scene.boxes};
            std::vector<std::vector<int>> gt_labels{scene.labels};

            auto losses = model->training_loss(img, gt_boxes, gt_labels, rng);
            opt.zero_grad();
            backward(losses.total);
            if (!std::isfinite(losses.value())) {
                detail::dump_grad_norms(*model, iteration);
                fail("train: non-finite loss at iteration " + std::to_string(iteration));
            }
            opt.step();

            result.log.push_back({iteration, losses.value(), losses.rpn_cls,
                                  losses.rpn_reg, losses.head_cls, losses.head_reg});
            ++iteration;
        }
        result.epochs_run = epoch + 1;

        for (int boundary : cfg.lr_decay_epochs)
            if (epoch + 1 == boundary)
                write_ckpt("checkpoint_epoch" + std::to_string(epoch + 1) + ".gcac",
                           iteration);

        const bool eval_now =
            opts.eval_every_epochs > 0 && ((epoch + 1) % opts.eval_every_epochs == 0);
        if (eval_now) {
            auto rep = evaluate_model(*model, eval_set);
            result.final_ap50 = rep.ap50;
            if (opts.verbose)
                std::printf("epoch %3d  loss %.4f  ap50 %.4f\n", epoch + 1,
                            result.log.back().total, rep.ap50);
            if (opts.stop_at_ap50 > 0 && rep.ap50 >= opts.stop_at_ap50) stop = true;
        } else if (opts.verbose) {
            std::printf("epoch %3d  loss %.4f\n", epoch + 1, result.log.back().total);
        }
    }

    result.iterations = iteration;
    const size_t window = std::min<size_t>(50, result.log.size());
    result.initial_smoothed = detail::smoothed_window(result.log, 0, window);
    result.final_smoothed =
        detail::smoothed_window(result.log, result.log.size() - window, result.log.size());
    result.checkpoint_path = write_ckpt("checkpoint_final.gcac", iteration);
    if (!opts.out_dir.empty()) {
        save_config(cfg, (fs::path(opts.out_dir) / "config.json").string());
        std::ofstream logf(fs::path(opts.out_dir) / "train_log.jsonl");
        for (const auto& l : result.log)
            logf << "{\"iter\":" << l.iteration << ",\"total\":" << l.total
                 << ",\"rpn_cls\":" << l.rpn_cls << ",\"rpn_reg\":" << l.rpn_reg
                 << ",\"head_cls\":" << l.head_cls << ",\"head_reg\":" << l.head_reg
                 << "}\n";
    }
    if (model_out) *model_out = std::move(*model);
    return result;
}

}  // namespace gca
