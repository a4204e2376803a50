#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gca/data.hpp"
#include "gca/detector.hpp"

namespace gca {

inline std::string mode_name(HeadMode m) {
    switch (m) {
        case HeadMode::baseline: return "baseline";
        case HeadMode::dense_no_attention: return "dense_no_attention";
        case HeadMode::full: return "full";
        case HeadMode::lightweight: return "lightweight";
    }
    return "full";
}

inline HeadMode parse_mode(const std::string& s) {
    if (s == "baseline") return HeadMode::baseline;
    if (s == "dense_no_attention") return HeadMode::dense_no_attention;
    if (s == "full") return HeadMode::full;
    if (s == "lightweight") return HeadMode::lightweight;
    fail("unknown mode: " + s);
}

inline std::string variant_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::conv: return "conv";
        case AttentionVariant::fc1: return "fc1";
        case AttentionVariant::fc2: return "fc2";
        case AttentionVariant::conv_fc1: return "conv_fc1";
        case AttentionVariant::conv_fc2: return "conv_fc2";
        case AttentionVariant::conv_fc1_fc2: return "conv_fc1_fc2";
    }
    return "conv";
}

inline AttentionVariant parse_variant(const std::string& s) {
    if (s == "conv") return AttentionVariant::conv;
    if (s == "fc1") return AttentionVariant::fc1;
    if (s == "fc2") return AttentionVariant::fc2;
    if (s == "conv_fc1") return AttentionVariant::conv_fc1;
    if (s == "conv_fc2") return AttentionVariant::conv_fc2;
    if (s == "conv_fc1_fc2") return AttentionVariant::conv_fc1_fc2;
    fail("unknown attention variant: " + s);
}

// Everything one run needs, serializable to/from JSON losslessly. Unknown
// keys are rejected on load.
struct ExperimentConfig {
    // model
    std::string mode = "full";
    std::string variant = "conv";
    std::array<int, 2> pool_size{16, 16};
    int reduction = 8;
    int num_classes = 3;
    bool class_agnostic_reg = false;
    bool share_branch_weights = false;
    bool rpn_recalibrate = false;
    bool rpn_recal_sigmoid = true;
    std::array<int, 4> backbone_widths{32, 64, 128, 256};
    double canonical_scale = 56.0;
    // optimizer and schedule
    double learning_rate = 0.02;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::vector<int> lr_decay_epochs{16, 22};
    double lr_decay_factor = 0.1;
    int epochs = 24;
    u64 seed = 0;
    bool horizontal_flip = true;
    // dataset
    std::array<int, 2> image_size{128, 128};
    int num_scenes = 64;
    int min_objects = 1, max_objects = 4;
    bool contextual_mode = false;
    u64 dataset_seed = 0;
    std::string coco_annotations;  // optional COCO-format import (PPM images)
    std::string coco_image_dir;
    // proposals and inference
    int pre_nms_top = 256;
    int post_nms_top = 64;
    double rpn_nms_thr = 0.7;
    double score_thresh = 0.05;
    double det_nms_thr = 0.5;
    int max_detections = 100;

    DetectionConfig detection() const {
        DetectionConfig d;
        d.head.mode = parse_mode(mode);
        d.head.variant = parse_variant(variant);
        d.head.pool_m = pool_size[0];
        d.head.pool_n = pool_size[1];
        d.head.reduction = reduction;
        d.head.num_classes = num_classes;
        d.head.class_agnostic_reg = class_agnostic_reg;
        d.head.share_branch_weights = share_branch_weights;
        d.backbone_widths = backbone_widths;
        d.rpn_recalibrate = rpn_recalibrate;
        d.rpn_recal_sigmoid = rpn_recal_sigmoid;
        d.canonical_scale = canonical_scale;
        d.propose.pre_nms_top = pre_nms_top;
        d.propose.post_nms_top = post_nms_top;
        d.propose.nms_thr = rpn_nms_thr;
        d.inference.score_thresh = score_thresh;
        d.inference.nms_thr = det_nms_thr;
        d.inference.max_detections = max_detections;
        d.head.validate();
        return d;
    }

    SceneSpec scene_spec() const {
        SceneSpec s;
        s.image_h = image_size[0];
        s.image_w = image_size[1];
        s.min_objects = min_objects;
        s.max_objects = max_objects;
        s.num_classes = num_classes;
        s.contextual = contextual_mode;
        s.seed = dataset_seed;
        return s;
    }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const nlohmann::json& j) : j_(j) {
        check(j.is_object(), "config root must be a JSON object");
    }
    template <typename V>
    void get(const char* key, V& out) {
        seen_.push_back(key);
        if (j_.contains(key)) j_.at(key).get_to(out);
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool known = false;
            for (const auto& k : seen_)
                if (k == it.key()) known = true;
            check(known, "unknown config key: " + it.key());
        }
    }

private:
    const nlohmann::json& j_;
    std::vector<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["mode"] = c.mode;
    j["variant"] = c.variant;
    j["pool_size"] = c.pool_size;
    j["reduction"] = c.reduction;
    j["num_classes"] = c.num_classes;
    j["class_agnostic_reg"] = c.class_agnostic_reg;
    j["share_branch_weights"] = c.share_branch_weights;
    j["rpn_recalibrate"] = c.rpn_recalibrate;
    j["rpn_recal_sigmoid"] = c.rpn_recal_sigmoid;
    j["backbone_widths"] = c.backbone_widths;
    j["canonical_scale"] = c.canonical_scale;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["lr_decay_epochs"] = c.lr_decay_epochs;
    j["lr_decay_factor"] = c.lr_decay_factor;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["horizontal_flip"] = c.horizontal_flip;
    j["image_size"] = c.image_size;
    j["num_scenes"] = c.num_scenes;
    j["min_objects"] = c.min_objects;
    j["max_objects"] = c.max_objects;
    j["contextual_mode"] = c.contextual_mode;
    j["dataset_seed"] = c.dataset_seed;
    j["coco_annotations"] = c.coco_annotations;
    j["coco_image_dir"] = c.coco_image_dir;
    j["pre_nms_top"] = c.pre_nms_top;
    j["post_nms_top"] = c.post_nms_top;
    j["rpn_nms_thr"] = c.rpn_nms_thr;
    j["score_thresh"] = c.score_thresh;
    j["det_nms_thr"] = c.det_nms_thr;
    j["max_detections"] = c.max_detections;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    detail::ConfigReader r(j);
    r.get("mode", c.mode);
    r.get("variant", c.variant);
    r.get("pool_size", c.pool_size);
    r.get("reduction", c.reduction);
    r.get("num_classes", c.num_classes);
    r.get("class_agnostic_reg", c.class_agnostic_reg);
    r.get("share_branch_weights", c.share_branch_weights);
    r.get("rpn_recalibrate", c.rpn_recalibrate);
    r.get("rpn_recal_sigmoid", c.rpn_recal_sigmoid);
    r.get("backbone_widths", c.backbone_widths);
    r.get("canonical_scale", c.canonical_scale);
    r.get("learning_rate", c.learning_rate);
    r.get("momentum", c.momentum);
    r.get("weight_decay", c.weight_decay);
    r.get("lr_decay_epochs", c.lr_decay_epochs);
    r.get("lr_decay_factor", c.lr_decay_factor);
    r.get("epochs", c.epochs);
    r.get("seed", c.seed);
    r.get("horizontal_flip", c.horizontal_flip);
    r.get("image_size", c.image_size);
    r.get("num_scenes", c.num_scenes);
    r.get("min_objects", c.min_objects);
    r.get("max_objects", c.max_objects);
    r.get("contextual_mode", c.contextual_mode);
    r.get("dataset_seed", c.dataset_seed);
    r.get("coco_annotations", c.coco_annotations);
    r.get("coco_image_dir", c.coco_image_dir);
    r.get("pre_nms_top", c.pre_nms_top);
    r.get("post_nms_top", c.post_nms_top);
    r.get("rpn_nms_thr", c.rpn_nms_thr);
    r.get("score_thresh", c.score_thresh);
    r.get("det_nms_thr", c.det_nms_thr);
    r.get("max_detections", c.max_detections);
    r.finish();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "cannot open config: " + path);
    nlohmann::json j;
    f >> j;
    return config_from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
    std::ofstream f(path);
    check(f.good(), "cannot write config: " + path);
    f << to_json(c).dump(2) << "\n";
}

}  // namespace gca
