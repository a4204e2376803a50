#pragma once

#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gca/config.hpp"
#include "gca/data.hpp"
#include "gca/detector.hpp"
#include "gca/metrics.hpp"
#include "gca/roi_align.hpp"

namespace gca {

// Finite-difference verification of the analytic gradients, always in 64-bit.
// Relative error uses |analytic - numeric| / max(1, |numeric|).

struct GradCheckEntry {
    std::string site;
    double max_rel_err = 0;
    int checked = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    bool all_pass() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return true;
    }
    double worst() const {
        double w = 0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
    void print(FILE* out = stdout) const {
        for (const auto& e : entries)
            std::fprintf(out, "  %-44s max_rel_err %.3e over %4d probes  %s\n",
                         e.site.c_str(), e.max_rel_err, e.checked,
                         e.pass ? "ok" : "FAIL");
    }
};

namespace detail {

using DTensor = Tensor<double>;

inline std::vector<double> gc_random(size_t n, u64 seed, double lo, double hi) {
    std::mt19937_64 rng(derive_seed(seed, "gradcheck"));
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

inline DTensor gc_tensor(std::vector<int> shape, u64 seed, double lo = -1, double hi = 1) {
    auto vals = gc_random(size_t(numel_of(shape)), seed, lo, hi);
    return DTensor::from_data(std::move(shape), std::move(vals));
}

// Checks every element of every input against central differences of a fixed
// random weighting of the op output.
inline GradCheckEntry check_op(const std::string& site,
                               const std::function<DTensor(const std::vector<DTensor>&)>& op,
                               std::vector<DTensor> inputs, double tol,
                               double kink_margin = 0.0, double step = 1e-5) {
    GradCheckEntry entry;
    entry.site = site;
    std::vector<double> weights;
    {
        NoGradGuard ng;
        auto probe = op(inputs);
        weights = gc_random(probe.data().size(), 7777, 0.1, 1.0);
    }
    auto scalarized = [&]() {
        NoGradGuard ng;
        auto y = op(inputs);
        double s = 0;
        for (size_t i = 0; i < y.data().size(); ++i) s += y.data()[i] * weights[i];
        return s;
    };

    for (auto& t : inputs) t.set_requires_grad(true);
    auto y = op(inputs);
    auto w = DTensor::from_data(y.shape(), weights);
    backward(sum(mul(y, w)));

    for (auto& x : inputs) {
        const auto& analytic = x.grad();
        for (size_t i = 0; i < x.data().size(); ++i) {
            if (kink_margin > 0 && std::abs(x.data()[i]) < kink_margin) continue;
            const double orig = x.data()[i];
            x.data()[i] = orig + step;
            const double fp = scalarized();
            x.data()[i] = orig - step;
            const double fm = scalarized();
            x.data()[i] = orig;
            const double numeric = (fp - fm) / (2 * step);
            const double err = std::abs(analytic[i] - numeric) /
                               std::max(1.0, std::abs(numeric));
            entry.max_rel_err = std::max(entry.max_rel_err, err);
            ++entry.checked;
        }
    }
    entry.pass = entry.max_rel_err < tol;
    return entry;
}

}  // namespace detail

inline GradCheckReport grad_check_ops(double tol = 1e-4) {
    using detail::DTensor;
    using detail::check_op;
    using detail::gc_tensor;
    GradCheckReport rep;
    rep.tolerance = tol;
    auto add_entry = [&](GradCheckEntry e) { rep.entries.push_back(std::move(e)); };

    add_entry(check_op(
        "conv2d stride2 pad1",
        [](const std::vector<DTensor>& x) { return conv2d(x[0], x[1], x[2], 2, 1); },
        {gc_tensor({2, 2, 5, 5}, 1), gc_tensor({3, 2, 3, 3}, 2), gc_tensor({3}, 3)}, tol));
    add_entry(check_op(
        "conv2d stride1 pad0 1x1",
        [](const std::vector<DTensor>& x) { return conv2d(x[0], x[1], x[2], 1, 0); },
        {gc_tensor({1, 3, 4, 4}, 4), gc_tensor({2, 3, 1, 1}, 5), gc_tensor({2}, 6)}, tol));
    add_entry(check_op(
        "linear", [](const std::vector<DTensor>& x) { return linear(x[0], x[1], x[2]); },
        {gc_tensor({3, 6}, 7), gc_tensor({4, 6}, 8), gc_tensor({4}, 9)}, tol));
    add_entry(check_op("relu (kink excluded)",
                       [](const std::vector<DTensor>& x) { return relu(x[0]); },
                       {gc_tensor({4, 6}, 10)}, tol, 1e-3));
    add_entry(check_op("sigmoid", [](const std::vector<DTensor>& x) { return sigmoid(x[0]); },
                       {gc_tensor({4, 6}, 11, -4, 4)}, tol));
    add_entry(check_op("softplus",
                       [](const std::vector<DTensor>& x) { return softplus(x[0]); },
                       {gc_tensor({4, 6}, 12, -4, 4)}, tol));
    add_entry(check_op(
        "adaptive_avg_pool 5x7->3x2",
        [](const std::vector<DTensor>& x) { return adaptive_avg_pool(x[0], 3, 2); },
        {gc_tensor({2, 3, 5, 7}, 13)}, tol));
    add_entry(check_op("global_avg_pool",
                       [](const std::vector<DTensor>& x) { return global_avg_pool(x[0]); },
                       {gc_tensor({2, 4, 3, 3}, 14)}, tol));
    add_entry(check_op(
        "upsample_nearest2x",
        [](const std::vector<DTensor>& x) { return upsample_nearest2x(x[0]); },
        {gc_tensor({1, 2, 3, 3}, 15)}, tol));
    add_entry(check_op(
        "concat_channels",
        [](const std::vector<DTensor>& x) {
            return concat_channels<double>({x[0], x[1]});
        },
        {gc_tensor({2, 2, 3, 3}, 16), gc_tensor({2, 3, 3, 3}, 17)}, tol));
    add_entry(check_op("elementwise add",
                       [](const std::vector<DTensor>& x) { return add(x[0], x[1]); },
                       {gc_tensor({3, 4}, 18), gc_tensor({3, 4}, 19)}, tol));
    add_entry(check_op("elementwise mul",
                       [](const std::vector<DTensor>& x) { return mul(x[0], x[1]); },
                       {gc_tensor({3, 4}, 20), gc_tensor({3, 4}, 21)}, tol));
    add_entry(check_op(
        "channel_scale",
        [](const std::vector<DTensor>& x) { return channel_scale(x[0], x[1]); },
        {gc_tensor({2, 3, 4, 4}, 22), gc_tensor({2, 3}, 23)}, tol));
    add_entry(check_op("flatten", [](const std::vector<DTensor>& x) { return flatten(x[0]); },
                       {gc_tensor({2, 3, 2, 2}, 24)}, tol));
    add_entry(check_op(
        "gather_rows",
        [](const std::vector<DTensor>& x) { return gather_rows(x[0], {2, 0, 2, 1}); },
        {gc_tensor({3, 5}, 25)}, tol));
    add_entry(check_op(
        "gather_flat",
        [](const std::vector<DTensor>& x) { return gather_flat(x[0], {7, 1, 3, 1}); },
        {gc_tensor({2, 4}, 26)}, tol));
    {
        auto target = detail::gc_random(12, 27, -1, 1);
        add_entry(check_op(
            "smooth_l1 (kink clearance via targets)",
            [target](const std::vector<DTensor>& x) { return smooth_l1_sum(x[0], target); },
            {gc_tensor({12}, 28, -2, 2)}, tol));
    }
    {
        std::vector<double> targets{0, 1, 1, 0, 1, 0};
        add_entry(check_op(
            "bce_with_logits",
            [targets](const std::vector<DTensor>& x) {
                return bce_with_logits_mean(x[0], targets);
            },
            {gc_tensor({6}, 29, -3, 3)}, tol));
    }
    {
        std::vector<int> labels{0, 2, 1};
        add_entry(check_op(
            "cross_entropy",
            [labels](const std::vector<DTensor>& x) {
                return cross_entropy_mean(x[0], labels);
            },
            {gc_tensor({3, 4}, 30, -2, 2)}, tol));
    }
    add_entry(check_op(
        "roi_align",
        [](const std::vector<DTensor>& x) {
            return roi_align(x[0], Box{1.5, 2.0, 16.0, 19.0}, 4, 3, 2);
        },
        {gc_tensor({1, 2, 6, 6}, 31)}, tol));
    return rep;
}

// End-to-end check: full training graph (rpn loss + head loss on frozen
// proposals) on a small single-object scene, probing a few elements of every
// parameter tensor.
inline GradCheckEntry grad_check_end_to_end_config(const ExperimentConfig& cfg,
                                                   double tol = 1e-4,
                                                   int probes_per_param = 2) {
    GradCheckEntry entry;
    entry.site = "end_to_end " + cfg.mode +
                 (cfg.mode == "full" ? " " + cfg.variant : std::string());

    auto dcfg = cfg.detection();
    dcfg.roi_sample.batch_per_image = 6;  // probe cost, not detection quality
    Detector<double> model(dcfg);
    model.init(cfg.seed);
    auto params = model.params();

    SceneSpec spec = cfg.scene_spec();
    Scene scene = generate_scene(spec, 0);
    auto img = scene_to_tensor<double>(scene);
    std::vector<std::vector<Box>> gt_boxes{scene.boxes};
    std::vector<std::vector<int>> gt_labels{scene.labels};
    auto anchors = make_anchors(scene.h, scene.w, model.cfg.anchors);

    // proposals and RoI sampling frozen so the probed function stays smooth
    SampledRois sampled;
    {
        NoGradGuard ng;
        auto pyr = model.features(img);
        auto rpn_out = model.rpn.forward(pyr, model.cfg.rpn_recalibrate);
        auto proposals = propose(rpn_out, anchors, model.cfg.propose, scene.w, scene.h);
        std::mt19937_64 rng(derive_seed(cfg.seed, "e2e_sample"));
        sample_rois_for_image(proposals[0], scene.boxes, scene.labels, 0,
                              model.cfg.canonical_scale, rng, model.cfg.roi_sample, sampled);
    }
    check(!sampled.empty(), "end-to-end gradcheck: no rois sampled");

    auto loss_value = [&]() -> Tensor<double> {
        auto pyr = model.features(img);
        auto rpn_out = model.rpn.forward(pyr, model.cfg.rpn_recalibrate);
        std::mt19937_64 rng(derive_seed(cfg.seed, "e2e_rpn"));
        auto rloss = rpn_loss(rpn_out, anchors, gt_boxes, rng, model.cfg.rpn_loss_opts);
        auto roi_feats = roi_align_pyramid(pyr.levels(), sampled.rois, kRoiSize, kRoiSampling);
        auto [scores, deltas] = model.head.forward(pyr, roi_feats, sampled.batch_of);
        auto hloss = head_loss(scores, deltas, sampled, model.cfg.head.class_agnostic_reg);
        return add(rloss.loss, hloss.loss);
    };

    zero_grads(params);
    backward(loss_value());

    const double step = 1e-6;
    double f0;
    {
        NoGradGuard ng;
        f0 = loss_value().value();
    }
    for (Param<double>* p : params) {
        auto& vals = p->value.data();
        const auto& analytic = p->value.grad();
        std::vector<size_t> sites;
        sites.push_back(0);
        if (vals.size() > 10000) sites.push_back(vals.size() / 2);  // catch stride bugs
        if (int(sites.size()) > probes_per_param) sites.resize(size_t(probes_per_param));
        for (size_t i : sites) {
            const double orig = vals[i];
            double fp, fm;
            {
                NoGradGuard ng;
                vals[i] = orig + step;
                fp = loss_value().value();
                vals[i] = orig - step;
                fm = loss_value().value();
                vals[i] = orig;
            }
            const double numeric = (fp - fm) / (2 * step);
            // When the two one-sided differences disagree, a kink (ReLU,
            // smooth-L1 corner) sits inside the probe window and the central
            // difference is not a derivative estimate: excluded, like the
            // |x| > 1e-3 exclusion in the op-level relu check.
            const double one_sided_gap = std::abs((fp - f0) / step - (f0 - fm) / step);
            if (one_sided_gap > tol * std::max(1.0, std::abs(numeric))) continue;
            const double err =
                std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            entry.max_rel_err = std::max(entry.max_rel_err, err);
            ++entry.checked;
        }
    }
    entry.pass = entry.max_rel_err < tol && entry.checked > 0;
    return entry;
}

// Small end-to-end scene configuration shared by the suite and the CLI.
inline ExperimentConfig end_to_end_check_config(const std::string& mode,
                                                const std::string& variant) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.variant = variant;
    cfg.image_size = {32, 32};
    cfg.pool_size = {8, 8};
    cfg.num_classes = 3;
    cfg.min_objects = 1;
    cfg.max_objects = 1;
    cfg.pre_nms_top = 32;
    cfg.post_nms_top = 8;
    cfg.seed = 0;
    return cfg;
}

inline GradCheckReport grad_check_end_to_end(double tol = 1e-4) {
    GradCheckReport rep;
    rep.tolerance = tol;
    for (const char* mode : {"baseline", "dense_no_attention", "lightweight"})
        rep.entries.push_back(
            grad_check_end_to_end_config(end_to_end_check_config(mode, "conv"), tol));
    for (const char* variant :
         {"conv", "fc1", "fc2", "conv_fc1", "conv_fc2", "conv_fc1_fc2"})
        rep.entries.push_back(
            grad_check_end_to_end_config(end_to_end_check_config("full", variant), tol));
    // RPN recalibration path
    auto cfg = end_to_end_check_config("baseline", "conv");
    cfg.rpn_recalibrate = true;
    auto e = grad_check_end_to_end_config(cfg, tol);
    e.site += " +rpn_recal";
    rep.entries.push_back(std::move(e));
    return rep;
}

}  // namespace gca
