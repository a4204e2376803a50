#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gca/backbone.hpp"
#include "gca/boxes.hpp"
#include "gca/module.hpp"
#include "gca/ops.hpp"
#include "gca/roi_align.hpp"
#include "gca/rpn.hpp"

namespace gca {

enum class HeadMode { baseline, dense_no_attention, full, lightweight };
enum class AttentionVariant { conv, fc1, fc2, conv_fc1, conv_fc2, conv_fc1_fc2 };

inline bool variant_has_conv(AttentionVariant v) {
    return v == AttentionVariant::conv || v == AttentionVariant::conv_fc1 ||
           v == AttentionVariant::conv_fc2 || v == AttentionVariant::conv_fc1_fc2;
}
inline bool variant_has_fc1(AttentionVariant v) {
    return v == AttentionVariant::fc1 || v == AttentionVariant::conv_fc1 ||
           v == AttentionVariant::conv_fc1_fc2;
}
inline bool variant_has_fc2(AttentionVariant v) {
    return v == AttentionVariant::fc2 || v == AttentionVariant::conv_fc2 ||
           v == AttentionVariant::conv_fc1_fc2;
}

struct GcaConfig {
    int pool_m = 16, pool_n = 16;  // initial adaptive pool size (M, N)
    int reduction = 8;             // SE bottleneck reduction r
    AttentionVariant variant = AttentionVariant::conv;
    HeadMode mode = HeadMode::full;
    int num_classes = 3;           // foreground classes K
    bool class_agnostic_reg = false;
    bool share_branch_weights = false;

    void validate() const {
        check(pool_m > 0 && pool_n > 0 && pool_m % 8 == 0 && pool_n % 8 == 0,
              "pool size must be positive and divisible by 8");
        check(reduction > 0 && kPyramidChannels % reduction == 0,
              "reduction must divide 256");
        check(num_classes >= 1, "at least one foreground class required");
    }
    int hidden_width() const { return kPyramidChannels / reduction; }
    int box_outputs() const { return class_agnostic_reg ? 4 : 4 * num_classes; }
};

inline constexpr int kRoiSize = 7;
inline constexpr int kRoiSampling = 2;
inline constexpr int kRoiFlat = kPyramidChannels * kRoiSize * kRoiSize;  // 12544
inline constexpr int kTrunkWidth = 1024;

// --- dense global context lattice ------------------------------------------------

// Branch j enters at stage j with the concatenation [q_j, h_0, ..., h_{j-1}]
// (channel count 256*(j+1)) and applies 3-j stride-2 downsampling blocks; the
// last branch's entry concatenation is reduced by a 1x1 conv instead. All
// outputs land on the stage-3 grid of (M/8, N/8).
struct DenseLatticePlan {
    struct BranchSpec {
        int entry_stage = 0;
        int entry_channels = 0;
        int num_blocks = 0;
        std::vector<int> concat_sources;  // earlier branches whose running feature joins
    };
    std::array<BranchSpec, 4> branches;
    // binary connection matrix rows as published
    std::array<std::array<int, 3>, 4> w_rows{{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 0, 1}}};

    static DenseLatticePlan make() {
        DenseLatticePlan p;
        for (int j = 0; j < 4; ++j) {
            auto& b = p.branches[size_t(j)];
            b.entry_stage = j;
            b.entry_channels = kPyramidChannels * (j + 1);
            b.num_blocks = 3 - j;
            for (int k = 0; k < j; ++k) b.concat_sources.push_back(k);
        }
        return p;
    }

    // does pooled input q_k influence output g_j?
    bool output_depends_on(int j, int k) const { return k <= j; }
};

// q_i = adaptive_avg_pool(p_{i+2}) at (M,N) * {1, 1/2, 1/4, 1/8}.
template <typename T>
std::array<Tensor<T>, 4> pool_pyramid(const PyramidFeatures<T>& p, int pool_m, int pool_n) {
    check(pool_m % 8 == 0 && pool_n % 8 == 0, "pool size must be divisible by 8");
    auto levels = p.levels();
    std::array<Tensor<T>, 4> q;
    for (int i = 0; i < 4; ++i) {
        const int th = pool_m >> i, tw = pool_n >> i;
        const auto& src = levels[size_t(i)];
        check(th <= src.dim(2) && tw <= src.dim(3),
              "pool size exceeds feature size at stage " + std::to_string(i));
        q[size_t(i)] = adaptive_avg_pool(src, th, tw);
    }
    return q;
}

template <typename T>
struct DenseLattice {
    DenseLatticePlan plan = DenseLatticePlan::make();
    std::array<std::vector<Conv2dLayer<T>>, 4> blocks;
    Conv2dLayer<T> entry3;  // 1x1 reduction standing in for D^0

    explicit DenseLattice(const std::string& prefix = "head.lattice") {
        for (int j = 0; j < 3; ++j) {
            for (int t = 0; t < plan.branches[size_t(j)].num_blocks; ++t) {
                const int cin = t == 0 ? plan.branches[size_t(j)].entry_channels
                                       : kPyramidChannels;
                blocks[size_t(j)].emplace_back(
                    prefix + ".b" + std::to_string(j) + ".d" + std::to_string(t), cin,
                    kPyramidChannels, 3, 2, 1);
            }
        }
        entry3 = Conv2dLayer<T>(prefix + ".b3.reduce",
                                plan.branches[3].entry_channels, kPyramidChannels, 1, 1, 0);
    }

    std::array<Tensor<T>, 4> forward(const std::array<Tensor<T>, 4>& q) const {
        std::array<Tensor<T>, 4> h;
        for (int t = 0; t < 4; ++t) {
            // branch t enters with [q_t, h_0, ..., h_{t-1}]
            std::vector<Tensor<T>> cat{q[size_t(t)]};
            for (int k = 0; k < t; ++k) cat.push_back(h[size_t(k)]);
            h[size_t(t)] = cat.size() == 1 ? cat[0] : concat_channels(cat);
            if (t == 3) {
                h[3] = relu(entry3.forward(h[3]));
                break;
            }
            // advance every entered branch one stage
            for (int k = 0; k <= t; ++k)
                h[size_t(k)] = relu(blocks[size_t(k)][size_t(t - k)].forward(h[size_t(k)]));
        }
        return h;
    }

    void collect(ParamRefs<T>& out) {
        for (auto& branch : blocks)
            for (auto& b : branch) b.collect(out);
        entry3.collect(out);
    }
};

// --- context-aware (squeeze-excitation) descriptors -------------------------------

template <typename T>
struct ContextDescriptor {
    Tensor<T> s256;       // always produced
    Tensor<T> s1024_fc1;  // for variants gating the first FC
    Tensor<T> s1024_fc2;  // for variants gating the decoupled FCs
};

// Bottleneck: gap -> fc(256 -> 256/r) + ReLU -> parallel sigmoid projections.
template <typename T>
struct SeDescriptor {
    LinearLayer<T> fc_squeeze, fc_s256;
    std::optional<LinearLayer<T>> fc_fc1, fc_fc2;

    SeDescriptor() = default;
    SeDescriptor(const std::string& prefix, int reduction, AttentionVariant variant)
        : fc_squeeze(prefix + ".squeeze", kPyramidChannels, kPyramidChannels / reduction),
          fc_s256(prefix + ".expand256", kPyramidChannels / reduction, kPyramidChannels) {
        check(kPyramidChannels % reduction == 0, "reduction must divide 256");
        if (variant_has_fc1(variant))
            fc_fc1.emplace(prefix + ".expand1024a", kPyramidChannels / reduction, kTrunkWidth);
        if (variant_has_fc2(variant))
            fc_fc2.emplace(prefix + ".expand1024b", kPyramidChannels / reduction, kTrunkWidth);
    }

    // g: (N, 256, h, w) -> descriptors per image
    ContextDescriptor<T> forward(const Tensor<T>& g) const {
        auto hidden = relu(fc_squeeze.forward(global_avg_pool(g)));
        return forward_from_vector_hidden(hidden);
    }

    // z: (N, 256) channel statistics (lightweight path)
    ContextDescriptor<T> forward_from_vector(const Tensor<T>& z) const {
        return forward_from_vector_hidden(relu(fc_squeeze.forward(z)));
    }

    void collect(ParamRefs<T>& out) {
        fc_squeeze.collect(out);
        fc_s256.collect(out);
        if (fc_fc1) fc_fc1->collect(out);
        if (fc_fc2) fc_fc2->collect(out);
    }

private:
    ContextDescriptor<T> forward_from_vector_hidden(const Tensor<T>& hidden) const {
        ContextDescriptor<T> d;
        d.s256 = sigmoid(fc_s256.forward(hidden));
        if (fc_fc1) d.s1024_fc1 = sigmoid(fc_fc1->forward(hidden));
        if (fc_fc2) d.s1024_fc2 = sigmoid(fc_fc2->forward(hidden));
        return d;
    }
};

// descriptor rows re-indexed so row r corresponds to RoI r
template <typename T>
ContextDescriptor<T> gather_descriptor(const ContextDescriptor<T>& d,
                                       const std::vector<int>& batch_of) {
    ContextDescriptor<T> out;
    out.s256 = gather_rows(d.s256, batch_of);
    if (d.s1024_fc1.defined()) out.s1024_fc1 = gather_rows(d.s1024_fc1, batch_of);
    if (d.s1024_fc2.defined()) out.s1024_fc2 = gather_rows(d.s1024_fc2, batch_of);
    return out;
}

// --- attention placement ------------------------------------------------------------

// RoI features (R,256,7,7) -> branch trunk (R,1024). `desc` must already be
// gathered per RoI. Exactly the gates named by the variant are applied.
template <typename T>
Tensor<T> apply_attention(const Tensor<T>& roi, const ContextDescriptor<T>& desc,
                          AttentionVariant variant, const LinearLayer<T>& fc1) {
    check(roi.rank() == 4 && roi.dim(1) == kPyramidChannels, "apply_attention: bad roi shape");
    auto x = roi;
    if (variant_has_conv(variant)) {
        check(desc.s256.dim(0) == roi.dim(0), "apply_attention: descriptor/RoI mismatch");
        x = channel_scale(x, desc.s256);
    }
    auto t = fc1.forward(flatten(x));
    if (variant_has_fc1(variant)) t = channel_scale(t, desc.s1024_fc1);
    return relu(t);
}

// task decoupling: two parallel FCs for classification and localization.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> branch_head(const Tensor<T>& trunk,
                                            const ContextDescriptor<T>& desc,
                                            AttentionVariant variant,
                                            const LinearLayer<T>& fc_cls,
                                            const LinearLayer<T>& fc_loc) {
    auto c = relu(fc_cls.forward(trunk));
    auto l = relu(fc_loc.forward(trunk));
    if (variant_has_fc2(variant)) {
        c = channel_scale(c, desc.s1024_fc2);
        l = channel_scale(l, desc.s1024_fc2);
    }
    return {c, l};
}

// element-wise sum across branches, per stream, in branch order.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fuse_branches(
    const std::vector<std::pair<Tensor<T>, Tensor<T>>>& feats) {
    check(feats.size() == 4, "fuse_branches: four branches required");
    auto cls = feats[0].first;
    auto loc = feats[0].second;
    for (size_t j = 1; j < feats.size(); ++j) {
        cls = add(cls, feats[j].first);
        loc = add(loc, feats[j].second);
    }
    return {cls, loc};
}

// --- head assembly -------------------------------------------------------------------

// Second-stage head covering the four modes:
//   baseline           two shared FCs, no global context
//   dense_no_attention lattice + per-branch 512/512 concat fusion
//   full               lattice + per-branch context-aware modules with gating
//   lightweight        single SE over summed pyramid statistics + baseline trunk
template <typename T>
struct GcaHead {
    GcaConfig cfg;

    std::optional<DenseLattice<T>> lattice;

    struct FullBranch {
        SeDescriptor<T> desc;
        LinearLayer<T> fc1, fc_cls, fc_loc;
    };
    struct DenseBranch {
        LinearLayer<T> fc_g, fc_roi, fc_mix, fc_cls, fc_loc;
    };
    std::vector<FullBranch> full_branches;
    std::vector<DenseBranch> dense_branches;

    LinearLayer<T> fc1, fc2;     // baseline / lightweight trunk
    SeDescriptor<T> lw_se;       // lightweight descriptor bottleneck
    LinearLayer<T> pred_cls, pred_box;

    explicit GcaHead(const GcaConfig& config) : cfg(config) {
        cfg.validate();
        const int branch_count = cfg.share_branch_weights ? 1 : 4;
        auto bname = [&](int j) {
            return cfg.share_branch_weights ? std::string("head.branch_shared")
                                            : "head.branch" + std::to_string(j);
        };
        switch (cfg.mode) {
            case HeadMode::baseline:
                fc1 = LinearLayer<T>("head.fc1", kRoiFlat, kTrunkWidth);
                fc2 = LinearLayer<T>("head.fc2", kTrunkWidth, kTrunkWidth);
                break;
            case HeadMode::lightweight:
                fc1 = LinearLayer<T>("head.fc1", kRoiFlat, kTrunkWidth);
                fc2 = LinearLayer<T>("head.fc2", kTrunkWidth, kTrunkWidth);
                lw_se = SeDescriptor<T>("head.lw_se", cfg.reduction, AttentionVariant::conv);
                break;
            case HeadMode::dense_no_attention:
                lattice.emplace("head.lattice");
                for (int j = 0; j < branch_count; ++j)
                    dense_branches.push_back(DenseBranch{
                        LinearLayer<T>(bname(j) + ".fc_g", kPyramidChannels, 512),
                        LinearLayer<T>(bname(j) + ".fc_roi", kRoiFlat, 512),
                        LinearLayer<T>(bname(j) + ".fc_mix", 1024, kTrunkWidth),
                        LinearLayer<T>(bname(j) + ".fc_cls", kTrunkWidth, kTrunkWidth),
                        LinearLayer<T>(bname(j) + ".fc_loc", kTrunkWidth, kTrunkWidth)});
                break;
            case HeadMode::full:
                lattice.emplace("head.lattice");
                for (int j = 0; j < branch_count; ++j)
                    full_branches.push_back(FullBranch{
                        SeDescriptor<T>(bname(j) + ".se", cfg.reduction, cfg.variant),
                        LinearLayer<T>(bname(j) + ".fc1", kRoiFlat, kTrunkWidth),
                        LinearLayer<T>(bname(j) + ".fc_cls", kTrunkWidth, kTrunkWidth),
                        LinearLayer<T>(bname(j) + ".fc_loc", kTrunkWidth, kTrunkWidth)});
                break;
        }
        pred_cls = LinearLayer<T>("head.pred_cls", kTrunkWidth, cfg.num_classes + 1);
        pred_box = LinearLayer<T>("head.pred_box", kTrunkWidth, cfg.box_outputs());
    }

    const FullBranch& full_branch(int j) const {
        return full_branches[cfg.share_branch_weights ? 0 : size_t(j)];
    }
    const DenseBranch& dense_branch(int j) const {
        return dense_branches[cfg.share_branch_weights ? 0 : size_t(j)];
    }

    // roi_feats: (R,256,7,7); batch_of[r] = source image row of RoI r.
    // Returns (class scores (R,K+1), box deltas (R,4K or 4)).
    std::pair<Tensor<T>, Tensor<T>> forward(const PyramidFeatures<T>& pyr,
                                            const Tensor<T>& roi_feats,
                                            const std::vector<int>& batch_of) const {
        check(roi_feats.rank() == 4 && roi_feats.dim(0) == int(batch_of.size()),
              "head: roi/batch index mismatch");
        switch (cfg.mode) {
            case HeadMode::baseline: {
                auto t = relu(fc2.forward(relu(fc1.forward(flatten(roi_feats)))));
                return predict(t, t);
            }
            case HeadMode::lightweight: {
                auto d = lightweight_descriptor(pyr);
                auto rows = gather_rows(d.s256, batch_of);
                auto x = channel_scale(roi_feats, rows);
                auto t = relu(fc2.forward(relu(fc1.forward(flatten(x)))));
                return predict(t, t);
            }
            case HeadMode::dense_no_attention: {
                auto g = run_lattice(pyr);
                std::vector<std::pair<Tensor<T>, Tensor<T>>> feats;
                for (int j = 0; j < 4; ++j) {
                    const auto& br = dense_branch(j);
                    auto zg = global_avg_pool(g[size_t(j)]);
                    auto enc_g = relu(br.fc_g.forward(gather_rows(zg, batch_of)));
                    auto enc_r = relu(br.fc_roi.forward(flatten(roi_feats)));
                    auto trunk = relu(br.fc_mix.forward(concat_channels<T>({enc_g, enc_r})));
                    feats.emplace_back(relu(br.fc_cls.forward(trunk)),
                                       relu(br.fc_loc.forward(trunk)));
                }
                auto fused = fuse_branches(feats);
                return predict(fused.first, fused.second);
            }
            case HeadMode::full: {
                auto g = run_lattice(pyr);
                std::vector<std::pair<Tensor<T>, Tensor<T>>> feats;
                for (int j = 0; j < 4; ++j) {
                    const auto& br = full_branch(j);
                    auto d = gather_descriptor(br.desc.forward(g[size_t(j)]), batch_of);
                    auto trunk = apply_attention(roi_feats, d, cfg.variant, br.fc1);
                    feats.push_back(branch_head(trunk, d, cfg.variant, br.fc_cls, br.fc_loc));
                }
                auto fused = fuse_branches(feats);
                return predict(fused.first, fused.second);
            }
        }
        fail("head: unknown mode");
    }

    std::array<Tensor<T>, 4> run_lattice(const PyramidFeatures<T>& pyr) const {
        auto q = pool_pyramid(pyr, cfg.pool_m, cfg.pool_n);
        return lattice->forward(q);
    }

    // z = sum of per-level channel statistics, one SE bottleneck.
    ContextDescriptor<T> lightweight_descriptor(const PyramidFeatures<T>& pyr) const {
        auto levels = pyr.levels();
        auto z = global_avg_pool(levels[0]);
        for (int l = 1; l < 4; ++l) z = add(z, global_avg_pool(levels[size_t(l)]));
        return lw_se.forward_from_vector(z);
    }

    std::pair<Tensor<T>, Tensor<T>> predict(const Tensor<T>& cls_feat,
                                            const Tensor<T>& loc_feat) const {
        return {pred_cls.forward(cls_feat), pred_box.forward(loc_feat)};
    }

    void collect(ParamRefs<T>& out) {
        if (lattice) lattice->collect(out);
        for (auto& b : full_branches) {
            b.desc.collect(out);
            b.fc1.collect(out);
            b.fc_cls.collect(out);
            b.fc_loc.collect(out);
        }
        for (auto& b : dense_branches) {
            b.fc_g.collect(out);
            b.fc_roi.collect(out);
            b.fc_mix.collect(out);
            b.fc_cls.collect(out);
            b.fc_loc.collect(out);
        }
        if (cfg.mode == HeadMode::baseline || cfg.mode == HeadMode::lightweight) {
            fc1.collect(out);
            fc2.collect(out);
        }
        if (cfg.mode == HeadMode::lightweight) lw_se.collect(out);
        pred_cls.collect(out);
        pred_box.collect(out);
    }
};

// --- RoI sampling and loss --------------------------------------------------------------

struct RoiSampleConfig {
    int batch_per_image = 32;
    double fg_fraction = 0.25;
    double fg_iou = 0.5;
    double bg_iou_lo = 0.1, bg_iou_hi = 0.5;
    BoxWeights box_weights{10, 10, 5, 5};
    bool add_gt = true;  // ground-truth boxes join the candidate pool during training
};

struct SampledRois {
    std::vector<RoiRef> rois;
    std::vector<int> batch_of;
    std::vector<int> labels;                        // 0 = background
    std::vector<std::array<double, 4>> reg_targets; // valid where labels > 0
    int num_fg = 0;
    bool empty() const { return rois.empty(); }
};

template <typename Rng>
void sample_rois_for_image(const std::vector<Proposal>& proposals,
                           const std::vector<Box>& gt_boxes,
                           const std::vector<int>& gt_labels, int batch_index,
                           double canonical_scale, Rng& rng, const RoiSampleConfig& cfg,
                           SampledRois& out) {
    std::vector<Box> cand;
    for (const auto& p : proposals) cand.push_back(p.box);
    if (cfg.add_gt)
        for (const auto& g : gt_boxes) cand.push_back(g);
    if (cand.empty()) return;

    std::vector<int> fg_pool, bg_pool;
    std::vector<int> matched(cand.size(), -1);
    for (size_t i = 0; i < cand.size(); ++i) {
        double best = 0;
        for (size_t g = 0; g < gt_boxes.size(); ++g) {
            const double v = iou(cand[i], gt_boxes[g]);
            if (v > best) {
                best = v;
                matched[i] = static_cast<int>(g);
            }
        }
        if (best >= cfg.fg_iou)
            fg_pool.push_back(static_cast<int>(i));
        else if (best >= cfg.bg_iou_lo && best < cfg.bg_iou_hi)
            bg_pool.push_back(static_cast<int>(i));
    }
    if (fg_pool.empty() && bg_pool.empty()) return;  // skip image

    const int fg_want = static_cast<int>(cfg.batch_per_image * cfg.fg_fraction);
    auto fg = detail::sample_indices(fg_pool, fg_want, rng);
    auto bg = detail::sample_indices(bg_pool,
                                     cfg.batch_per_image - static_cast<int>(fg.size()), rng);
    for (int i : fg) {
        const Box& b = cand[size_t(i)];
        out.rois.push_back({b, assign_level(b, canonical_scale), batch_index});
        out.batch_of.push_back(batch_index);
        out.labels.push_back(gt_labels[size_t(matched[size_t(i)])]);
        out.reg_targets.push_back(
            encode_box(b, gt_boxes[size_t(matched[size_t(i)])], cfg.box_weights));
        ++out.num_fg;
    }
    for (int i : bg) {
        const Box& b = cand[size_t(i)];
        out.rois.push_back({b, assign_level(b, canonical_scale), batch_index});
        out.batch_of.push_back(batch_index);
        out.labels.push_back(0);
        out.reg_targets.push_back({0, 0, 0, 0});
    }
}

template <typename T>
struct HeadLossResult {
    Tensor<T> loss;
    double cls_value = 0, reg_value = 0;
};

// Cross-entropy over K+1 classes plus smooth-L1 on the matched class's deltas
// for foreground RoIs, normalized by the total sampled count.
template <typename T>
HeadLossResult<T> head_loss(const Tensor<T>& scores, const Tensor<T>& deltas,
                            const SampledRois& sampled, bool class_agnostic) {
    const i64 R = scores.dim(0);
    check(R == static_cast<i64>(sampled.labels.size()), "head_loss: label count mismatch");
    HeadLossResult<T> res;
    auto cls = cross_entropy_mean(scores, sampled.labels);
    res.cls_value = double(cls.value());
    if (sampled.num_fg == 0) {
        res.loss = cls;
        return res;
    }
    const i64 stride = deltas.dim(1);
    std::vector<i64> idx;
    std::vector<T> targets;
    for (i64 r = 0; r < R; ++r) {
        const int label = sampled.labels[size_t(r)];
        if (label == 0) continue;
        const i64 base = class_agnostic ? r * stride : r * stride + i64(label - 1) * 4;
        for (int comp = 0; comp < 4; ++comp) {
            idx.push_back(base + comp);
            targets.push_back(T(sampled.reg_targets[size_t(r)][size_t(comp)]));
        }
    }
    auto pred = gather_flat(deltas, idx);
    auto reg = scale(smooth_l1_sum(pred, targets), T(1) / T(R));
    res.reg_value = double(reg.value());
    res.loss = add(cls, reg);
    return res;
}

}  // namespace gca
