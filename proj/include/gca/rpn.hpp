#pragma once

#include <array>
#include <random>
#include <vector>

#include "gca/backbone.hpp"
#include "gca/boxes.hpp"
#include "gca/module.hpp"
#include "gca/ops.hpp"

namespace gca {

struct AnchorConfig {
    std::vector<double> ratios{0.5, 1.0, 2.0};          // h/w
    std::array<double, 4> areas{256.0, 1024.0, 4096.0, 16384.0};  // 16^2..128^2
    std::array<int, 4> strides{4, 8, 16, 32};
};

// Anchors materialized per level in tensor layout order: index = (a*H + y)*W + x.
struct AnchorSet {
    std::array<std::vector<Box>, 4> level_boxes;
    std::array<int, 4> level_h{}, level_w{};
    int num_ratios = 0;

    i64 total() const {
        i64 n = 0;
        for (const auto& v : level_boxes) n += static_cast<i64>(v.size());
        return n;
    }
};

inline AnchorSet make_anchors(int img_h, int img_w, const AnchorConfig& cfg = {}) {
    AnchorSet set;
    set.num_ratios = static_cast<int>(cfg.ratios.size());
    for (int l = 0; l < 4; ++l) {
        const int stride = cfg.strides[size_t(l)];
        const int H = img_h / stride, W = img_w / stride;
        set.level_h[size_t(l)] = H;
        set.level_w[size_t(l)] = W;
        auto& out = set.level_boxes[size_t(l)];
        out.reserve(static_cast<size_t>(H) * W * cfg.ratios.size());
        for (double ratio : cfg.ratios) {
            const double w = std::sqrt(cfg.areas[size_t(l)] / ratio);
            const double h = w * ratio;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
                    out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
                }
        }
    }
    return set;
}

template <typename T>
struct RpnOutputs {
    std::array<Tensor<T>, 4> objectness;  // (N, A, Hk, Wk) logits
    std::array<Tensor<T>, 4> deltas;      // (N, 4A, Hk, Wk)
};

struct Proposal {
    Box box;
    double objectness = 0;  // sigmoid score in (0,1)
};

// Region proposal head: optional per-level squeeze-excitation style feature
// recalibration, a shared 3x3 conv + ReLU, and sibling 1x1 convs.
template <typename T>
struct RpnHead {
    int num_anchors = 3;
    Conv2dLayer<T> conv, obj, reg;
    LinearLayer<T> recal;
    bool with_recal = false;
    bool recal_sigmoid = true;  // gate after the FC; switchable for fidelity runs

    explicit RpnHead(int anchors_per_cell = 3, bool recal_layers = false,
                     bool recal_gate = true)
        : num_anchors(anchors_per_cell),
          conv("rpn.conv", kPyramidChannels, kPyramidChannels, 3, 1, 1),
          obj("rpn.obj", kPyramidChannels, anchors_per_cell, 1, 1, 0),
          reg("rpn.reg", kPyramidChannels, 4 * anchors_per_cell, 1, 1, 0),
          with_recal(recal_layers),
          recal_sigmoid(recal_gate) {
        if (with_recal) recal = LinearLayer<T>("rpn.recal", kPyramidChannels, kPyramidChannels);
    }

    // s = sigmoid(fc(gap(p))), output = channel-wise p * s. Shape-preserving.
    Tensor<T> recalibrate_level(const Tensor<T>& p) const {
        check(p.dim(1) == kPyramidChannels, "recalibrate_level: 256 channels expected");
        check(with_recal, "recalibrate_level: head built without recalibration layers");
        auto s = recal.forward(global_avg_pool(p));
        if (recal_sigmoid) s = sigmoid(s);
        return channel_scale(p, s);
    }

    RpnOutputs<T> forward(const PyramidFeatures<T>& pyr, bool recalibrate) const {
        if (recalibrate)
            check(with_recal, "rpn_forward: recalibration requested but layers absent");
        RpnOutputs<T> out;
        auto levels = pyr.levels();
        for (int l = 0; l < 4; ++l) {
            auto x = levels[size_t(l)];
            if (recalibrate) x = recalibrate_level(x);
            auto h = relu(conv.forward(x));
            out.objectness[size_t(l)] = obj.forward(h);
            out.deltas[size_t(l)] = reg.forward(h);
        }
        return out;
    }

    void collect(ParamRefs<T>& out) {
        conv.collect(out);
        obj.collect(out);
        reg.collect(out);
        if (with_recal) recal.collect(out);
    }
};

struct ProposeConfig {
    int pre_nms_top = 256;
    int post_nms_top = 64;
    double nms_thr = 0.7;
    double min_size = 1.0;
};

// Decode + select proposals for every image. Selection is score-descending
// with stable index ties, so equal logits keep anchor order.
template <typename T>
std::vector<std::vector<Proposal>> propose(const RpnOutputs<T>& out, const AnchorSet& anchors,
                                           const ProposeConfig& cfg, int img_w, int img_h) {
    const int N = out.objectness[0].dim(0);
    const int A = anchors.num_ratios;
    std::vector<std::vector<Proposal>> result(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        std::vector<Proposal> merged;
        for (int l = 0; l < 4; ++l) {
            const auto& obj = out.objectness[size_t(l)];
            const auto& reg = out.deltas[size_t(l)];
            const int H = obj.dim(2), W = obj.dim(3);
            const i64 per_img = i64(A) * H * W;
            const T* logits = obj.ptr() + i64(n) * per_img;
            const T* dl = reg.ptr() + i64(n) * 4 * per_img;
            std::vector<int> order(static_cast<size_t>(per_img));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return logits[a] > logits[b]; });
            if (static_cast<i64>(order.size()) > cfg.pre_nms_top)
                order.resize(static_cast<size_t>(cfg.pre_nms_top));
            std::vector<Box> boxes;
            std::vector<double> scores;
            for (int idx : order) {
                const int a = idx / (H * W);
                const int rem = idx % (H * W);
                const int y = rem / W, x = rem % W;
                const auto& anchor = anchors.level_boxes[size_t(l)][size_t(idx)];
                auto at = [&](int comp) {
                    return double(dl[(i64(a) * 4 + comp) * H * W + i64(y) * W + x]);
                };
                Box b = decode_box(anchor, {at(0), at(1), at(2), at(3)});
                b = clip_box(b, img_w, img_h);
                if (b.width() < cfg.min_size || b.height() < cfg.min_size) continue;
                boxes.push_back(b);
                double lv = double(logits[idx]);
                scores.push_back(lv);
            }
            for (int k : nms(boxes, scores, cfg.nms_thr)) {
                const double s = 1.0 / (1.0 + std::exp(-scores[size_t(k)]));
                merged.push_back({boxes[size_t(k)], s});
            }
        }
        std::stable_sort(merged.begin(), merged.end(),
                         [](const Proposal& a, const Proposal& b) {
                             return a.objectness > b.objectness;
                         });
        if (static_cast<i64>(merged.size()) > cfg.post_nms_top)
            merged.resize(static_cast<size_t>(cfg.post_nms_top));
        result[size_t(n)] = std::move(merged);
    }
    return result;
}

struct RpnLossConfig {
    double pos_iou = 0.7;
    double neg_iou = 0.3;
    int batch_per_image = 64;
    double pos_fraction = 0.5;
};

template <typename T>
struct RpnLossResult {
    Tensor<T> loss;
    double cls_value = 0, reg_value = 0;
    int num_pos = 0, num_sampled = 0;
};

namespace detail {

// anchor assignment: 1 positive, 0 negative, -1 ignored
inline void assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gt,
                           double pos_iou, double neg_iou, std::vector<int>& labels,
                           std::vector<int>& matched_gt) {
    const size_t n = anchors.size();
    labels.assign(n, -1);
    matched_gt.assign(n, -1);
    if (gt.empty()) {
        labels.assign(n, 0);
        return;
    }
    std::vector<double> best(n, 0.0);
    std::vector<double> gt_best(gt.size(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t g = 0; g < gt.size(); ++g) {
            const double v = iou(anchors[i], gt[g]);
            if (v > best[i]) {
                best[i] = v;
                matched_gt[i] = static_cast<int>(g);
            }
            gt_best[g] = std::max(gt_best[g], v);
        }
        if (best[i] >= pos_iou)
            labels[i] = 1;
        else if (best[i] < neg_iou)
            labels[i] = 0;
    }
    // every gt claims its best-overlapping anchors (ties included)
    for (size_t g = 0; g < gt.size(); ++g) {
        if (gt_best[g] <= 0.0) continue;
        for (size_t i = 0; i < n; ++i) {
            if (iou(anchors[i], gt[g]) == gt_best[g]) {
                labels[i] = 1;
                matched_gt[i] = static_cast<int>(g);
            }
        }
    }
}

template <typename Rng>
std::vector<int> sample_indices(const std::vector<int>& pool, int want, Rng& rng) {
    if (static_cast<int>(pool.size()) <= want) return pool;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(want));
    std::sample(pool.begin(), pool.end(), std::back_inserter(out),
                static_cast<size_t>(want), rng);
    return out;
}

}  // namespace detail

// Binary cross-entropy on a sampled anchor minibatch plus smooth-L1 on the
// positives' deltas (normalized by the sample count).
template <typename T, typename Rng>
RpnLossResult<T> rpn_loss(const RpnOutputs<T>& out, const AnchorSet& anchors,
                          const std::vector<std::vector<Box>>& gt_boxes, Rng& rng,
                          const RpnLossConfig& cfg = {}) {
    const int N = out.objectness[0].dim(0);
    check(static_cast<int>(gt_boxes.size()) == N, "rpn_loss: gt list size mismatch");
    const int A = anchors.num_ratios;

    std::array<std::vector<i64>, 4> obj_idx;   // flat indices into objectness tensors
    std::array<std::vector<T>, 4> obj_target;
    std::array<std::vector<i64>, 4> reg_idx;   // flat indices into delta tensors
    std::array<std::vector<T>, 4> reg_target;
    int num_pos = 0, num_sampled = 0;

    for (int n = 0; n < N; ++n) {
        // assignment happens over the concatenation of all levels
        std::vector<Box> all;
        std::array<i64, 4> level_off{};
        for (int l = 0; l < 4; ++l) {
            level_off[size_t(l)] = static_cast<i64>(all.size());
            all.insert(all.end(), anchors.level_boxes[size_t(l)].begin(),
                       anchors.level_boxes[size_t(l)].end());
        }
        std::vector<int> labels, matched;
        detail::assign_anchors(all, gt_boxes[size_t(n)], cfg.pos_iou, cfg.neg_iou, labels,
                               matched);
        std::vector<int> pos_pool, neg_pool;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == 1) pos_pool.push_back(static_cast<int>(i));
            if (labels[i] == 0) neg_pool.push_back(static_cast<int>(i));
        }
        const int pos_want = static_cast<int>(cfg.batch_per_image * cfg.pos_fraction);
        auto pos = detail::sample_indices(pos_pool, pos_want, rng);
        auto neg = detail::sample_indices(
            neg_pool, cfg.batch_per_image - static_cast<int>(pos.size()), rng);
        num_pos += static_cast<int>(pos.size());
        num_sampled += static_cast<int>(pos.size() + neg.size());

        auto locate = [&](int global) {
            int l = 3;
            while (l > 0 && global < level_off[size_t(l)]) --l;
            return std::pair<int, i64>(l, global - level_off[size_t(l)]);
        };
        auto push_cls = [&](int global, T target) {
            auto [l, local] = locate(global);
            const i64 per_img = i64(A) * anchors.level_h[size_t(l)] * anchors.level_w[size_t(l)];
            obj_idx[size_t(l)].push_back(i64(n) * per_img + local);
            obj_target[size_t(l)].push_back(target);
        };
        for (int g : pos) push_cls(g, T(1));
        for (int g : neg) push_cls(g, T(0));
        for (int g : pos) {
            auto [l, local] = locate(g);
            const int H = anchors.level_h[size_t(l)], W = anchors.level_w[size_t(l)];
            const int a = static_cast<int>(local / (i64(H) * W));
            const i64 rem = local % (i64(H) * W);
            const auto enc = encode_box(all[size_t(g)],
                                        gt_boxes[size_t(n)][size_t(matched[size_t(g)])]);
            for (int comp = 0; comp < 4; ++comp) {
                reg_idx[size_t(l)].push_back(
                    (i64(n) * 4 * A + i64(a) * 4 + comp) * H * W + rem);
                reg_target[size_t(l)].push_back(T(enc[size_t(comp)]));
            }
        }
    }

    RpnLossResult<T> res;
    res.num_pos = num_pos;
    res.num_sampled = num_sampled;
    check(num_sampled > 0, "rpn_loss: no anchors sampled");

    // classification over all sampled anchors
    std::vector<Tensor<T>> cls_parts;
    std::vector<T> cls_targets;
    for (int l = 0; l < 4; ++l) {
        if (obj_idx[size_t(l)].empty()) continue;
        cls_parts.push_back(gather_flat(out.objectness[size_t(l)], obj_idx[size_t(l)]));
        cls_targets.insert(cls_targets.end(), obj_target[size_t(l)].begin(),
                           obj_target[size_t(l)].end());
    }
    auto logits = concat_flat(cls_parts);
    auto cls = bce_with_logits_mean(logits, cls_targets);
    res.cls_value = double(cls.value());

    if (num_pos > 0) {
        std::vector<Tensor<T>> reg_parts;
        std::vector<T> reg_targets;
        for (int l = 0; l < 4; ++l) {
            if (reg_idx[size_t(l)].empty()) continue;
            reg_parts.push_back(gather_flat(out.deltas[size_t(l)], reg_idx[size_t(l)]));
            reg_targets.insert(reg_targets.end(), reg_target[size_t(l)].begin(),
                               reg_target[size_t(l)].end());
        }
        auto pred = concat_flat(reg_parts);
        auto reg = scale(smooth_l1_sum(pred, reg_targets), T(1) / T(num_sampled));
        res.reg_value = double(reg.value());
        res.loss = add(cls, reg);
    } else {
        res.loss = cls;
    }
    return res;
}

}  // namespace gca
