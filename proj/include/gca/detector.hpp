#pragma once

#include <string>
#include <vector>

#include "gca/backbone.hpp"
#include "gca/gca_head.hpp"
#include "gca/roi_align.hpp"
#include "gca/rpn.hpp"

namespace gca {

struct InferenceConfig {
    double score_thresh = 0.05;
    double nms_thr = 0.5;
    int max_detections = 100;
};

struct DetectionConfig {
    GcaConfig head;
    std::array<int, 4> backbone_widths{32, 64, 128, 256};
    bool rpn_recalibrate = false;
    bool rpn_recal_sigmoid = true;
    double canonical_scale = 56.0;  // assign_level reference size
    AnchorConfig anchors;
    ProposeConfig propose;
    RpnLossConfig rpn_loss_opts;
    RoiSampleConfig roi_sample;
    InferenceConfig inference;
};

struct Detection {
    Box box;
    int label = 0;
    double score = 0;
};

template <typename T>
struct Detector {
    DetectionConfig cfg;
    TinyBackbone<T> backbone;
    Fpn<T> fpn;
    RpnHead<T> rpn;
    GcaHead<T> head;

    explicit Detector(const DetectionConfig& config)
        : cfg(config),
          backbone(config.backbone_widths),
          fpn(config.backbone_widths),
          rpn(static_cast<int>(config.anchors.ratios.size()), config.rpn_recalibrate,
              config.rpn_recal_sigmoid),
          head(config.head) {}

    ParamRefs<T> params() {
        ParamRefs<T> out;
        backbone.collect(out);
        fpn.collect(out);
        rpn.collect(out);
        head.collect(out);
        return out;
    }

    void init(u64 seed) { init_params(params(), seed); }

    i64 total_params() { return param_count(params()); }

    i64 params_with_prefix(const std::string& prefix) {
        i64 n = 0;
        for (const Param<T>* p : params())
            if (p->path.rfind(prefix, 0) == 0) n += p->numel();
        return n;
    }

    PyramidFeatures<T> features(const Tensor<T>& image) const {
        return fpn.forward(backbone.forward(image));
    }

    struct LossBreakdown {
        Tensor<T> total;
        double rpn_cls = 0, rpn_reg = 0, head_cls = 0, head_reg = 0;
        int num_fg = 0, num_proposals = 0;
        double value() const { return rpn_cls + rpn_reg + head_cls + head_reg; }
    };

    // One optimization step's graph: rpn loss on sampled anchors plus head
    // loss on sampled proposals (proposal boxes are constants, as usual for
    // two-stage training).
    template <typename Rng>
    LossBreakdown training_loss(const Tensor<T>& image,
                                const std::vector<std::vector<Box>>& gt_boxes,
                                const std::vector<std::vector<int>>& gt_labels,
                                Rng& rng) const {
        const int img_h = image.dim(2), img_w = image.dim(3);
        auto pyr = features(image);
        auto rpn_out = rpn.forward(pyr, cfg.rpn_recalibrate);
        auto anchors = make_anchors(img_h, img_w, cfg.anchors);
        auto rloss = rpn_loss(rpn_out, anchors, gt_boxes, rng, cfg.rpn_loss_opts);

        std::vector<std::vector<Proposal>> proposals;
        {
            NoGradGuard ng;
            proposals = propose(rpn_out, anchors, cfg.propose, img_w, img_h);
        }
        SampledRois sampled;
        for (size_t n = 0; n < proposals.size(); ++n)
            sample_rois_for_image(proposals[n], gt_boxes[n], gt_labels[n],
                                  static_cast<int>(n), cfg.canonical_scale, rng,
                                  cfg.roi_sample, sampled);

        LossBreakdown out;
        out.rpn_cls = rloss.cls_value;
        out.rpn_reg = rloss.reg_value;
        for (const auto& p : proposals) out.num_proposals += static_cast<int>(p.size());
        if (sampled.empty()) {
            out.total = rloss.loss;
            return out;
        }
        auto roi_feats =
            roi_align_pyramid(pyr.levels(), sampled.rois, kRoiSize, kRoiSampling);
        auto [scores, deltas] = head.forward(pyr, roi_feats, sampled.batch_of);
        auto hloss = head_loss(scores, deltas, sampled, cfg.head.class_agnostic_reg);
        out.head_cls = hloss.cls_value;
        out.head_reg = hloss.reg_value;
        out.num_fg = sampled.num_fg;
        out.total = add(rloss.loss, hloss.loss);
        return out;
    }

    std::vector<std::vector<Detection>> detect(const Tensor<T>& image) const {
        NoGradGuard ng;
        const int img_h = image.dim(2), img_w = image.dim(3);
        const int N = image.dim(0);
        auto pyr = features(image);
        auto rpn_out = rpn.forward(pyr, cfg.rpn_recalibrate);
        auto anchors = make_anchors(img_h, img_w, cfg.anchors);
        auto proposals = propose(rpn_out, anchors, cfg.propose, img_w, img_h);

        std::vector<RoiRef> rois;
        std::vector<int> batch_of;
        for (int n = 0; n < N; ++n)
            for (const auto& p : proposals[size_t(n)]) {
                rois.push_back({p.box, assign_level(p.box, cfg.canonical_scale), n});
                batch_of.push_back(n);
            }
        std::vector<std::vector<Detection>> out(static_cast<size_t>(N));
        if (rois.empty()) return out;

        auto roi_feats = roi_align_pyramid(pyr.levels(), rois, kRoiSize, kRoiSampling);
        auto [score_logits, deltas] = head.forward(pyr, roi_feats, batch_of);
        auto probs = softmax_rows(score_logits);

        const int K = cfg.head.num_classes;
        const i64 dstride = deltas.dim(1);
        for (int n = 0; n < N; ++n) {
            std::vector<Box> boxes;
            std::vector<double> scores;
            std::vector<int> labels;
            for (size_t r = 0; r < rois.size(); ++r) {
                if (batch_of[r] != n) continue;
                for (int c = 1; c <= K; ++c) {
                    const double p = double(probs[r * size_t(K + 1) + size_t(c)]);
                    if (p < cfg.inference.score_thresh) continue;
                    const i64 base = cfg.head.class_agnostic_reg
                                         ? i64(r) * dstride
                                         : i64(r) * dstride + i64(c - 1) * 4;
                    std::array<double, 4> d{double(deltas.ptr()[base]),
                                            double(deltas.ptr()[base + 1]),
                                            double(deltas.ptr()[base + 2]),
                                            double(deltas.ptr()[base + 3])};
                    Box b = clip_box(decode_box(rois[r].box, d, cfg.roi_sample.box_weights),
                                     img_w, img_h);
                    if (b.width() <= 0 || b.height() <= 0) continue;
                    boxes.push_back(b);
                    scores.push_back(p);
                    labels.push_back(c);
                }
            }
            // per-class NMS
            std::vector<Detection> dets;
            for (int c = 1; c <= K; ++c) {
                std::vector<Box> cb;
                std::vector<double> cs;
                std::vector<size_t> src;
                for (size_t i = 0; i < boxes.size(); ++i)
                    if (labels[i] == c) {
                        cb.push_back(boxes[i]);
                        cs.push_back(scores[i]);
                        src.push_back(i);
                    }
                for (int k : nms(cb, cs, cfg.inference.nms_thr))
                    dets.push_back({cb[size_t(k)], c, cs[size_t(k)]});
            }
            std::stable_sort(dets.begin(), dets.end(),
                             [](const Detection& a, const Detection& b) {
                                 return a.score > b.score;
                             });
            if (static_cast<int>(dets.size()) > cfg.inference.max_detections)
                dets.resize(static_cast<size_t>(cfg.inference.max_detections));
            out[size_t(n)] = std::move(dets);
        }
        return out;
    }
};

}  // namespace gca
