#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "gca/boxes.hpp"
#include "gca/detector.hpp"

namespace gca {

struct GtObject {
    Box box;
    int label = 0;
};

struct MetricsReport {
    std::vector<double> iou_thresholds;        // 0.50 .. 0.95
    std::vector<double> ap_per_iou;            // mean over classes, per threshold
    std::map<int, double> ap_per_class;        // mean over thresholds, per class
    double map = 0;                            // mean over thresholds and classes
    double ap50 = 0;
    double pair_accuracy = -1;                 // contextual hue pairs; -1 = not computed
    i64 total_params = 0;
    double forward_latency_ms = -1;
};

namespace detail {

// All-point interpolated AP for one class at one IoU threshold. Detections are
// matched greedily in score order against unmatched ground truth of the same
// image.
inline double ap_single(const std::vector<std::vector<Detection>>& dets_per_image,
                        const std::vector<std::vector<GtObject>>& gt_per_image, int label,
                        double thr) {
    struct Entry {
        double score;
        int image;
        int det_index;
    };
    std::vector<Entry> entries;
    i64 total_gt = 0;
    for (size_t n = 0; n < dets_per_image.size(); ++n) {
        for (size_t d = 0; d < dets_per_image[n].size(); ++d)
            if (dets_per_image[n][d].label == label)
                entries.push_back({dets_per_image[n][d].score, int(n), int(d)});
        for (const auto& g : gt_per_image[n])
            if (g.label == label) ++total_gt;
    }
    if (total_gt == 0) return -1;  // class absent: excluded from means
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.score > b.score;
    });

    std::vector<std::vector<char>> used(gt_per_image.size());
    for (size_t n = 0; n < gt_per_image.size(); ++n)
        used[n].assign(gt_per_image[n].size(), 0);

    std::vector<double> precision, recall;
    i64 tp = 0, fp = 0;
    for (const auto& e : entries) {
        const auto& det = dets_per_image[size_t(e.image)][size_t(e.det_index)];
        double best = 0;
        int best_g = -1;
        const auto& gts = gt_per_image[size_t(e.image)];
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].label != label || used[size_t(e.image)][g]) continue;
            const double v = iou(det.box, gts[g].box);
            if (v > best) {
                best = v;
                best_g = int(g);
            }
        }
        if (best_g >= 0 && best >= thr) {
            used[size_t(e.image)][size_t(best_g)] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(total_gt));
    }
    if (precision.empty()) return 0.0;
    // monotone precision envelope, then sum over recall increments
    for (int i = int(precision.size()) - 2; i >= 0; --i)
        precision[size_t(i)] = std::max(precision[size_t(i)], precision[size_t(i) + 1]);
    double ap = 0, prev_r = 0;
    for (size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_r) * precision[i];
        prev_r = recall[i];
    }
    return ap;
}

}  // namespace detail

inline std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

inline MetricsReport evaluate_detections(
    const std::vector<std::vector<Detection>>& dets_per_image,
    const std::vector<std::vector<GtObject>>& gt_per_image, int num_classes) {
    check(dets_per_image.size() == gt_per_image.size(), "evaluate: image count mismatch");
    check(!gt_per_image.empty(), "evaluate: empty dataset");
    MetricsReport rep;
    rep.iou_thresholds = coco_iou_thresholds();
    std::map<int, std::vector<double>> per_class_aps;
    for (double thr : rep.iou_thresholds) {
        double sum = 0;
        int present = 0;
        for (int c = 1; c <= num_classes; ++c) {
            const double ap = detail::ap_single(dets_per_image, gt_per_image, c, thr);
            if (ap < 0) continue;
            per_class_aps[c].push_back(ap);
            sum += ap;
            ++present;
        }
        rep.ap_per_iou.push_back(present > 0 ? sum / present : 0.0);
    }
    for (auto& [c, aps] : per_class_aps)
        rep.ap_per_class[c] = std::accumulate(aps.begin(), aps.end(), 0.0) / double(aps.size());
    rep.map = std::accumulate(rep.ap_per_iou.begin(), rep.ap_per_iou.end(), 0.0) /
              double(rep.ap_per_iou.size());
    rep.ap50 = rep.ap_per_iou.empty() ? 0.0 : rep.ap_per_iou[0];
    return rep;
}

// Fraction of ground-truth objects in glyph-identical class pairs (2k-1, 2k)
// whose best-scoring localizing detection carries the right pair member.
// Returns -1 when no pair object was localized at all.
inline double hue_pair_accuracy(const std::vector<std::vector<Detection>>& dets_per_image,
                                const std::vector<std::vector<GtObject>>& gt_per_image,
                                int num_classes, double iou_thr = 0.5) {
    check(num_classes % 2 == 0, "pair accuracy needs an even class count");
    i64 correct = 0, counted = 0;
    for (size_t n = 0; n < gt_per_image.size(); ++n) {
        for (const auto& g : gt_per_image[n]) {
            const int pair_lo = ((g.label - 1) / 2) * 2 + 1;
            const Detection* best = nullptr;
            for (const auto& d : dets_per_image[n]) {
                if (d.label != pair_lo && d.label != pair_lo + 1) continue;
                if (iou(d.box, g.box) < iou_thr) continue;
                if (!best || d.score > best->score) best = &d;
            }
            if (!best) continue;  // localization failure, not a hue confusion
            ++counted;
            if (best->label == g.label) ++correct;
        }
    }
    return counted == 0 ? -1.0 : double(correct) / double(counted);
}

}  // namespace gca
