#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "gca/common.hpp"

namespace gca {

// Axis-aligned box in continuous image coordinates.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
};

inline double iou(const Box& a, const Box& b) {
    const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
    const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

inline Box clip_box(const Box& b, double img_w, double img_h) {
    Box o;
    o.x1 = std::clamp(b.x1, 0.0, img_w);
    o.y1 = std::clamp(b.y1, 0.0, img_h);
    o.x2 = std::clamp(b.x2, 0.0, img_w);
    o.y2 = std::clamp(b.y2, 0.0, img_h);
    return o;
}

using BoxWeights = std::array<double, 4>;
inline constexpr BoxWeights kUnitWeights{1, 1, 1, 1};

// (dx, dy, dw, dh): scale-relative center shifts and log-space size ratios.
inline std::array<double, 4> encode_box(const Box& anchor, const Box& target,
                                        const BoxWeights& w = kUnitWeights) {
    const double aw = anchor.width(), ah = anchor.height();
    return {w[0] * (target.cx() - anchor.cx()) / aw, w[1] * (target.cy() - anchor.cy()) / ah,
            w[2] * std::log(target.width() / aw), w[3] * std::log(target.height() / ah)};
}

inline Box decode_box(const Box& anchor, const std::array<double, 4>& deltas,
                      const BoxWeights& w = kUnitWeights) {
    static const double kScaleClamp = std::log(16.0);
    const double dx = deltas[0] / w[0], dy = deltas[1] / w[1];
    const double dw = std::min(deltas[2] / w[2], kScaleClamp);
    const double dh = std::min(deltas[3] / w[3], kScaleClamp);
    const double aw = anchor.width(), ah = anchor.height();
    const double cx = anchor.cx() + dx * aw, cy = anchor.cy() + dy * ah;
    const double nw = aw * std::exp(dw), nh = ah * std::exp(dh);
    return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

// Greedy IoU suppression. Candidates are visited in descending score order
// (ties broken by lower index); survivors are returned in that order.
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                            double iou_thr) {
    check(boxes.size() == scores.size(), "nms: box/score length mismatch");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<int> keep;
    std::vector<char> dead(boxes.size(), 0);
    for (size_t i = 0; i < order.size(); ++i) {
        int a = order[i];
        if (dead[a]) continue;
        keep.push_back(a);
        for (size_t j = i + 1; j < order.size(); ++j) {
            int b = order[j];
            if (!dead[b] && iou(boxes[a], boxes[b]) > iou_thr) dead[b] = 1;
        }
    }
    return keep;
}

}  // namespace gca
