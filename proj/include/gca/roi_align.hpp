#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "gca/backbone.hpp"
#include "gca/boxes.hpp"
#include "gca/tensor.hpp"

namespace gca {

// FPN level assignment: k = clamp(floor(4 + log2(sqrt(w*h) / canonical)), 2, 5).
// Degenerate boxes fall to level 2.
inline int assign_level(const Box& box, double canonical_scale) {
    const double a = box.area();
    if (a <= 0.0) return 2;
    const int k = static_cast<int>(
        std::floor(4.0 + std::log2(std::sqrt(a) / canonical_scale)));
    return std::clamp(k, 2, 5);
}

struct RoiRef {
    Box box;
    int level = 2;  // 2..5
    int batch = 0;
};

namespace detail {

// One bilinear sample in cell-index coordinates (cell (i,j) center at (i,j)),
// zero outside the map. Weights and corner indices are shared by the forward
// and backward passes.
struct BilinearTap {
    int idx[4];
    double w[4];
    int count = 0;
};

inline BilinearTap bilinear_tap(int H, int W, double v, double u) {
    BilinearTap t;
    if (v < -1.0 || v > double(H) || u < -1.0 || u > double(W)) return t;
    int y0 = static_cast<int>(std::floor(v));
    int x0 = static_cast<int>(std::floor(u));
    const double fy = v - y0, fx = u - x0;
    const double ws[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int i = 0; i < 4; ++i) {
        if (ys[i] < 0 || ys[i] >= H || xs[i] < 0 || xs[i] >= W) continue;
        t.idx[t.count] = ys[i] * W + xs[i];
        t.w[t.count] = ws[i];
        ++t.count;
    }
    return t;
}

}  // namespace detail

// RoIAlign over the whole pyramid: every RoI is cropped from its assigned
// level into (C, out, out) via mean-of-bilinear-samples bins. Boxes use the
// half-pixel ("aligned") convention: image point p maps to feature coordinate
// p/stride - 0.5.
template <typename T>
Tensor<T> roi_align_pyramid(const std::array<Tensor<T>, 4>& levels,
                            const std::vector<RoiRef>& rois, int out, int sampling,
                            const std::array<int, 4>& strides = {4, 8, 16, 32}) {
    check(!rois.empty(), "roi_align: empty roi list");
    const int C = levels[0].dim(1);
    for (const auto& l : levels) check(l.rank() == 4, "roi_align: rank-4 levels required");
    for (const auto& r : rois) {
        check(r.level >= 2 && r.level <= 5, "roi_align: level out of range");
        check(r.batch >= 0 && r.batch < levels[size_t(r.level - 2)].dim(0),
              "roi_align: batch index out of range");
    }
    const int R = static_cast<int>(rois.size());
    auto result = Tensor<T>::raw({R, C, out, out});

    // Precompute taps per roi (shared with backward).
    struct RoiTaps {
        std::vector<detail::BilinearTap> taps;  // out*out*sampling*sampling
    };
    auto taps = std::make_shared<std::vector<RoiTaps>>(rois.size());
    const int S = sampling;
    for (int r = 0; r < R; ++r) {
        const auto& roi = rois[size_t(r)];
        const auto& fmap = levels[size_t(roi.level - 2)];
        const int H = fmap.dim(2), W = fmap.dim(3);
        const double stride = strides[size_t(roi.level - 2)];
        const double x1 = roi.box.x1 / stride - 0.5, y1 = roi.box.y1 / stride - 0.5;
        const double x2 = roi.box.x2 / stride - 0.5, y2 = roi.box.y2 / stride - 0.5;
        const double bw = (x2 - x1) / out, bh = (y2 - y1) / out;
        auto& rt = (*taps)[size_t(r)];
        rt.taps.reserve(size_t(out) * out * S * S);
        for (int by = 0; by < out; ++by)
            for (int bx = 0; bx < out; ++bx)
                for (int sy = 0; sy < S; ++sy)
                    for (int sx = 0; sx < S; ++sx) {
                        const double v = y1 + bh * (by + (sy + 0.5) / S);
                        const double u = x1 + bw * (bx + (sx + 0.5) / S);
                        rt.taps.push_back(detail::bilinear_tap(H, W, v, u));
                    }
    }

    parallel_for(R, 1, [&](i64 r) {
        const auto& roi = rois[size_t(r)];
        const auto& fmap = levels[size_t(roi.level - 2)];
        const i64 HW = i64(fmap.dim(2)) * fmap.dim(3);
        const auto& rt = (*taps)[size_t(r)];
        const T inv = T(1) / T(S * S);
        for (int c = 0; c < C; ++c) {
            const T* src = fmap.ptr() + (i64(roi.batch) * C + c) * HW;
            T* dst = result.ptr() + (r * C + c) * out * out;
            size_t ti = 0;
            for (int p = 0; p < out * out; ++p) {
                T acc = 0;
                for (int s = 0; s < S * S; ++s, ++ti) {
                    const auto& tap = rt.taps[ti];
                    for (int q = 0; q < tap.count; ++q)
                        acc += T(tap.w[q]) * src[tap.idx[q]];
                }
                dst[p] = acc * inv;
            }
        }
    });

    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& l : levels) parents.push_back(l.node());
    detail::record<T>(result, parents, [rois, taps, C, out, S](Node<T>& o) {
        const T inv = T(1) / T(S * S);
        for (size_t r = 0; r < rois.size(); ++r) {
            auto& fn = *o.parents[size_t(rois[r].level - 2)];
            if (!fn.requires_grad) continue;
            fn.ensure_grad();
            const i64 HW = i64(fn.shape[2]) * fn.shape[3];
            const auto& rt = (*taps)[r];
            for (int c = 0; c < C; ++c) {
                T* dst = fn.grad.data() + (i64(rois[r].batch) * C + c) * HW;
                const T* dy = o.grad.data() + (i64(r) * C + c) * out * out;
                size_t ti = 0;
                for (int p = 0; p < out * out; ++p) {
                    const T g = dy[p] * inv;
                    for (int s = 0; s < S * S; ++s, ++ti) {
                        const auto& tap = rt.taps[ti];
                        for (int q = 0; q < tap.count; ++q)
                            dst[tap.idx[q]] += g * T(tap.w[q]);
                    }
                }
            }
        }
    });
    return result;
}

// Single-feature, single-box form: crops box from `feature` (batch 0) at the
// given stride into a (C, out, out) tensor.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& feature, const Box& box, int stride, int out = 7,
                    int sampling = 2) {
    check(feature.rank() == 4, "roi_align: rank-4 feature required");
    int level = 2;
    std::array<int, 4> strides{stride, stride, stride, stride};
    auto batched =
        roi_align_pyramid<T>({feature, feature, feature, feature}, {{box, level, 0}},
                             out, sampling, strides);
    return reshape(batched, {feature.dim(1), out, out});
}

}  // namespace gca
