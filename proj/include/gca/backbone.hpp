#pragma once

#include <array>
#include <string>

#include "gca/module.hpp"
#include "gca/ops.hpp"

namespace gca {

template <typename T>
struct BackboneFeatures {
    Tensor<T> c2, c3, c4, c5;  // strides 4, 8, 16, 32
};

template <typename T>
struct PyramidFeatures {
    Tensor<T> p2, p3, p4, p5;  // 256 channels each, strides 4, 8, 16, 32

    std::array<Tensor<T>, 4> levels() const { return {p2, p3, p4, p5}; }
    static constexpr std::array<int, 4> strides{4, 8, 16, 32};
};

inline constexpr int kPyramidChannels = 256;

// Small trainable stand-in for a classification backbone: a stride-4 stem of
// two stride-2 convs, then per-stage [stride-2 conv, stride-1 conv], all 3x3
// with ReLU. Stage c2 runs at the stem's stride with two stride-1 convs.
template <typename T>
struct TinyBackbone {
    std::array<int, 4> widths{32, 64, 128, 256};
    Conv2dLayer<T> stem1, stem2;
    Conv2dLayer<T> s2a, s2b, s3a, s3b, s4a, s4b, s5a, s5b;

    explicit TinyBackbone(const std::array<int, 4>& w = {32, 64, 128, 256})
        : widths(w),
          stem1("backbone.stem1", 3, w[0], 3, 2, 1),
          stem2("backbone.stem2", w[0], w[0], 3, 2, 1),
          s2a("backbone.c2a", w[0], w[0], 3, 1, 1),
          s2b("backbone.c2b", w[0], w[0], 3, 1, 1),
          s3a("backbone.c3a", w[0], w[1], 3, 2, 1),
          s3b("backbone.c3b", w[1], w[1], 3, 1, 1),
          s4a("backbone.c4a", w[1], w[2], 3, 2, 1),
          s4b("backbone.c4b", w[2], w[2], 3, 1, 1),
          s5a("backbone.c5a", w[2], w[3], 3, 2, 1),
          s5b("backbone.c5b", w[3], w[3], 3, 1, 1) {}

    BackboneFeatures<T> forward(const Tensor<T>& image) const {
        check(image.rank() == 4 && image.dim(1) == 3, "backbone: expected (N,3,H,W) image");
        check(image.dim(2) % 32 == 0 && image.dim(3) % 32 == 0,
              "backbone: image extents must be divisible by 32");
        auto x = relu(stem1.forward(image));
        x = relu(stem2.forward(x));
        BackboneFeatures<T> f;
        x = relu(s2a.forward(x));
        f.c2 = relu(s2b.forward(x));
        x = relu(s3a.forward(f.c2));
        f.c3 = relu(s3b.forward(x));
        x = relu(s4a.forward(f.c3));
        f.c4 = relu(s4b.forward(x));
        x = relu(s5a.forward(f.c4));
        f.c5 = relu(s5b.forward(x));
        return f;
    }

    void collect(ParamRefs<T>& out) {
        for (auto* l : {&stem1, &stem2, &s2a, &s2b, &s3a, &s3b, &s4a, &s4b, &s5a, &s5b})
            l->collect(out);
    }
};

// FPN top-down pathway: 1x1 laterals to 256 channels, nearest-2x upsampling
// with element-wise sums, and a 3x3 smoothing conv on every merged map.
template <typename T>
struct Fpn {
    Conv2dLayer<T> lat2, lat3, lat4, lat5;
    Conv2dLayer<T> smooth2, smooth3, smooth4, smooth5;
    bool use_smoothing = true;

    explicit Fpn(const std::array<int, 4>& in_widths = {32, 64, 128, 256},
                 bool smoothing = true)
        : lat2("fpn.lat2", in_widths[0], kPyramidChannels, 1, 1, 0),
          lat3("fpn.lat3", in_widths[1], kPyramidChannels, 1, 1, 0),
          lat4("fpn.lat4", in_widths[2], kPyramidChannels, 1, 1, 0),
          lat5("fpn.lat5", in_widths[3], kPyramidChannels, 1, 1, 0),
          smooth2("fpn.smooth2", kPyramidChannels, kPyramidChannels, 3, 1, 1),
          smooth3("fpn.smooth3", kPyramidChannels, kPyramidChannels, 3, 1, 1),
          smooth4("fpn.smooth4", kPyramidChannels, kPyramidChannels, 3, 1, 1),
          smooth5("fpn.smooth5", kPyramidChannels, kPyramidChannels, 3, 1, 1),
          use_smoothing(smoothing) {}

    PyramidFeatures<T> forward(const BackboneFeatures<T>& f) const {
        auto m5 = lat5.forward(f.c5);
        auto m4 = add(lat4.forward(f.c4), upsample_nearest2x(m5));
        auto m3 = add(lat3.forward(f.c3), upsample_nearest2x(m4));
        auto m2 = add(lat2.forward(f.c2), upsample_nearest2x(m3));
        PyramidFeatures<T> p;
        if (use_smoothing) {
            p.p5 = smooth5.forward(m5);
            p.p4 = smooth4.forward(m4);
            p.p3 = smooth3.forward(m3);
            p.p2 = smooth2.forward(m2);
        } else {
            p.p5 = m5;
            p.p4 = m4;
            p.p3 = m3;
            p.p2 = m2;
        }
        return p;
    }

    void collect(ParamRefs<T>& out) {
        for (auto* l : {&lat2, &lat3, &lat4, &lat5}) l->collect(out);
        if (use_smoothing)
            for (auto* l : {&smooth2, &smooth3, &smooth4, &smooth5}) l->collect(out);
    }
};

}  // namespace gca
