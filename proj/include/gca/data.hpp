#pragma once

#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "gca/boxes.hpp"
#include "gca/tensor.hpp"

namespace gca {

// Synthetic desk-scale scenes: solid rectangles, discs and triangles over a
// plain background. In contextual mode the glyph (shape and fill color) is
// identical across a class pair and the label is decided solely by the
// background hue bucket, painted as a frame along the image border so the
// cue is global and outside any RoI's receptive field.
struct SceneSpec {
    int image_h = 128, image_w = 128;
    int min_objects = 1, max_objects = 4;
    int num_classes = 3;  // contextual mode pairs classes: K must be even
    bool contextual = false;
    u64 seed = 0;

    void validate() const {
        check(image_h % 32 == 0 && image_w % 32 == 0, "image extents must divide by 32");
        check(min_objects >= 1 && max_objects >= min_objects, "bad object count range");
        if (contextual) {
            check(num_classes % 2 == 0 && num_classes / 2 <= 3 && num_classes >= 2,
                  "contextual mode needs an even class count of at most 6");
            check(std::min(image_h, image_w) >= 96,
                  "contextual mode needs at least 96px images for the frame margin");
        } else {
            check(num_classes >= 1 && num_classes <= 3, "plain mode supports 1..3 classes");
        }
    }
};

struct Scene {
    int h = 0, w = 0;
    std::vector<float> pixels;  // (3, h, w) row-major, values in [0,1]
    std::vector<Box> boxes;
    std::vector<int> labels;  // 1..K
};

namespace detail {

inline constexpr int kFrameWidth = 8;
inline constexpr int kContextMargin = 32;  // keeps glyphs outside frame receptive fields

struct Glyph {
    int shape = 0;  // 0 rect, 1 disc, 2 triangle
    Box box;
};

inline bool inside_glyph(const Glyph& g, double px, double py) {
    const Box& b = g.box;
    switch (g.shape) {
        case 0:
            return px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2;
        case 1: {
            const double rx = b.width() / 2, ry = b.height() / 2;
            const double dx = (px - b.cx()) / rx, dy = (py - b.cy()) / ry;
            return dx * dx + dy * dy <= 1.0;
        }
        default: {
            // upward triangle: apex mid-top, base along the bottom edge
            if (py < b.y1 || py > b.y2 || px < b.x1 || px > b.x2) return false;
            const double t = (py - b.y1) / std::max(1e-9, b.height());  // 0 top, 1 bottom
            const double half = 0.5 * b.width() * t;
            return std::abs(px - b.cx()) <= half;
        }
    }
}

inline std::array<float, 3> shape_color(int shape) {
    switch (shape) {
        case 0: return {0.92f, 0.92f, 0.92f};
        case 1: return {0.95f, 0.80f, 0.30f};
        default: return {0.40f, 0.90f, 0.55f};
    }
}

inline std::array<float, 3> hue_color(int bucket) {
    return bucket == 0 ? std::array<float, 3>{0.85f, 0.35f, 0.12f}
                       : std::array<float, 3>{0.12f, 0.35f, 0.85f};
}

}  // namespace detail

// Deterministic in (spec.seed, index).
inline Scene generate_scene(const SceneSpec& spec, i64 index) {
    spec.validate();
    std::mt19937_64 rng(derive_seed(spec.seed, "scene", u64(index)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Scene s;
    s.h = spec.image_h;
    s.w = spec.image_w;
    s.pixels.assign(size_t(3) * s.h * s.w, 0.f);

    const int hue_bucket = spec.contextual ? int(rng() % 2) : 0;
    std::array<float, 3> bg;
    if (spec.contextual) {
        bg = {0.25f, 0.25f, 0.25f};
    } else {
        for (auto& c : bg) c = float(0.10 + 0.25 * unit(rng));
    }

    // background + (contextual) hue frame
    const auto frame = detail::hue_color(hue_bucket);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            const bool in_frame =
                spec.contextual &&
                (y < detail::kFrameWidth || y >= s.h - detail::kFrameWidth ||
                 x < detail::kFrameWidth || x >= s.w - detail::kFrameWidth);
            for (int c = 0; c < 3; ++c) {
                float v = in_frame ? frame[size_t(c)] : bg[size_t(c)];
                v += float((unit(rng) - 0.5) * 0.04);  // mild texture
                s.pixels[(size_t(c) * s.h + y) * s.w + x] = std::clamp(v, 0.f, 1.f);
            }
        }

    const int margin = spec.contextual ? detail::kContextMargin : 4;
    const int num_shapes = spec.contextual ? spec.num_classes / 2 : spec.num_classes;
    std::uniform_int_distribution<int> count_dist(spec.min_objects, spec.max_objects);
    const int want = count_dist(rng);

    // glyph extents scale with the image: [s/8, 9s/32] per axis (16..36 at 128px)
    const double min_px = std::min(s.h, s.w) / 8.0;
    const double ext_px = std::min(s.h, s.w) * 9.0 / 32.0 - min_px;
    std::vector<detail::Glyph> glyphs;
    for (int k = 0; k < want; ++k) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            const int shape = int(rng() % u64(num_shapes));
            const double wpx = min_px + unit(rng) * ext_px;
            const double hpx = min_px + unit(rng) * ext_px;
            const double max_x = s.w - margin - wpx, max_y = s.h - margin - hpx;
            if (max_x <= margin || max_y <= margin) continue;
            Box b;
            b.x1 = margin + unit(rng) * (max_x - margin);
            b.y1 = margin + unit(rng) * (max_y - margin);
            b.x2 = b.x1 + wpx;
            b.y2 = b.y1 + hpx;
            bool clash = false;
            for (const auto& g : glyphs)
                if (iou(g.box, b) > 0.02) clash = true;
            if (clash) continue;
            glyphs.push_back({shape, b});
            const int label = spec.contextual ? shape * 2 + hue_bucket + 1 : shape + 1;
            s.boxes.push_back(b);
            s.labels.push_back(label);
            break;
        }
    }

    for (const auto& g : glyphs) {
        const auto color = detail::shape_color(g.shape);
        const int y0 = std::max(0, int(std::floor(g.box.y1)));
        const int y1 = std::min(s.h, int(std::ceil(g.box.y2)));
        const int x0 = std::max(0, int(std::floor(g.box.x1)));
        const int x1 = std::min(s.w, int(std::ceil(g.box.x2)));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                if (!detail::inside_glyph(g, x + 0.5, y + 0.5)) continue;
                for (int c = 0; c < 3; ++c)
                    s.pixels[(size_t(c) * s.h + y) * s.w + x] = color[size_t(c)];
            }
    }
    return s;
}

struct Dataset {
    std::vector<Scene> scenes;
    int num_classes = 0;
};

inline Dataset make_dataset(const SceneSpec& spec, int count, i64 index_offset = 0) {
    Dataset d;
    d.num_classes = spec.num_classes;
    d.scenes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) d.scenes.push_back(generate_scene(spec, index_offset + i));
    return d;
}

template <typename T>
Tensor<T> scene_to_tensor(const Scene& s) {
    std::vector<T> vals(s.pixels.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = T(s.pixels[i]);
    return Tensor<T>::from_data({1, 3, s.h, s.w}, std::move(vals));
}

inline Scene flip_horizontal(const Scene& s) {
    Scene out = s;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                out.pixels[(size_t(c) * s.h + y) * s.w + x] =
                    s.pixels[(size_t(c) * s.h + y) * s.w + (s.w - 1 - x)];
    for (size_t i = 0; i < s.boxes.size(); ++i) {
        out.boxes[i].x1 = s.w - s.boxes[i].x2;
        out.boxes[i].x2 = s.w - s.boxes[i].x1;
    }
    return out;
}

// --- PPM (P6, maxval 255) ----------------------------------------------------------

inline void write_ppm(const std::string& path, const Scene& s) {
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "cannot open for writing: " + path);
    f << "P6\n" << s.w << " " << s.h << "\n255\n";
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = s.pixels[(size_t(c) * s.h + y) * s.w + x];
                f.put(char(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)));
            }
}

inline Scene read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    check(magic == "P6" && w > 0 && h > 0 && maxval == 255, "unsupported PPM: " + path);
    f.get();  // single whitespace after header
    Scene s;
    s.w = w;
    s.h = h;
    s.pixels.assign(size_t(3) * w * h, 0.f);
    std::vector<char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(row.data(), static_cast<std::streamsize>(row.size()));
        check(f.good(), "truncated PPM: " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                s.pixels[(size_t(c) * h + y) * w + x] =
                    float(static_cast<unsigned char>(row[size_t(x) * 3 + size_t(c)])) / 255.f;
    }
    return s;
}

}  // namespace gca
