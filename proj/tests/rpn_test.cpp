#include <gtest/gtest.h>

#include <random>

#include "gca/rpn.hpp"
#include "oracles.hpp"

using gca::Box;
using gca::Tensor;
using F = Tensor<float>;

TEST(Boxes, DecodeZeroDeltasIsIdentity) {
    Box a{10, 20, 30, 60};
    Box d = gca::decode_box(a, {0, 0, 0, 0});
    EXPECT_NEAR(d.x1, a.x1, 1e-9);
    EXPECT_NEAR(d.y2, a.y2, 1e-9);
}

TEST(Boxes, LogTwoDoublesWidth) {
    Box a{0, 0, 10, 10};
    Box d = gca::decode_box(a, {0, 0, std::log(2.0), 0});
    EXPECT_NEAR(d.width(), 20.0, 1e-9);
    EXPECT_NEAR(d.height(), 10.0, 1e-9);
}

TEST(Boxes, EncodeDecodeInversePair) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    std::uniform_real_distribution<double> uw(-1.0, std::log(16.0) - 0.01);
    for (int t = 0; t < 200; ++t) {
        Box a{10 + u(rng) * 5, 10 + u(rng) * 5, 40 + u(rng) * 5, 50 + u(rng) * 5};
        std::array<double, 4> d{u(rng), u(rng), uw(rng), uw(rng)};
        auto round = gca::encode_box(a, gca::decode_box(a, d));
        for (int c = 0; c < 4; ++c) EXPECT_NEAR(round[size_t(c)], d[size_t(c)], 1e-5);
    }
}

TEST(Nms, SuppressesOverlap) {
    std::vector<Box> boxes{{0, 0, 10, 10}, {0, 0, 10, 8.9}};  // IoU ~0.89
    std::vector<double> scores{0.9, 0.8};
    auto keep = gca::nms(boxes, scores, 0.7);
    ASSERT_EQ(keep.size(), 1u);
    EXPECT_EQ(keep[0], 0);
}

TEST(Nms, KeepsDisjoint) {
    std::vector<Box> boxes{{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 0, 50, 10}};
    std::vector<double> scores{0.5, 0.9, 0.7};
    auto keep = gca::nms(boxes, scores, 0.5);
    EXPECT_EQ(keep.size(), 3u);
}

TEST(Nms, MatchesBruteForceOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 50);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 100; ++i) {
        double x = u(rng), y = u(rng), w = 5 + u(rng) / 4, h = 5 + u(rng) / 4;
        boxes.push_back({x, y, x + w, y + h});
        scores.push_back(u(rng) / 50.0);
    }
    auto keep = gca::nms(boxes, scores, 0.5);

    // quadratic reference: repeatedly pick best-scoring live box
    std::vector<char> alive(boxes.size(), 1);
    std::vector<int> ref;
    for (;;) {
        int best = -1;
        for (size_t i = 0; i < boxes.size(); ++i)
            if (alive[i] && (best < 0 || scores[i] > scores[size_t(best)]))
                best = static_cast<int>(i);
        if (best < 0) break;
        ref.push_back(best);
        alive[size_t(best)] = 0;
        for (size_t j = 0; j < boxes.size(); ++j)
            if (alive[j] && gca::iou(boxes[size_t(best)], boxes[j]) > 0.5) alive[j] = 0;
    }
    EXPECT_EQ(keep, ref);
}

TEST(Anchors, CountPerLevel) {
    auto set = gca::make_anchors(128, 128);
    EXPECT_EQ(set.level_boxes[0].size(), 32u * 32u * 3u);
    EXPECT_EQ(set.level_boxes[3].size(), 4u * 4u * 3u);
    // area preserved across ratios
    for (const auto& b : set.level_boxes[1]) EXPECT_NEAR(b.area(), 1024.0, 1e-6);
}

namespace {

gca::PyramidFeatures<float> random_pyramid(int n, int img, gca::u64 seed) {
    gca::PyramidFeatures<float> p;
    p.p2 = oracle::random_tensor<float>({n, 256, img / 4, img / 4}, seed);
    p.p3 = oracle::random_tensor<float>({n, 256, img / 8, img / 8}, seed + 1);
    p.p4 = oracle::random_tensor<float>({n, 256, img / 16, img / 16}, seed + 2);
    p.p5 = oracle::random_tensor<float>({n, 256, img / 32, img / 32}, seed + 3);
    return p;
}

gca::ParamRefs<float> params_of(gca::RpnHead<float>& head) {
    gca::ParamRefs<float> ps;
    head.collect(ps);
    return ps;
}

}  // namespace

TEST(Recalibrate, ZeroFcGivesHalf) {
    gca::RpnHead<float> head(3, /*recal_layers=*/true);
    auto p = oracle::random_tensor<float>({2, 256, 4, 4}, 21);
    auto out = head.recalibrate_level(p);  // zero weights + bias -> sigmoid(0) = 0.5
    for (size_t i = 0; i < p.data().size(); ++i)
        EXPECT_FLOAT_EQ(out.data()[i], 0.5f * p.data()[i]);
}

TEST(Recalibrate, ZeroInputStaysZero) {
    gca::RpnHead<float> head(3, true);
    auto ps = params_of(head);
    gca::init_params(ps, 3);
    auto p = F({1, 256, 4, 4});
    auto out = head.recalibrate_level(p);
    for (float v : out.data()) EXPECT_EQ(v, 0.f);
}

TEST(Recalibrate, PerChannelRatioIsSpatiallyConstant) {
    gca::RpnHead<float> head(3, true);
    auto ps = params_of(head);
    gca::init_params(ps, 4);
    auto p = oracle::random_tensor<float>({1, 256, 5, 5}, 22, 0.5f, 1.5f);
    auto out = head.recalibrate_level(p);
    for (int c = 0; c < 256; ++c) {
        const float r0 = out.data()[size_t(c) * 25] / p.data()[size_t(c) * 25];
        for (int s = 1; s < 25; ++s)
            EXPECT_NEAR(out.data()[size_t(c) * 25 + size_t(s)] /
                            p.data()[size_t(c) * 25 + size_t(s)],
                        r0, 1e-5);
    }
}

TEST(RpnForward, OutputShapes) {
    gca::RpnHead<float> head(3);
    auto pyr = random_pyramid(1, 128, 31);
    auto out = head.forward(pyr, false);
    EXPECT_EQ(out.objectness[0].shape(), (std::vector<int>{1, 3, 32, 32}));
    EXPECT_EQ(out.deltas[0].shape(), (std::vector<int>{1, 12, 32, 32}));
    EXPECT_EQ(out.objectness[3].shape(), (std::vector<int>{1, 3, 4, 4}));
}

TEST(RpnForward, FlagOffMatchesHeadWithoutRecalLayers) {
    gca::RpnHead<float> with_recal(3, true);
    auto ps = params_of(with_recal);
    gca::init_params(ps, 5);
    gca::RpnHead<float> plain(3, false);
    // share the conv weights
    plain.conv.w.value.data() = with_recal.conv.w.value.data();
    plain.conv.b.value.data() = with_recal.conv.b.value.data();
    plain.obj.w.value.data() = with_recal.obj.w.value.data();
    plain.obj.b.value.data() = with_recal.obj.b.value.data();
    plain.reg.w.value.data() = with_recal.reg.w.value.data();
    plain.reg.b.value.data() = with_recal.reg.b.value.data();
    auto pyr = random_pyramid(1, 64, 33);
    auto a = with_recal.forward(pyr, false);
    auto b = plain.forward(pyr, false);
    EXPECT_EQ(a.objectness[0].data(), b.objectness[0].data());
    EXPECT_EQ(a.deltas[2].data(), b.deltas[2].data());
}

TEST(RpnForward, RecalibrationChangesOutputs) {
    gca::RpnHead<float> head(3, true);
    auto ps = params_of(head);
    gca::init_params(ps, 6);
    auto pyr = random_pyramid(1, 64, 34);
    auto off = head.forward(pyr, false);
    auto on = head.forward(pyr, true);
    EXPECT_NE(off.objectness[0].data(), on.objectness[0].data());
}

TEST(Propose, RespectsPostNmsCap) {
    gca::RpnHead<float> head(3);
    auto ps = params_of(head);
    gca::init_params(ps, 7);
    gca::ProposeConfig cfg;
    for (int trial = 0; trial < 5; ++trial) {
        auto pyr = random_pyramid(1, 64, 100 + gca::u64(trial));
        auto out = head.forward(pyr, false);
        auto props = gca::propose(out, gca::make_anchors(64, 64), cfg, 64, 64);
        EXPECT_LE(props[0].size(), size_t(cfg.post_nms_top));
        for (const auto& p : props[0]) {
            EXPECT_GE(p.box.x1, 0.0);
            EXPECT_LE(p.box.x2, 64.0);
            EXPECT_GE(p.box.width(), 1.0);
            EXPECT_GE(p.box.height(), 1.0);
            EXPECT_GT(p.objectness, 0.0);
            EXPECT_LT(p.objectness, 1.0);
        }
    }
}

TEST(Propose, EqualScoresKeepAnchorOrder) {
    gca::RpnOutputs<float> out;
    const int sizes[4] = {16, 8, 4, 2};
    for (int l = 0; l < 4; ++l) {
        out.objectness[size_t(l)] = F({1, 3, sizes[l], sizes[l]});  // all-equal logits
        out.deltas[size_t(l)] = F({1, 12, sizes[l], sizes[l]});
    }
    gca::ProposeConfig cfg;
    cfg.pre_nms_top = 10;
    cfg.post_nms_top = 1000;
    cfg.nms_thr = 0.95;  // keep near-everything so ordering is visible
    auto anchors = gca::make_anchors(64, 64);
    auto props = gca::propose(out, anchors, cfg, 64, 64);
    // first proposal must be the first anchor of level 2 (clipped)
    auto expect = gca::clip_box(anchors.level_boxes[0][0], 64, 64);
    EXPECT_NEAR(props[0][0].box.x1, expect.x1, 1e-6);
    EXPECT_NEAR(props[0][0].box.y2, expect.y2, 1e-6);
}

namespace {

// builds RPN outputs whose logits/deltas are ideal for the given gt
gca::RpnOutputs<float> ideal_outputs(const gca::AnchorSet& anchors,
                                     const std::vector<Box>& gt) {
    gca::RpnOutputs<float> out;
    const int A = anchors.num_ratios;
    for (int l = 0; l < 4; ++l) {
        const int H = anchors.level_h[size_t(l)], W = anchors.level_w[size_t(l)];
        out.objectness[size_t(l)] = F({1, A, H, W}, -10.f);
        out.deltas[size_t(l)] = F({1, 4 * A, H, W});
        auto& obj = out.objectness[size_t(l)];
        auto& reg = out.deltas[size_t(l)];
        for (size_t i = 0; i < anchors.level_boxes[size_t(l)].size(); ++i) {
            const auto& a = anchors.level_boxes[size_t(l)][i];
            double best = 0;
            int best_g = -1;
            for (size_t g = 0; g < gt.size(); ++g) {
                double v = gca::iou(a, gt[g]);
                if (v > best) {
                    best = v;
                    best_g = static_cast<int>(g);
                }
            }
            if (best_g < 0) continue;
            const int an = static_cast<int>(i) / (H * W);
            const int rem = static_cast<int>(i) % (H * W);
            if (best >= 0.5) {
                obj.data()[size_t(an * H * W + rem)] = 10.f;
                auto enc = gca::encode_box(a, gt[size_t(best_g)]);
                for (int c = 0; c < 4; ++c)
                    reg.data()[size_t((an * 4 + c) * H * W + rem)] = float(enc[size_t(c)]);
            }
        }
    }
    return out;
}

}  // namespace

TEST(RpnLoss, NearZeroForPerfectPredictions) {
    auto anchors = gca::make_anchors(64, 64);
    // gt equals an exact level-1 anchor box (32x32 area at ratio 1)
    Box gt = anchors.level_boxes[1][size_t(1 * 8 * 8 + 3 * 8 + 3)];
    auto out = ideal_outputs(anchors, {gt});
    std::mt19937_64 rng(9);
    auto res = gca::rpn_loss(out, anchors, {{gt}}, rng);
    EXPECT_LT(res.loss.value(), 0.01f);
    EXPECT_GT(res.num_pos, 0);
}

TEST(RpnLoss, NoGtGivesFiniteNegativeOnlyLoss) {
    auto anchors = gca::make_anchors(64, 64);
    gca::RpnHead<float> head(3);
    auto ps = params_of(head);
    gca::init_params(ps, 10);
    auto pyr = random_pyramid(1, 64, 44);
    auto out = head.forward(pyr, false);
    std::mt19937_64 rng(10);
    auto res = gca::rpn_loss(out, anchors, {{}}, rng);
    EXPECT_TRUE(std::isfinite(res.loss.value()));
    EXPECT_EQ(res.num_pos, 0);
    EXPECT_EQ(res.num_sampled, 64);
    EXPECT_GE(res.loss.value(), 0.f);
}

TEST(RpnLoss, DifferentiableThroughHead) {
    gca::RpnHead<float> head(3);
    auto ps = params_of(head);
    gca::init_params(ps, 11);
    auto pyr = random_pyramid(1, 64, 45);
    auto out = head.forward(pyr, false);
    std::mt19937_64 rng(11);
    auto anchors = gca::make_anchors(64, 64);
    auto res = gca::rpn_loss(out, anchors, {{Box{8, 8, 40, 40}}}, rng);
    gca::backward(res.loss);
    double norm = 0;
    for (float g : head.conv.w.value.grad()) norm += double(g) * g;
    EXPECT_GT(norm, 0.0);
}
