#include <gtest/gtest.h>

#include "gca/backbone.hpp"
#include "gca/detector.hpp"
#include "oracles.hpp"

using gca::Tensor;
using F = Tensor<float>;

namespace {
template <typename M>
gca::ParamRefs<float> collect_of(M& m) {
    gca::ParamRefs<float> out;
    m.collect(out);
    return out;
}
}  // namespace

TEST(Backbone, StrideChainShapes) {
    gca::TinyBackbone<float> bb;
    auto ps = collect_of(bb);
    gca::init_params(ps, 0);
    auto img = oracle::random_tensor<float>({1, 3, 128, 128}, 1);
    auto f = bb.forward(img);
    EXPECT_EQ(f.c2.shape(), (std::vector<int>{1, 32, 32, 32}));
    EXPECT_EQ(f.c3.shape(), (std::vector<int>{1, 64, 16, 16}));
    EXPECT_EQ(f.c4.shape(), (std::vector<int>{1, 128, 8, 8}));
    EXPECT_EQ(f.c5.shape(), (std::vector<int>{1, 256, 4, 4}));
}

TEST(Backbone, BatchPreserved) {
    gca::TinyBackbone<float> bb;
    auto img = oracle::random_tensor<float>({2, 3, 64, 64}, 2);
    auto f = bb.forward(img);
    EXPECT_EQ(f.c2.dim(0), 2);
    EXPECT_EQ(f.c5.dim(0), 2);
}

TEST(Backbone, RejectsIndivisibleExtents) {
    gca::TinyBackbone<float> bb;
    auto img = F({1, 3, 100, 128});
    EXPECT_THROW(bb.forward(img), std::invalid_argument);
}

TEST(Backbone, ParamCountClosedForm) {
    gca::TinyBackbone<float> bb({32, 64, 128, 256});
    gca::ParamRefs<float> ps;
    bb.collect(ps);
    // (cin, cout) per 3x3 conv layer in construction order
    const int dims[][2] = {{3, 32},   {32, 32},  {32, 32},   {32, 32},  {32, 64},
                           {64, 64},  {64, 128}, {128, 128}, {128, 256}, {256, 256}};
    gca::i64 expect = 0;
    for (auto& d : dims) expect += gca::i64(d[1]) * d[0] * 9 + d[1];
    EXPECT_EQ(gca::param_count(ps), expect);
}

TEST(Fpn, PyramidShapes) {
    gca::TinyBackbone<float> bb;
    gca::Fpn<float> fpn;
    auto img = oracle::random_tensor<float>({1, 3, 128, 128}, 3);
    auto p = fpn.forward(bb.forward(img));
    EXPECT_EQ(p.p2.shape(), (std::vector<int>{1, 256, 32, 32}));
    EXPECT_EQ(p.p3.shape(), (std::vector<int>{1, 256, 16, 16}));
    EXPECT_EQ(p.p4.shape(), (std::vector<int>{1, 256, 8, 8}));
    EXPECT_EQ(p.p5.shape(), (std::vector<int>{1, 256, 4, 4}));
    // each level exactly doubles the next one up
    EXPECT_EQ(p.p2.dim(2), 2 * p.p3.dim(2));
    EXPECT_EQ(p.p3.dim(3), 2 * p.p4.dim(3));
}

TEST(Fpn, ZeroFeaturesAndBiasesGiveZeroPyramid) {
    gca::Fpn<float> fpn;
    gca::ParamRefs<float> ps;
    fpn.collect(ps);
    gca::init_params(ps, 7);  // xavier weights, zero biases
    gca::BackboneFeatures<float> f;
    f.c2 = F({1, 32, 16, 16});
    f.c3 = F({1, 64, 8, 8});
    f.c4 = F({1, 128, 4, 4});
    f.c5 = F({1, 256, 2, 2});
    auto p = fpn.forward(f);
    for (const auto& lvl : p.levels())
        for (float v : lvl.data()) EXPECT_EQ(v, 0.f);
}

TEST(Fpn, MergeIsLateralPlusUpsampleWhenIdentity) {
    // all c-levels at 256 channels so the laterals can be identity 1x1 kernels
    gca::Fpn<float> fpn({256, 256, 256, 256}, /*smoothing=*/false);
    for (auto* lat : {&fpn.lat4, &fpn.lat5}) {
        auto& w = lat->w.value;
        for (int oc = 0; oc < 256; ++oc) w.data()[size_t(oc) * 256 + oc] = 1.f;
    }
    gca::BackboneFeatures<float> f;
    f.c2 = F({1, 256, 8, 8});
    f.c3 = F({1, 256, 4, 4});
    f.c4 = oracle::random_tensor<float>({1, 256, 2, 2}, 8);
    f.c5 = oracle::random_tensor<float>({1, 256, 1, 1}, 9);
    auto p = fpn.forward(f);
    auto up = gca::upsample_nearest2x(f.c5);
    for (gca::i64 i = 0; i < p.p4.numel(); ++i)
        EXPECT_FLOAT_EQ(p.p4.data()[size_t(i)], f.c4.data()[size_t(i)] + up.data()[size_t(i)]);
}

TEST(Fpn, GradientsReachEveryBackboneParam) {
    gca::TinyBackbone<float> bb;
    gca::Fpn<float> fpn;
    gca::ParamRefs<float> ps;
    bb.collect(ps);
    fpn.collect(ps);
    gca::init_params(ps, 11);
    auto img = oracle::random_tensor<float>({1, 3, 64, 64}, 12);
    auto p = fpn.forward(bb.forward(img));
    auto loss = gca::sum(gca::mul(p.p3, p.p3));  // single-level loss
    gca::backward(loss);
    gca::ParamRefs<float> bb_only;
    bb.collect(bb_only);
    for (auto* prm : bb_only) {
        double norm = 0;
        for (float g : prm->value.grad()) norm += double(g) * g;
        EXPECT_GT(norm, 0.0) << prm->path;
    }
}
