#include <gtest/gtest.h>

#include <functional>

#include "gca/module.hpp"
#include "gca/ops.hpp"
#include "oracles.hpp"

using gca::Tensor;
using D = Tensor<double>;

namespace {

// Checks d(sum of weighted output)/d(input) for every input element against
// central finite differences. A fixed random weighting of the output makes the
// scalar reduction sensitive to every output element.
void grad_check(const std::function<D(const std::vector<D>&)>& op,
                std::vector<D> inputs, double step = 1e-5, double tol = 1e-4,
                double kink_margin = 0.0) {
    auto out0 = op(inputs);
    auto weights = oracle::random_values<double>(out0.data().size(), 999, 0.1, 1.0);
    auto weighted = [&](const std::vector<D>& xs) {
        auto y = op(xs);
        double s = 0;
        for (size_t i = 0; i < y.data().size(); ++i) s += y.data()[i] * weights[i];
        return s;
    };

    // analytic: backprop a constant-weight cotangent through sum(mul(y, w))
    for (auto& t : inputs) t.set_requires_grad(true);
    auto y = op(inputs);
    auto wt = D::from_data(y.shape(), weights);
    auto loss = gca::sum(gca::mul(y, wt));
    gca::backward(loss);

    for (size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t];
        const auto analytic = x.grad();
        for (size_t i = 0; i < x.data().size(); ++i) {
            if (kink_margin > 0 && std::abs(x.data()[i]) < kink_margin) continue;
            double num;
            {
                gca::NoGradGuard ng;
                num = oracle::central_diff([&] { return weighted(inputs); }, x.data(), i,
                                           step);
            }
            EXPECT_LT(oracle::rel_err(analytic[i], num), tol)
                << "input " << t << " element " << i << " analytic=" << analytic[i]
                << " numeric=" << num;
        }
    }
}

}  // namespace

TEST(Backward, SumGivesOnes) {
    auto x = oracle::random_tensor<double>({2, 3}, 1, -1.0, 1.0, true);
    auto loss = gca::sum(x);
    gca::backward(loss);
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, DeadReluGivesZeros) {
    auto x = oracle::random_tensor<double>({8}, 2, -2.0, -0.5, true);
    auto loss = gca::sum(gca::relu(x));
    gca::backward(loss);
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalar) {
    auto x = oracle::random_tensor<double>({3}, 3, -1.0, 1.0, true);
    auto y = gca::relu(x);
    EXPECT_THROW(gca::backward(y), std::invalid_argument);
}

TEST(Backward, RepeatCallsAccumulate) {
    auto x = oracle::random_tensor<double>({4}, 4, 0.5, 1.5, true);
    auto loss = gca::sum(gca::mul(x, x));
    gca::backward(loss);
    auto once = x.grad();
    gca::backward(loss);
    for (size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * once[i]);
    x.zero_grad();
    gca::backward(loss);
    for (size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], once[i]);
}

TEST(Backward, DiamondGraphAccumulates) {
    auto x = oracle::random_tensor<double>({4}, 5, 0.1, 1.0, true);
    auto loss = gca::sum(gca::add(gca::scale(x, 2.0), gca::scale(x, 3.0)));
    gca::backward(loss);
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
}

TEST(GradCheck, Conv2d) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::conv2d(xs[0], xs[1], xs[2], 2, 1); },
        {oracle::random_tensor<double>({2, 2, 5, 5}, 10),
         oracle::random_tensor<double>({3, 2, 3, 3}, 11),
         oracle::random_tensor<double>({3}, 12)});
}

TEST(GradCheck, Conv2dStride1NoPad) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::conv2d(xs[0], xs[1], xs[2], 1, 0); },
        {oracle::random_tensor<double>({1, 3, 4, 4}, 13),
         oracle::random_tensor<double>({2, 3, 3, 3}, 14),
         oracle::random_tensor<double>({2}, 15)});
}

TEST(GradCheck, Linear) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::linear(xs[0], xs[1], xs[2]); },
        {oracle::random_tensor<double>({3, 6}, 16),
         oracle::random_tensor<double>({4, 6}, 17),
         oracle::random_tensor<double>({4}, 18)});
}

TEST(GradCheck, Relu) {
    grad_check([](const std::vector<D>& xs) { return gca::relu(xs[0]); },
               {oracle::random_tensor<double>({4, 5}, 19)}, 1e-5, 1e-4, 1e-3);
}

TEST(GradCheck, Sigmoid) {
    grad_check([](const std::vector<D>& xs) { return gca::sigmoid(xs[0]); },
               {oracle::random_tensor<double>({4, 5}, 20, -3.0, 3.0)});
}

TEST(GradCheck, Softplus) {
    grad_check([](const std::vector<D>& xs) { return gca::softplus(xs[0]); },
               {oracle::random_tensor<double>({4, 5}, 21, -3.0, 3.0)});
}

TEST(GradCheck, AdaptiveAvgPool) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::adaptive_avg_pool(xs[0], 3, 2); },
        {oracle::random_tensor<double>({2, 3, 5, 7}, 22)});
}

TEST(GradCheck, GlobalAvgPool) {
    grad_check([](const std::vector<D>& xs) { return gca::global_avg_pool(xs[0]); },
               {oracle::random_tensor<double>({2, 4, 3, 3}, 23)});
}

TEST(GradCheck, Upsample) {
    grad_check([](const std::vector<D>& xs) { return gca::upsample_nearest2x(xs[0]); },
               {oracle::random_tensor<double>({1, 2, 3, 3}, 24)});
}

TEST(GradCheck, ConcatChannels) {
    grad_check(
        [](const std::vector<D>& xs) {
            return gca::concat_channels<double>({xs[0], xs[1], xs[2]});
        },
        {oracle::random_tensor<double>({2, 2, 3, 3}, 25),
         oracle::random_tensor<double>({2, 3, 3, 3}, 26),
         oracle::random_tensor<double>({2, 1, 3, 3}, 27)});
}

TEST(GradCheck, ElementwiseAddMul) {
    grad_check([](const std::vector<D>& xs) { return gca::add(xs[0], xs[1]); },
               {oracle::random_tensor<double>({3, 4}, 28),
                oracle::random_tensor<double>({3, 4}, 29)});
    grad_check([](const std::vector<D>& xs) { return gca::mul(xs[0], xs[1]); },
               {oracle::random_tensor<double>({3, 4}, 30),
                oracle::random_tensor<double>({3, 4}, 31)});
}

TEST(GradCheck, ChannelScale) {
    grad_check([](const std::vector<D>& xs) { return gca::channel_scale(xs[0], xs[1]); },
               {oracle::random_tensor<double>({2, 3, 4, 4}, 32),
                oracle::random_tensor<double>({2, 3}, 33)});
    grad_check([](const std::vector<D>& xs) { return gca::channel_scale(xs[0], xs[1]); },
               {oracle::random_tensor<double>({2, 5}, 34),
                oracle::random_tensor<double>({2, 5}, 35)});
}

TEST(GradCheck, FlattenReshape) {
    grad_check([](const std::vector<D>& xs) { return gca::flatten(xs[0]); },
               {oracle::random_tensor<double>({2, 3, 2, 2}, 36)});
}

TEST(GradCheck, GatherRows) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::gather_rows(xs[0], {2, 0, 2, 1}); },
        {oracle::random_tensor<double>({3, 5}, 37)});
}

TEST(GradCheck, GatherFlat) {
    grad_check(
        [](const std::vector<D>& xs) { return gca::gather_flat(xs[0], {7, 1, 3, 1}); },
        {oracle::random_tensor<double>({2, 4}, 38)});
}

TEST(GradCheck, SmoothL1) {
    auto target = oracle::random_values<double>(12, 40);
    grad_check(
        [target](const std::vector<D>& xs) { return gca::smooth_l1_sum(xs[0], target); },
        {oracle::random_tensor<double>({12}, 41, -2.0, 2.0)}, 1e-5, 1e-4, 0.0);
}

TEST(GradCheck, BceWithLogits) {
    std::vector<double> targets{0, 1, 1, 0, 1, 0};
    grad_check(
        [targets](const std::vector<D>& xs) {
            return gca::bce_with_logits_mean(xs[0], targets);
        },
        {oracle::random_tensor<double>({6}, 42, -3.0, 3.0)});
}

TEST(GradCheck, CrossEntropy) {
    std::vector<int> labels{0, 2, 1};
    grad_check(
        [labels](const std::vector<D>& xs) {
            return gca::cross_entropy_mean(xs[0], labels);
        },
        {oracle::random_tensor<double>({3, 4}, 43, -2.0, 2.0)});
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
    auto logits = D({4, 5});
    auto loss = gca::cross_entropy_mean(logits, {0, 1, 2, 3});
    EXPECT_NEAR(loss.value(), std::log(5.0), 1e-9);
}

TEST(SmoothL1, ClosedFormAtHalf) {
    auto pred = D::from_data({1}, {0.5});
    auto loss = gca::smooth_l1_sum(pred, {0.0});
    EXPECT_DOUBLE_EQ(loss.value(), 0.125);
}
