#include "mavias/autodiff/checkpoint.hpp"
#include "mavias/autodiff/gradcheck.hpp"
#include "mavias/autodiff/mlp.hpp"
#include "mavias/autodiff/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mavias;
using namespace mavias::ad;

namespace {

/// Straight-line MLP evaluation straight from the stored weights.
std::vector<double> reference_forward(const ParameterStore& store, const Mlp& mlp, std::vector<double> x) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& W = store[mlp.layers[l].weight].value;
        const auto& b = store[mlp.layers[l].bias].value;
        std::vector<double> y(W.rows());
        for (std::size_t o = 0; o < W.rows(); ++o) {
            double s = b(0, o);
            for (std::size_t i = 0; i < W.cols(); ++i) s += W(o, i) * x[i];
            y[o] = (l + 1 < mlp.layers.size()) ? std::max(0.0, s) : s;
        }
        x = std::move(y);
    }
    return x;
}

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    DenseMatrix m(r, c);
    for (double& v : m.values()) v = g(rng);
    return m;
}

} // namespace

TEST(SoftmaxCrossEntropy, UniformCase) {
    const double z[] = {0.0, 0.0};
    EXPECT_NEAR(softmax_cross_entropy(z, 0), std::log(2.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, ThreeClassValue) {
    const double z[] = {1.0, 2.0, 3.0};
    const double expected = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    EXPECT_NEAR(softmax_cross_entropy(z, 2), expected, 1e-12);
    EXPECT_NEAR(softmax_cross_entropy(z, 2), 0.407606, 1e-6);
}

TEST(SoftmaxCrossEntropy, Saturated) {
    const double z[] = {50.0, 0.0};
    EXPECT_LT(softmax_cross_entropy(z, 0), 1e-20);
}

TEST(SoftmaxCrossEntropy, NonFiniteLogitsRejected) {
    const double z[] = {1.0, std::nan("")};
    EXPECT_THROW(softmax_cross_entropy(z, 0), NumericError);
    const double inf[] = {1.0, INFINITY};
    EXPECT_THROW(softmax_cross_entropy(inf, 0), NumericError);
}

TEST(SoftmaxCrossEntropy, TapeMatchesScalar) {
    Tape t;
    Var z = t.constant(DenseMatrix(2, 3, std::vector<double>{1, 2, 3, 0.5, -1, 0}));
    const std::size_t y[] = {2, 0};
    Var l = softmax_cross_entropy(t, z, y);
    const double r0[] = {1, 2, 3}, r1[] = {0.5, -1, 0};
    EXPECT_NEAR(t.scalar(l), 0.5 * (softmax_cross_entropy(r0, 2) + softmax_cross_entropy(r1, 0)), 1e-14);
}

TEST(MlpForward, ZeroWeightsGiveZeroOutput) {
    ParameterStore store;
    std::mt19937_64 rng(1);
    auto mlp = build_mlp(store, "m", Partition::backbone, {4, 5, 3}, rng);
    for (auto& p : store) p.value.fill(0.0);
    const double x[] = {1, -2, 3, 4};
    for (double v : mlp_forward(store, mlp, x)) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLayer) {
    ParameterStore store;
    std::mt19937_64 rng(1);
    auto mlp = build_mlp(store, "m", Partition::backbone, {3, 3}, rng);
    auto& W = store[mlp.layers[0].weight].value;
    W.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) W(i, i) = 1.0;
    const std::vector<double> x{0.25, -7.0, 3.5};
    EXPECT_EQ(mlp_forward(store, mlp, x), x);
}

TEST(MlpForward, MatchesStraightLineOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ParameterStore store;
        std::mt19937_64 rng(seed);
        auto mlp = build_mlp(store, "m", Partition::backbone, {5, 7, 6, 3}, rng);
        for (auto& p : store)
            if (p.name.ends_with("bias")) p.value = random_matrix(p.value.rows(), p.value.cols(), rng);
        auto x = random_matrix(1, 5, rng);
        std::vector<double> xv(x.values().begin(), x.values().end());
        auto got = mlp_forward(store, mlp, xv);
        auto want = reference_forward(store, mlp, xv);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
    }
}

TEST(MlpForward, ShapeMismatchNamesLayer) {
    ParameterStore store;
    std::mt19937_64 rng(1);
    auto mlp = build_mlp(store, "m", Partition::backbone, {3, 4, 2}, rng);
    const double x[] = {1, 2};
    try {
        mlp_forward(store, mlp, x);
        FAIL() << "expected ContractViolation";
    } catch (const ContractViolation& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
}

TEST(Backward, ScalarProductGradientIsInput) {
    ParameterStore store;
    auto w = store.add("w", Partition::backbone, DenseMatrix(1, 1, 2.5));
    auto b = store.add("b", Partition::backbone, DenseMatrix(1, 1, 0.0));
    Tape t(&store);
    Var f = linear(t, t.constant(DenseMatrix(1, 1, 3.0)), t.param(w), t.param(b));
    EXPECT_EQ(t.scalar(f), 7.5);
    t.backward(f);
    EXPECT_EQ(store[w].grad(0, 0), 3.0);
    EXPECT_EQ(store[b].grad(0, 0), 1.0);
}

TEST(Backward, TwoPassesDoubleTheGradient) {
    ParameterStore store;
    std::mt19937_64 rng(3);
    auto mlp = build_mlp(store, "m", Partition::backbone, {3, 4, 2}, rng);
    auto x = random_matrix(5, 3, rng);
    const std::size_t y[] = {0, 1, 1, 0, 1};
    auto run = [&] {
        Tape t(&store);
        t.backward(softmax_cross_entropy(t, mlp_forward(t, mlp, t.constant(x)), y));
    };
    run();
    std::vector<DenseMatrix> once;
    for (const auto& p : store) once.push_back(p.grad);
    run();
    std::size_t i = 0;
    for (const auto& p : store) {
        for (std::size_t k = 0; k < p.grad.size(); ++k) EXPECT_EQ(p.grad.data()[k], 2.0 * once[i].data()[k]);
        ++i;
    }
    store.zero_grads();
    for (const auto& p : store)
        for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SeedScalesGradientLinearly) {
    ParameterStore store;
    std::mt19937_64 rng(4);
    auto mlp = build_mlp(store, "m", Partition::backbone, {2, 3, 2}, rng);
    auto x = random_matrix(3, 2, rng);
    const std::size_t y[] = {0, 1, 0};
    auto grads = [&](double seed) {
        store.zero_grads();
        Tape t(&store);
        t.backward(softmax_cross_entropy(t, mlp_forward(t, mlp, t.constant(x)), y), seed);
        std::vector<double> g;
        for (const auto& p : store) g.insert(g.end(), p.grad.values().begin(), p.grad.values().end());
        return g;
    };
    auto g1 = grads(1.0), g3 = grads(3.0);
    for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_NEAR(g3[k], 3.0 * g1[k], 1e-14);
}

TEST(Backward, WithoutForwardIsContractViolation) {
    ParameterStore store;
    Tape t(&store);
    EXPECT_THROW(t.backward(Var{0}), ContractViolation);
}

TEST(Optimizer, PlainSgdStep) {
    ParameterStore store;
    auto w = store.add("w", Partition::backbone, DenseMatrix(1, 1, 1.0));
    store[w].grad(0, 0) = 2.0;
    Optimizer opt(SgdConfig{0.1, 0.0, 0.0});
    opt.step(store);
    EXPECT_NEAR(store[w].value(0, 0), 0.8, 1e-15);
}

TEST(Optimizer, WeightDecayAddsToGradient) {
    ParameterStore store;
    auto w = store.add("w", Partition::backbone, DenseMatrix(1, 1, 3.0));
    store[w].grad(0, 0) = 2.0;
    Optimizer opt(SgdConfig{0.1, 0.0, 1e-4});
    opt.step(store);
    EXPECT_DOUBLE_EQ(store[w].value(0, 0), 3.0 - 0.1 * (2.0 + 1e-4 * 3.0));
}

TEST(Optimizer, MomentumAccumulates) {
    ParameterStore store;
    auto w = store.add("w", Partition::backbone, DenseMatrix(1, 1, 0.0));
    Optimizer opt(SgdConfig{0.1, 0.9, 0.0});
    store[w].grad(0, 0) = 1.0;
    opt.step(store);
    opt.step(store);
    // v1 = 1, v2 = 0.9 + 1 = 1.9; w = -0.1 - 0.19
    EXPECT_NEAR(store[w].value(0, 0), -0.29, 1e-15);
}

TEST(Optimizer, AdamFirstStepIsLearningRate) {
    for (double g : {1e-4, 1.0, 1e4}) {
        ParameterStore store;
        auto w = store.add("w", Partition::backbone, DenseMatrix(1, 1, 0.5));
        store[w].grad(0, 0) = g;
        Optimizer opt(AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
        opt.step(store);
        EXPECT_NEAR(0.5 - store[w].value(0, 0), 0.01, 1e-5) << "g = " << g;
    }
}

TEST(Optimizer, NonPositiveLearningRateRejected) {
    EXPECT_THROW(Optimizer(SgdConfig{0.0, 0.0, 0.0}), ConfigError);
    EXPECT_THROW(Optimizer(AdamConfig{-1.0}), ConfigError);
}

TEST(GradCheck, LinearModelIsExact) {
    ParameterStore store;
    std::mt19937_64 rng(5);
    auto mlp = build_mlp(store, "m", Partition::backbone, {4, 3}, rng);
    auto x = random_matrix(6, 4, rng);
    const std::size_t y[] = {0, 1, 2, 2, 1, 0};
    auto res = finite_difference_check(store, [&](Tape& t) {
        return softmax_cross_entropy(t, mlp_forward(t, mlp, t.constant(x)), y);
    });
    EXPECT_LT(res.max_relative_error, 1e-8);
    EXPECT_EQ(res.coordinates_checked, 15u);
}

TEST(GradCheck, TwoHiddenLayerMlpWithCrossEntropy) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ParameterStore store;
        std::mt19937_64 rng(seed);
        auto mlp = build_mlp(store, "m", Partition::backbone, {3, 6, 5, 2}, rng);
        std::vector<std::size_t> y{0, 1, 1, 0};
        // Redraw inputs until no ReLU sits close enough to its kink for the
        // central difference to straddle it.
        DenseMatrix x;
        auto build = [&](Tape& t) { return softmax_cross_entropy(t, mlp_forward(t, mlp, t.constant(x)), y); };
        double margin = 0.0;
        do {
            x = random_matrix(4, 3, rng);
            analytic_gradient(store, build, &margin);
        } while (margin < 1e-3);
        auto res = finite_difference_check(store, build);
        EXPECT_LT(res.max_relative_error, 1e-4) << "seed " << seed;
    }
}

TEST(GradCheck, RestoresParameters) {
    ParameterStore store;
    std::mt19937_64 rng(9);
    auto mlp = build_mlp(store, "m", Partition::backbone, {2, 3, 2}, rng);
    ParameterStore before = store;
    auto x = random_matrix(2, 2, rng);
    std::vector<std::size_t> y{0, 1};
    finite_difference_check(store, [&](Tape& t) { return softmax_cross_entropy(t, mlp_forward(t, mlp, t.constant(x)), y); });
    EXPECT_TRUE(store.same_values(before));
}

TEST(Checkpoint, RoundTripIsExact) {
    ParameterStore store;
    std::mt19937_64 rng(11);
    build_mlp(store, "m", Partition::backbone, {3, 8, 2}, rng);
    store.add("p.weight", Partition::projection, random_matrix(4, 1, rng));
    store[ParamRef{1}].value(0, 0) = 0.1 + 0.2;
    auto loaded = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(store, {{"k", 1}}).dump()));
    EXPECT_TRUE(loaded.same_values(store));
}

TEST(Checkpoint, RejectsWrongVersionAndValueCount) {
    ParameterStore store;
    store.add("w", Partition::head, DenseMatrix(2, 2, 1.0));
    auto j = checkpoint_to_json(store);
    auto bad = j;
    bad["format_version"] = 99;
    EXPECT_THROW(checkpoint_from_json(bad), ConfigError);
    bad = j;
    bad["parameters"][0]["values"].push_back(1.0);
    EXPECT_THROW(checkpoint_from_json(bad), ConfigError);
}
