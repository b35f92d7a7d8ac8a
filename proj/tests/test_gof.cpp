#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdcm/exact.hpp"
#include "gdcm/gof.hpp"
#include "support.hpp"

using namespace gdcm;
using gdcm::testing::Rng;

TEST(UnnormalizedLoglik, ZeroModelIsZero) {
    Rng r(1);
    const auto q = gdcm::testing::random_q(r, 5, 3);
    const auto m = GdcmModel::zeros(q, ModelFamily::dina);
    EXPECT_NEAR(unnormalized_loglik(m, gdcm::testing::random_responses(r, 40, 5)), 0.0, 1e-12);
}

TEST(UnnormalizedLoglik, TwoClassHandComputation) {
    const QMatrix q(DenseMatrix<std::uint8_t>(2, 1, 1));
    const std::vector<DinaItemParams> items{{0.2, 0.1}, {0.3, 0.25}};
    auto m = make_dina_model(q, items, DesignMatrix(2), ClassPrior::normalized({0.4, 0.6}));
    m.phi.set(0, 1, 0.7);
    DenseMatrix<std::uint8_t> x(1, 2, 1);
    // x = (1, 1): exponent = logit(g or 1-s) summed over items + φ
    const double e0 = logit(0.2) + logit(0.3) + 0.7;
    const double e1 = logit(0.9) + logit(0.75) + 0.7;
    EXPECT_NEAR(unnormalized_loglik(m, ResponseMatrix(x)), std::log(0.4 * std::exp(e0) + 0.6 * std::exp(e1)), 1e-12);
    x(0, 1) = 0;
    EXPECT_NEAR(unnormalized_loglik(m, ResponseMatrix(x)),
                std::log(0.4 * std::exp(logit(0.2)) + 0.6 * std::exp(logit(0.9))), 1e-12);
}

TEST(UnnormalizedLoglik, SubjectPermutationInvariant) {
    Rng r(2);
    for (int t = 0; t < 10; ++t) {
        const auto m = gdcm::testing::random_model(r, 6, 2, ModelFamily::dina, 0.5, 1.0);
        const auto x = gdcm::testing::random_responses(r, 30, 6);
        std::vector<std::size_t> perm(30);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), r);
        DenseMatrix<std::uint8_t> y(30, 6);
        for (std::size_t i = 0; i < 30; ++i)
            for (std::size_t j = 0; j < 6; ++j) y(i, j) = x(perm[i], j);
        EXPECT_NEAR(unnormalized_loglik(m, x), unnormalized_loglik(m, ResponseMatrix(y)), 1e-10);
    }
}

TEST(UnnormalizedLoglik, DimensionMismatch) {
    Rng r(3);
    const auto m = gdcm::testing::random_model(r, 4, 1);
    EXPECT_THROW(unnormalized_loglik(m, gdcm::testing::random_responses(r, 3, 5)), DataError);
}

TEST(BootstrapReference, DeterministicAndThreadInvariant) {
    Rng r(4);
    const auto m = gdcm::testing::random_model(r, 8, 2, ModelFamily::dina, 0.3, 1.0);
    const auto a = bootstrap_reference(m, 50, 12, 20, 99, 1);
    const auto b = bootstrap_reference(m, 50, 12, 20, 99, 1);
    const auto c = bootstrap_reference(m, 50, 12, 20, 99, 3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
    EXPECT_NE(a, bootstrap_reference(m, 50, 12, 20, 100, 1));
    // replicate b does not depend on B
    const auto longer = bootstrap_reference(m, 50, 20, 20, 99, 2);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), longer.begin()));
}

TEST(BootstrapReference, MeanMatchesExactExpectation) {
    Rng r(5);
    const auto m = gdcm::testing::random_model(r, 4, 1, ModelFamily::dina, 1.0, 1.0);
    const std::size_t N = 50, B = 400;
    const auto pmf = marginal_exact_pmf(m);
    // per-subject term h(x) = log Σ_α π_α exp(potential)
    double mean = 0.0, second = 0.0;
    for (std::uint32_t p = 0; p < 16; ++p) {
        DenseMatrix<std::uint8_t> one(1, 4);
        const auto bits = decode_pattern(p, 4);
        for (std::size_t j = 0; j < 4; ++j) one(0, j) = bits[j];
        const double h = unnormalized_loglik(m, ResponseMatrix(one));
        mean += pmf[p] * h;
        second += pmf[p] * h * h;
    }
    const double expect = N * mean;
    const double se = std::sqrt(N * (second - mean * mean) / B);
    const auto boot = bootstrap_reference(m, N, B, 40, 7);
    const double got = std::accumulate(boot.begin(), boot.end(), 0.0) / B;
    EXPECT_NEAR(got, expect, 2 * se);
}

TEST(GofPValue, TailCases) {
    const std::vector<double> boot{1, 2, 3, 4, 5, 6, 7, 8, 9};
    EXPECT_DOUBLE_EQ(gof_p_value(0.5, boot).p_value, 0.1);
    EXPECT_DOUBLE_EQ(gof_p_value(10.0, boot).p_value, 1.0);
    EXPECT_DOUBLE_EQ(gof_p_value(5.0, boot).p_value, 0.6);
    EXPECT_DOUBLE_EQ(gof_p_value(4.5, boot).p_value, 0.5);
    EXPECT_EQ(gof_p_value(4.5, boot).B, 9u);
    EXPECT_THROW(gof_p_value(1.0, {}), DataError);
}

TEST(GofPValue, InvariantOnRandomInputs) {
    Rng r(6);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> boot(gdcm::testing::pick(r, 1, 50));
        for (auto& v : boot) v = gdcm::testing::unif(r, -5, 5);
        const double obs = gdcm::testing::unif(r, -6, 6);
        const auto res = gof_p_value(obs, boot);
        const auto below = std::count_if(boot.begin(), boot.end(), [&](double v) { return v <= obs; });
        EXPECT_DOUBLE_EQ(res.p_value, (1.0 + below) / (boot.size() + 1.0));
        EXPECT_GT(res.p_value, 0.0);
        EXPECT_LE(res.p_value, 1.0);
    }
}

TEST(RunGof, DefaultsAndSeedRecorded) {
    Rng r(7);
    const auto m = gdcm::testing::random_model(r, 5, 1, ModelFamily::dina, 0.5, 1.0);
    const auto x = bootstrap_dataset(m, 60, 30, KeyedRng(1));
    const auto g = run_gof(m, x, 25, 42, 30);
    EXPECT_EQ(g.B, 25u);
    EXPECT_EQ(g.l_boot.size(), 25u);
    EXPECT_EQ(g.seed, 42u);
    EXPECT_DOUBLE_EQ(g.l_obs, unnormalized_loglik(m, x));
    EXPECT_EQ(g.l_boot, bootstrap_reference(m, 60, 25, 30, 42));
}

TEST(Histogram, CountsAndEdges) {
    const std::vector<double> v{0.0, 0.1, 0.5, 0.99, 1.0};
    const auto h = histogram(v, 4);
    ASSERT_EQ(h.edges.size(), 5u);
    EXPECT_EQ(h.edges.front(), 0.0);
    EXPECT_EQ(h.edges.back(), 1.0);
    EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 0, 1, 2}));
    const auto wide = histogram(v, 4, -1.0);
    EXPECT_EQ(wide.edges.front(), -1.0);
    EXPECT_EQ(std::accumulate(wide.counts.begin(), wide.counts.end(), std::size_t{0}), 5u);
    const auto flat = histogram(std::vector<double>{2.0, 2.0}, 3);
    EXPECT_EQ(std::accumulate(flat.counts.begin(), flat.counts.end(), std::size_t{0}), 2u);
}

TEST(DrawClass, InversionSkipsEmptyClasses) {
    const auto p = ClassPrior::normalized({0.25, 0.0, 0.75, 0.0});
    EXPECT_EQ(draw_class(p, 0.1), 0u);
    EXPECT_EQ(draw_class(p, 0.3), 2u);
    EXPECT_EQ(draw_class(p, 0.999999999), 2u);
}
