#include <gtest/gtest.h>

#include <cmath>

#include "gdcm/core.hpp"
#include "gdcm/exact.hpp"
#include "support.hpp"

using namespace gdcm;
using gdcm::testing::Rng;

TEST(Math, ExpitKnownValues) {
    EXPECT_NEAR(expit(1.0), 0.731059, 1e-6);
    EXPECT_DOUBLE_EQ(expit(0.0), 0.5);
    EXPECT_EQ(expit(-800.0), 0.0);
    EXPECT_EQ(expit(800.0), 1.0);
    EXPECT_TRUE(std::isfinite(expit(-40.0)) && expit(-40.0) > 0.0);
}

TEST(Math, LogitExpitRoundTrip) {
    for (double p = 1e-8; p < 1.0 - 1e-8; p += 7.3e-4) EXPECT_NEAR(expit(logit(p)), p, 1e-12);
    EXPECT_NEAR(expit(logit(1e-8)), 1e-8, 1e-12);
    EXPECT_NEAR(expit(logit(1.0 - 1e-8)), 1.0 - 1e-8, 1e-12);
}

TEST(Math, LogSumExpIsStable) {
    const std::vector<double> v{1000.0, 1000.0};
    EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
    EXPECT_NEAR(log1pexp(-50.0), std::exp(-50.0), 1e-30);
    EXPECT_NEAR(log1pexp(50.0), 50.0, 1e-12);
}

TEST(AttributeProfile, EncodesBitK) {
    const AttributeProfile a{1, 0, 1};
    EXPECT_EQ(a.index(), 5u);
    EXPECT_EQ(AttributeProfile::from_index(5, 3), a);
    EXPECT_THROW(AttributeProfile({2, 0}), DataError);
    EXPECT_THROW(AttributeProfile::from_index(8, 3), DataError);
}

TEST(DesignBasis, SubsetOrderBySizeThenLex) {
    const std::vector<std::uint32_t> expected{0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111};
    EXPECT_EQ(subset_order(3), expected);
    EXPECT_EQ(subset_position(0b101, 3), 5u);
}

TEST(DesignBasis, DesignVector) {
    const std::vector<double> expected{1, 1, 0, 1, 0, 1, 0, 0};
    EXPECT_EQ(design_vector(AttributeProfile{1, 0, 1}, 3), expected);
    const auto all = design_vector(AttributeProfile{1, 1, 1}, 3);
    for (double v : all) EXPECT_EQ(v, 1.0);
    const auto none = design_vector(AttributeProfile{0, 0, 0}, 3);
    EXPECT_EQ(none[0], 1.0);
    for (std::size_t s = 1; s < none.size(); ++s) EXPECT_EQ(none[s], 0.0);
}

TEST(QMatrix, Validation) {
    const std::vector<std::uint8_t> ok{1, 0, 0, 1};
    EXPECT_NO_THROW(QMatrix(2, 2, ok));
    const std::vector<std::uint8_t> zero_row{1, 0, 0, 0};
    EXPECT_THROW(QMatrix(2, 2, zero_row), DataError);
    const std::vector<std::uint8_t> bad{1, 2, 0, 1};
    EXPECT_THROW(QMatrix(2, 2, bad), DataError);
    EXPECT_THROW(QMatrix(2, 2, std::vector<std::uint8_t>{1, 0, 1}), DataError);
}

TEST(ItemCoefficients, DinaMask) {
    const QMatrix q(2, 3, std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0});
    ItemCoefficients b(q, ModelFamily::dina);
    EXPECT_EQ(b.active_positions(0).size(), 2u);
    EXPECT_EQ(b.interaction_position(0), subset_position(0b101, 3));
    EXPECT_THROW(b.set(0, 1, 1.0), DataError);
    EXPECT_EQ(b.free_parameters(), 4u);
    ItemCoefficients g(q, ModelFamily::general);
    EXPECT_EQ(g.active_positions(0).size(), 4u);
    EXPECT_EQ(g.active_positions(1).size(), 2u);
}

TEST(Dina, ToBetaKnownValues) {
    const std::vector<std::uint8_t> q{1};
    const auto row = dina_to_beta({0.2, 0.1}, q);
    EXPECT_NEAR(row[0], -1.386294, 1e-6);
    EXPECT_NEAR(row[1], 3.583519, 1e-6);
    const auto back = beta_to_dina(row, q);
    EXPECT_NEAR(back.guess, 0.2, 1e-14);
    EXPECT_NEAR(back.slip, 0.1, 1e-14);
}

TEST(Dina, RejectsBoundaryProbabilities) {
    const std::vector<std::uint8_t> q{1, 0};
    EXPECT_THROW(dina_to_beta({0.0, 0.1}, q), DataError);
    EXPECT_THROW(dina_to_beta({0.2, 1.0}, q), DataError);
}

TEST(Dina, TinySlipStaysFinite) {
    const std::vector<std::uint8_t> q{1};
    const auto row = dina_to_beta({0.1, 1e-300}, q);
    EXPECT_TRUE(std::isfinite(row[1]));
    EXPECT_NEAR(beta_to_dina(row, q).slip, 1e-300, 1e-310);
}

TEST(Dina, RoundTripProperty) {
    Rng r(11);
    for (int t = 0; t < 500; ++t) {
        const std::size_t K = gdcm::testing::pick(r, 1, 4);
        std::vector<std::uint8_t> q(K);
        do {
            for (auto& v : q) v = gdcm::testing::unif(r, 0, 1) < 0.5;
        } while (std::all_of(q.begin(), q.end(), [](auto v) { return v == 0; }));
        const DinaItemParams p{gdcm::testing::unif(r, 1e-6, 0.5), gdcm::testing::unif(r, 1e-6, 0.5)};
        const auto back = beta_to_dina(dina_to_beta(p, q), q);
        EXPECT_NEAR(back.guess, p.guess, 1e-12);
        EXPECT_NEAR(back.slip, p.slip, 1e-12);
    }
}

TEST(Dina, MaskViolationDetected) {
    const std::vector<std::uint8_t> q{1, 1};
    auto row = dina_to_beta({0.2, 0.1}, q);
    row[1] = 0.5;
    EXPECT_THROW(beta_to_dina(row, q), DataError);
}

TEST(ItemResponseProb, DinaMastersAndNonMasters) {
    const std::vector<std::uint8_t> q{1, 1};
    const auto row = dina_to_beta({0.2, 0.1}, q);
    EXPECT_NEAR(item_response_prob(row, AttributeProfile{1, 1}), 0.9, 1e-12);
    EXPECT_NEAR(item_response_prob(row, AttributeProfile{1, 0}), 0.2, 1e-12);
    EXPECT_NEAR(item_response_prob(row, AttributeProfile{0, 0}), 0.2, 1e-12);
}

TEST(DesignMatrix, Invariants) {
    DesignMatrix phi(4);
    phi.set(0, 2, 0.7);
    EXPECT_EQ(phi(2, 0), 0.7);
    EXPECT_EQ(phi.edge_count(), 1u);
    EXPECT_TRUE(phi.is_valid());
    EXPECT_THROW(phi.set(1, 1, 1.0), DataError);
    EXPECT_THROW(phi.set(0, 1, std::nan("")), DataError);
    EXPECT_THROW(phi.set(0, 4, 1.0), DataError);
}

TEST(ClassPrior, Validation) {
    EXPECT_NO_THROW(ClassPrior({0.25, 0.25, 0.5, 0.0}));
    EXPECT_THROW(ClassPrior({0.5, 0.4}), DataError);
    EXPECT_THROW(ClassPrior({0.5, 0.25, 0.25}), DataError);
    EXPECT_THROW(ClassPrior({1.5, -0.5}), DataError);
    EXPECT_EQ(ClassPrior::uniform(3)[5], 0.125);
    EXPECT_EQ(ClassPrior::uniform(2).attributes(), 2u);
}

TEST(ResponseMatrix, Validation) {
    EXPECT_THROW(ResponseMatrix(DenseMatrix<std::uint8_t>(3, 1)), DataError);
    EXPECT_THROW(ResponseMatrix(DenseMatrix<std::uint8_t>(0, 3)), DataError);
    EXPECT_THROW(ResponseMatrix(DenseMatrix<std::uint8_t>(2, 2, 3)), DataError);
}

TEST(GdcmModel, DimensionChecks) {
    Rng r(3);
    const auto q = gdcm::testing::random_q(r, 5, 2);
    EXPECT_THROW(GdcmModel(q, ItemCoefficients(q, ModelFamily::dina), DesignMatrix(4), ClassPrior::uniform(2)),
                 DataError);
    EXPECT_THROW(GdcmModel(q, ItemCoefficients(q, ModelFamily::dina), DesignMatrix(5), ClassPrior::uniform(3)),
                 DataError);
}

TEST(Kernels, ConditionalMatchesDefinition) {
    Rng r(5);
    const auto m = gdcm::testing::random_model(r, 4, 2);
    const std::vector<std::uint8_t> rest{1, 0, 1};
    const AttributeProfile a{1, 0};
    double eta = m.beta.linear_predictor(1, a.index()) + m.phi(1, 0) + m.phi(1, 3);
    EXPECT_NEAR(conditional_item_prob(m, 1, rest, a), expit(eta), 1e-15);
    EXPECT_THROW(conditional_item_prob(m, 1, std::vector<std::uint8_t>{1, 0}, a), DataError);
}

// Markov network reparameterization: for fixed α the GDCM kernel is an Ising
// model whose diagonal carries twice the item main effects.
TEST(Kernels, IsingReparameterizationProperty) {
    Rng r(17);
    for (int t = 0; t < 50; ++t) {
        const std::size_t J = gdcm::testing::pick(r, 2, 6), K = gdcm::testing::pick(r, 1, 3);
        const auto m = gdcm::testing::random_model(r, J, K, ModelFamily::general);
        for (std::uint32_t a = 0; a < m.classes(); ++a) {
            for (std::uint32_t p = 0; p < (1u << J); ++p) {
                const auto x = decode_pattern(p, J);
                double quad = 0.0;
                for (std::size_t j = 0; j < J; ++j)
                    for (std::size_t k = 0; k < J; ++k) {
                        const double phistar = j == k ? 2.0 * m.beta.linear_predictor(j, a) : m.phi(j, k);
                        quad += x[j] * x[k] * phistar;
                    }
                const auto alpha = AttributeProfile::from_index(a, K);
                const double ratio = unnormalized_joint(m, x, alpha) / m.prior[a];
                EXPECT_NEAR(ratio / std::exp(0.5 * quad), 1.0, 1e-12);
            }
        }
    }
}

TEST(Exact, SumsToOneAndCollapses) {
    Rng r(23);
    const auto m = gdcm::testing::random_model(r, 5, 2);
    const auto t = exact_pmf(m);
    double total = 0.0;
    for (double v : t.p) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
    const auto marg = marginal_exact_pmf(m);
    for (std::uint32_t x = 0; x < 32; ++x) {
        double s = 0.0;
        for (std::uint32_t a = 0; a < 4; ++a) s += t(x, a);
        EXPECT_NEAR(s, marg[x], 1e-15);
    }
    // class marginals equal π
    for (std::uint32_t a = 0; a < 4; ++a) {
        double s = 0.0;
        for (std::uint32_t x = 0; x < 32; ++x) s += t(x, a);
        EXPECT_NEAR(s, m.prior[a], 1e-12);
    }
}

TEST(Exact, PointMassPriorGivesConditionalField) {
    Rng r(29);
    auto m = gdcm::testing::random_model(r, 4, 1);
    m.prior = ClassPrior({0.0, 1.0});
    const auto marg = marginal_exact_pmf(m);
    std::vector<double> w(16);
    double z = 0.0;
    for (std::uint32_t x = 0; x < 16; ++x) z += w[x] = std::exp(log_potential(m, decode_pattern(x, 4), 1));
    for (std::uint32_t x = 0; x < 16; ++x) EXPECT_NEAR(marg[x], w[x] / z, 1e-14);
}

TEST(Exact, ChainGraphHandEnumeration) {
    // J = 3 chain 1-2-3, K = 1, Φ12 = 0.5, Φ23 = -1, items all measuring the attribute
    const QMatrix q(3, 1, std::vector<std::uint8_t>{1, 1, 1});
    const std::vector<DinaItemParams> items{{0.2, 0.1}, {0.3, 0.2}, {0.25, 0.15}};
    DesignMatrix phi(3);
    phi.set(0, 1, 0.5);
    phi.set(1, 2, -1.0);
    const auto m = make_dina_model(q, items, phi, ClassPrior({0.4, 0.6}));
    const double b0[3] = {logit(0.2), logit(0.3), logit(0.25)};
    const double b1[3] = {logit(0.9), logit(0.8), logit(0.85)};
    const double pi[2] = {0.4, 0.6};
    std::vector<double> expected(8, 0.0);
    for (int a = 0; a < 2; ++a) {
        double w[8], z = 0.0;
        for (int p = 0; p < 8; ++p) {
            const int x0 = p & 1, x1 = (p >> 1) & 1, x2 = (p >> 2) & 1;
            const double* b = a ? b1 : b0;
            const double e = x0 * b[0] + x1 * b[1] + x2 * b[2] + 0.5 * x0 * x1 - 1.0 * x1 * x2;
            z += w[p] = std::exp(e);
        }
        for (int p = 0; p < 8; ++p) expected[p] += pi[a] * w[p] / z;
    }
    const auto marg = marginal_exact_pmf(m);
    for (int p = 0; p < 8; ++p) EXPECT_NEAR(marg[p], expected[p], 1e-14);
}

TEST(Exact, ConditionalsAgreeWithKernelProperty) {
    Rng r(31);
    for (int t = 0; t < 40; ++t) {
        const std::size_t J = gdcm::testing::pick(r, 2, 5), K = gdcm::testing::pick(r, 1, 2);
        const auto m = gdcm::testing::random_model(r, J, K, ModelFamily::general);
        const auto tab = exact_pmf(m);
        for (std::uint32_t a = 0; a < m.classes(); ++a)
            for (std::uint32_t p = 0; p < (1u << J); ++p)
                for (std::size_t j = 0; j < J; ++j) {
                    const std::uint32_t p1 = p | (1u << j), p0 = p & ~(1u << j);
                    const double expected = tab(p1, a) / (tab(p1, a) + tab(p0, a));
                    auto x = decode_pattern(p, J);
                    x.erase(x.begin() + static_cast<std::ptrdiff_t>(j));
                    const double got = conditional_item_prob(m, j, x, AttributeProfile::from_index(a, K));
                    EXPECT_NEAR(got, expected, 1e-10);
                    EXPECT_GT(got, 0.0);
                    EXPECT_LT(got, 1.0);
                }
    }
}

TEST(Exact, SizeGuard) {
    Rng r(37);
    EXPECT_THROW(exact_pmf(gdcm::testing::random_model(r, 15, 1)), DataError);
    EXPECT_THROW(exact_pmf(gdcm::testing::random_model(r, 5, 5)), DataError);
}
