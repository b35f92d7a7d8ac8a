#pragma once

// Random instance generators shared by the test suites.

#include <cstdint>
#include <random>
#include <vector>

#include "gdcm/core.hpp"

namespace gdcm::testing {

using Rng = std::mt19937_64;

inline double unif(Rng& r, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(r); }
inline std::size_t pick(Rng& r, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(r);
}

inline QMatrix random_q(Rng& r, std::size_t J, std::size_t K) {
    DenseMatrix<std::uint8_t> q(J, K);
    for (std::size_t j = 0; j < J; ++j) {
        const auto mask = static_cast<std::uint32_t>(pick(r, 1, num_classes(K) - 1));
        for (std::size_t k = 0; k < K; ++k) q(j, k) = (mask >> k) & 1U;
    }
    return QMatrix(std::move(q));
}

inline DesignMatrix random_phi(Rng& r, std::size_t J, double density, double scale) {
    DesignMatrix phi(J);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t k = j + 1; k < J; ++k)
            if (unif(r, 0, 1) < density) phi.set(j, k, unif(r, -scale, scale));
    return phi;
}

inline ClassPrior random_prior(Rng& r, std::size_t K) {
    std::vector<double> w(num_classes(K));
    for (auto& v : w) v = unif(r, 0.2, 1.0);
    return ClassPrior::normalized(std::move(w));
}

/// DINA or general model with random coefficients, graph and prior.
inline GdcmModel random_model(Rng& r, std::size_t J, std::size_t K, ModelFamily family = ModelFamily::dina,
                              double density = 0.5, double phi_scale = 1.0) {
    const auto q = random_q(r, J, K);
    ItemCoefficients beta(q, family);
    for (std::size_t j = 0; j < J; ++j)
        for (auto pos : beta.active_positions(j)) beta.set(j, pos, pos == 0 ? unif(r, -2.0, -0.5) : unif(r, 0.5, 3.0));
    return {q, std::move(beta), random_phi(r, J, density, phi_scale), random_prior(r, K)};
}

inline ResponseMatrix random_responses(Rng& r, std::size_t N, std::size_t J, double p = 0.5) {
    DenseMatrix<std::uint8_t> x(N, J);
    for (auto& v : x.data()) v = unif(r, 0, 1) < p ? 1 : 0;
    return ResponseMatrix(std::move(x));
}

}  // namespace gdcm::testing
