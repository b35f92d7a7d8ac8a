#pragma once

// Brute-force enumeration of small models. This is the ground truth that the
// sampler and estimator tests are checked against.
//
// The joint is π_α · exp(xᵀBα + ½xᵀΦx) / Z_α with a per-class normalizer
// Z_α = Σ_x exp(xᵀBα + ½xᵀΦx). With this normalization π is the marginal
// distribution of α, and X | α is the Ising model the Gibbs sampler targets.

#include <cstdint>
#include <vector>

#include "gdcm/core.hpp"

namespace gdcm {

inline constexpr std::size_t kExactMaxItems = 14;
inline constexpr std::size_t kExactMaxAttributes = 4;

/// Response vector encoded as bit j = x_j.
inline std::vector<std::uint8_t> decode_pattern(std::uint32_t pattern, std::size_t J) {
    std::vector<std::uint8_t> x(J);
    for (std::size_t j = 0; j < J; ++j) x[j] = (pattern >> j) & 1U;
    return x;
}

inline std::uint32_t encode_pattern(std::span<const std::uint8_t> x) {
    std::uint32_t p = 0;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j]) p |= std::uint32_t{1} << j;
    return p;
}

/// Probability table over {0,1}^J × {0,1}^K, pattern-major.
struct PmfTable {
    std::size_t items = 0;
    std::size_t attributes = 0;
    std::vector<double> p;

    std::size_t classes() const { return num_classes(attributes); }
    double operator()(std::uint32_t pattern, std::uint32_t alpha) const {
        return p[static_cast<std::size_t>(pattern) * classes() + alpha];
    }
};

inline void check_exact_size(const GdcmModel& model) {
    if (model.items() > kExactMaxItems || model.attributes() > kExactMaxAttributes)
        throw DataError("exact enumeration is limited to J <= 14 and K <= 4");
}

/// log Z_α for every class.
inline std::vector<double> log_partition(const GdcmModel& model) {
    check_exact_size(model);
    const std::size_t J = model.items();
    const std::size_t P = std::size_t{1} << J;
    std::vector<double> out(model.classes());
    std::vector<double> terms(P);
    for (std::uint32_t a = 0; a < model.classes(); ++a) {
        for (std::uint32_t x = 0; x < P; ++x) terms[x] = log_potential(model, decode_pattern(x, J), a);
        out[a] = log_sum_exp(terms);
    }
    return out;
}

inline PmfTable exact_pmf(const GdcmModel& model) {
    check_exact_size(model);
    const std::size_t J = model.items();
    const std::size_t C = model.classes();
    const std::size_t P = std::size_t{1} << J;
    const auto logz = log_partition(model);
    PmfTable t{J, model.attributes(), std::vector<double>(P * C)};
    for (std::uint32_t x = 0; x < P; ++x) {
        const auto xv = decode_pattern(x, J);
        for (std::uint32_t a = 0; a < C; ++a)
            t.p[x * C + a] = model.prior[a] == 0.0
                                 ? 0.0
                                 : model.prior[a] * std::exp(log_potential(model, xv, a) - logz[a]);
    }
    return t;
}

/// Pr(X = x) for every pattern x, α summed out.
inline std::vector<double> marginal_exact_pmf(const GdcmModel& model) {
    const auto t = exact_pmf(model);
    const std::size_t P = std::size_t{1} << t.items;
    std::vector<double> out(P, 0.0);
    for (std::uint32_t x = 0; x < P; ++x)
        for (std::uint32_t a = 0; a < t.classes(); ++a) out[x] += t(x, a);
    return out;
}

}  // namespace gdcm
