#pragma once

// Parametric-bootstrap goodness of fit. The statistic is the unnormalized
// observed log-likelihood Σ_i log Σ_α π_α exp(x_iᵀBα + ½x_iᵀΦx_i); datasets
// of the same size simulated from the fitted model give its reference
// distribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gdcm/core.hpp"
#include "gdcm/parallel.hpp"
#include "gdcm/rng.hpp"
#include "gdcm/simulate.hpp"

namespace gdcm {

inline double unnormalized_loglik(const GdcmModel& model, const ResponseMatrix& x) {
    require(x.items() == model.items(), "responses have " + std::to_string(x.items()) + " items but the model has " +
                                            std::to_string(model.items()));
    const std::size_t C = model.classes();
    std::vector<double> log_prior(C);
    for (std::size_t a = 0; a < C; ++a)
        log_prior[a] = model.prior[a] > 0.0 ? std::log(model.prior[a]) : -std::numeric_limits<double>::infinity();
    std::vector<double> s(C);
    double total = 0.0;
    for (std::size_t i = 0; i < x.subjects(); ++i) {
        const auto xi = x.row(i);
        for (std::uint32_t a = 0; a < C; ++a) s[a] = log_prior[a] + log_potential(model, xi, a);
        total += log_sum_exp(s);
    }
    return total;
}

/// Class index drawn from π by inversion of a single uniform.
inline std::uint32_t draw_class(const ClassPrior& prior, double u) {
    double cum = 0.0;
    for (std::uint32_t a = 0; a + 1 < prior.size(); ++a) {
        cum += prior[a];
        if (u < cum) return a;
    }
    std::uint32_t last = static_cast<std::uint32_t>(prior.size()) - 1;
    while (last > 0 && prior[last] == 0.0) --last;
    return last;
}

/// One simulated dataset of N subjects from `model`.
inline ResponseMatrix bootstrap_dataset(const GdcmModel& model, std::size_t N, std::size_t burn_in,
                                        const KeyedRng& rng) {
    const auto classes = rng.derive(stream::profiles);
    std::vector<std::uint32_t> alpha(N);
    for (std::size_t i = 0; i < N; ++i) alpha[i] = draw_class(model.prior, classes.uniform(i));
    return gibbs_sample(model, alpha, burn_in, rng.derive(stream::gibbs));
}

/// Replicate b uses the stream (seed ⊕ b), so the vector does not depend on
/// the thread count.
inline std::vector<double> bootstrap_reference(const GdcmModel& model, std::size_t N, std::size_t B,
                                               std::size_t burn_in, std::uint64_t seed, std::size_t threads = 1) {
    require(B >= 1, "bootstrap size must be at least 1");
    require(N >= 1, "bootstrap sample size must be at least 1");
    const KeyedRng root(seed);
    std::vector<double> out(B);
    parallel_for(B, threads, [&](std::size_t b) {
        out[b] = unnormalized_loglik(model, bootstrap_dataset(model, N, burn_in, root.derive(b)));
    });
    return out;
}

struct GofResult {
    double l_obs = 0.0;
    std::vector<double> l_boot;
    double p_value = 1.0;
    std::size_t B = 0;
    std::uint64_t seed = 0;
};

/// Lower-tail p-value (1 + #{l_boot ≤ l_obs}) / (B + 1).
inline GofResult gof_p_value(double l_obs, std::vector<double> l_boot) {
    require(!l_boot.empty(), "bootstrap reference is empty");
    const auto below = std::count_if(l_boot.begin(), l_boot.end(), [&](double v) { return v <= l_obs; });
    GofResult r;
    r.l_obs = l_obs;
    r.B = l_boot.size();
    r.p_value = static_cast<double>(1 + below) / static_cast<double>(r.B + 1);
    r.l_boot = std::move(l_boot);
    return r;
}

inline GofResult run_gof(const GdcmModel& model, const ResponseMatrix& x, std::size_t B, std::uint64_t seed,
                         std::size_t burn_in = 300, std::size_t threads = 1) {
    const double l_obs = unnormalized_loglik(model, x);
    if (!std::isfinite(l_obs)) throw NumericalError("observed log-likelihood is not finite");
    auto boot = bootstrap_reference(model, x.subjects(), B, burn_in, seed, threads);
    for (double v : boot)
        if (!std::isfinite(v)) throw NumericalError("bootstrap log-likelihood is not finite");
    auto r = gof_p_value(l_obs, std::move(boot));
    r.seed = seed;
    return r;
}

struct Histogram {
    std::vector<double> edges;  ///< bins + 1 edges
    std::vector<std::size_t> counts;
};

/// Equal-width bins spanning the values (and `extra`, e.g. the observed
/// statistic, so it falls inside the plotted range).
inline Histogram histogram(std::span<const double> values, std::size_t bins = 30,
                           double extra = std::numeric_limits<double>::quiet_NaN()) {
    require(bins >= 1, "histogram needs at least one bin");
    require(!values.empty(), "histogram needs at least one value");
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    if (std::isfinite(extra)) {
        lo = std::min(lo, extra);
        hi = std::max(hi, extra);
    }
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (double v : values) {
        auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

}  // namespace gdcm
