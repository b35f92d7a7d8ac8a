#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace gdcm {

/// Logistic function, branch form so exp never overflows.
inline double expit(double t) noexcept {
    if (t >= 0.0) {
        const double z = std::exp(-t);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(t);
    return z / (1.0 + z);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

/// log(1 + e^t) without overflow.
inline double log1pexp(double t) noexcept {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// log Σ exp(v_k); -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) noexcept {
    double hi = -std::numeric_limits<double>::infinity();
    for (double a : v) hi = std::max(hi, a);
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double a : v) s += std::exp(a - hi);
    return hi + std::log(s);
}

}  // namespace gdcm
