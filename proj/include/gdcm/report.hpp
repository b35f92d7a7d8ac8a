#pragma once

// Recovery metrics against a known truth, and graph summaries of an
// estimated design matrix: edge lists, maximal cliques, heat-map grids.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "gdcm/core.hpp"

namespace gdcm {

inline void require_same_length(std::size_t a, std::size_t b) {
    if (a != b) throw DataError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}

inline double rmsd(std::span<const double> est, std::span<const double> truth) {
    require_same_length(est.size(), truth.size());
    require(!est.empty(), "rmsd needs at least one value");
    double s = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) s += (est[i] - truth[i]) * (est[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(est.size()));
}

/// Mean |est - truth|.
inline double abs_bias(std::span<const double> est, std::span<const double> truth) {
    require_same_length(est.size(), truth.size());
    require(!est.empty(), "abs_bias needs at least one value");
    double s = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) s += std::abs(est[i] - truth[i]);
    return s / static_cast<double>(est.size());
}

/// Mean (est - truth).
inline double signed_bias(std::span<const double> est, std::span<const double> truth) {
    require_same_length(est.size(), truth.size());
    require(!est.empty(), "signed_bias needs at least one value");
    double s = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) s += est[i] - truth[i];
    return s / static_cast<double>(est.size());
}

struct GraphRates {
    std::optional<double> fpr;  ///< undefined when the true graph is complete
    std::optional<double> cpr;  ///< undefined when the true graph is empty
};

/// Over upper-triangle pairs; an entry is an edge iff it is exactly nonzero.
inline GraphRates graph_fpr_cpr(const DesignMatrix& phi_hat, const DesignMatrix& phi_true) {
    require_same_length(phi_hat.order(), phi_true.order());
    std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
    for (std::size_t j = 0; j < phi_true.order(); ++j)
        for (std::size_t k = j + 1; k < phi_true.order(); ++k) {
            const bool est = phi_hat(j, k) != 0.0;
            if (phi_true(j, k) != 0.0) {
                ++pos;
                tp += est;
            } else {
                ++neg;
                fp += est;
            }
        }
    GraphRates r;
    if (neg > 0) r.fpr = static_cast<double>(fp) / static_cast<double>(neg);
    if (pos > 0) r.cpr = static_cast<double>(tp) / static_cast<double>(pos);
    return r;
}

/// RMSD over all upper-triangle entries, zeros included.
inline double rmsd_phi(const DesignMatrix& phi_hat, const DesignMatrix& phi_true) {
    require_same_length(phi_hat.order(), phi_true.order());
    require(phi_true.order() >= 2, "rmsd_phi needs at least two items");
    std::vector<double> a, b;
    for (std::size_t j = 0; j < phi_true.order(); ++j)
        for (std::size_t k = j + 1; k < phi_true.order(); ++k) {
            a.push_back(phi_hat(j, k));
            b.push_back(phi_true(j, k));
        }
    return rmsd(a, b);
}

inline double pi_distance(std::span<const double> pi_hat, std::span<const double> pi_true) {
    require_same_length(pi_hat.size(), pi_true.size());
    double s = 0.0;
    for (std::size_t a = 0; a < pi_hat.size(); ++a) s += (pi_hat[a] - pi_true[a]) * (pi_hat[a] - pi_true[a]);
    return std::sqrt(s);
}

struct Edge {
    std::size_t j = 0;
    std::size_t k = 0;
    double value = 0.0;
    bool operator==(const Edge&) const = default;
};

/// Upper-triangle entries with |φ| > threshold, by descending φ, then (j, k).
inline std::vector<Edge> edge_list(const DesignMatrix& phi, double threshold = 0.0) {
    std::vector<Edge> out;
    for (std::size_t j = 0; j < phi.order(); ++j)
        for (std::size_t k = j + 1; k < phi.order(); ++k)
            if (std::abs(phi(j, k)) > threshold) out.push_back({j, k, phi(j, k)});
    std::stable_sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.value > b.value; });
    return out;
}

struct Clique {
    std::vector<std::size_t> items;  ///< ascending
    double phi_sum = 0.0;
    bool operator==(const Clique&) const = default;
};

namespace detail {

using Bits = std::vector<std::uint64_t>;

inline Bits bits_make(std::size_t n) { return Bits((n + 63) / 64, 0); }
inline bool bits_test(const Bits& b, std::size_t i) { return (b[i / 64] >> (i % 64)) & 1U; }
inline void bits_set(Bits& b, std::size_t i) { b[i / 64] |= std::uint64_t{1} << (i % 64); }
inline void bits_reset(Bits& b, std::size_t i) { b[i / 64] &= ~(std::uint64_t{1} << (i % 64)); }
inline bool bits_empty(const Bits& b) {
    return std::all_of(b.begin(), b.end(), [](std::uint64_t w) { return w == 0; });
}
inline Bits bits_and(const Bits& a, const Bits& b) {
    Bits r(a.size());
    for (std::size_t w = 0; w < a.size(); ++w) r[w] = a[w] & b[w];
    return r;
}
inline std::size_t bits_count(const Bits& b) {
    std::size_t n = 0;
    for (auto w : b) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

/// Bron–Kerbosch with Tomita pivoting.
inline void bron_kerbosch(std::vector<std::size_t>& r, Bits p, Bits x, const std::vector<Bits>& adj,
                          std::size_t n, std::vector<std::vector<std::size_t>>& out) {
    if (bits_empty(p) && bits_empty(x)) {
        out.push_back(r);
        return;
    }
    std::size_t pivot = 0, best = 0;
    bool found = false;
    for (std::size_t u = 0; u < n; ++u) {
        if (!bits_test(p, u) && !bits_test(x, u)) continue;
        const auto c = bits_count(bits_and(p, adj[u]));
        if (!found || c > best) {
            pivot = u;
            best = c;
            found = true;
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (!bits_test(p, v) || bits_test(adj[pivot], v)) continue;
        r.push_back(v);
        bron_kerbosch(r, bits_and(p, adj[v]), bits_and(x, adj[v]), adj, n, out);
        r.pop_back();
        bits_reset(p, v);
        bits_set(x, v);
    }
}

}  // namespace detail

/// Maximal cliques of the graph {(j, k) : φ_jk ≠ 0} (only φ_jk > 0 when
/// positive_only), of size ≥ min_size, by descending phi_sum, then items.
inline std::vector<Clique> maximal_cliques(const DesignMatrix& phi, std::size_t min_size = 3,
                                           bool positive_only = true) {
    const std::size_t n = phi.order();
    std::vector<detail::Bits> adj(n, detail::bits_make(n));
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) {
            const double v = phi(j, k);
            if (j != k && (positive_only ? v > 0.0 : v != 0.0)) detail::bits_set(adj[j], k);
        }
    auto p = detail::bits_make(n);
    for (std::size_t v = 0; v < n; ++v) detail::bits_set(p, v);
    std::vector<std::vector<std::size_t>> found;
    std::vector<std::size_t> r;
    detail::bron_kerbosch(r, p, detail::bits_make(n), adj, n, found);

    std::vector<Clique> out;
    for (auto& items : found) {
        if (items.size() < min_size) continue;
        std::sort(items.begin(), items.end());
        double s = 0.0;
        for (std::size_t a = 0; a < items.size(); ++a)
            for (std::size_t b = a + 1; b < items.size(); ++b) s += phi(items[a], items[b]);
        out.push_back({std::move(items), s});
    }
    std::sort(out.begin(), out.end(), [](const Clique& a, const Clique& b) {
        if (a.phi_sum != b.phi_sum) return a.phi_sum > b.phi_sum;
        return a.items < b.items;
    });
    return out;
}

/// J×J grid of |φ| with item-index headers.
inline std::string export_heatmap(const DesignMatrix& phi) {
    std::string out = "item";
    for (std::size_t k = 0; k < phi.order(); ++k) out += "," + std::to_string(k + 1);
    out += '\n';
    char buf[32];
    for (std::size_t j = 0; j < phi.order(); ++j) {
        out += std::to_string(j + 1);
        for (std::size_t k = 0; k < phi.order(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", std::abs(phi(j, k)));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline std::string export_edges(std::span<const Edge> edges) {
    std::string out = "j,j',phi\n";
    char buf[64];
    for (const auto& e : edges) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", e.j, e.k, e.value);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Recovery metrics

struct RecoveryMetrics {
    std::optional<double> rmsd_guess, rmsd_slip;
    std::optional<double> bias_guess, bias_slip;
    std::optional<double> signed_bias_guess, signed_bias_slip;
    std::optional<double> rmsd_phi;
    std::optional<double> fpr, cpr;
    std::optional<double> pi_distance;
};

/// Metrics of a fitted model against the generating one. The DINA fields are
/// left undefined unless both models are DINA.
inline RecoveryMetrics recovery_metrics(const GdcmModel& fit, const GdcmModel& truth) {
    require(fit.items() == truth.items() && fit.attributes() == truth.attributes(),
            "fitted and true models differ in dimension");
    RecoveryMetrics m;
    if (fit.family() == ModelFamily::dina && truth.family() == ModelFamily::dina) {
        const auto a = fit.dina_params(), b = truth.dina_params();
        std::vector<double> ge, gt, se, st;
        for (std::size_t j = 0; j < a.size(); ++j) {
            ge.push_back(a[j].guess);
            gt.push_back(b[j].guess);
            se.push_back(a[j].slip);
            st.push_back(b[j].slip);
        }
        m.rmsd_guess = rmsd(ge, gt);
        m.rmsd_slip = rmsd(se, st);
        m.bias_guess = abs_bias(ge, gt);
        m.bias_slip = abs_bias(se, st);
        m.signed_bias_guess = signed_bias(ge, gt);
        m.signed_bias_slip = signed_bias(se, st);
    }
    m.rmsd_phi = rmsd_phi(fit.phi, truth.phi);
    const auto rates = graph_fpr_cpr(fit.phi, truth.phi);
    m.fpr = rates.fpr;
    m.cpr = rates.cpr;
    m.pi_distance = pi_distance(fit.prior.probs(), truth.prior.probs());
    return m;
}

struct AggregateMetrics {
    RecoveryMetrics mean;
    std::size_t replications = 0;
    /// Replications contributing to fpr and cpr.
    std::size_t fpr_defined = 0;
    std::size_t cpr_defined = 0;
};

/// Field-wise means, skipping undefined entries.
inline AggregateMetrics aggregate_replications(std::span<const RecoveryMetrics> reps) {
    require(!reps.empty(), "no replications to aggregate");
    AggregateMetrics out;
    out.replications = reps.size();
    auto avg = [&](std::optional<double> RecoveryMetrics::*field, std::size_t* defined = nullptr) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : reps)
            if (r.*field) {
                s += *(r.*field);
                ++n;
            }
        if (defined) *defined = n;
        out.mean.*field = n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt;
    };
    avg(&RecoveryMetrics::rmsd_guess);
    avg(&RecoveryMetrics::rmsd_slip);
    avg(&RecoveryMetrics::bias_guess);
    avg(&RecoveryMetrics::bias_slip);
    avg(&RecoveryMetrics::signed_bias_guess);
    avg(&RecoveryMetrics::signed_bias_slip);
    avg(&RecoveryMetrics::rmsd_phi);
    avg(&RecoveryMetrics::fpr, &out.fpr_defined);
    avg(&RecoveryMetrics::cpr, &out.cpr_defined);
    avg(&RecoveryMetrics::pi_distance);
    return out;
}

}  // namespace gdcm
