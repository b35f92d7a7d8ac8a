#pragma once

// Synthetic data for the factorial simulation design: Q-matrices with
// single-attribute anchor items, DINA item parameters, null/pair/triplet
// interaction graphs, and Gibbs-sampled responses.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gdcm/core.hpp"
#include "gdcm/rng.hpp"

namespace gdcm {

enum class GraphKind { null, pair, triplet };

inline std::string_view to_string(GraphKind k) {
    switch (k) {
        case GraphKind::null: return "null";
        case GraphKind::pair: return "pair";
        case GraphKind::triplet: return "triplet";
    }
    return "null";
}

inline GraphKind parse_graph_kind(std::string_view s) {
    if (s == "null") return GraphKind::null;
    if (s == "pair") return GraphKind::pair;
    if (s == "triplet") return GraphKind::triplet;
    throw DataError("unknown graph scenario '" + std::string(s) + "'");
}

struct GraphScenario {
    GraphKind kind = GraphKind::null;
    std::size_t items = 30;
    double edge_value = 1.0;
};

struct SimConfig {
    std::size_t attributes = 3;
    std::size_t items = 30;
    std::size_t subjects = 1000;
    GraphScenario scenario{};
    std::pair<double, double> guess_range{0.05, 0.2};
    std::pair<double, double> slip_range{0.0, 0.2};
    double attr_success = 0.5;
    std::size_t burn_in = 300;
    std::uint64_t seed = 1;
    bool random_scan = false;

    void validate() const {
        require(attributes >= 1 && attributes <= kMaxAttributes, "K must be in [1, 16]");
        require(items >= 2, "J must be at least 2");
        require(subjects >= 1, "N must be at least 1");
        require(scenario.items == items, "scenario item count must equal J");
        auto in_unit = [](std::pair<double, double> r) {
            return r.first >= 0.0 && r.second <= 1.0 && r.first < r.second;
        };
        require(in_unit(guess_range), "guess range must be an interval inside (0, 1)");
        require(in_unit(slip_range), "slip range must be an interval inside (0, 1)");
        require(attr_success > 0.0 && attr_success < 1.0, "attribute success probability must lie in (0, 1)");
    }
};

struct SimTruth {
    GdcmModel model;
    std::vector<DinaItemParams> items;
    /// Class index of every subject.
    std::vector<std::uint32_t> alpha;
};

namespace stream {
inline constexpr std::uint64_t qmatrix = 1;
inline constexpr std::uint64_t item_params = 2;
inline constexpr std::uint64_t profiles = 3;
inline constexpr std::uint64_t truth = 4;
inline constexpr std::uint64_t gibbs = 5;
inline constexpr std::uint64_t scan = 6;
}  // namespace stream

/// Rows 0..3K-1 stack three K×K identity blocks; the remaining rows are drawn
/// uniformly from the nonzero profiles.
inline QMatrix gen_q_matrix(std::size_t J, std::size_t K, const KeyedRng& rng) {
    require(K >= 1 && K <= kMaxAttributes, "K must be in [1, 16]");
    if (J < 3 * K) throw DataError("J must be at least 3K to place three anchor items per attribute");
    DenseMatrix<std::uint8_t> q(J, K, 0);
    for (std::size_t j = 0; j < 3 * K; ++j) q(j, j % K) = 1;
    const double nonzero = static_cast<double>(num_classes(K) - 1);
    for (std::size_t j = 3 * K; j < J; ++j) {
        auto pick = static_cast<std::uint32_t>(rng.uniform(j) * nonzero);
        pick = std::min<std::uint32_t>(pick, static_cast<std::uint32_t>(nonzero) - 1) + 1;
        for (std::size_t k = 0; k < K; ++k) q(j, k) = (pick >> k) & 1U;
    }
    return QMatrix(std::move(q));
}

inline std::vector<std::pair<std::size_t, std::size_t>> scenario_edges(const GraphScenario& s) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    switch (s.kind) {
        case GraphKind::null: break;
        case GraphKind::pair:
            if (s.items % 2 != 0) throw DataError("pair scenario requires an even number of items");
            for (std::size_t j = 0; j + 1 < s.items; j += 2) edges.emplace_back(j, j + 1);
            break;
        case GraphKind::triplet:
            if (s.items % 3 != 0) throw DataError("triplet scenario requires J divisible by 3");
            for (std::size_t j = 0; j + 2 < s.items; j += 3) {
                edges.emplace_back(j, j + 1);
                edges.emplace_back(j, j + 2);
                edges.emplace_back(j + 1, j + 2);
            }
            break;
    }
    return edges;
}

inline DesignMatrix build_scenario_phi(const GraphScenario& s) {
    require(s.items >= 2, "scenario needs at least two items");
    DesignMatrix phi(s.items);
    for (auto [j, k] : scenario_edges(s)) phi.set(j, k, s.edge_value);
    return phi;
}

/// Product-Bernoulli class prior.
inline ClassPrior product_bernoulli_prior(std::size_t K, double success) {
    std::vector<double> p(num_classes(K));
    for (std::uint32_t a = 0; a < p.size(); ++a) {
        double v = 1.0;
        for (std::size_t k = 0; k < K; ++k) v *= ((a >> k) & 1U) ? success : 1.0 - success;
        p[a] = v;
    }
    return ClassPrior::normalized(std::move(p));
}

inline SimTruth sample_truth(const SimConfig& config, const QMatrix& q, const KeyedRng& rng) {
    config.validate();
    require(q.items() == config.items && q.attributes() == config.attributes,
            "Q-matrix dimensions do not match the configuration");
    const auto items_rng = rng.derive(stream::item_params);
    std::vector<DinaItemParams> items(config.items);
    for (std::size_t j = 0; j < config.items; ++j) {
        const auto [glo, ghi] = config.guess_range;
        const auto [slo, shi] = config.slip_range;
        items[j].guess = glo + (ghi - glo) * items_rng.uniform(2 * j);
        items[j].slip = slo + (shi - slo) * items_rng.uniform(2 * j + 1);
    }
    auto model = make_dina_model(q, items, build_scenario_phi(config.scenario),
                                 product_bernoulli_prior(config.attributes, config.attr_success));

    const auto prof_rng = rng.derive(stream::profiles);
    std::vector<std::uint32_t> alpha(config.subjects);
    for (std::size_t i = 0; i < config.subjects; ++i) {
        const auto subject = prof_rng.derive(i);
        std::uint32_t a = 0;
        for (std::size_t k = 0; k < config.attributes; ++k)
            if (subject.uniform(k) < config.attr_success) a |= std::uint32_t{1} << k;
        alpha[i] = a;
    }
    return {std::move(model), std::move(items), std::move(alpha)};
}

inline SimTruth sample_truth(const SimConfig& config, const KeyedRng& rng) {
    config.validate();
    return sample_truth(config, gen_q_matrix(config.items, config.attributes, rng.derive(stream::qmatrix)), rng);
}

/// Per-subject Gibbs chains on X | α.
///
/// Chains start from i.i.d. Bernoulli(0.5) and run `burn_in` sweeps; the final
/// state is returned. Draw t of subject i uses the counter-addressed uniform
/// (rng ⊕ i, sweep·J + item), so results do not depend on evaluation order.
/// Under a systematic scan, items without neighbours never influence other
/// items and their last draw depends only on that draw's uniform, so only
/// the final sweep is evaluated for them; the output is identical to running
/// every sweep.
class GibbsKernel {
public:
    explicit GibbsKernel(const GdcmModel& model) : J_(model.items()), C_(model.classes()), eta_(J_ * C_) {
        neighbours_.resize(J_);
        for (std::size_t j = 0; j < J_; ++j) {
            for (std::uint32_t a = 0; a < C_; ++a) eta_[j * C_ + a] = model.beta.linear_predictor(j, a);
            for (std::size_t k = 0; k < J_; ++k)
                if (k != j && model.phi(j, k) != 0.0) neighbours_[j].push_back({k, model.phi(j, k)});
        }
    }

    std::size_t items() const noexcept { return J_; }

    void run(std::uint32_t alpha, std::size_t burn_in, const KeyedRng& chain, bool random_scan,
             std::span<std::uint8_t> x) const {
        require(x.size() == J_, "state length must be J");
        require(alpha < C_, "class index out of range");
        std::vector<double> field(J_, 0.0);
        for (std::size_t j = 0; j < J_; ++j) x[j] = chain.uniform(j) < 0.5 ? 1 : 0;
        for (std::size_t j = 0; j < J_; ++j)
            if (x[j])
                for (const auto& nb : neighbours_[j]) field[nb.item] += nb.value;

        const auto scan = chain.derive(stream::scan);
        for (std::size_t sweep = 1; sweep <= burn_in; ++sweep) {
            const bool last = sweep == burn_in;
            for (std::size_t pos = 0; pos < J_; ++pos) {
                const std::uint64_t counter = sweep * J_ + pos;
                std::size_t j = pos;
                if (random_scan) {
                    j = std::min<std::size_t>(static_cast<std::size_t>(scan.uniform(counter) * J_), J_ - 1);
                } else if (neighbours_[j].empty() && !last) {
                    continue;
                }
                const double p = expit(eta_[j * C_ + alpha] + field[j]);
                const std::uint8_t v = chain.uniform(counter) < p ? 1 : 0;
                if (v != x[j]) {
                    const double delta = v ? 1.0 : -1.0;
                    for (const auto& nb : neighbours_[j]) field[nb.item] += delta * nb.value;
                    x[j] = v;
                }
            }
        }
    }

private:
    struct Neighbour {
        std::size_t item;
        double value;
    };

    std::size_t J_;
    std::size_t C_;
    std::vector<double> eta_;
    std::vector<std::vector<Neighbour>> neighbours_;
};

/// One independent chain per subject, class taken from `alpha`.
inline ResponseMatrix gibbs_sample(const GdcmModel& model, std::span<const std::uint32_t> alpha, std::size_t burn_in,
                                   const KeyedRng& rng, bool random_scan = false) {
    require(!alpha.empty(), "at least one subject is required");
    const GibbsKernel kernel(model);
    DenseMatrix<std::uint8_t> x(alpha.size(), model.items(), 0);
    for (std::size_t i = 0; i < alpha.size(); ++i) kernel.run(alpha[i], burn_in, rng.derive(i), random_scan, x.row(i));
    return ResponseMatrix(std::move(x));
}

inline ResponseMatrix gibbs_sample_responses(const SimTruth& truth, const SimConfig& config, const KeyedRng& rng) {
    require(truth.alpha.size() == config.subjects, "truth subject count does not match the configuration");
    return gibbs_sample(truth.model, truth.alpha, config.burn_in, rng, config.random_scan);
}

struct SimulatedData {
    ResponseMatrix responses;
    SimTruth truth;
};

inline SimulatedData simulate_dataset(const SimConfig& config) {
    config.validate();
    const KeyedRng root(config.seed);
    auto truth = sample_truth(config, root.derive(stream::truth));
    auto x = gibbs_sample_responses(truth, config, root.derive(stream::gibbs));
    return {std::move(x), std::move(truth)};
}

}  // namespace gdcm
