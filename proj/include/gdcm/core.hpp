#pragma once

// Domain types and probability kernels of the graphical diagnostic
// classification model: a latent-class (DCM) item response model whose items
// additionally interact through a pairwise binary Markov network.
//
// Conventions used throughout the library:
//  - Attribute profiles are encoded as integers, bit k holding attribute k
//    (index = Σ α_k 2^k with 0-based k), so there are 2^K classes.
//  - The 2^K-wide design basis of a profile lists the products of attribute
//    subsets ordered by subset size, then lexicographically on the attribute
//    indices. Position 0 is the intercept (empty subset).
//  - Response vectors are 0/1 bytes, item j at position j.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdcm/error.hpp"
#include "gdcm/math.hpp"
#include "gdcm/matrix.hpp"

namespace gdcm {

inline constexpr std::size_t kMaxAttributes = 16;

inline std::size_t num_classes(std::size_t K) { return std::size_t{1} << K; }

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DataError(what);
}

// ---------------------------------------------------------------------------
// Attribute profiles and the design basis

class AttributeProfile {
public:
    AttributeProfile(std::span<const std::uint8_t> bits) : K_(bits.size()) {
        require(K_ >= 1 && K_ <= kMaxAttributes, "attribute profile length must be in [1, 16]");
        for (std::size_t k = 0; k < K_; ++k) {
            require(bits[k] <= 1, "attribute profile entries must be 0 or 1");
            if (bits[k]) index_ |= std::uint32_t{1} << k;
        }
    }
    AttributeProfile(std::initializer_list<std::uint8_t> bits)
        : AttributeProfile(std::span<const std::uint8_t>(bits.begin(), bits.size())) {}

    static AttributeProfile from_index(std::uint32_t index, std::size_t K) {
        require(K >= 1 && K <= kMaxAttributes, "attribute count must be in [1, 16]");
        require(index < num_classes(K), "attribute profile index out of range");
        AttributeProfile a;
        a.index_ = index;
        a.K_ = K;
        return a;
    }

    std::size_t size() const noexcept { return K_; }
    std::uint32_t index() const noexcept { return index_; }
    std::uint8_t operator[](std::size_t k) const noexcept { return (index_ >> k) & 1U; }

    std::vector<std::uint8_t> bits() const {
        std::vector<std::uint8_t> out(K_);
        for (std::size_t k = 0; k < K_; ++k) out[k] = (*this)[k];
        return out;
    }

    bool operator==(const AttributeProfile&) const = default;

private:
    AttributeProfile() = default;
    std::uint32_t index_ = 0;
    std::size_t K_ = 0;
};

/// Attribute subsets (as bit masks) in design-basis order.
inline std::vector<std::uint32_t> subset_order(std::size_t K) {
    require(K >= 1 && K <= kMaxAttributes, "attribute count must be in [1, 16]");
    std::vector<std::uint32_t> out;
    out.reserve(num_classes(K));
    out.push_back(0);
    std::vector<std::size_t> comb;
    for (std::size_t size = 1; size <= K; ++size) {
        comb.resize(size);
        std::iota(comb.begin(), comb.end(), std::size_t{0});
        while (true) {
            std::uint32_t mask = 0;
            for (auto k : comb) mask |= std::uint32_t{1} << k;
            out.push_back(mask);
            // next combination in lexicographic order
            std::size_t i = size;
            while (i > 0 && comb[i - 1] == K - size + (i - 1)) --i;
            if (i == 0) break;
            ++comb[i - 1];
            for (std::size_t m = i; m < size; ++m) comb[m] = comb[m - 1] + 1;
        }
    }
    return out;
}

/// Position of an attribute subset within the design basis.
inline std::size_t subset_position(std::uint32_t mask, std::size_t K) {
    const auto order = subset_order(K);
    const auto it = std::find(order.begin(), order.end(), mask);
    require(it != order.end(), "attribute subset out of range");
    return static_cast<std::size_t>(it - order.begin());
}

/// Expanded profile (1, α_1, …, α_K, α_1α_2, …, α_1⋯α_K).
inline std::vector<double> design_vector(const AttributeProfile& alpha, std::size_t K) {
    require(alpha.size() == K, "attribute profile length does not match K");
    const auto order = subset_order(K);
    std::vector<double> out(order.size());
    for (std::size_t s = 0; s < order.size(); ++s)
        out[s] = (order[s] & alpha.index()) == order[s] ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Q-matrix

class QMatrix {
public:
    QMatrix(std::size_t J, std::size_t K, std::span<const std::uint8_t> entries)
        : loadings_(J, K) {
        require(K >= 1 && K <= kMaxAttributes, "Q-matrix must have between 1 and 16 columns");
        require(J >= 1, "Q-matrix must have at least one row");
        require(entries.size() == J * K, "Q-matrix entry count does not match J x K");
        std::copy(entries.begin(), entries.end(), loadings_.data().begin());
        validate();
    }

    explicit QMatrix(DenseMatrix<std::uint8_t> loadings) : loadings_(std::move(loadings)) {
        require(loadings_.cols() >= 1 && loadings_.cols() <= kMaxAttributes,
                "Q-matrix must have between 1 and 16 columns");
        require(loadings_.rows() >= 1, "Q-matrix must have at least one row");
        validate();
    }

    std::size_t items() const noexcept { return loadings_.rows(); }
    std::size_t attributes() const noexcept { return loadings_.cols(); }
    std::uint8_t operator()(std::size_t j, std::size_t k) const { return loadings_(j, k); }
    std::span<const std::uint8_t> row(std::size_t j) const { return loadings_.row(j); }

    /// Required attributes of item j as a bit mask.
    std::uint32_t mask(std::size_t j) const {
        std::uint32_t m = 0;
        for (std::size_t k = 0; k < attributes(); ++k)
            if (loadings_(j, k)) m |= std::uint32_t{1} << k;
        return m;
    }

    const DenseMatrix<std::uint8_t>& loadings() const noexcept { return loadings_; }
    bool operator==(const QMatrix&) const = default;

private:
    void validate() const {
        for (std::size_t j = 0; j < items(); ++j) {
            bool any = false;
            for (std::size_t k = 0; k < attributes(); ++k) {
                require(loadings_(j, k) <= 1, "Q-matrix entries must be 0 or 1");
                any = any || loadings_(j, k) == 1;
            }
            require(any, "Q-matrix row " + std::to_string(j) + " measures no attribute");
        }
    }

    DenseMatrix<std::uint8_t> loadings_;
};

// ---------------------------------------------------------------------------
// Item coefficients

enum class ModelFamily { dina, general };

inline std::string_view to_string(ModelFamily f) { return f == ModelFamily::dina ? "dina" : "general"; }

inline ModelFamily parse_family(std::string_view s) {
    if (s == "dina") return ModelFamily::dina;
    if (s == "general") return ModelFamily::general;
    throw DataError("unknown model family '" + std::string(s) + "'");
}

/// Item-by-design-basis coefficient matrix B with its family sparsity mask.
///
/// DINA rows carry an intercept and one interaction coefficient on exactly the
/// attributes the item requires. General rows may use any subset of the
/// required attributes.
class ItemCoefficients {
public:
    ItemCoefficients(const QMatrix& q, ModelFamily family)
        : K_(q.attributes()),
          family_(family),
          order_(subset_order(K_)),
          beta_(q.items(), order_.size(), 0.0),
          active_(q.items()) {
        for (std::size_t j = 0; j < q.items(); ++j) {
            const auto req = q.mask(j);
            for (std::size_t s = 0; s < order_.size(); ++s) {
                const auto sub = order_[s];
                const bool on = family_ == ModelFamily::dina ? (sub == 0 || sub == req)
                                                             : (sub & ~req) == 0;
                if (on) active_[j].push_back(s);
            }
        }
    }

    std::size_t items() const noexcept { return beta_.rows(); }
    std::size_t attributes() const noexcept { return K_; }
    std::size_t width() const noexcept { return beta_.cols(); }
    ModelFamily family() const noexcept { return family_; }

    double operator()(std::size_t j, std::size_t pos) const { return beta_(j, pos); }
    std::span<const double> row(std::size_t j) const { return beta_.row(j); }

    void set(std::size_t j, std::size_t pos, double value) {
        require(is_active(j, pos), "coefficient (" + std::to_string(j) + ", " +
                                       std::to_string(pos) + ") is outside the family mask");
        beta_(j, pos) = value;
    }

    bool is_active(std::size_t j, std::size_t pos) const {
        const auto& a = active_[j];
        return std::find(a.begin(), a.end(), pos) != a.end();
    }
    std::span<const std::size_t> active_positions(std::size_t j) const { return active_[j]; }
    std::uint32_t subset_mask(std::size_t pos) const { return order_[pos]; }

    /// Position of the DINA interaction (the full required-attribute subset).
    std::size_t interaction_position(std::size_t j) const { return active_[j].back(); }

    /// β_jᵀ a(α) for the profile with the given class index.
    double linear_predictor(std::size_t j, std::uint32_t alpha) const {
        double eta = 0.0;
        for (auto s : active_[j])
            if ((order_[s] & alpha) == order_[s]) eta += beta_(j, s);
        return eta;
    }

    std::size_t free_parameters() const {
        std::size_t n = 0;
        for (const auto& a : active_) n += a.size();
        return n;
    }

    bool operator==(const ItemCoefficients&) const = default;

private:
    std::size_t K_;
    ModelFamily family_;
    std::vector<std::uint32_t> order_;
    DenseMatrix<double> beta_;
    std::vector<std::vector<std::size_t>> active_;
};

// ---------------------------------------------------------------------------
// DINA parameters

struct DinaItemParams {
    double guess = 0.0;
    double slip = 0.0;

    void validate() const {
        require(guess > 0.0 && guess < 1.0, "guessing parameter must lie in (0, 1)");
        require(slip > 0.0 && slip < 1.0, "slipping parameter must lie in (0, 1)");
    }
};

/// Coefficient row (length 2^K) of a DINA item: intercept logit(g), and
/// logit(1 - s) - logit(g) on the required-attribute interaction.
inline std::vector<double> dina_to_beta(const DinaItemParams& p, std::span<const std::uint8_t> q_row) {
    p.validate();
    const std::size_t K = q_row.size();
    std::uint32_t req = 0;
    for (std::size_t k = 0; k < K; ++k) {
        require(q_row[k] <= 1, "Q-row entries must be 0 or 1");
        if (q_row[k]) req |= std::uint32_t{1} << k;
    }
    require(req != 0, "Q-row measures no attribute");
    std::vector<double> row(num_classes(K), 0.0);
    row[0] = logit(p.guess);
    row[subset_position(req, K)] = -logit(p.slip) - row[0];
    return row;
}

inline DinaItemParams beta_to_dina(std::span<const double> beta_row, std::span<const std::uint8_t> q_row,
                                   double tol = 1e-10) {
    const std::size_t K = q_row.size();
    require(beta_row.size() == num_classes(K), "coefficient row length must be 2^K");
    std::uint32_t req = 0;
    for (std::size_t k = 0; k < K; ++k)
        if (q_row[k]) req |= std::uint32_t{1} << k;
    require(req != 0, "Q-row measures no attribute");
    const auto pos = subset_position(req, K);
    for (std::size_t s = 1; s < beta_row.size(); ++s)
        if (s != pos && std::abs(beta_row[s]) > tol)
            throw DataError("coefficient row violates the DINA mask at position " + std::to_string(s));
    return {expit(beta_row[0]), expit(-(beta_row[0] + beta_row[pos]))};
}

// ---------------------------------------------------------------------------
// Design matrix (Markov network couplings)

class DesignMatrix {
public:
    explicit DesignMatrix(std::size_t J) : phi_(J, J, 0.0) {}

    std::size_t order() const noexcept { return phi_.rows(); }
    double operator()(std::size_t j, std::size_t k) const { return phi_(j, k); }
    std::span<const double> row(std::size_t j) const { return phi_.row(j); }

    /// Writes both φ_jk and φ_kj.
    void set(std::size_t j, std::size_t k, double value) {
        require(j < order() && k < order(), "design matrix index out of range");
        require(j != k, "design matrix diagonal is fixed at zero");
        require(std::isfinite(value), "design matrix entries must be finite");
        phi_(j, k) = value;
        phi_(k, j) = value;
    }

    /// Number of nonzero upper-triangle entries.
    std::size_t edge_count() const {
        std::size_t n = 0;
        for (std::size_t j = 0; j < order(); ++j)
            for (std::size_t k = j + 1; k < order(); ++k)
                if (phi_(j, k) != 0.0) ++n;
        return n;
    }

    bool is_valid() const {
        for (std::size_t j = 0; j < order(); ++j) {
            if (phi_(j, j) != 0.0) return false;
            for (std::size_t k = j + 1; k < order(); ++k)
                if (phi_(j, k) != phi_(k, j)) return false;
        }
        return true;
    }

    bool operator==(const DesignMatrix&) const = default;

private:
    DenseMatrix<double> phi_;
};

// ---------------------------------------------------------------------------
// Class prior

class ClassPrior {
public:
    explicit ClassPrior(std::vector<double> probs) : probs_(std::move(probs)) {
        require(!probs_.empty() && std::has_single_bit(probs_.size()) && probs_.size() >= 2,
                "class prior length must be 2^K with K >= 1");
        double sum = 0.0;
        for (double p : probs_) {
            require(std::isfinite(p) && p >= 0.0, "class prior entries must be nonnegative");
            sum += p;
        }
        require(std::abs(sum - 1.0) <= 1e-12, "class prior must sum to 1");
    }

    /// Rescales nonnegative weights onto the simplex.
    static ClassPrior normalized(std::vector<double> weights) {
        double sum = 0.0;
        for (double w : weights) {
            require(std::isfinite(w) && w >= 0.0, "class weights must be nonnegative");
            sum += w;
        }
        require(sum > 0.0, "class weights are all zero");
        for (double& w : weights) w /= sum;
        return ClassPrior(std::move(weights));
    }

    static ClassPrior uniform(std::size_t K) {
        return ClassPrior(std::vector<double>(num_classes(K), 1.0 / static_cast<double>(num_classes(K))));
    }

    std::size_t size() const noexcept { return probs_.size(); }
    std::size_t attributes() const noexcept { return static_cast<std::size_t>(std::countr_zero(probs_.size())); }
    double operator[](std::size_t a) const { return probs_[a]; }
    std::span<const double> probs() const noexcept { return probs_; }

    bool operator==(const ClassPrior&) const = default;

private:
    std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Responses

class ResponseMatrix {
public:
    explicit ResponseMatrix(DenseMatrix<std::uint8_t> x) : x_(std::move(x)) {
        require(x_.rows() >= 1, "response matrix needs at least one subject");
        require(x_.cols() >= 2, "response matrix needs at least two items");
        for (auto v : x_.data()) require(v <= 1, "responses must be 0 or 1");
    }

    std::size_t subjects() const noexcept { return x_.rows(); }
    std::size_t items() const noexcept { return x_.cols(); }
    std::uint8_t operator()(std::size_t i, std::size_t j) const { return x_(i, j); }
    std::span<const std::uint8_t> row(std::size_t i) const { return x_.row(i); }
    const DenseMatrix<std::uint8_t>& data() const noexcept { return x_; }

    bool operator==(const ResponseMatrix&) const = default;

private:
    DenseMatrix<std::uint8_t> x_;
};

// ---------------------------------------------------------------------------
// The model

struct GdcmModel {
    QMatrix q;
    ItemCoefficients beta;
    DesignMatrix phi;
    ClassPrior prior;

    GdcmModel(QMatrix q_, ItemCoefficients beta_, DesignMatrix phi_, ClassPrior prior_)
        : q(std::move(q_)), beta(std::move(beta_)), phi(std::move(phi_)), prior(std::move(prior_)) {
        validate();
    }

    /// Zero coefficients, empty graph and uniform prior.
    static GdcmModel zeros(const QMatrix& q, ModelFamily family) {
        return {q, ItemCoefficients(q, family), DesignMatrix(q.items()), ClassPrior::uniform(q.attributes())};
    }

    std::size_t items() const noexcept { return q.items(); }
    std::size_t attributes() const noexcept { return q.attributes(); }
    std::size_t classes() const noexcept { return prior.size(); }
    ModelFamily family() const noexcept { return beta.family(); }

    void validate() const {
        require(beta.items() == q.items(), "coefficient rows must equal the number of items");
        require(beta.attributes() == q.attributes(), "coefficient width must be 2^K");
        require(phi.order() == q.items(), "design matrix order must equal the number of items");
        require(prior.size() == num_classes(q.attributes()), "class prior length must be 2^K");
        require(phi.is_valid(), "design matrix must be symmetric with zero diagonal");
    }

    /// DINA (guess, slip) per item; requires the DINA family.
    std::vector<DinaItemParams> dina_params() const {
        require(family() == ModelFamily::dina, "DINA parameters requested from a general model");
        std::vector<DinaItemParams> out(items());
        for (std::size_t j = 0; j < items(); ++j) out[j] = beta_to_dina(beta.row(j), q.row(j));
        return out;
    }

    bool operator==(const GdcmModel&) const = default;
};

/// Builds a DINA-family model from per-item (guess, slip).
inline GdcmModel make_dina_model(const QMatrix& q, std::span<const DinaItemParams> items, DesignMatrix phi,
                                 ClassPrior prior) {
    require(items.size() == q.items(), "one (guess, slip) pair is needed per item");
    ItemCoefficients beta(q, ModelFamily::dina);
    for (std::size_t j = 0; j < q.items(); ++j) {
        const auto row = dina_to_beta(items[j], q.row(j));
        for (auto pos : beta.active_positions(j)) beta.set(j, pos, row[pos]);
    }
    return {q, std::move(beta), std::move(phi), std::move(prior)};
}

// ---------------------------------------------------------------------------
// Kernels

/// expit(β_jᵀ a(α)).
inline double item_response_prob(std::span<const double> beta_row, const AttributeProfile& alpha) {
    const auto d = design_vector(alpha, alpha.size());
    require(beta_row.size() == d.size(), "coefficient row length must be 2^K");
    double eta = 0.0;
    for (std::size_t s = 0; s < d.size(); ++s) eta += beta_row[s] * d[s];
    return expit(eta);
}

/// Σ_{k≠j} φ_jk x_k over a full response vector.
inline double rest_score(const DesignMatrix& phi, std::size_t j, std::span<const std::uint8_t> x) {
    const auto row = phi.row(j);
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k] && k != j) m += row[k];
    return m;
}

/// Pr(X_j = 1 | x_{-j}, α), where x_rest lists the J-1 other responses in item order.
inline double conditional_item_prob(const GdcmModel& model, std::size_t j, std::span<const std::uint8_t> x_rest,
                                    const AttributeProfile& alpha) {
    const std::size_t J = model.items();
    require(j < J, "item index out of range");
    require(x_rest.size() + 1 == J, "x_rest must have J-1 entries");
    require(alpha.size() == model.attributes(), "attribute profile length does not match K");
    double eta = model.beta.linear_predictor(j, alpha.index());
    for (std::size_t r = 0; r < x_rest.size(); ++r) {
        require(x_rest[r] <= 1, "responses must be 0 or 1");
        const std::size_t k = r < j ? r : r + 1;
        if (x_rest[r]) eta += model.phi(j, k);
    }
    return expit(eta);
}

/// xᵀBα + ½xᵀΦx.
inline double log_potential(const GdcmModel& model, std::span<const std::uint8_t> x, std::uint32_t alpha) {
    double e = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (!x[j]) continue;
        e += model.beta.linear_predictor(j, alpha);
        const auto row = model.phi.row(j);
        for (std::size_t k = j + 1; k < x.size(); ++k)
            if (x[k]) e += row[k];
    }
    return e;
}

/// π_α exp(xᵀBα + ½xᵀΦx).
inline double unnormalized_joint(const GdcmModel& model, std::span<const std::uint8_t> x,
                                 const AttributeProfile& alpha) {
    require(x.size() == model.items(), "response vector length must be J");
    require(alpha.size() == model.attributes(), "attribute profile length does not match K");
    for (auto v : x) require(v <= 1, "responses must be 0 or 1");
    return model.prior[alpha.index()] * std::exp(log_potential(model, x, alpha.index()));
}

}  // namespace gdcm
