#pragma once

// Penalized pseudo-likelihood estimation of (B, Φ, π).
//
// The outer loop alternates
//   E-step  posterior class weights w_iα ∝ π_α Π_j f(x_ij | x_i,-j, α)
//   Φ-step  one local quadratic (IRLS) approximation of the weighted log
//           pseudo-likelihood, maximized with L1 coordinate descent
//   B-step  damped Newton coordinate ascent on the weighted log
//           pseudo-likelihood
//   π-step  posterior mean (or the coupled objective when pi_exact is set)
// until the largest parameter change falls below outer_tol. The penalty
// is chosen along a warm-started λ path by a pseudo-likelihood BIC.
//
// The quadratic subproblem never needs per-class residuals: a change of φ_jk
// shifts the fit of item j by the same amount in every class, so the class
// sums collapse to two numbers per (subject, item):
//   A_ij = Σ_α w_iα ω_ijα         (weight)
//   S_ij = Σ_α w_iα ω_ijα e_ijα   (weighted residual)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gdcm/core.hpp"

namespace gdcm {

struct LambdaSpec {
    enum class Mode { automatic, fixed, grid };
    Mode mode = Mode::automatic;
    double value = 0.0;
    std::vector<double> grid;

    static LambdaSpec fixed_value(double v) { return {Mode::fixed, v, {}}; }
    static LambdaSpec explicit_grid(std::vector<double> g) { return {Mode::grid, 0.0, std::move(g)}; }
};

struct FitConfig {
    ModelFamily family = ModelFamily::dina;
    /// false constrains Φ ≡ 0 (the plain DCM).
    bool graph = true;
    LambdaSpec lambda{};
    std::size_t path_length = 15;
    double path_min_ratio = 0.01;
    /// An automatic path stops after this many consecutive points whose BIC
    /// exceeds the best so far; 0 runs the whole grid.
    std::size_t path_patience = 3;
    /// A path point whose posterior weights sit farther than this (mean total
    /// variation per subject) from those of the DCM fit ends the path and is
    /// not selectable; values ≥ 1 disable the check.
    double path_max_shift = 0.25;
    std::size_t outer_max = 500;
    double outer_tol = 1e-4;
    std::size_t inner_max = 100;
    double inner_tol = 1e-6;
    double weight_floor = 1e-6;
    double prob_clamp = 1e-8;
    bool monotone_dina = true;
    bool pi_exact = false;
    std::uint64_t seed = 1;

    void validate() const {
        require(outer_tol > 0.0 && inner_tol > 0.0, "tolerances must be positive");
        require(weight_floor > 0.0, "weight floor must be positive");
        require(prob_clamp > 0.0 && prob_clamp < 0.5, "probability clamp must lie in (0, 0.5)");
        require(path_min_ratio > 0.0 && path_min_ratio < 1.0, "path_min_ratio must lie in (0, 1)");
        require(path_length >= 1, "path_length must be at least 1");
        require(path_max_shift > 0.0, "path_max_shift must be positive");
        require(outer_max >= 1 && inner_max >= 1, "iteration caps must be at least 1");
        if (lambda.mode == LambdaSpec::Mode::fixed)
            require(lambda.value >= 0.0 && !std::isnan(lambda.value), "lambda must be nonnegative");
        if (lambda.mode == LambdaSpec::Mode::grid) {
            require(!lambda.grid.empty(), "lambda grid must not be empty");
            for (double v : lambda.grid) require(v >= 0.0, "lambda grid values must be nonnegative");
        }
    }

    /// Largest |linear predictor| before probabilities are clamped.
    double eta_limit() const { return logit(1.0 - prob_clamp); }
};

// ---------------------------------------------------------------------------
// Stand-alone kernels

/// Posterior class probabilities of one response vector,
/// π_α Π_j f(x_j | α, B) normalized over classes. Φ does not enter.
inline std::vector<double> posterior_weights(const GdcmModel& model, std::span<const std::uint8_t> x) {
    require(x.size() == model.items(), "response vector length must be J");
    std::vector<double> s(model.classes());
    for (std::uint32_t a = 0; a < s.size(); ++a) {
        if (!(model.prior[a] > 0.0)) {
            s[a] = -std::numeric_limits<double>::infinity();
            continue;
        }
        double v = std::log(model.prior[a]);
        for (std::size_t j = 0; j < model.items(); ++j) {
            const double eta = model.beta.linear_predictor(j, a);
            v += x[j] ? -log1pexp(-eta) : -log1pexp(eta);
        }
        s[a] = v;
    }
    const double lse = log_sum_exp(s);
    if (!std::isfinite(lse)) throw DataError("class prior has no mass");
    for (double& v : s) v = std::exp(v - lse);
    return s;
}

struct QuadApprox {
    double prob = 0.0;       ///< P = Pr(x_j = 1 | x_-j, α)
    double predictor = 0.0;  ///< linear predictor at the expansion point
    double weight = 0.0;     ///< ω = P(1-P), floored
    double response = 0.0;   ///< working response y = predictor + (x - P)/ω
};

/// Local quadratic approximation of log f(x_j | x_-j, α) at the current model.
inline QuadApprox quad_approx(const GdcmModel& model, std::size_t j, std::span<const std::uint8_t> x,
                              const AttributeProfile& alpha, double weight_floor = 1e-6) {
    require(x.size() == model.items() && j < model.items(), "dimension mismatch in quad_approx");
    QuadApprox q;
    q.predictor = model.beta.linear_predictor(j, alpha.index()) + rest_score(model.phi, j, x);
    q.prob = expit(q.predictor);
    q.weight = std::max(q.prob * (1.0 - q.prob), weight_floor);
    q.response = q.predictor + (static_cast<double>(x[j]) - q.prob) / q.weight;
    return q;
}

/// sign(z)(|z| - λ)_+
inline double soft_threshold(double z, double lambda) noexcept {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

// ---------------------------------------------------------------------------
// Fit data and state

/// For one item: classes grouped by the design features the item's active
/// coefficients see. Every class in a group has the same linear predictor.
struct ItemGroups {
    std::vector<std::uint32_t> of_class;  ///< group index per class
    std::size_t count = 0;
    std::vector<std::size_t> coefs;       ///< active coefficient positions
    std::vector<std::uint8_t> features;   ///< count × coefs.size()

    std::uint8_t feature(std::size_t g, std::size_t c) const { return features[g * coefs.size() + c]; }
};

class FitData {
public:
    FitData(ResponseMatrix x, QMatrix q, ModelFamily family)
        : x_(std::move(x)), q_(std::move(q)), family_(family) {
        if (x_.items() != q_.items())
            throw DataError("responses have " + std::to_string(x_.items()) + " items but the Q-matrix has " +
                            std::to_string(q_.items()) + " rows");
        const std::size_t N = x_.subjects(), J = x_.items(), C = classes();
        columns_.resize(J * N);
        values_.resize(J * N);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                columns_[j * N + i] = x_(i, j);
                values_[j * N + i] = x_(i, j);
            }

        const ItemCoefficients layout(q_, family_);
        groups_.resize(J);
        degenerate_.resize(J);
        for (std::size_t j = 0; j < J; ++j) {
            auto& g = groups_[j];
            const auto act = layout.active_positions(j);
            g.coefs.assign(act.begin(), act.end());
            g.of_class.resize(C);
            std::map<std::vector<std::uint8_t>, std::uint32_t> seen;
            for (std::uint32_t a = 0; a < C; ++a) {
                std::vector<std::uint8_t> f(g.coefs.size());
                for (std::size_t c = 0; c < f.size(); ++c) {
                    const auto m = layout.subset_mask(g.coefs[c]);
                    f[c] = (m & a) == m ? 1 : 0;
                }
                auto [it, inserted] = seen.emplace(f, static_cast<std::uint32_t>(g.count));
                if (inserted) {
                    g.features.insert(g.features.end(), f.begin(), f.end());
                    ++g.count;
                }
                g.of_class[a] = it->second;
            }
            const auto col = column(j);
            const auto ones = std::count(col.begin(), col.end(), std::uint8_t{1});
            degenerate_[j] = ones == 0 || static_cast<std::size_t>(ones) == N;
        }
    }

    const ResponseMatrix& x() const noexcept { return x_; }
    const QMatrix& q() const noexcept { return q_; }
    ModelFamily family() const noexcept { return family_; }
    std::size_t subjects() const noexcept { return x_.subjects(); }
    std::size_t items() const noexcept { return x_.items(); }
    std::size_t classes() const noexcept { return num_classes(q_.attributes()); }
    const ItemGroups& groups(std::size_t j) const { return groups_[j]; }
    /// Item answered identically by every subject.
    bool degenerate(std::size_t j) const { return degenerate_[j]; }
    std::span<const std::uint8_t> column(std::size_t j) const {
        return {columns_.data() + j * subjects(), subjects()};
    }
    /// Column j as 0.0/1.0.
    std::span<const double> values(std::size_t j) const { return {values_.data() + j * subjects(), subjects()}; }

private:
    ResponseMatrix x_;
    QMatrix q_;
    ModelFamily family_;
    std::vector<std::uint8_t> columns_;
    std::vector<double> values_;
    std::vector<ItemGroups> groups_;
    std::vector<bool> degenerate_;
};

struct FitState {
    GdcmModel model;
    DenseMatrix<double> weights;  ///< N × 2^K posterior class probabilities
    DenseMatrix<double> rest;     ///< N × J rest scores Σ_k φ_jk x_ik
    double log_pseudo_likelihood = std::numeric_limits<double>::quiet_NaN();
};

/// Linear predictor of every class group of item j.
inline std::vector<double> group_predictors(const ItemCoefficients& beta, const ItemGroups& g, std::size_t j) {
    std::vector<double> eta(g.count, 0.0);
    for (std::size_t grp = 0; grp < g.count; ++grp)
        for (std::size_t c = 0; c < g.coefs.size(); ++c)
            if (g.feature(grp, c)) eta[grp] += beta(j, g.coefs[c]);
    return eta;
}

inline void refresh_rest(const FitData& data, FitState& state) {
    const std::size_t N = data.subjects(), J = data.items();
    if (state.rest.rows() != N || state.rest.cols() != J) state.rest = DenseMatrix<double>(N, J, 0.0);
    std::fill(state.rest.data().begin(), state.rest.data().end(), 0.0);
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t k = 0; k < J; ++k) {
            const double v = state.model.phi(j, k);
            if (v == 0.0 || k == j) continue;
            const auto col = data.column(k);
            for (std::size_t i = 0; i < N; ++i)
                if (col[i]) state.rest(i, j) += v;
        }
    }
}

/// Starting point: Φ = 0, uniform π, and every item at g = s = 0.2 on its
/// full required-attribute interaction. Degenerate items are pinned.
inline FitState initial_state(const FitData& data, const FitConfig& cfg) {
    auto model = GdcmModel::zeros(data.q(), data.family());
    const double L = cfg.eta_limit();
    for (std::size_t j = 0; j < data.items(); ++j) {
        if (data.degenerate(j)) {
            model.beta.set(j, 0, data.column(j)[0] ? L : -L);
            continue;
        }
        model.beta.set(j, 0, logit(0.2));
        model.beta.set(j, model.beta.interaction_position(j), logit(0.8) - logit(0.2));
    }
    FitState s{std::move(model), DenseMatrix<double>(data.subjects(), data.classes(), 0.0),
               DenseMatrix<double>(data.subjects(), data.items(), 0.0)};
    refresh_rest(data, s);
    return s;
}

/// log f(x | ·) with the predictor clamped to ±limit.
inline double clamped_loglik(std::uint8_t x, double eta, double limit) noexcept {
    eta = std::clamp(eta, -limit, limit);
    return x ? -log1pexp(-eta) : -log1pexp(eta);
}

/// Posterior weights of every subject (as in posterior_weights) and the
/// marginal log pseudo-likelihood Σ_i log Σ_α π_α Π_j f(x_ij | x_i,-j, α),
/// both at the current model.
inline void e_step(const FitData& data, FitState& state, const FitConfig& cfg) {
    const std::size_t N = data.subjects(), J = data.items(), C = data.classes();
    const double L = cfg.eta_limit();
    std::vector<std::vector<double>> eta(J);
    std::vector<std::size_t> offset(J + 1, 0);
    for (std::size_t j = 0; j < J; ++j) {
        eta[j] = group_predictors(state.model.beta, data.groups(j), j);
        offset[j + 1] = offset[j] + eta[j].size();
    }
    std::vector<double> log_prior(C);
    for (std::size_t a = 0; a < C; ++a)
        log_prior[a] = state.model.prior[a] > 0.0 ? std::log(state.model.prior[a])
                                                  : -std::numeric_limits<double>::infinity();
    std::vector<double> lg(offset[J]), lb(offset[J]);
    std::vector<double> s(C), b(C);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const auto xi = data.x().row(i);
        for (std::size_t j = 0; j < J; ++j) {
            const double m = state.rest(i, j);
            for (std::size_t g = 0; g < eta[j].size(); ++g) {
                lg[offset[j] + g] = clamped_loglik(xi[j], eta[j][g] + m, L);
                lb[offset[j] + g] = clamped_loglik(xi[j], eta[j][g], L);
            }
        }
        for (std::uint32_t a = 0; a < C; ++a) {
            double v = log_prior[a], u = log_prior[a];
            for (std::size_t j = 0; j < J; ++j) {
                v += lg[offset[j] + data.groups(j).of_class[a]];
                u += lb[offset[j] + data.groups(j).of_class[a]];
            }
            s[a] = v;
            b[a] = u;
        }
        total += log_sum_exp(s);
        const double lse = log_sum_exp(b);
        auto w = state.weights.row(i);
        for (std::size_t a = 0; a < C; ++a) w[a] = std::exp(b[a] - lse);
    }
    if (!std::isfinite(total)) throw NumericalError("log pseudo-likelihood is not finite");
    state.log_pseudo_likelihood = total;
}

/// Posterior mass of each class group of item j, N × groups(j).count.
inline std::vector<double> group_weights(const FitData& data, const FitState& state, std::size_t j) {
    const auto& g = data.groups(j);
    const std::size_t N = data.subjects(), C = data.classes();
    std::vector<double> out(N * g.count, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const auto w = state.weights.row(i);
        for (std::size_t a = 0; a < C; ++a) out[i * g.count + g.of_class[a]] += w[a];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Φ-step

/// Penalized local quadratic in Φ, expanded at the current state:
///
///   N⁻¹-scaled objective  -½ Σ_i Σ_α w_iα Σ_j ω_ijα (fit_ijα - y_ijα)² - N λ Σ_{j<k} |φ_jk|
///
/// Each coordinate update maximizes it exactly in φ_jk = φ_kj, pooling the
/// regression of item j on x_k with that of item k on x_j.
class PhiSubproblem {
public:
    PhiSubproblem(const FitData& data, const FitState& state, const FitConfig& cfg)
        : N_(data.subjects()), J_(data.items()), data_(&data), A_(J_ * N_), S_(J_ * N_), D_(J_, J_, 0.0),
          frozen_(J_, J_, 0) {
        const double L = cfg.eta_limit();
        double quad = 0.0;
        for (std::size_t j = 0; j < J_; ++j) {
            const auto& g = data.groups(j);
            const auto eta = group_predictors(state.model.beta, g, j);
            const auto wg = group_weights(data, state, j);
            const auto xj = data.column(j);
            for (std::size_t i = 0; i < N_; ++i) {
                const double m = state.rest(i, j);
                double a = 0.0, s = 0.0;
                for (std::size_t grp = 0; grp < g.count; ++grp) {
                    const double w = wg[i * g.count + grp];
                    const double p = expit(std::clamp(eta[grp] + m, -L, L));
                    const double omega = std::max(p * (1.0 - p), cfg.weight_floor);
                    const double r = static_cast<double>(xj[i]) - p;
                    a += w * omega;
                    s += w * r;
                    quad -= 0.5 * w * r * r / omega;
                }
                A_[j * N_ + i] = a;
                S_[j * N_ + i] = s;
            }
        }
        quad_ = quad;
        for (std::size_t j = 0; j < J_; ++j)
            for (std::size_t k = j + 1; k < J_; ++k) {
                const auto xj = data.column(j), xk = data.column(k);
                const double* aj = A_.data() + j * N_;
                const double* ak = A_.data() + k * N_;
                double d = 0.0;
                for (std::size_t i = 0; i < N_; ++i) d += aj[i] * xk[i] + ak[i] * xj[i];
                D_(j, k) = D_(k, j) = d / static_cast<double>(N_);
                if (data.degenerate(j) || data.degenerate(k)) frozen_(j, k) = frozen_(k, j) = 1;
            }
    }

    bool frozen(std::size_t j, std::size_t k) const { return frozen_(j, k) != 0; }
    double denominator(std::size_t j, std::size_t k) const { return D_(j, k); }

    /// N⁻¹ Σ w ω x r over both orientations, with r the partial residual
    /// that excludes the current φ_jk.
    double numerator(const DesignMatrix& phi, std::size_t j, std::size_t k) const {
        return partial(j, k) + phi(j, k) * D_(j, k);
    }

    /// Exact coordinate maximizer; writes φ_jk = φ_kj and returns the change.
    /// A zero denominator leaves the coordinate unchanged.
    double update(DesignMatrix& phi, std::size_t j, std::size_t k, double lambda) {
        if (frozen(j, k)) return 0.0;
        const double d = D_(j, k);
        if (!(d > 0.0)) {
            ++flagged_;
            return 0.0;
        }
        const double old = phi(j, k);
        const double c = partial(j, k);
        const double next = soft_threshold(c + old * d, lambda) / d;
        const double delta = next - old;
        if (delta == 0.0) return 0.0;
        quad_ += static_cast<double>(N_) * (delta * c - 0.5 * delta * delta * d);
        phi.set(j, k, next);
        const double* xj = data_->values(j).data();
        const double* xk = data_->values(k).data();
        double* sj = S_.data() + j * N_;
        double* sk = S_.data() + k * N_;
        const double* aj = A_.data() + j * N_;
        const double* ak = A_.data() + k * N_;
        for (std::size_t i = 0; i < N_; ++i) sj[i] -= delta * aj[i] * xk[i];
        for (std::size_t i = 0; i < N_; ++i) sk[i] -= delta * ak[i] * xj[i];
        return delta;
    }

    /// Current value of the penalized quadratic (up to the constant dropped
    /// from the working responses).
    double objective(const DesignMatrix& phi, double lambda) const {
        double l1 = 0.0;
        for (std::size_t j = 0; j < J_; ++j)
            for (std::size_t k = j + 1; k < J_; ++k) l1 += std::abs(phi(j, k));
        return quad_ - static_cast<double>(N_) * lambda * l1;
    }

    std::size_t flagged() const noexcept { return flagged_; }

private:
    double partial(std::size_t j, std::size_t k) const {
        const double* xj = data_->values(j).data();
        const double* xk = data_->values(k).data();
        const double* sj = S_.data() + j * N_;
        const double* sk = S_.data() + k * N_;
        double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
        std::size_t i = 0;
        for (; i + 4 <= N_; i += 4) {
            c0 += xk[i] * sj[i] + xj[i] * sk[i];
            c1 += xk[i + 1] * sj[i + 1] + xj[i + 1] * sk[i + 1];
            c2 += xk[i + 2] * sj[i + 2] + xj[i + 2] * sk[i + 2];
            c3 += xk[i + 3] * sj[i + 3] + xj[i + 3] * sk[i + 3];
        }
        for (; i < N_; ++i) c0 += xk[i] * sj[i] + xj[i] * sk[i];
        return ((c0 + c1) + (c2 + c3)) / static_cast<double>(N_);
    }

    std::size_t N_, J_;
    const FitData* data_;
    std::vector<double> A_, S_;
    DenseMatrix<double> D_;
    DenseMatrix<std::uint8_t> frozen_;
    double quad_ = 0.0;
    std::size_t flagged_ = 0;
};

/// Single coordinate update of φ_jk at the current state; returns the new value.
inline double phi_coordinate_update(const FitData& data, FitState& state, const FitConfig& cfg, std::size_t j,
                                    std::size_t k, double lambda) {
    require(j < k && k < data.items(), "phi coordinate requires j < k < J");
    PhiSubproblem sub(data, state, cfg);
    sub.update(state.model.phi, j, k, lambda);
    refresh_rest(data, state);
    return state.model.phi(j, k);
}

struct PhiUpdateReport {
    std::size_t sweeps = 0;
    std::size_t flagged = 0;
    /// Penalized quadratic after each sweep, starting value first.
    std::vector<double> objective_trace;
};

/// Coordinate descent on the penalized quadratic with glmnet-style active-set
/// cycling: a full sweep, then sweeps over the nonzero coordinates until they
/// settle, then another full sweep to admit new entrants.
inline PhiUpdateReport update_phi(const FitData& data, FitState& state, const FitConfig& cfg, double lambda) {
    const std::size_t J = data.items();
    PhiSubproblem sub(data, state, cfg);
    auto& phi = state.model.phi;
    PhiUpdateReport rep;
    rep.objective_trace.push_back(sub.objective(phi, lambda));

    auto sweep = [&](bool active_only) {
        double biggest = 0.0;
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = j + 1; k < J; ++k) {
                if (active_only && phi(j, k) == 0.0) continue;
                biggest = std::max(biggest, std::abs(sub.update(phi, j, k, lambda)));
            }
        ++rep.sweeps;
        rep.objective_trace.push_back(sub.objective(phi, lambda));
        return biggest;
    };

    while (rep.sweeps < cfg.inner_max) {
        if (sweep(false) < cfg.inner_tol) break;
        while (rep.sweeps < cfg.inner_max && sweep(true) >= cfg.inner_tol) {
        }
    }
    rep.flagged = sub.flagged();
    refresh_rest(data, state);
    return rep;
}

// ---------------------------------------------------------------------------
// B-step

struct BetaUpdateReport {
    std::size_t cycles = 0;
    std::size_t rejected_steps = 0;
    /// Weighted log pseudo-likelihood (summed over items) after each cycle.
    std::vector<double> objective_trace;
};

/// Posterior-weighted log pseudo-likelihood of item j as a function of its
/// active coefficients, with gradient and curvature per coordinate.
class ItemLikelihood {
public:
    ItemLikelihood(const FitData& data, const FitState& state, const FitConfig& cfg, std::size_t j)
        : g_(&data.groups(j)), x_(data.column(j)), wg_(group_weights(data, state, j)), L_(cfg.eta_limit()) {
        rest_.resize(data.subjects());
        for (std::size_t i = 0; i < rest_.size(); ++i) rest_[i] = state.rest(i, j);
    }

    std::size_t size() const noexcept { return g_->coefs.size(); }

    struct Eval {
        double value = 0.0;
        std::vector<double> grad;  ///< ∂f/∂β_c
        std::vector<double> curv;  ///< -∂²f/∂β_c²
    };

    /// Value and per-coordinate derivatives in one pass over the subjects.
    /// Clamped predictors contribute no derivative.
    Eval evaluate(std::span<const double> coef) const {
        const auto eta = predictors(coef);
        const std::size_t G = g_->count;
        std::vector<double> gg(G, 0.0), hg(G, 0.0);
        double f = 0.0;
        for (std::size_t i = 0; i < rest_.size(); ++i) {
            const double x = x_[i];
            for (std::size_t grp = 0; grp < G; ++grp) {
                const double w = wg_[i * G + grp];
                if (w == 0.0) continue;
                const double t = eta[grp] + rest_[i];
                if (std::abs(t) >= L_) {
                    f += w * clamped_loglik(x_[i], t, L_);
                    continue;
                }
                const double p = expit(t);
                f += w * (x != 0.0 ? -log1pexp(-t) : -log1pexp(t));
                gg[grp] += w * (x - p);
                hg[grp] += w * p * (1.0 - p);
            }
        }
        Eval e{f, std::vector<double>(size(), 0.0), std::vector<double>(size(), 0.0)};
        for (std::size_t grp = 0; grp < G; ++grp)
            for (std::size_t c = 0; c < size(); ++c)
                if (g_->feature(grp, c)) {
                    e.grad[c] += gg[grp];
                    e.curv[c] += hg[grp];
                }
        return e;
    }

    double value(std::span<const double> coef) const { return evaluate(coef).value; }
    std::vector<double> gradient(std::span<const double> coef) const { return evaluate(coef).grad; }

private:
    std::vector<double> predictors(std::span<const double> coef) const {
        std::vector<double> eta(g_->count, 0.0);
        for (std::size_t grp = 0; grp < g_->count; ++grp)
            for (std::size_t c = 0; c < coef.size(); ++c)
                if (g_->feature(grp, c)) eta[grp] += coef[c];
        return eta;
    }

    const ItemGroups* g_;
    std::span<const std::uint8_t> x_;
    std::vector<double> wg_;
    std::vector<double> rest_;
    double L_;
};

/// Coefficients are boxed to twice the clamp limit so a flat, clamped
/// likelihood cannot push them to infinity.
inline BetaUpdateReport update_beta(const FitData& data, FitState& state, const FitConfig& cfg) {
    const std::size_t J = data.items();
    const double box = 2.0 * cfg.eta_limit();
    auto& beta = state.model.beta;
    const bool project = cfg.monotone_dina && data.family() == ModelFamily::dina;

    std::vector<ItemLikelihood> items;
    std::vector<std::vector<double>> coef(J);
    std::vector<ItemLikelihood::Eval> at(J);
    std::vector<bool> done(J, false);
    items.reserve(J);
    for (std::size_t j = 0; j < J; ++j) {
        items.emplace_back(data, state, cfg, j);
        for (auto pos : data.groups(j).coefs) coef[j].push_back(beta(j, pos));
        if (data.degenerate(j)) {
            done[j] = true;
            continue;
        }
        at[j] = items[j].evaluate(coef[j]);
    }

    BetaUpdateReport rep;
    auto total = [&] {
        double t = 0.0;
        for (const auto& e : at) t += e.value;
        return t;
    };
    rep.objective_trace.push_back(total());
    while (rep.cycles < cfg.inner_max && !std::all_of(done.begin(), done.end(), [](bool b) { return b; })) {
        ++rep.cycles;
        for (std::size_t j = 0; j < J; ++j) {
            if (done[j]) continue;
            auto& b = coef[j];
            double biggest = 0.0;
            for (std::size_t c = 0; c < b.size(); ++c) {
                const double grad = at[j].grad[c], curv = at[j].curv[c];
                if (!(curv > 0.0)) continue;
                double step = grad / curv;
                const double start = b[c];
                bool accepted = false;
                for (int h = 0; h < 40; ++h, step *= 0.5) {
                    b[c] = std::clamp(start + step, -box, box);
                    auto e = items[j].evaluate(b);
                    if (e.value >= at[j].value) {
                        at[j] = std::move(e);
                        accepted = true;
                        break;
                    }
                }
                if (!accepted) {
                    b[c] = start;
                    ++rep.rejected_steps;
                }
                biggest = std::max(biggest, std::abs(b[c] - start));
            }
            if (project && b.back() < 0.0) {
                biggest = std::max(biggest, -b.back());
                b.back() = 0.0;
                at[j] = items[j].evaluate(b);
            }
            if (!std::isfinite(at[j].value))
                throw NumericalError("weighted log pseudo-likelihood of item " + std::to_string(j) + " is not finite");
            if (biggest < cfg.inner_tol) done[j] = true;
        }
        rep.objective_trace.push_back(total());
    }
    for (std::size_t j = 0; j < J; ++j) {
        const auto& pos = data.groups(j).coefs;
        for (std::size_t c = 0; c < pos.size(); ++c) beta.set(j, pos[c], coef[j][c]);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// π-step

/// Euclidean projection onto {p : Σp = 1, p_a ≥ floor}.
inline std::vector<double> project_simplex(std::vector<double> v, double floor) {
    const double n = static_cast<double>(v.size());
    const double mass = 1.0 - floor * n;
    for (double& a : v) a -= floor;
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t r = 0; r < u.size(); ++r) {
        cum += u[r];
        const double t = (cum - mass) / static_cast<double>(r + 1);
        if (u[r] - t > 0.0) theta = t;
    }
    for (double& a : v) a = std::max(a - theta, 0.0) + floor;
    return v;
}

/// Coupled π objective Σ_i Σ_α w_iα Σ_j log f(α | x_i,-j, B, π) at the
/// current B and Φ, evaluated for arbitrary π.
class CoupledPriorObjective {
public:
    CoupledPriorObjective(const FitData& data, const FitState& state, const FitConfig& cfg)
        : N_(data.subjects()), J_(data.items()), C_(data.classes()), v_(N_ * J_ * C_), wsum_(C_, 0.0) {
        const double L = cfg.eta_limit();
        DenseMatrix<double> eta(J_, C_);
        for (std::size_t j = 0; j < J_; ++j)
            for (std::uint32_t a = 0; a < C_; ++a) eta(j, a) = state.model.beta.linear_predictor(j, a);
        for (std::size_t i = 0; i < N_; ++i) {
            const auto xi = data.x().row(i);
            std::vector<double> total(C_, 0.0);
            for (std::size_t j = 0; j < J_; ++j)
                if (xi[j])
                    for (std::size_t a = 0; a < C_; ++a) total[a] += eta(j, a);
            for (std::size_t j = 0; j < J_; ++j)
                for (std::size_t a = 0; a < C_; ++a) {
                    const double own = std::clamp(eta(j, a) + state.rest(i, j), -L, L);
                    v_[(i * J_ + j) * C_ + a] = total[a] - (xi[j] ? eta(j, a) : 0.0) + log1pexp(own);
                }
            for (std::size_t a = 0; a < C_; ++a) wsum_[a] += state.weights(i, a);
        }
        weights_ = state.weights;
    }

    double value(std::span<const double> pi) const {
        std::vector<double> lp(C_), s(C_);
        for (std::size_t a = 0; a < C_; ++a) lp[a] = std::log(pi[a]);
        double f = 0.0;
        for (std::size_t a = 0; a < C_; ++a) f += static_cast<double>(J_) * wsum_[a] * lp[a];
        for (std::size_t i = 0; i < N_; ++i)
            for (std::size_t j = 0; j < J_; ++j) {
                const double* v = v_.data() + (i * J_ + j) * C_;
                for (std::size_t a = 0; a < C_; ++a) {
                    f += weights_(i, a) * v[a];
                    s[a] = lp[a] + v[a];
                }
                f -= log_sum_exp(s);
            }
        return f;
    }

    std::vector<double> gradient(std::span<const double> pi) const {
        std::vector<double> lp(C_), s(C_), g(C_);
        for (std::size_t a = 0; a < C_; ++a) {
            lp[a] = std::log(pi[a]);
            g[a] = static_cast<double>(J_) * wsum_[a];
        }
        for (std::size_t i = 0; i < N_; ++i)
            for (std::size_t j = 0; j < J_; ++j) {
                const double* v = v_.data() + (i * J_ + j) * C_;
                for (std::size_t a = 0; a < C_; ++a) s[a] = lp[a] + v[a];
                const double lse = log_sum_exp(s);
                for (std::size_t a = 0; a < C_; ++a) g[a] -= std::exp(s[a] - lse);
            }
        for (std::size_t a = 0; a < C_; ++a) g[a] /= pi[a];
        return g;
    }

private:
    std::size_t N_, J_, C_;
    std::vector<double> v_;
    std::vector<double> wsum_;
    DenseMatrix<double> weights_;
};

inline constexpr std::size_t kCoupledPriorSteps = 25;
inline constexpr double kPriorFloor = 1e-10;

inline void update_pi(const FitData& data, FitState& state, const FitConfig& cfg) {
    const std::size_t N = data.subjects(), C = data.classes();
    std::vector<double> mean(C, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t a = 0; a < C; ++a) mean[a] += state.weights(i, a);
    for (double& m : mean) m /= static_cast<double>(N);

    if (!cfg.pi_exact) {
        state.model.prior = ClassPrior::normalized(std::move(mean));
        return;
    }

    // projected gradient ascent with Armijo backtracking
    const CoupledPriorObjective obj(data, state, cfg);
    std::vector<double> pi(state.model.prior.probs().begin(), state.model.prior.probs().end());
    pi = project_simplex(pi, kPriorFloor);
    double f = obj.value(pi);
    double step = -1.0;
    for (std::size_t it = 0; it < kCoupledPriorSteps; ++it) {
        const auto g = obj.gradient(pi);
        double gmax = 0.0;
        for (double v : g) gmax = std::max(gmax, std::abs(v));
        if (gmax == 0.0) break;
        if (step < 0.0) step = 0.1 / gmax;
        bool moved = false;
        for (int h = 0; h < 60; ++h, step *= 0.5) {
            std::vector<double> trial(C);
            for (std::size_t a = 0; a < C; ++a) trial[a] = pi[a] + step * g[a];
            trial = project_simplex(std::move(trial), kPriorFloor);
            double ascent = 0.0;
            for (std::size_t a = 0; a < C; ++a) ascent += g[a] * (trial[a] - pi[a]);
            const double ft = obj.value(trial);
            if (ft >= f + 1e-4 * ascent) {
                moved = ft > f;
                pi = std::move(trial);
                f = ft;
                break;
            }
        }
        if (!moved) break;
        step *= 2.0;
    }
    state.model.prior = ClassPrior::normalized(std::move(pi));
}

// ---------------------------------------------------------------------------
// Outer loop, λ path, BIC

struct PathPoint {
    double lambda = 0.0;
    double bic = 0.0;
    double log_pseudo_likelihood = 0.0;
    std::size_t n_edges = 0;
    bool converged = false;
    std::size_t n_outer_iters = 0;
    /// Mean total variation between the posterior weights and those of the DCM fit.
    double posterior_shift = 0.0;
    bool admissible = true;
};

struct FitDiagnostics {
    std::vector<std::size_t> degenerate_items;
    std::size_t flagged_coordinates = 0;
    /// Largest parameter change per outer iteration.
    std::vector<double> change_trace;
    /// Log pseudo-likelihood at the start of each outer iteration.
    std::vector<double> objective_trace;
};

struct FitResult {
    explicit FitResult(GdcmModel m) : model(std::move(m)) {}

    GdcmModel model;
    bool graph = true;
    /// NaN when the graph is disabled.
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double bic = 0.0;
    double log_pseudo_likelihood = 0.0;
    std::size_t n_edges = 0;
    bool converged = false;
    std::size_t n_outer_iters = 0;
    std::size_t subjects = 0;
    FitDiagnostics diagnostics;
    std::vector<PathPoint> path;
};

/// -2 ℓ̃ + (free coefficients + edges) log N.
inline double pseudo_bic(double log_pseudo_likelihood, std::size_t free_coefficients, std::size_t n_edges,
                         std::size_t N) {
    return -2.0 * log_pseudo_likelihood +
           static_cast<double>(free_coefficients + n_edges) * std::log(static_cast<double>(N));
}

inline double max_parameter_change(const GdcmModel& a, const GdcmModel& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.items(); ++j) {
        for (std::size_t s = 0; s < a.beta.width(); ++s) d = std::max(d, std::abs(a.beta(j, s) - b.beta(j, s)));
        for (std::size_t k = j + 1; k < a.items(); ++k) d = std::max(d, std::abs(a.phi(j, k) - b.phi(j, k)));
    }
    for (std::size_t c = 0; c < a.classes(); ++c) d = std::max(d, std::abs(a.prior[c] - b.prior[c]));
    return d;
}

/// Runs the outer loop from `state` (warm start) and leaves the final
/// iterate, with fresh posterior weights, in `state`.
inline FitResult run_fit(const FitData& data, FitState& state, const FitConfig& cfg, double lambda, bool graph) {
    FitResult res(state.model);
    res.graph = graph;
    res.lambda = graph ? lambda : std::numeric_limits<double>::quiet_NaN();
    res.subjects = data.subjects();
    for (std::size_t j = 0; j < data.items(); ++j)
        if (data.degenerate(j)) res.diagnostics.degenerate_items.push_back(j);

    if (!graph && state.model.phi.edge_count() > 0) {
        state.model.phi = DesignMatrix(data.items());
        refresh_rest(data, state);
    }
    for (std::size_t t = 1; t <= cfg.outer_max; ++t) {
        const GdcmModel previous = state.model;
        e_step(data, state, cfg);
        res.diagnostics.objective_trace.push_back(state.log_pseudo_likelihood);
        if (graph) res.diagnostics.flagged_coordinates += update_phi(data, state, cfg, lambda).flagged;
        update_beta(data, state, cfg);
        update_pi(data, state, cfg);
        const double change = max_parameter_change(previous, state.model);
        res.diagnostics.change_trace.push_back(change);
        res.n_outer_iters = t;
        if (change < cfg.outer_tol) {
            res.converged = true;
            break;
        }
    }
    e_step(data, state, cfg);
    res.model = state.model;
    res.log_pseudo_likelihood = state.log_pseudo_likelihood;
    res.n_edges = state.model.phi.edge_count();
    res.bic = pseudo_bic(res.log_pseudo_likelihood, state.model.beta.free_parameters(), res.n_edges,
                         data.subjects());
    return res;
}

inline FitResult fit_fixed_lambda(const ResponseMatrix& x, const QMatrix& q, const FitConfig& cfg, double lambda) {
    cfg.validate();
    require(lambda >= 0.0, "lambda must be nonnegative");
    const FitData data(x, q, cfg.family);
    auto state = initial_state(data, cfg);
    auto res = run_fit(data, state, cfg, lambda, cfg.graph);
    res.path.push_back({res.lambda, res.bic, res.log_pseudo_likelihood, res.n_edges, res.converged,
                        res.n_outer_iters});
    return res;
}

/// Largest |numerator| of the coordinate updates at Φ = 0, from a state whose
/// posterior weights are current.
inline double lambda_max_at(const FitData& data, const FitState& state, const FitConfig& cfg) {
    const PhiSubproblem sub(data, state, cfg);
    const DesignMatrix zero(data.items());
    double best = 0.0;
    for (std::size_t j = 0; j < data.items(); ++j)
        for (std::size_t k = j + 1; k < data.items(); ++k)
            if (!sub.frozen(j, k)) best = std::max(best, std::abs(sub.numerator(zero, j, k)));
    return best;
}

/// Fits the DCM (Φ ≡ 0) and returns the smallest λ that keeps Φ at zero
/// from that state, together with the converged DCM state.
inline std::pair<double, FitState> lambda_max_with_state(const FitData& data, const FitConfig& cfg) {
    auto state = initial_state(data, cfg);
    run_fit(data, state, cfg, 0.0, false);
    return {lambda_max_at(data, state, cfg), std::move(state)};
}

inline double lambda_max(const ResponseMatrix& x, const QMatrix& q, const FitConfig& cfg) {
    cfg.validate();
    const FitData data(x, q, cfg.family);
    return lambda_max_with_state(data, cfg).first;
}

/// Mean over subjects of the total variation distance between two weight matrices.
inline double posterior_shift(const DenseMatrix<double>& a, const DenseMatrix<double>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "weight matrices differ in shape");
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double d = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) d += std::abs(a(i, c) - b(i, c));
        total += 0.5 * d;
    }
    return a.rows() ? total / static_cast<double>(a.rows()) : 0.0;
}

/// Geometric grid from lambda_max down to path_min_ratio · lambda_max.
inline std::vector<double> lambda_grid(double lmax, std::size_t length, double min_ratio) {
    std::vector<double> g(length);
    for (std::size_t k = 0; k < length; ++k)
        g[k] = length == 1 ? lmax
                           : lmax * std::pow(min_ratio, static_cast<double>(k) / static_cast<double>(length - 1));
    return g;
}

/// Warm-started fits over a decreasing λ grid; returns the BIC minimizer,
/// ties going to the larger λ. The path ends early on `path_patience`
/// non-improving points or on the first point past `path_max_shift`.
inline FitResult fit_path(const ResponseMatrix& x, const QMatrix& q, const FitConfig& cfg) {
    cfg.validate();
    const FitData data(x, q, cfg.family);
    if (!cfg.graph) {
        auto state = initial_state(data, cfg);
        auto res = run_fit(data, state, cfg, 0.0, false);
        res.path.push_back({res.lambda, res.bic, res.log_pseudo_likelihood, 0, res.converged, res.n_outer_iters});
        return res;
    }
    auto [lmax, state] = lambda_max_with_state(data, cfg);
    const DenseMatrix<double> reference = state.weights;
    std::vector<double> grid;
    if (cfg.lambda.mode == LambdaSpec::Mode::grid) {
        grid = cfg.lambda.grid;
        std::sort(grid.begin(), grid.end(), std::greater<>());
    } else {
        grid = lambda_grid(lmax, cfg.path_length, cfg.path_min_ratio);
    }

    const std::size_t patience = cfg.lambda.mode == LambdaSpec::Mode::grid ? 0 : cfg.path_patience;
    std::optional<FitResult> best;
    std::vector<PathPoint> path;
    std::size_t worse = 0;
    for (double lam : grid) {
        auto res = run_fit(data, state, cfg, lam, true);
        const double shift = posterior_shift(state.weights, reference);
        const bool admissible = shift <= cfg.path_max_shift;
        path.push_back(
            {lam, res.bic, res.log_pseudo_likelihood, res.n_edges, res.converged, res.n_outer_iters, shift, admissible});
        if (!admissible) {
            if (!best) best = std::move(res);
            break;
        }
        if (!best || res.bic < best->bic) {
            best = std::move(res);
            worse = 0;
        } else if (patience && ++worse == patience) {
            break;
        }
    }
    best->path = std::move(path);
    return std::move(*best);
}

/// Dispatches on the configured λ mode.
inline FitResult fit(const ResponseMatrix& x, const QMatrix& q, const FitConfig& cfg) {
    if (cfg.graph && cfg.lambda.mode == LambdaSpec::Mode::fixed) return fit_fixed_lambda(x, q, cfg, cfg.lambda.value);
    return fit_path(x, q, cfg);
}

}  // namespace gdcm
