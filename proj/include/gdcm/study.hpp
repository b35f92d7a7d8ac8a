#pragma once

// Replicated simulation study: for each condition (K, scenario, N) and
// replication, simulate data, fit the graphical model (λ by BIC) and the
// plain DCM, and score both against the truth.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gdcm/estimate.hpp"
#include "gdcm/io.hpp"
#include "gdcm/parallel.hpp"
#include "gdcm/report.hpp"
#include "gdcm/simulate.hpp"

namespace gdcm {

struct StudyCondition {
    std::size_t attributes = 3;
    GraphKind scenario = GraphKind::pair;
    std::size_t subjects = 1000;
};

struct StudyConfig {
    std::vector<StudyCondition> conditions;
    std::size_t replications = 20;
    std::size_t items = 30;
    std::uint64_t seed = 1;
    std::size_t burn_in = 300;
    bool fit_gdcm = true;
    bool fit_dcm = true;
    FitConfig fit{};

    /// The full 2 × 3 × 3 design.
    static std::vector<StudyCondition> full_design() {
        std::vector<StudyCondition> out;
        for (std::size_t K : {3, 4})
            for (auto g : {GraphKind::null, GraphKind::pair, GraphKind::triplet})
                for (std::size_t N : {500, 1000, 3000}) out.push_back({K, g, N});
        return out;
    }

    void validate() const {
        require(!conditions.empty(), "study needs at least one condition");
        require(replications >= 1, "study needs at least one replication");
        require(fit_gdcm || fit_dcm, "study needs at least one method");
        for (const auto& c : conditions) sim_config(c, 0).validate();
        fit.validate();
    }

    SimConfig sim_config(const StudyCondition& c, std::uint64_t rep_seed) const {
        SimConfig s;
        s.attributes = c.attributes;
        s.items = items;
        s.subjects = c.subjects;
        s.scenario = {c.scenario, items, 1.0};
        s.burn_in = burn_in;
        s.seed = rep_seed;
        return s;
    }
};

inline std::uint64_t replication_seed(std::uint64_t seed, std::size_t condition, std::size_t replication) {
    return KeyedRng(seed).derive(condition).derive(replication).bits(0);
}

struct ReplicationRecord {
    std::size_t condition = 0;
    std::size_t replication = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::optional<RecoveryMetrics> gdcm, dcm;
    std::size_t gdcm_edges = 0;
    double gdcm_lambda = std::numeric_limits<double>::quiet_NaN();
    bool gdcm_converged = false;
    bool dcm_converged = false;
};

inline ReplicationRecord run_replication(const StudyConfig& config, std::size_t condition, std::size_t replication) {
    ReplicationRecord rec;
    rec.condition = condition;
    rec.replication = replication;
    rec.seed = replication_seed(config.seed, condition, replication);
    try {
        const auto data = simulate_dataset(config.sim_config(config.conditions[condition], rec.seed));
        const auto& truth = data.truth.model;
        if (config.fit_gdcm) {
            auto fc = config.fit;
            fc.graph = true;
            const auto r = fit(data.responses, truth.q, fc);
            rec.gdcm = recovery_metrics(r.model, truth);
            rec.gdcm_edges = r.n_edges;
            rec.gdcm_lambda = r.lambda;
            rec.gdcm_converged = r.converged;
        }
        if (config.fit_dcm) {
            auto fc = config.fit;
            fc.graph = false;
            const auto r = fit(data.responses, truth.q, fc);
            rec.dcm = recovery_metrics(r.model, truth);
            rec.dcm_converged = r.converged;
        }
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.error = e.what();
    }
    return rec;
}

struct ConditionSummary {
    std::optional<AggregateMetrics> gdcm, dcm;
    std::size_t failures = 0;
};

struct StudyResult {
    std::vector<ReplicationRecord> records;  ///< condition-major
    std::vector<ConditionSummary> summaries;
};

inline StudyResult run_study(const StudyConfig& config, std::size_t threads = 1) {
    config.validate();
    const std::size_t C = config.conditions.size(), R = config.replications;
    StudyResult out;
    out.records.resize(C * R);
    parallel_for(C * R, threads, [&](std::size_t t) { out.records[t] = run_replication(config, t / R, t % R); });
    out.summaries.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<RecoveryMetrics> g, d;
        auto& s = out.summaries[c];
        for (std::size_t r = 0; r < R; ++r) {
            const auto& rec = out.records[c * R + r];
            if (!rec.ok) {
                ++s.failures;
                continue;
            }
            if (rec.gdcm) g.push_back(*rec.gdcm);
            if (rec.dcm) d.push_back(*rec.dcm);
        }
        if (!g.empty()) s.gdcm = aggregate_replications(g);
        if (!d.empty()) s.dcm = aggregate_replications(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration and tables

inline StudyConfig study_config_from_json(const io::json& doc) {
    const std::string what = "study config";
    if (!doc.is_object()) throw DataError(what + " must be a JSON object");
    StudyConfig c;
    if (doc.contains("conditions")) {
        for (const auto& e : doc.at("conditions")) {
            StudyCondition sc;
            sc.attributes = io::detail::get<std::size_t>(e, "K", what);
            sc.scenario = parse_graph_kind(io::detail::get<std::string>(e, "scenario", what));
            sc.subjects = io::detail::get<std::size_t>(e, "N", what);
            c.conditions.push_back(sc);
        }
    } else if (doc.contains("grid")) {
        const auto& g = doc.at("grid");
        for (auto K : io::detail::get<std::vector<std::size_t>>(g, "K", what))
            for (const auto& s : io::detail::get<std::vector<std::string>>(g, "scenario", what))
                for (auto N : io::detail::get<std::vector<std::size_t>>(g, "N", what))
                    c.conditions.push_back({K, parse_graph_kind(s), N});
    } else {
        c.conditions = StudyConfig::full_design();
    }
    if (doc.contains("replications")) c.replications = io::detail::get<std::size_t>(doc, "replications", what);
    if (doc.contains("J")) c.items = io::detail::get<std::size_t>(doc, "J", what);
    if (doc.contains("seed")) c.seed = io::detail::get<std::uint64_t>(doc, "seed", what);
    if (doc.contains("burn_in")) c.burn_in = io::detail::get<std::size_t>(doc, "burn_in", what);
    if (doc.contains("methods")) {
        const auto m = io::detail::get<std::vector<std::string>>(doc, "methods", what);
        c.fit_gdcm = std::find(m.begin(), m.end(), "gdcm") != m.end();
        c.fit_dcm = std::find(m.begin(), m.end(), "dcm") != m.end();
    }
    if (doc.contains("fit")) c.fit = io::fit_config_from_json(doc.at("fit"));
    c.validate();
    return c;
}

inline io::json study_config_to_json(const StudyConfig& c) {
    io::json conds = io::json::array();
    for (const auto& s : c.conditions)
        conds.push_back({{"K", s.attributes}, {"scenario", std::string(to_string(s.scenario))}, {"N", s.subjects}});
    io::json methods = io::json::array();
    if (c.fit_gdcm) methods.push_back("gdcm");
    if (c.fit_dcm) methods.push_back("dcm");
    return {{"conditions", std::move(conds)}, {"replications", c.replications}, {"J", c.items},
            {"seed", c.seed},                 {"burn_in", c.burn_in},           {"methods", std::move(methods)},
            {"fit", io::fit_config_to_json(c.fit)}};
}

namespace detail {

inline std::string fmt(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline std::string condition_cells(const StudyCondition& c) {
    return std::to_string(c.attributes) + "," + std::string(to_string(c.scenario)) + "," + std::to_string(c.subjects);
}

template <typename Field>
std::string method_cell(const std::optional<AggregateMetrics>& a, Field field) {
    return a ? fmt(a->mean.*field) : "NA";
}

}  // namespace detail

struct StudyTables {
    std::string rmsd;        ///< guessing / slipping RMSD
    std::string bias;        ///< absolute and signed bias
    std::string graph;       ///< FPR, CPR, RMSD of Φ
    std::string prior;       ///< distance of π̂ from π
    std::string replications;
};

inline StudyTables study_tables(const StudyConfig& config, const StudyResult& result) {
    using M = RecoveryMetrics;
    using detail::method_cell;
    StudyTables t;
    const std::string head = "K,scenario,N,replications,failures";
    t.rmsd = head + ",gdcm_rmsd_guess,dcm_rmsd_guess,gdcm_rmsd_slip,dcm_rmsd_slip\n";
    t.bias = head +
             ",gdcm_bias_guess,dcm_bias_guess,gdcm_bias_slip,dcm_bias_slip,"
             "gdcm_signed_bias_guess,dcm_signed_bias_guess,gdcm_signed_bias_slip,dcm_signed_bias_slip\n";
    t.graph = head + ",gdcm_fpr,gdcm_cpr,gdcm_rmsd_phi,fpr_defined,cpr_defined\n";
    t.prior = head + ",gdcm_pi_distance,dcm_pi_distance\n";
    for (std::size_t c = 0; c < config.conditions.size(); ++c) {
        const auto& s = result.summaries[c];
        const std::string lead = detail::condition_cells(config.conditions[c]) + "," +
                                 std::to_string(config.replications) + "," + std::to_string(s.failures);
        t.rmsd += lead + "," + method_cell(s.gdcm, &M::rmsd_guess) + "," + method_cell(s.dcm, &M::rmsd_guess) + "," +
                  method_cell(s.gdcm, &M::rmsd_slip) + "," + method_cell(s.dcm, &M::rmsd_slip) + "\n";
        t.bias += lead + "," + method_cell(s.gdcm, &M::bias_guess) + "," + method_cell(s.dcm, &M::bias_guess) + "," +
                  method_cell(s.gdcm, &M::bias_slip) + "," + method_cell(s.dcm, &M::bias_slip) + "," +
                  method_cell(s.gdcm, &M::signed_bias_guess) + "," + method_cell(s.dcm, &M::signed_bias_guess) +
                  "," + method_cell(s.gdcm, &M::signed_bias_slip) + "," + method_cell(s.dcm, &M::signed_bias_slip) +
                  "\n";
        t.graph += lead + "," + method_cell(s.gdcm, &M::fpr) + "," + method_cell(s.gdcm, &M::cpr) + "," +
                   method_cell(s.gdcm, &M::rmsd_phi) + "," + std::to_string(s.gdcm ? s.gdcm->fpr_defined : 0) + "," +
                   std::to_string(s.gdcm ? s.gdcm->cpr_defined : 0) + "\n";
        t.prior += lead + "," + method_cell(s.gdcm, &M::pi_distance) + "," + method_cell(s.dcm, &M::pi_distance) + "\n";
    }
    t.replications =
        "K,scenario,N,replication,seed,ok,gdcm_rmsd_guess,gdcm_rmsd_slip,dcm_rmsd_guess,dcm_rmsd_slip,"
        "gdcm_fpr,gdcm_cpr,gdcm_rmsd_phi,gdcm_edges,gdcm_lambda,gdcm_pi_distance,dcm_pi_distance,error\n";
    for (const auto& r : result.records) {
        auto field = [](const std::optional<RecoveryMetrics>& m, std::optional<double> M::*f) {
            return m ? detail::fmt(*m.*f) : std::string("NA");
        };
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        t.replications += detail::condition_cells(config.conditions[r.condition]) + "," +
                          std::to_string(r.replication) + "," + std::to_string(r.seed) + "," + (r.ok ? "1" : "0") +
                          "," + field(r.gdcm, &M::rmsd_guess) + "," + field(r.gdcm, &M::rmsd_slip) + "," +
                          field(r.dcm, &M::rmsd_guess) + "," + field(r.dcm, &M::rmsd_slip) + "," +
                          field(r.gdcm, &M::fpr) + "," + field(r.gdcm, &M::cpr) + "," + field(r.gdcm, &M::rmsd_phi) +
                          "," + (r.gdcm ? std::to_string(r.gdcm_edges) : "NA") + "," +
                          (r.gdcm ? detail::fmt(r.gdcm_lambda) : "NA") + "," + field(r.gdcm, &M::pi_distance) + "," +
                          field(r.dcm, &M::pi_distance) + "," + err + "\n";
    }
    return t;
}

/// Writes the four tables, the per-replication log and the config echo.
inline void write_study(const std::filesystem::path& dir, const StudyConfig& config, const StudyResult& result) {
    const auto t = study_tables(config, result);
    io::write_text_atomic(dir / "table1_rmsd.csv", t.rmsd);
    io::write_text_atomic(dir / "table2_bias.csv", t.bias);
    io::write_text_atomic(dir / "table3_graph.csv", t.graph);
    io::write_text_atomic(dir / "table4_prior.csv", t.prior);
    io::write_text_atomic(dir / "replications.csv", t.replications);
    io::write_json(dir / "study.json", study_config_to_json(config));
}

}  // namespace gdcm
