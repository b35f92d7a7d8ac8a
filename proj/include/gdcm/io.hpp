#pragma once

// File formats: response and Q-matrix CSVs, model / truth / fit JSON
// documents, and JSON configuration files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdcm/estimate.hpp"
#include "gdcm/simulate.hpp"

namespace gdcm::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        out << text;
        out.flush();
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// 0/1 CSV matrices

namespace detail {

inline std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t");
        const auto e = cell.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Header `<prefix>1..<prefix>n`, then rows of 0/1.
inline DenseMatrix<std::uint8_t> parse_binary_csv(const std::string& text, const std::string& prefix,
                                                  const std::string& what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError(what + ": file is empty");
    const auto header = split_csv_line(line);
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] != prefix + std::to_string(c + 1))
            throw DataError(what + ": header column " + std::to_string(c + 1) + " must be '" + prefix +
                            std::to_string(c + 1) + "', found '" + header[c] + "'");
    const std::size_t cols = header.size();
    std::vector<std::uint8_t> cells;
    std::size_t rows = 0, lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != cols)
            throw DataError(what + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                            " fields, expected " + std::to_string(cols));
        for (const auto& v : f) {
            if (v != "0" && v != "1")
                throw DataError(what + ": line " + std::to_string(lineno) + " has non-binary value '" + v + "'");
            cells.push_back(v == "1" ? 1 : 0);
        }
        ++rows;
    }
    DenseMatrix<std::uint8_t> m(rows, cols);
    std::copy(cells.begin(), cells.end(), m.data().begin());
    return m;
}

inline std::string format_binary_csv(const DenseMatrix<std::uint8_t>& m, const std::string& prefix) {
    std::string out;
    out.reserve((m.rows() + 1) * m.cols() * 2 + 16);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (c) out += ',';
        out += prefix + std::to_string(c + 1);
    }
    out += '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c) out += ',';
            out += m(r, c) ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

}  // namespace detail

inline ResponseMatrix parse_responses_csv(const std::string& text) {
    return ResponseMatrix(detail::parse_binary_csv(text, "item", "responses"));
}
inline std::string format_responses_csv(const ResponseMatrix& x) { return detail::format_binary_csv(x.data(), "item"); }

inline QMatrix parse_qmatrix_csv(const std::string& text) {
    return QMatrix(detail::parse_binary_csv(text, "attr", "Q-matrix"));
}
inline std::string format_qmatrix_csv(const QMatrix& q) { return detail::format_binary_csv(q.loadings(), "attr"); }

inline ResponseMatrix read_responses(const std::filesystem::path& p) { return parse_responses_csv(read_text(p)); }
inline QMatrix read_qmatrix(const std::filesystem::path& p) { return parse_qmatrix_csv(read_text(p)); }

// ---------------------------------------------------------------------------
// Model JSON

namespace detail {

template <typename T>
T get(const json& doc, const char* key, const std::string& what) {
    if (!doc.is_object() || !doc.contains(key)) throw DataError(what + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(what + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

}  // namespace detail

inline json model_to_json(const GdcmModel& m) {
    const std::size_t K = m.attributes(), J = m.items();
    json q = json::array();
    for (std::size_t j = 0; j < J; ++j) {
        json row = json::array();
        for (std::size_t k = 0; k < K; ++k) row.push_back(static_cast<int>(m.q(j, k)));
        q.push_back(std::move(row));
    }
    json beta = json::array();
    for (std::size_t j = 0; j < J; ++j)
        for (auto pos : m.beta.active_positions(j)) {
            json subset = json::array();
            const auto mask = m.beta.subset_mask(pos);
            for (std::size_t k = 0; k < K; ++k)
                if ((mask >> k) & 1U) subset.push_back(k);
            beta.push_back({{"item", j}, {"subset", std::move(subset)}, {"value", m.beta(j, pos)}});
        }
    json phi = json::array();
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t k = j + 1; k < J; ++k)
            if (m.phi(j, k) != 0.0) phi.push_back({{"j", j}, {"j'", k}, {"value", m.phi(j, k)}});
    json pi = json::array();
    for (double p : m.prior.probs()) pi.push_back(p);
    return {{"K", K},       {"J", J},       {"family", std::string(to_string(m.family()))},
            {"q", std::move(q)}, {"beta", std::move(beta)}, {"phi", std::move(phi)},
            {"pi", std::move(pi)}};
}

inline GdcmModel model_from_json(const json& doc) {
    const std::string what = "model";
    const auto K = detail::get<std::size_t>(doc, "K", what);
    const auto J = detail::get<std::size_t>(doc, "J", what);
    const auto family = parse_family(detail::get<std::string>(doc, "family", what));
    const auto qrows = detail::get<std::vector<std::vector<int>>>(doc, "q", what);
    require(K >= 1 && K <= kMaxAttributes, "model: K must be in [1, 16]");
    require(qrows.size() == J, "model: q must have J rows");
    DenseMatrix<std::uint8_t> qm(J, K);
    for (std::size_t j = 0; j < J; ++j) {
        require(qrows[j].size() == K, "model: q rows must have K entries");
        for (std::size_t k = 0; k < K; ++k) {
            require(qrows[j][k] == 0 || qrows[j][k] == 1, "model: q entries must be 0 or 1");
            qm(j, k) = static_cast<std::uint8_t>(qrows[j][k]);
        }
    }
    QMatrix q(std::move(qm));
    ItemCoefficients beta(q, family);
    for (const auto& e : detail::get<json>(doc, "beta", what)) {
        const auto j = detail::get<std::size_t>(e, "item", "model beta");
        require(j < J, "model: beta item index out of range");
        std::uint32_t mask = 0;
        for (auto k : detail::get<std::vector<std::size_t>>(e, "subset", "model beta")) {
            require(k < K, "model: beta subset attribute out of range");
            mask |= std::uint32_t{1} << k;
        }
        beta.set(j, subset_position(mask, K), detail::get<double>(e, "value", "model beta"));
    }
    DesignMatrix phi(J);
    for (const auto& e : detail::get<json>(doc, "phi", what)) {
        const auto j = detail::get<std::size_t>(e, "j", "model phi");
        const auto k = detail::get<std::size_t>(e, "j'", "model phi");
        phi.set(j, k, detail::get<double>(e, "value", "model phi"));
    }
    ClassPrior prior(detail::get<std::vector<double>>(doc, "pi", what));
    return {std::move(q), std::move(beta), std::move(phi), std::move(prior)};
}

// ---------------------------------------------------------------------------
// Configuration

inline json sim_config_to_json(const SimConfig& c) {
    return {{"K", c.attributes},
            {"J", c.items},
            {"N", c.subjects},
            {"scenario", std::string(to_string(c.scenario.kind))},
            {"edge_value", c.scenario.edge_value},
            {"guess_range", {c.guess_range.first, c.guess_range.second}},
            {"slip_range", {c.slip_range.first, c.slip_range.second}},
            {"attr_success", c.attr_success},
            {"burn_in", c.burn_in},
            {"random_scan", c.random_scan},
            {"seed", c.seed}};
}

/// Missing fields keep the values already in `base`.
inline SimConfig sim_config_from_json(const json& doc, SimConfig base = {}) {
    const std::string what = "simulation config";
    if (!doc.is_object()) throw DataError(what + " must be a JSON object");
    if (doc.contains("K")) base.attributes = detail::get<std::size_t>(doc, "K", what);
    if (doc.contains("J")) base.items = detail::get<std::size_t>(doc, "J", what);
    if (doc.contains("N")) base.subjects = detail::get<std::size_t>(doc, "N", what);
    if (doc.contains("scenario")) base.scenario.kind = parse_graph_kind(detail::get<std::string>(doc, "scenario", what));
    if (doc.contains("edge_value")) base.scenario.edge_value = detail::get<double>(doc, "edge_value", what);
    if (doc.contains("guess_range")) {
        const auto r = detail::get<std::vector<double>>(doc, "guess_range", what);
        require(r.size() == 2, what + ": guess_range needs two values");
        base.guess_range = {r[0], r[1]};
    }
    if (doc.contains("slip_range")) {
        const auto r = detail::get<std::vector<double>>(doc, "slip_range", what);
        require(r.size() == 2, what + ": slip_range needs two values");
        base.slip_range = {r[0], r[1]};
    }
    if (doc.contains("attr_success")) base.attr_success = detail::get<double>(doc, "attr_success", what);
    if (doc.contains("burn_in")) base.burn_in = detail::get<std::size_t>(doc, "burn_in", what);
    if (doc.contains("random_scan")) base.random_scan = detail::get<bool>(doc, "random_scan", what);
    if (doc.contains("seed")) base.seed = detail::get<std::uint64_t>(doc, "seed", what);
    base.scenario.items = base.items;
    return base;
}

inline json lambda_to_json(const LambdaSpec& l) {
    switch (l.mode) {
        case LambdaSpec::Mode::automatic: return "auto";
        case LambdaSpec::Mode::fixed: return l.value;
        case LambdaSpec::Mode::grid: return l.grid;
    }
    return "auto";
}

inline LambdaSpec parse_lambda(const std::string& s) {
    if (s == "auto") return {};
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size() && v >= 0.0) return LambdaSpec::fixed_value(v);
    } catch (const std::exception&) {
    }
    throw UsageError("lambda must be 'auto' or a nonnegative number, got '" + s + "'");
}

inline json fit_config_to_json(const FitConfig& c) {
    return {{"model", std::string(to_string(c.family))},
            {"graph", c.graph},
            {"lambda", lambda_to_json(c.lambda)},
            {"path_length", c.path_length},
            {"path_min_ratio", c.path_min_ratio},
            {"path_patience", c.path_patience},
            {"path_max_shift", c.path_max_shift},
            {"outer_max", c.outer_max},
            {"outer_tol", c.outer_tol},
            {"inner_max", c.inner_max},
            {"inner_tol", c.inner_tol},
            {"weight_floor", c.weight_floor},
            {"prob_clamp", c.prob_clamp},
            {"monotone_dina", c.monotone_dina},
            {"pi_exact", c.pi_exact},
            {"seed", c.seed}};
}

inline FitConfig fit_config_from_json(const json& doc, FitConfig base = {}) {
    const std::string what = "fit config";
    if (!doc.is_object()) throw DataError(what + " must be a JSON object");
    if (doc.contains("model")) base.family = parse_family(detail::get<std::string>(doc, "model", what));
    if (doc.contains("graph")) base.graph = detail::get<bool>(doc, "graph", what);
    if (doc.contains("lambda")) {
        const auto& l = doc.at("lambda");
        if (l.is_string()) {
            if (l.get<std::string>() != "auto") throw DataError(what + ": lambda string must be 'auto'");
            base.lambda = {};
        } else if (l.is_number()) {
            base.lambda = LambdaSpec::fixed_value(l.get<double>());
        } else if (l.is_array()) {
            base.lambda = LambdaSpec::explicit_grid(l.get<std::vector<double>>());
        } else {
            throw DataError(what + ": lambda must be 'auto', a number or an array");
        }
    }
    if (doc.contains("path_length")) base.path_length = detail::get<std::size_t>(doc, "path_length", what);
    if (doc.contains("path_min_ratio")) base.path_min_ratio = detail::get<double>(doc, "path_min_ratio", what);
    if (doc.contains("path_patience")) base.path_patience = detail::get<std::size_t>(doc, "path_patience", what);
    if (doc.contains("path_max_shift")) base.path_max_shift = detail::get<double>(doc, "path_max_shift", what);
    if (doc.contains("outer_max")) base.outer_max = detail::get<std::size_t>(doc, "outer_max", what);
    if (doc.contains("outer_tol")) base.outer_tol = detail::get<double>(doc, "outer_tol", what);
    if (doc.contains("inner_max")) base.inner_max = detail::get<std::size_t>(doc, "inner_max", what);
    if (doc.contains("inner_tol")) base.inner_tol = detail::get<double>(doc, "inner_tol", what);
    if (doc.contains("weight_floor")) base.weight_floor = detail::get<double>(doc, "weight_floor", what);
    if (doc.contains("prob_clamp")) base.prob_clamp = detail::get<double>(doc, "prob_clamp", what);
    if (doc.contains("monotone_dina")) base.monotone_dina = detail::get<bool>(doc, "monotone_dina", what);
    if (doc.contains("pi_exact")) base.pi_exact = detail::get<bool>(doc, "pi_exact", what);
    if (doc.contains("seed")) base.seed = detail::get<std::uint64_t>(doc, "seed", what);
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// Truth and fit documents

inline json truth_to_json(const SimTruth& t, const SimConfig& config) {
    auto doc = model_to_json(t.model);
    json alpha = json::array();
    for (auto a : t.alpha) {
        json row = json::array();
        for (std::size_t k = 0; k < t.model.attributes(); ++k) row.push_back((a >> k) & 1U);
        alpha.push_back(std::move(row));
    }
    json items = json::array();
    for (const auto& p : t.items) items.push_back({{"guess", p.guess}, {"slip", p.slip}});
    doc["alpha"] = std::move(alpha);
    doc["items"] = std::move(items);
    doc["config"] = sim_config_to_json(config);
    return doc;
}

inline SimTruth truth_from_json(const json& doc) {
    auto model = model_from_json(doc);
    SimTruth t{model, {}, {}};
    if (model.family() == ModelFamily::dina) t.items = model.dina_params();
    if (doc.contains("alpha")) {
        for (const auto& row : doc.at("alpha")) {
            const auto bits = row.get<std::vector<int>>();
            require(bits.size() == model.attributes(), "truth: alpha rows must have K entries");
            std::uint32_t a = 0;
            for (std::size_t k = 0; k < bits.size(); ++k) {
                require(bits[k] == 0 || bits[k] == 1, "truth: alpha entries must be 0 or 1");
                if (bits[k]) a |= std::uint32_t{1} << k;
            }
            t.alpha.push_back(a);
        }
    }
    return t;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json fit_to_json(const FitResult& r, const FitConfig& config) {
    auto doc = model_to_json(r.model);
    doc["graph"] = r.graph;
    doc["lambda"] = number_or_null(r.lambda);
    doc["bic"] = r.bic;
    doc["log_pseudo_likelihood"] = r.log_pseudo_likelihood;
    doc["n_edges"] = r.n_edges;
    doc["converged"] = r.converged;
    doc["n_outer_iters"] = r.n_outer_iters;
    doc["N"] = r.subjects;
    json path = json::array();
    for (const auto& p : r.path)
        path.push_back({{"lambda", number_or_null(p.lambda)},
                        {"bic", p.bic},
                        {"n_edges", p.n_edges},
                        {"log_pseudo_likelihood", p.log_pseudo_likelihood},
                        {"converged", p.converged},
                        {"n_outer_iters", p.n_outer_iters},
                        {"posterior_shift", p.posterior_shift},
                        {"admissible", p.admissible}});
    doc["path"] = std::move(path);
    doc["diagnostics"] = {{"degenerate_items", r.diagnostics.degenerate_items},
                          {"flagged_coordinates", r.diagnostics.flagged_coordinates}};
    doc["config"] = fit_config_to_json(config);
    return doc;
}

}  // namespace gdcm::io
