#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gdcm/gdcm.hpp"

namespace fs = std::filesystem;
using gdcm::io::json;

namespace {

struct SimulateArgs {
    std::string config;
    std::size_t K = 3, J = 30, N = 1000, burn_in = 300;
    std::string scenario = "null";
    std::uint64_t seed = 1;
    std::string out;
};

struct FitArgs {
    std::string responses, qmatrix, model = "dina", lambda = "auto", config;
    bool no_graph = false;
    bool pi_exact = false;
    std::uint64_t seed = 1;
    std::string out = "fit.json";
};

struct GofArgs {
    std::string fit, responses;
    std::size_t bootstrap = 500, burn_in = 300, bins = 30, threads = 1;
    std::uint64_t seed = 1;
    std::string out = "gof.json", histogram = "histogram.csv";
};

struct ReportArgs {
    std::string fit, truth, heatmap, cliques, edges, metrics;
    std::optional<std::size_t> top;
};

struct StudyArgs {
    std::string config, out;
    std::size_t threads = 1;
};

int cmd_simulate(const SimulateArgs& a, const CLI::App& sub) {
    gdcm::SimConfig c;
    if (!a.config.empty()) c = gdcm::io::sim_config_from_json(gdcm::io::read_json(a.config));
    if (sub.count("--K")) c.attributes = a.K;
    if (sub.count("--J")) c.items = a.J;
    if (sub.count("--N")) c.subjects = a.N;
    if (sub.count("--scenario")) c.scenario.kind = gdcm::parse_graph_kind(a.scenario);
    if (sub.count("--seed")) c.seed = a.seed;
    if (sub.count("--burn-in")) c.burn_in = a.burn_in;
    c.scenario.items = c.items;
    const auto d = gdcm::simulate_dataset(c);
    const fs::path dir(a.out);
    gdcm::io::write_text_atomic(dir / "responses.csv", gdcm::io::format_responses_csv(d.responses));
    gdcm::io::write_text_atomic(dir / "qmatrix.csv", gdcm::io::format_qmatrix_csv(d.truth.model.q));
    gdcm::io::write_json(dir / "truth.json", gdcm::io::truth_to_json(d.truth, c));
    return 0;
}

int cmd_fit(const FitArgs& a, const CLI::App& sub) {
    gdcm::FitConfig c;
    if (!a.config.empty()) c = gdcm::io::fit_config_from_json(gdcm::io::read_json(a.config));
    if (sub.count("--model") || a.config.empty()) c.family = gdcm::parse_family(a.model);
    if (sub.count("--lambda") || a.config.empty()) c.lambda = gdcm::io::parse_lambda(a.lambda);
    if (a.no_graph) c.graph = false;
    if (a.pi_exact) c.pi_exact = true;
    if (sub.count("--seed")) c.seed = a.seed;
    const auto x = gdcm::io::read_responses(a.responses);
    const auto q = gdcm::io::read_qmatrix(a.qmatrix);
    const auto r = gdcm::fit(x, q, c);
    gdcm::io::write_json(a.out, gdcm::io::fit_to_json(r, c));
    if (!r.converged)
        std::cerr << "warning: outer loop stopped at " << r.n_outer_iters << " iterations without converging\n";
    return 0;
}

int cmd_gof(const GofArgs& a) {
    const auto model = gdcm::io::model_from_json(gdcm::io::read_json(a.fit));
    const auto x = gdcm::io::read_responses(a.responses);
    const auto r = gdcm::run_gof(model, x, a.bootstrap, a.seed, a.burn_in, a.threads);
    gdcm::io::write_json(a.out, {{"l_obs", r.l_obs},
                                 {"p_value", r.p_value},
                                 {"B", r.B},
                                 {"seed", r.seed},
                                 {"burn_in", a.burn_in},
                                 {"l_boot", r.l_boot}});
    const auto h = gdcm::histogram(r.l_boot, a.bins, r.l_obs);
    std::string csv = "bin_lo,bin_hi,count\n";
    char buf[96];
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", h.edges[b], h.edges[b + 1], h.counts[b]);
        csv += buf;
    }
    gdcm::io::write_text_atomic(a.histogram, csv);
    std::printf("l_obs %.6f  p %.6f  (B = %zu)\n", r.l_obs, r.p_value, r.B);
    return 0;
}

json metrics_json(const gdcm::RecoveryMetrics& m) {
    auto v = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
    return {{"rmsd_guess", v(m.rmsd_guess)},
            {"rmsd_slip", v(m.rmsd_slip)},
            {"bias_guess", v(m.bias_guess)},
            {"bias_slip", v(m.bias_slip)},
            {"signed_bias_guess", v(m.signed_bias_guess)},
            {"signed_bias_slip", v(m.signed_bias_slip)},
            {"rmsd_phi", v(m.rmsd_phi)},
            {"fpr", v(m.fpr)},
            {"cpr", v(m.cpr)},
            {"pi_distance", v(m.pi_distance)},
            {"replications", 1}};
}

int cmd_report(const ReportArgs& a) {
    const auto fit = gdcm::io::model_from_json(gdcm::io::read_json(a.fit));
    if (!a.metrics.empty() && a.truth.empty()) throw gdcm::UsageError("--metrics requires --truth");
    if (!a.truth.empty()) {
        const auto truth = gdcm::io::model_from_json(gdcm::io::read_json(a.truth));
        const auto doc = metrics_json(gdcm::recovery_metrics(fit, truth));
        if (a.metrics.empty())
            std::cout << doc.dump(2) << "\n";
        else
            gdcm::io::write_json(a.metrics, doc);
    }
    if (!a.heatmap.empty()) gdcm::io::write_text_atomic(a.heatmap, gdcm::export_heatmap(fit.phi));
    auto edges = gdcm::edge_list(fit.phi);
    if (a.top && edges.size() > *a.top) edges.resize(*a.top);
    if (!a.edges.empty()) gdcm::io::write_text_atomic(a.edges, gdcm::export_edges(edges));
    if (a.top && a.edges.empty()) {
        std::printf("%-6s %-6s %s\n", "j", "j'", "phi");
        for (const auto& e : edges) std::printf("%-6zu %-6zu %.6f\n", e.j, e.k, e.value);
    }
    if (!a.cliques.empty()) {
        json out = json::array();
        for (const auto& c : gdcm::maximal_cliques(fit.phi)) {
            json ev = json::array();
            for (std::size_t p = 0; p < c.items.size(); ++p)
                for (std::size_t q = p + 1; q < c.items.size(); ++q)
                    ev.push_back({{"j", c.items[p]}, {"j'", c.items[q]}, {"value", fit.phi(c.items[p], c.items[q])}});
            out.push_back({{"items", c.items}, {"phi_sum", c.phi_sum}, {"edge_values", std::move(ev)}});
        }
        gdcm::io::write_json(a.cliques, out);
    }
    return 0;
}

int cmd_study(const StudyArgs& a) {
    const auto config = gdcm::study_config_from_json(gdcm::io::read_json(a.config));
    const auto result = gdcm::run_study(config, a.threads);
    gdcm::write_study(a.out, config, result);
    std::size_t failed = 0;
    for (const auto& s : result.summaries) failed += s.failures;
    if (failed) std::cerr << failed << " replication(s) failed; see replications.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graphical diagnostic classification models: simulate, fit, check and summarize"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Simulate responses, Q-matrix and truth");
    s->add_option("--config", sim.config, "JSON simulation config")->check(CLI::ExistingFile);
    s->add_option("--K", sim.K, "Number of attributes")->check(CLI::Range(1, 16));
    s->add_option("--J", sim.J, "Number of items")->check(CLI::Range(2, 100000));
    s->add_option("--N", sim.N, "Number of subjects")->check(CLI::PositiveNumber);
    s->add_option("--scenario", sim.scenario, "Graph scenario")->check(CLI::IsMember({"null", "pair", "triplet"}));
    s->add_option("--burn-in", sim.burn_in, "Gibbs sweeps per subject");
    s->add_option("--seed", sim.seed, "Root seed");
    s->add_option("--out", sim.out, "Output directory")->required();

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Fit a model by penalized pseudo-likelihood");
    f->add_option("--responses", fit.responses, "Responses CSV")->required()->check(CLI::ExistingFile);
    f->add_option("--qmatrix", fit.qmatrix, "Q-matrix CSV")->required()->check(CLI::ExistingFile);
    f->add_option("--model", fit.model, "Item model family")->check(CLI::IsMember({"dina", "general"}));
    f->add_option("--lambda", fit.lambda, "'auto' for the BIC path, or a fixed penalty");
    f->add_flag("--no-graph", fit.no_graph, "Constrain the design matrix to zero");
    f->add_flag("--pi-exact", fit.pi_exact, "Maximize the coupled prior objective");
    f->add_option("--config", fit.config, "JSON fit config")->check(CLI::ExistingFile);
    f->add_option("--seed", fit.seed, "Seed");
    f->add_option("--out", fit.out, "Output fit JSON");

    GofArgs gof;
    auto* g = app.add_subcommand("gof", "Parametric bootstrap goodness of fit");
    g->add_option("--fit", gof.fit, "Fit JSON")->required()->check(CLI::ExistingFile);
    g->add_option("--responses", gof.responses, "Responses CSV")->required()->check(CLI::ExistingFile);
    g->add_option("--bootstrap", gof.bootstrap, "Bootstrap datasets")->check(CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max()));
    g->add_option("--burn-in", gof.burn_in, "Gibbs sweeps per subject");
    g->add_option("--seed", gof.seed, "Seed");
    g->add_option("--bins", gof.bins, "Histogram bins")->check(CLI::PositiveNumber);
    g->add_option("--threads", gof.threads, "Worker threads")->check(CLI::PositiveNumber);
    g->add_option("--out", gof.out, "Output GOF JSON");
    g->add_option("--histogram", gof.histogram, "Output histogram CSV");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "Recovery metrics and graph exports");
    r->add_option("--fit", rep.fit, "Fit JSON")->required()->check(CLI::ExistingFile);
    r->add_option("--truth", rep.truth, "Truth JSON")->check(CLI::ExistingFile);
    r->add_option("--metrics", rep.metrics, "Write metrics JSON here instead of standard output");
    r->add_option("--heatmap", rep.heatmap, "Heat-map CSV of |phi|");
    r->add_option("--cliques", rep.cliques, "Maximal cliques JSON");
    r->add_option("--edges", rep.edges, "Edge list CSV");
    r->add_option("--top", rep.top, "Keep only the N strongest edges")->check(CLI::PositiveNumber);

    StudyArgs st;
    auto* y = app.add_subcommand("study", "Replicated simulation study");
    y->add_option("--config", st.config, "JSON study config")->required()->check(CLI::ExistingFile);
    y->add_option("--out", st.out, "Output directory")->required();
    y->add_option("--threads", st.threads, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(gdcm::ErrorKind::usage);
    }

    try {
        if (s->parsed()) return cmd_simulate(sim, *s);
        if (f->parsed()) return cmd_fit(fit, *f);
        if (g->parsed()) return cmd_gof(gof);
        if (r->parsed()) return cmd_report(rep);
        if (y->parsed()) return cmd_study(st);
    } catch (const gdcm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(gdcm::ErrorKind::data);
    }
    return static_cast<int>(gdcm::ErrorKind::usage);
}
