#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdcm/io.hpp"

namespace fs = std::filesystem;
using gdcm::io::json;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("gdcm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    int run(const std::string& args) const {
        const std::string cmd = std::string(GDCM_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() +
                                " 2>" + (dir_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    std::string read(const std::string& name) const { return gdcm::io::read_text(dir_ / name); }

    // small pair-scenario dataset in dir/<name>
    void simulate(const std::string& name, const std::string& extra = "") const {
        ASSERT_EQ(run("simulate --K 2 --J 12 --N 300 --scenario pair --seed 3 --burn-in 100 --out " + path(name) + " " +
                      extra),
                  0);
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateWritesThreeFilesReproducibly) {
    ASSERT_EQ(run("simulate --K 3 --scenario pair --N 500 --seed 1 --out " + path("a")), 0);
    ASSERT_EQ(run("simulate --K 3 --scenario pair --N 500 --seed 1 --out " + path("b")), 0);
    for (const char* f : {"responses.csv", "qmatrix.csv", "truth.json"})
        EXPECT_EQ(read(std::string("a/") + f), read(std::string("b/") + f)) << f;
    const auto x = gdcm::io::read_responses(path("a/responses.csv"));
    EXPECT_EQ(x.subjects(), 500u);
    EXPECT_EQ(x.items(), 30u);
    const auto q = gdcm::io::read_qmatrix(path("a/qmatrix.csv"));
    EXPECT_EQ(q.attributes(), 3u);
    const auto truth = gdcm::io::truth_from_json(gdcm::io::read_json(path("a/truth.json")));
    EXPECT_EQ(truth.model.phi.edge_count(), 15u);
    EXPECT_EQ(truth.alpha.size(), 500u);
    ASSERT_EQ(run("simulate --K 3 --scenario pair --N 500 --seed 2 --out " + path("c")), 0);
    EXPECT_NE(read("a/responses.csv"), read("c/responses.csv"));
}

TEST_F(Cli, SimulateFromConfigFile) {
    gdcm::io::write_json(path("sim.json"), {{"K", 2}, {"J", 9}, {"N", 40}, {"scenario", "triplet"}, {"seed", 5}});
    ASSERT_EQ(run("simulate --config " + path("sim.json") + " --out " + path("d")), 0);
    const auto x = gdcm::io::read_responses(path("d/responses.csv"));
    EXPECT_EQ(x.subjects(), 40u);
    EXPECT_EQ(x.items(), 9u);
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run("simulate --scenario triplet --J 31 --N 10 --out " + path("t")), 2);
    EXPECT_EQ(run("simulate --N 10"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("simulate --scenario ring --out " + path("t")), 1);
    simulate("d");
    EXPECT_EQ(run("gof --fit " + path("d/truth.json") + " --responses " + path("d/responses.csv") + " --bootstrap 0"),
              1);
    EXPECT_EQ(run("fit --responses " + path("d/responses.csv") + " --qmatrix " + path("d/qmatrix.csv") +
                  " --lambda nope --out " + path("f.json")),
              1);

    // responses with 12 items against a 9-row Q-matrix
    ASSERT_EQ(run("simulate --K 2 --J 9 --N 20 --out " + path("e")), 0);
    EXPECT_EQ(run("fit --responses " + path("d/responses.csv") + " --qmatrix " + path("e/qmatrix.csv") + " --out " +
                  path("f.json")),
              2);
    EXPECT_NE(read("stderr.txt").find("Q-matrix"), std::string::npos);

    // a model whose log-likelihood overflows
    auto model = gdcm::io::read_json(path("d/truth.json"));
    model["beta"][0]["value"] = 1e308;
    model["beta"][1]["value"] = 1e308;
    gdcm::io::write_json(path("huge.json"), model);
    EXPECT_EQ(run("gof --fit " + path("huge.json") + " --responses " + path("d/responses.csv") +
                  " --bootstrap 2 --burn-in 5 --out " + path("g.json") + " --histogram " + path("h.csv")),
              3);

    std::ofstream(path("bad.csv")) << "item1,item2\n0,7\n";
    EXPECT_EQ(run("fit --responses " + path("bad.csv") + " --qmatrix " + path("e/qmatrix.csv")), 2);
    EXPECT_EQ(run("report --fit " + path("d/truth.json") + " --metrics " + path("m.json")), 1);
}

TEST_F(Cli, NoGraphAndHugePenaltyAgree) {
    simulate("d");
    const std::string in = " --responses " + path("d/responses.csv") + " --qmatrix " + path("d/qmatrix.csv");
    ASSERT_EQ(run("fit" + in + " --no-graph --out " + path("dcm.json")), 0);
    ASSERT_EQ(run("fit" + in + " --lambda 1e9 --out " + path("big.json")), 0);
    const auto dcm = gdcm::io::read_json(path("dcm.json"));
    const auto big = gdcm::io::read_json(path("big.json"));
    EXPECT_EQ(dcm.at("n_edges"), 0);
    EXPECT_EQ(big.at("n_edges"), 0);
    EXPECT_TRUE(dcm.at("lambda").is_null());
    const auto a = gdcm::io::model_from_json(dcm).dina_params();
    const auto b = gdcm::io::model_from_json(big).dina_params();
    for (std::size_t j = 0; j < a.size(); ++j) {
        EXPECT_NEAR(a[j].guess, b[j].guess, 1e-6);
        EXPECT_NEAR(a[j].slip, b[j].slip, 1e-6);
    }
}

TEST_F(Cli, AutoPathFindsPairEdges) {
    ASSERT_EQ(run("simulate --K 2 --J 12 --N 1000 --scenario pair --seed 4 --out " + path("d")), 0);
    ASSERT_EQ(run("fit --responses " + path("d/responses.csv") + " --qmatrix " + path("d/qmatrix.csv") + " --out " +
                  path("fit.json")),
              0);
    const auto doc = gdcm::io::read_json(path("fit.json"));
    EXPECT_LE(doc.at("path").size(), 15u);
    EXPECT_TRUE(doc.at("path")[0].at("admissible").get<bool>());
    EXPECT_GE(doc.at("n_edges").get<int>(), 4);
    EXPECT_LE(doc.at("n_edges").get<int>(), 12);
    EXPECT_EQ(doc.at("config").at("lambda"), "auto");

    ASSERT_EQ(run("report --fit " + path("fit.json") + " --truth " + path("d/truth.json") + " --metrics " +
                  path("m.json")),
              0);
    const auto m = gdcm::io::read_json(path("m.json"));
    EXPECT_GE(m.at("cpr").get<double>(), 0.8);
    EXPECT_LE(m.at("fpr").get<double>(), 0.1);
}

TEST_F(Cli, ReportPerfectFitAndExports) {
    ASSERT_EQ(run("simulate --K 3 --scenario pair --N 20 --seed 1 --burn-in 5 --out " + path("d")), 0);
    const auto truth = path("d/truth.json");
    ASSERT_EQ(run("report --fit " + truth + " --truth " + truth + " --heatmap " + path("h.csv") + " --cliques " +
                  path("c.json") + " --edges " + path("e.csv") + " --top 8"),
              0);
    const auto m = json::parse(read("stdout.txt"));
    EXPECT_EQ(m.at("fpr"), 0.0);
    EXPECT_EQ(m.at("cpr"), 1.0);
    EXPECT_EQ(m.at("rmsd_guess"), 0.0);

    std::istringstream edges(read("e.csv"));
    std::string line;
    std::getline(edges, line);
    EXPECT_EQ(line, "j,j',phi");
    int rows = 0;
    while (std::getline(edges, line)) ++rows;
    EXPECT_EQ(rows, 8);

    EXPECT_EQ(read("h.csv").substr(0, 9), "item,1,2,");
    EXPECT_EQ(json::parse(read("c.json")).size(), 0u);
}

TEST_F(Cli, ReportTopPrintsSortedTable) {
    ASSERT_EQ(run("simulate --K 3 --scenario triplet --N 20 --seed 1 --burn-in 5 --out " + path("d")), 0);
    ASSERT_EQ(run("report --fit " + path("d/truth.json") + " --top 8 --heatmap " + path("h.csv") + " --cliques " +
                  path("c.json")),
              0);
    std::istringstream out(read("stdout.txt"));
    std::string line;
    std::getline(out, line);
    int rows = 0;
    while (std::getline(out, line)) ++rows;
    EXPECT_EQ(rows, 8);
    const auto cliques = json::parse(read("c.json"));
    ASSERT_EQ(cliques.size(), 10u);
    EXPECT_EQ(cliques[0].at("phi_sum"), 3.0);
    EXPECT_EQ(cliques[0].at("edge_values").size(), 3u);

    // symmetric |phi| grid
    std::istringstream grid(read("h.csv"));
    std::getline(grid, line);
    std::vector<std::vector<std::string>> cells;
    while (std::getline(grid, line)) {
        std::vector<std::string> row;
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) row.push_back(c);
        cells.push_back(row);
    }
    ASSERT_EQ(cells.size(), 30u);
    for (std::size_t j = 0; j < 30; ++j)
        for (std::size_t k = 0; k < 30; ++k) EXPECT_EQ(cells[j][k + 1], cells[k][j + 1]);
    EXPECT_EQ(cells[0][2], "1");
}

TEST_F(Cli, GofDefaultsAndReproducibility) {
    ASSERT_EQ(run("simulate --K 1 --J 4 --N 30 --seed 2 --burn-in 20 --out " + path("d")), 0);
    const std::string base = "gof --fit " + path("d/truth.json") + " --responses " + path("d/responses.csv") +
                             " --burn-in 10 --seed 9";
    ASSERT_EQ(run(base + " --out " + path("g1.json") + " --histogram " + path("h1.csv")), 0);
    ASSERT_EQ(run(base + " --threads 2 --out " + path("g2.json") + " --histogram " + path("h2.csv")), 0);
    const auto g = gdcm::io::read_json(path("g1.json"));
    EXPECT_EQ(g.at("B"), 500);
    EXPECT_EQ(g.at("l_boot").size(), 500u);
    EXPECT_EQ(g.at("seed"), 9);
    const double p = g.at("p_value").get<double>();
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_EQ(read("g1.json"), read("g2.json"));
    EXPECT_EQ(read("h1.csv"), read("h2.csv"));
    EXPECT_EQ(read("h1.csv").substr(0, 19), "bin_lo,bin_hi,count");
}

TEST_F(Cli, StudyIsReproducible) {
    gdcm::io::write_json(path("study.json"),
                         {{"conditions", json::array({{{"K", 2}, {"scenario", "pair"}, {"N", 150}}})},
                          {"replications", 2},
                          {"J", 8},
                          {"seed", 11},
                          {"burn_in", 50},
                          {"fit", {{"path_length", 5}}}});
    ASSERT_EQ(run("study --config " + path("study.json") + " --out " + path("s1")), 0);
    ASSERT_EQ(run("study --config " + path("study.json") + " --out " + path("s2") + " --threads 2"), 0);
    for (const char* f : {"table1_rmsd.csv", "table2_bias.csv", "table3_graph.csv", "table4_prior.csv",
                          "replications.csv", "study.json"})
        EXPECT_EQ(read(std::string("s1/") + f), read(std::string("s2/") + f)) << f;
    const auto echo = gdcm::io::read_json(path("s1/study.json"));
    EXPECT_EQ(echo.at("seed"), 11);
    EXPECT_EQ(echo.at("J"), 8);
}
