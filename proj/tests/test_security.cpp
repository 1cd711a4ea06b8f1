#include <gridrisk/powerflow.hpp>
#include <gridrisk/scenario.hpp>

#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gridrisk;

namespace {

std::vector<Contingency> singles_of(const GridCase& g) {
    std::vector<Contingency> zs;
    for (int i = 0; i < static_cast<int>(g.branches.size()); ++i)
        zs.push_back(Contingency::single(i, 0.0));
    return zs;
}

void set_uniform_limits(GridCase& g, double mva) {
    for (Branch& br : g.branches) br.thermal_limit = mva;
}

// two parallel lines between slack and one load bus; losing either line
// doubles the loading of the survivor
GridCase parallel_pair_case() {
    GridCase g;
    g.buses.push_back({1, BusKind::slack, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
    g.buses.push_back({2, BusKind::pq, 100.0, 20.0, 0.0, 0.0, 1.0, 1.0});
    g.branches.push_back({1, 2, 0.01, 0.2, 0.0, 1.0, 0.0, true});
    g.branches.push_back({1, 2, 0.01, 0.2, 0.0, 1.0, 0.0, true});
    return g;
}

}  // namespace

TEST(SolveContingency, Case118SinglesConvergeAndNineIsland) {
    GridCase g = grtest::load_case("case118.m");
    EnumerationOptions eo;
    eo.with_limits = false;
    std::vector<SecurityRecord> records = full_enumeration(g, singles_of(g), eo);
    ASSERT_EQ(records.size(), 186u);

    int islanded = 0;
    for (const SecurityRecord& rec : records) {
        EXPECT_TRUE(rec.converged);
        EXPECT_EQ(rec.loss, -1);  // untouched without limits
        islanded += rec.islanded ? 1 : 0;
    }
    EXPECT_EQ(islanded, 9);
}

TEST(SolveContingency, IslandedOutageLosesRegardlessOfFlows) {
    GridCase g = grtest::load_case("case118.m");
    set_uniform_limits(g, 1e9);

    int bridge = -1, plain = -1;
    for (int i = 0; i < static_cast<int>(g.branches.size()) && (bridge < 0 || plain < 0); ++i) {
        SecurityRecord rec = solve_contingency(g, Contingency::single(i, 0.0));
        (rec.islanded ? bridge : plain) = i;
    }
    ASSERT_GE(bridge, 0);
    ASSERT_GE(plain, 0);
    EXPECT_EQ(loss(g, Contingency::single(bridge, 0.0)), 1);
    EXPECT_EQ(loss(g, Contingency::single(plain, 0.0)), 0);
}

TEST(SolveContingency, IslandedRecordStillCarriesSlackSideFlows) {
    GridCase g = grtest::load_case("case118.m");
    int bridge = -1;
    SecurityRecord rec;
    for (int i = 0; i < static_cast<int>(g.branches.size()); ++i) {
        rec = solve_contingency(g, Contingency::single(i, 0.0));
        if (rec.islanded) {
            bridge = i;
            break;
        }
    }
    ASSERT_GE(bridge, 0);
    EXPECT_TRUE(rec.converged);
    EXPECT_TRUE(std::isnan(rec.flows[bridge]));
    int finite = 0;
    for (Eigen::Index b = 0; b < rec.flows.size(); ++b) finite += std::isfinite(rec.flows[b]) ? 1 : 0;
    EXPECT_GE(finite, 180);
}

TEST(SolveContingency, DivergenceIsCountedAsLoss) {
    GridCase g = grtest::load_case("case118.m");
    for (Bus& b : g.buses) {
        b.p_load *= 10.0;
        b.q_load *= 10.0;
    }
    set_uniform_limits(g, 1e9);
    SecurityRecord rec = solve_contingency(g, Contingency::single(0, 0.0));
    EXPECT_FALSE(rec.converged);
    apply_limits(rec, thermal_limits_of(g));
    EXPECT_EQ(rec.loss, 1);
    EXPECT_TRUE(std::isnan(rec.max_loading_ratio));
}

TEST(SolveContingency, ThermalThresholdSeparatesLossFromSafe) {
    GridCase g = parallel_pair_case();
    set_uniform_limits(g, 80.0);
    EXPECT_EQ(loss(g, Contingency::single(0, 0.0)), 1);  // survivor carries ~102 MVA
    set_uniform_limits(g, 150.0);
    EXPECT_EQ(loss(g, Contingency::single(0, 0.0)), 0);

    set_uniform_limits(g, 80.0);
    SecurityRecord rec = solve_contingency(g, Contingency::single(1, 0.0));
    apply_limits(rec, thermal_limits_of(g));
    EXPECT_GT(rec.max_loading_ratio, 1.0);
    EXPECT_LT(rec.max_loading_ratio, 1.6);
}

TEST(SolveContingency, DeEnergizedBranchReportsZeroFlow) {
    GridCase g;
    g.buses.push_back({1, BusKind::slack, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
    g.buses.push_back({2, BusKind::pq, 60.0, 10.0, 0.0, 0.0, 1.0, 1.0});
    g.buses.push_back({3, BusKind::pq, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
    g.buses.push_back({4, BusKind::pq, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
    g.branches.push_back({1, 2, 0.01, 0.1, 0.0, 1.0, 0.0, true});
    g.branches.push_back({2, 3, 0.01, 0.1, 0.0, 1.0, 0.0, true});
    g.branches.push_back({3, 4, 0.01, 0.1, 0.0, 1.0, 0.0, true});

    SecurityRecord rec = solve_contingency(g, Contingency::single(1, 0.0));
    EXPECT_TRUE(rec.converged);
    EXPECT_FALSE(rec.islanded);  // stranded buses carry neither load nor generation
    EXPECT_GT(rec.flows[0], 59.0);
    EXPECT_TRUE(std::isnan(rec.flows[1]));
    EXPECT_EQ(rec.flows[2], 0.0);
}

TEST(SolveContingency, RejectsInvalidTargets) {
    GridCase g = grtest::two_bus_case();
    EXPECT_THROW(solve_contingency(g, Contingency::single(5, 0.0)), ValidationError);
    g.branches[0].in_service = false;
    EXPECT_THROW(solve_contingency(g, Contingency::single(0, 0.0)), ValidationError);
}

TEST(FullEnumeration, WorkerCountDoesNotChangeResults) {
    GridCase g = grtest::load_case("case30.m");
    std::vector<Contingency> zs = enumerate_contingencies(static_cast<int>(g.branches.size()), true,
                                                          ProbabilityModel{0.01, 0.0001});
    ASSERT_EQ(zs.size(), 41u + 820u);

    EnumerationOptions one;
    one.with_limits = false;
    one.workers = 1;
    EnumerationOptions four = one;
    four.workers = 4;

    std::vector<SecurityRecord> a = full_enumeration(g, zs, one);
    std::vector<SecurityRecord> b = full_enumeration(g, zs, four);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].converged, b[k].converged);
        EXPECT_EQ(a[k].islanded, b[k].islanded);
        EXPECT_EQ(a[k].iterations, b[k].iterations);
        ASSERT_EQ(a[k].flows.size(), b[k].flows.size());
        for (Eigen::Index i = 0; i < a[k].flows.size(); ++i) {
            double x = a[k].flows[i], y = b[k].flows[i];
            if (std::isnan(x))
                EXPECT_TRUE(std::isnan(y));
            else
                EXPECT_EQ(x, y);  // bitwise, not approximate
        }
    }
}

TEST(FullEnumeration, LimitsTurnIslandingIntoLoss) {
    GridCase g = grtest::load_case("case30.m");
    set_uniform_limits(g, 1e9);
    std::vector<SecurityRecord> records = full_enumeration(g, singles_of(g));
    for (const SecurityRecord& rec : records) {
        ASSERT_TRUE(rec.converged);
        EXPECT_EQ(rec.loss, rec.islanded ? 1 : 0);
    }
}

TEST(FullEnumeration, Case118ContingencySpaceSize) {
    ProbabilityModel pm = scale_probabilities(186);
    EXPECT_EQ(enumerate_contingencies(186, true, pm).size(), 17391u);
    EXPECT_EQ(enumerate_contingencies(186, false, pm).size(), 186u);
}

TEST(ExportEnumerationCsv, ShapeAndEmptyCells) {
    GridCase g = parallel_pair_case();
    set_uniform_limits(g, 80.0);
    std::vector<SecurityRecord> records;
    records.push_back(solve_contingency(g, Contingency::single(0, 0.0)));
    apply_limits(records.back(), thermal_limits_of(g));
    records.push_back(solve_contingency(g, Contingency::double_outage_of(0, 1, 0.0)));
    apply_limits(records.back(), thermal_limits_of(g));

    grtest::TempDir tmp("security");
    auto path = tmp.path() / "enum.csv";
    export_enumeration_csv(records, path);
    auto rows = csv_parse(read_file(path));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"contingency_kind", "line_i", "line_j", "converged",
                                                 "loss", "max_loading_ratio"}));
    EXPECT_EQ(rows[1][0], "single");
    EXPECT_EQ(rows[1][1], "0");
    EXPECT_EQ(rows[1][2], "");
    EXPECT_EQ(rows[1][3], "1");
    EXPECT_EQ(rows[1][4], "1");
    EXPECT_NE(rows[1][5], "");

    // losing both lines disconnects the load: the slack-only remainder solves
    // trivially and the islanding alone drives the loss
    EXPECT_EQ(rows[2][0], "double");
    EXPECT_EQ(rows[2][3], "1");
    EXPECT_EQ(rows[2][4], "1");
    EXPECT_EQ(rows[2][5], "0");
}

TEST(ExportEnumerationCsv, DoubleOutageRatioCellMatchesRecord) {
    GridCase g = grtest::load_case("case30.m");
    set_uniform_limits(g, 1e9);
    SecurityRecord rec = solve_contingency(g, Contingency::double_outage_of(2, 17, 0.0));
    apply_limits(rec, thermal_limits_of(g));

    grtest::TempDir tmp("security");
    auto path = tmp.path() / "enum.csv";
    export_enumeration_csv({rec}, path);
    auto rows = csv_parse(read_file(path));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1][0], "double");
    EXPECT_EQ(rows[1][1], "2");
    EXPECT_EQ(rows[1][2], "17");
}
