#include <gtest/gtest.h>

#include <cmath>

#include "gridrisk/powerflow.hpp"
#include "oracle_gauss_seidel.hpp"
#include "test_util.hpp"

using namespace gridrisk;

namespace {

// Ring of equal reactances with 90 MW injected at bus 1 and drawn at bus 3:
// the direct line takes 60 MW, the two-hop path 30 MW.
GridCase three_bus_ring() {
    GridCase g;
    g.base_mva = 100.0;
    for (int id = 1; id <= 3; ++id) {
        Bus bus;
        bus.id = id;
        bus.kind = id == 1 ? BusKind::slack : BusKind::pq;
        bus.base_kv = 100.0;
        g.buses.push_back(bus);
    }
    g.buses[2].p_load = 90.0;
    Generator gen;
    gen.bus = 1;
    gen.p_gen = 90.0;
    g.generators.push_back(gen);
    for (auto [f, t] : {std::pair{1, 2}, {2, 3}, {1, 3}}) {
        Branch br;
        br.from_bus = f;
        br.to_bus = t;
        br.x = 0.1;
        g.branches.push_back(br);
    }
    return g;
}

double total_load(const GridCase& g) {
    double s = 0.0;
    for (const auto& b : g.buses) s += b.p_load;
    return s;
}

}  // namespace

TEST(SolveDc, TwoBusSinglePath) {
    GridCase g = grtest::two_bus_case(100.0, 0.0, 0.1);
    PowerFlowSolution sol = solve_dc(g);
    ASSERT_TRUE(sol.converged);
    EXPECT_NEAR(sol.flows[0], 100.0, 1e-9);
}

TEST(SolveDc, RingSplitsSixtyThirty) {
    PowerFlowSolution sol = solve_dc(three_bus_ring());
    ASSERT_TRUE(sol.converged);
    EXPECT_NEAR(sol.flows[0], 30.0, 1e-9);  // 1-2
    EXPECT_NEAR(sol.flows[1], 30.0, 1e-9);  // 2-3
    EXPECT_NEAR(sol.flows[2], 60.0, 1e-9);  // 1-3
}

TEST(SolveDc, ZeroLoadZeroFlows) {
    GridCase g = three_bus_ring();
    g.buses[2].p_load = 0.0;
    g.generators.clear();
    PowerFlowSolution sol = solve_dc(g);
    for (int b = 0; b < 3; ++b) EXPECT_NEAR(sol.flows[b], 0.0, 1e-12);
}

TEST(SolveDc, DisconnectedReportsComponents) {
    GridCase g = grtest::two_bus_case();
    g.branches[0].in_service = false;
    try {
        solve_dc(g);
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_NE(std::string(e.what()).find("2 components"), std::string::npos);
    }
}

TEST(SolveAc, ZeroInjectionConvergesFast) {
    GridCase g = grtest::two_bus_case(0.0, 0.0, 0.1, 0.01, 0.04);
    PowerFlowSolution sol = solve_ac(g);
    ASSERT_TRUE(sol.converged);
    EXPECT_LE(sol.iterations, 2);
    // only line charging moves: 0.04 pu of shunt susceptance puts about 4 MVA
    // on the sending end, nothing more
    EXPECT_LT(sol.flows[0], 5.0);
    EXPECT_LE(sol.max_mismatch, 1e-8);
}

TEST(SolveAc, Case118ConvergesFlatStart) {
    GridCase g = grtest::load_case("case118.m");
    PowerFlowSolution sol = solve_ac(g);
    ASSERT_TRUE(sol.converged);
    EXPECT_LE(sol.iterations, 20);
    EXPECT_GE(sol.iterations, 2);
    EXPECT_LE(sol.max_mismatch, 1e-8);
    for (int i = 0; i < sol.v_mag.size(); ++i) {
        EXPECT_GT(sol.v_mag[i], 0.90);
        EXPECT_LT(sol.v_mag[i], 1.10);
    }
    double max_flow = sol.flows.maxCoeff();
    EXPECT_GT(max_flow, 300.0);
    EXPECT_LT(max_flow, 600.0);
}

TEST(SolveAc, ConservationOnCase118) {
    GridCase g = grtest::load_case("case118.m");
    PowerFlowSolution sol = solve_ac(g);
    ASSERT_TRUE(sol.converged);

    const auto index = g.bus_index();
    // branch series losses from the solved voltages
    double losses = 0.0;
    for (const auto& br : g.branches) {
        if (!br.in_service) continue;
        auto y = pf_detail::branch_admittance(br);
        int f = index.at(br.from_bus);
        int t = index.at(br.to_bus);
        std::complex<double> vf = std::polar(sol.v_mag[f], sol.v_ang[f]);
        std::complex<double> vt = std::polar(sol.v_mag[t], sol.v_ang[t]);
        std::complex<double> sf = vf * std::conj(y.yff * vf + y.yft * vt);
        std::complex<double> st = vt * std::conj(y.ytf * vf + y.ytt * vt);
        losses += (sf + st).real();
    }
    EXPECT_GE(losses, 0.0);

    double shunt_draw = 0.0;
    for (std::size_t i = 0; i < g.buses.size(); ++i)
        shunt_draw += g.buses[i].g_shunt / g.base_mva * sol.v_mag[i] * sol.v_mag[i];

    // injections balance losses: slack generation closes the gap between total
    // load and the rest of the fleet
    double fixed_gen = 0.0;
    int slack = -1;
    for (std::size_t i = 0; i < g.buses.size(); ++i)
        if (g.buses[i].kind == BusKind::slack) slack = static_cast<int>(i);
    double slack_p = 0.0;
    {
        auto rows = pf_detail::build_admittance_rows(g, index, std::vector<char>(g.buses.size(), 1),
                                                     pf_detail::in_service_mask(g));
        double p = 0.0;
        for (const auto& [k, gg, bb] : rows[slack]) {
            double th = sol.v_ang[slack] - sol.v_ang[k];
            p += sol.v_mag[k] * (gg * std::cos(th) + bb * std::sin(th));
        }
        slack_p = sol.v_mag[slack] * p * g.base_mva + g.buses[slack].p_load;
    }
    for (const auto& gen : g.generators) {
        if (!gen.in_service) continue;
        if (index.at(gen.bus) == slack) continue;
        fixed_gen += gen.p_gen;
    }
    double total_gen = fixed_gen + slack_p;
    EXPECT_NEAR(total_gen, total_load(g) + (losses + shunt_draw) * g.base_mva, 1e-4);
}

TEST(SolveAc, MatchesGaussSeidelOnCase118) {
    GridCase g = grtest::load_case("case118.m");
    PowerFlowSolution newton = solve_ac(g);
    ASSERT_TRUE(newton.converged);

    grtest::GaussSeidelResult gs = grtest::gauss_seidel_solve(g);
    ASSERT_TRUE(gs.converged) << "oracle did not settle after " << gs.sweeps << " sweeps";
    ASSERT_LT(gs.max_power_mismatch, 1e-6) << "oracle self-check";

    double worst = 0.0;
    for (std::size_t b = 0; b < g.branches.size(); ++b)
        worst = std::max(worst, std::abs(newton.flows[b] - gs.flows_mw[b]) / g.base_mva);
    EXPECT_LT(worst, 1e-4) << "per-unit flow disagreement";
}

TEST(SolveAc, TracksDcAtLightLoading) {
    GridCase g = three_bus_ring();
    for (auto& br : g.branches) br.r = br.x / 200.0;
    g.buses[2].p_load = 9.0;  // ~3 MW per line on a 100 MVA base
    g.generators[0].p_gen = 9.0;
    PowerFlowSolution ac = solve_ac(g);
    PowerFlowSolution dc = solve_dc(g);
    ASSERT_TRUE(ac.converged);
    for (int b = 0; b < 3; ++b) {
        double rel = std::abs(ac.flows[b] - dc.flows[b]) / dc.flows[b];
        EXPECT_LT(rel, 0.05) << "branch " << b;
    }
}

TEST(SolveAc, InfeasibleLoadDoesNotConverge) {
    // ten times the nominal load with unchanged generation is far past any
    // feasible transfer for this case
    constexpr double kScale = 10.0;
    GridCase g = grtest::load_case("case118.m");
    for (auto& bus : g.buses) {
        bus.p_load *= kScale;
        bus.q_load *= kScale;
    }
    PowerFlowSolution sol = solve_ac(g);
    EXPECT_FALSE(sol.converged);
    EXPECT_TRUE(std::isnan(sol.flows[0]));
}

TEST(SolveAc, OptionsValidated) {
    GridCase g = grtest::two_bus_case();
    SolverOptions bad_tol;
    bad_tol.tolerance = 0.0;
    EXPECT_THROW(solve_ac(g, bad_tol), ValidationError);
    SolverOptions bad_iter;
    bad_iter.max_iterations = 0;
    EXPECT_THROW(solve_ac(g, bad_iter), ValidationError);
}

TEST(SolveAc, DisconnectedRejected) {
    GridCase g = grtest::two_bus_case();
    g.branches[0].in_service = false;
    EXPECT_THROW(solve_ac(g), SolverError);
}

TEST(SolveAc, DeterministicAcrossRuns) {
    GridCase g = grtest::load_case("case118.m");
    PowerFlowSolution a = solve_ac(g);
    PowerFlowSolution b = solve_ac(g);
    ASSERT_TRUE(a.converged);
    EXPECT_EQ(a.iterations, b.iterations);
    for (int i = 0; i < a.flows.size(); ++i) EXPECT_EQ(a.flows[i], b.flows[i]);
}
