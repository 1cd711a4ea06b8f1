#include <gtest/gtest.h>

#include "gridrisk/matpower.hpp"
#include "test_util.hpp"

using namespace gridrisk;

namespace {

const char* kMinimalCase = R"(function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.0	0	100	1	1.1	0.9;
	2	1	80	10	0	0	1	1.0	0	100	1	1.1	0.9;
];
mpc.gen = [];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
];
)";

std::string replace_first(std::string text, const std::string& from, const std::string& to) {
    auto pos = text.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    return text.replace(pos, from.size(), to);
}

}  // namespace

TEST(Matpower, Case118Shape) {
    GridCase grid = grtest::load_case("case118.m");
    EXPECT_EQ(grid.buses.size(), 118u);
    EXPECT_EQ(grid.branches.size(), 186u);
    EXPECT_EQ(grid.generators.size(), 54u);
    EXPECT_DOUBLE_EQ(grid.base_mva, 100.0);

    int slack = 0;
    int slack_id = -1;
    for (const Bus& bus : grid.buses)
        if (bus.kind == BusKind::slack) {
            ++slack;
            slack_id = bus.id;
        }
    EXPECT_EQ(slack, 1);
    EXPECT_EQ(slack_id, 69);

    for (const Branch& br : grid.branches) EXPECT_TRUE(br.in_service);

    int taps = 0, shunts = 0;
    for (const Branch& br : grid.branches)
        if (br.tap_ratio != 1.0) ++taps;
    for (const Bus& bus : grid.buses)
        if (bus.b_shunt != 0.0) ++shunts;
    EXPECT_EQ(taps, 9);
    EXPECT_EQ(shunts, 14);

    EXPECT_EQ(grid.branches[0].from_bus, 1);
    EXPECT_EQ(grid.branches[0].to_bus, 2);
    EXPECT_DOUBLE_EQ(grid.branches[0].r, 0.0303);
    EXPECT_DOUBLE_EQ(grid.branches[0].x, 0.0999);
    EXPECT_DOUBLE_EQ(grid.branches[0].b_charging, 0.0254);
    // ratings column ignored: limits come from calibration only
    EXPECT_DOUBLE_EQ(grid.branches[0].thermal_limit, 0.0);
}

TEST(Matpower, MinimalTwoBusCase) {
    GridCase grid = parse_matpower(kMinimalCase);
    EXPECT_EQ(grid.buses.size(), 2u);
    EXPECT_EQ(grid.branches.size(), 1u);
    EXPECT_TRUE(grid.generators.empty());
    EXPECT_EQ(grid.buses[0].kind, BusKind::slack);
    EXPECT_EQ(grid.buses[1].kind, BusKind::pq);
    EXPECT_DOUBLE_EQ(grid.buses[1].p_load, 80.0);
}

TEST(Matpower, TwoSlackIsSemanticError) {
    std::string text = replace_first(kMinimalCase, "\t2\t1\t80", "\t2\t3\t80");
    try {
        parse_matpower(text);
        FAIL() << "expected SemanticError";
    } catch (const SemanticError& e) {
        EXPECT_NE(std::string(e.what()).find("multiple slack buses"), std::string::npos);
    } catch (const ParseError&) {
        FAIL() << "semantic problems must not be reported as syntax errors";
    }
}

TEST(Matpower, SyntaxErrorCarriesLineNumber) {
    std::string text = replace_first(kMinimalCase, "0.01", "0.0x1");
    try {
        parse_matpower(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 10);  // the branch row
        EXPECT_NE(std::string(e.what()).find("0.0x1"), std::string::npos);
    }
}

TEST(Matpower, ShortRowIsSyntaxError) {
    std::string text = replace_first(kMinimalCase, "\t1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;", "\t1	2	0.01;");
    try {
        parse_matpower(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 10);
    }
}

TEST(Matpower, MissingSectionIsSyntaxError) {
    std::string text(kMinimalCase);
    auto pos = text.find("mpc.branch");
    text = text.substr(0, pos);
    EXPECT_THROW(parse_matpower(text), ParseError);
}

TEST(Matpower, UnclosedMatrixReported) {
    std::string text = replace_first(kMinimalCase, "\t1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;\n];\n", "\t1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;\n");
    try {
        parse_matpower(text);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 9);  // where the matrix was opened
    }
}

TEST(Matpower, ZeroReactanceIsSemanticError) {
    std::string text = replace_first(kMinimalCase, "0.01	0.1", "0.01	0");
    EXPECT_THROW(parse_matpower(text), SemanticError);
}

TEST(Matpower, DanglingEndpointIsSemanticError) {
    std::string text = replace_first(kMinimalCase, "\t1	2	0.01", "\t1	7	0.01");
    EXPECT_THROW(parse_matpower(text), SemanticError);
}

TEST(Matpower, PhaseShiftRejected) {
    std::string text = replace_first(kMinimalCase, "0	0	0	0	1	-360", "0	0	0	30	1	-360");
    EXPECT_THROW(parse_matpower(text), SemanticError);
}

TEST(Matpower, OutOfServiceRowRetained) {
    std::string text = replace_first(kMinimalCase,
                                     "\t1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;",
                                     "\t1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;\n\t1	2	0.02	0.2	0	0	0	0	0	0	0	-360	360;");
    GridCase grid = parse_matpower(text);
    ASSERT_EQ(grid.branches.size(), 2u);
    EXPECT_TRUE(grid.branches[0].in_service);
    EXPECT_FALSE(grid.branches[1].in_service);
}

TEST(Matpower, UnsupportedVersionRejected) {
    std::string text = replace_first(kMinimalCase, "'2'", "'1'");
    EXPECT_THROW(parse_matpower(text), ParseError);
}

TEST(Matpower, GencostIgnored) {
    std::string text(kMinimalCase);
    text += "mpc.gencost = [\n\t2	0	0	3	0.01	40	0;\n];\n";
    EXPECT_NO_THROW(parse_matpower(text));
}

TEST(Matpower, ZeroBaseKvMapped) {
    GridCase grid = grtest::load_case("case14.m");
    EXPECT_EQ(grid.buses.size(), 14u);
    EXPECT_EQ(grid.branches.size(), 20u);
    EXPECT_EQ(grid.generators.size(), 5u);
    for (const Bus& bus : grid.buses) EXPECT_DOUBLE_EQ(bus.base_kv, 1.0);
}

TEST(Matpower, Case30Shape) {
    GridCase grid = grtest::load_case("case30.m");
    EXPECT_EQ(grid.buses.size(), 30u);
    EXPECT_EQ(grid.branches.size(), 41u);
    EXPECT_EQ(grid.generators.size(), 6u);
}

TEST(Matpower, PvBusTakesGeneratorSetpoint) {
    GridCase grid = grtest::load_case("case118.m");
    auto index = grid.bus_index();
    for (const Generator& gen : grid.generators) {
        if (!gen.in_service) continue;
        const Bus& bus = grid.buses[index.at(gen.bus)];
        if (bus.kind == BusKind::pv) {
            EXPECT_DOUBLE_EQ(bus.v_set, gen.v_set) << "bus " << bus.id;
            break;
        }
    }
}
