#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gridrisk/util.hpp"

namespace gridrisk {

enum class BusKind { slack, pv, pq };

inline const char* to_string(BusKind k) {
    switch (k) {
        case BusKind::slack: return "slack";
        case BusKind::pv: return "pv";
        default: return "pq";
    }
}

struct Bus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double p_load = 0.0;   // MW
    double q_load = 0.0;   // MVAr
    double g_shunt = 0.0;  // MW consumed at V = 1 pu
    double b_shunt = 0.0;  // MVAr injected at V = 1 pu
    double v_set = 1.0;    // pu, regulated magnitude for slack/PV
    double base_kv = 1.0;

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;           // pu
    double x = 0.0;           // pu
    double b_charging = 0.0;  // pu, total line charging
    double tap_ratio = 1.0;   // off-nominal tap at the from end
    double thermal_limit = 0.0;  // MW-scale apparent flow limit; 0 until calibrated
    bool in_service = true;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double p_gen = 0.0;  // MW
    double q_min = 0.0;  // MVAr
    double q_max = 0.0;  // MVAr
    double v_set = 1.0;  // pu
    bool in_service = true;

    bool operator==(const Generator&) const = default;
};

struct GridCase {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    bool operator==(const GridCase&) const = default;

    std::unordered_map<int, int> bus_index() const {
        std::unordered_map<int, int> map;
        map.reserve(buses.size());
        for (std::size_t i = 0; i < buses.size(); ++i) map.emplace(buses[i].id, static_cast<int>(i));
        return map;
    }
};

enum class ContingencyKind { single, double_outage };

struct Contingency {
    ContingencyKind kind = ContingencyKind::single;
    int i = 0;
    int j = -1;  // second line for doubles, -1 for singles
    double probability = 0.0;

    static Contingency single(int line, double p = 0.0) {
        Contingency z;
        z.kind = ContingencyKind::single;
        z.i = line;
        z.j = -1;
        z.probability = p;
        return z;
    }

    // Canonicalized so i < j; a pair must name two distinct lines.
    static Contingency double_outage_of(int a, int b, double p = 0.0) {
        if (a == b) throw ValidationError("double contingency must name two distinct lines, got (" +
                                          std::to_string(a) + ", " + std::to_string(b) + ")");
        Contingency z;
        z.kind = ContingencyKind::double_outage;
        z.i = std::min(a, b);
        z.j = std::max(a, b);
        z.probability = p;
        return z;
    }

    std::vector<int> outed_lines() const {
        if (kind == ContingencyKind::single) return {i};
        return {i, j};
    }

    std::string label() const {
        if (kind == ContingencyKind::single) return "single(" + std::to_string(i) + ")";
        return "double(" + std::to_string(i) + "," + std::to_string(j) + ")";
    }

    bool operator==(const Contingency&) const = default;
};

// Enumeration order: all singles by line index, then all pairs lexicographically.
inline bool canonical_less(const Contingency& a, const Contingency& b) {
    if (a.kind != b.kind) return a.kind == ContingencyKind::single;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
}

inline void validate(const GridCase& grid) {
    if (!(grid.base_mva > 0.0)) throw SemanticError("baseMVA must be positive");
    if (grid.buses.empty()) throw SemanticError("case has no buses");

    std::unordered_map<int, int> seen;
    int slack_count = 0;
    for (const Bus& bus : grid.buses) {
        if (!seen.emplace(bus.id, 1).second)
            throw SemanticError("duplicate bus id " + std::to_string(bus.id));
        if (bus.kind == BusKind::slack) ++slack_count;
        if (!(bus.base_kv > 0.0))
            throw SemanticError("bus " + std::to_string(bus.id) + ": base_kv must be positive");
        if (bus.kind != BusKind::pq && !(bus.v_set > 0.0))
            throw SemanticError("bus " + std::to_string(bus.id) + ": v_set must be positive");
    }
    if (slack_count == 0) throw SemanticError("no slack bus");
    if (slack_count > 1) throw SemanticError("multiple slack buses");

    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        if (br.from_bus == br.to_bus)
            throw SemanticError("branch " + std::to_string(i) + ": from_bus equals to_bus");
        if (!seen.count(br.from_bus) || !seen.count(br.to_bus))
            throw SemanticError("branch " + std::to_string(i) + ": dangling endpoint (" +
                                std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) + ")");
        if (br.in_service && br.x == 0.0)
            throw SemanticError("branch " + std::to_string(i) + ": zero reactance on in-service branch");
        if (!(br.tap_ratio > 0.0))
            throw SemanticError("branch " + std::to_string(i) + ": tap ratio must be positive");
    }

    for (std::size_t g = 0; g < grid.generators.size(); ++g) {
        const Generator& gen = grid.generators[g];
        if (!seen.count(gen.bus))
            throw SemanticError("generator " + std::to_string(g) + ": unknown bus " + std::to_string(gen.bus));
        if (gen.q_min > gen.q_max)
            throw SemanticError("generator " + std::to_string(g) + ": q_min > q_max");
        if (!(gen.v_set > 0.0))
            throw SemanticError("generator " + std::to_string(g) + ": v_set must be positive");
    }
}

inline GridCase apply_contingency(const GridCase& grid, const Contingency& z) {
    const int n = static_cast<int>(grid.branches.size());
    for (int line : z.outed_lines()) {
        if (line < 0 || line >= n)
            throw ValidationError("contingency line index " + std::to_string(line) + " out of range [0, " +
                                  std::to_string(n) + ")");
        if (!grid.branches[line].in_service)
            throw ValidationError("contingency names already out-of-service branch " + std::to_string(line));
    }
    GridCase out = grid;
    for (int line : z.outed_lines()) out.branches[line].in_service = false;
    return out;
}

// Components induced by in-service branches; each component's bus ids ascend and
// components are ordered by their smallest bus id.
inline std::vector<std::vector<int>> connected_components(const GridCase& grid) {
    const auto index = grid.bus_index();
    const int n = static_cast<int>(grid.buses.size());
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    auto find = [&](int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    for (const Branch& br : grid.branches) {
        if (!br.in_service) continue;
        int a = find(index.at(br.from_bus));
        int b = find(index.at(br.to_bus));
        if (a != b) parent[a] = b;
    }
    std::unordered_map<int, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[find(i)].push_back(grid.buses[i].id);
    std::vector<std::vector<int>> components;
    components.reserve(groups.size());
    for (auto& [root, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        components.push_back(std::move(ids));
    }
    std::sort(components.begin(), components.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return components;
}

inline nlohmann::ordered_json grid_to_json(const GridCase& grid) {
    nlohmann::ordered_json j;
    j["base_mva"] = grid.base_mva;
    auto& buses = j["buses"] = nlohmann::ordered_json::array();
    for (const Bus& bus : grid.buses) {
        buses.push_back({{"id", bus.id},
                         {"kind", to_string(bus.kind)},
                         {"p_load", bus.p_load},
                         {"q_load", bus.q_load},
                         {"g_shunt", bus.g_shunt},
                         {"b_shunt", bus.b_shunt},
                         {"v_set", bus.v_set},
                         {"base_kv", bus.base_kv}});
    }
    auto& branches = j["branches"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const Branch& br = grid.branches[i];
        branches.push_back({{"index", i},
                            {"from_bus", br.from_bus},
                            {"to_bus", br.to_bus},
                            {"r", br.r},
                            {"x", br.x},
                            {"b_charging", br.b_charging},
                            {"tap_ratio", br.tap_ratio},
                            {"thermal_limit", br.thermal_limit},
                            {"in_service", br.in_service}});
    }
    auto& gens = j["generators"] = nlohmann::ordered_json::array();
    for (const Generator& gen : grid.generators) {
        gens.push_back({{"bus", gen.bus},
                        {"p_gen", gen.p_gen},
                        {"q_limits", {gen.q_min, gen.q_max}},
                        {"v_set", gen.v_set},
                        {"in_service", gen.in_service}});
    }
    return j;
}

inline std::string grid_serialize(const GridCase& grid) { return grid_to_json(grid).dump() + "\n"; }

inline GridCase grid_from_json(const nlohmann::json& j) {
    GridCase grid;
    try {
        grid.base_mva = j.at("base_mva").get<double>();
        for (const auto& jb : j.at("buses")) {
            Bus bus;
            bus.id = jb.at("id").get<int>();
            std::string kind = jb.at("kind").get<std::string>();
            if (kind == "slack")
                bus.kind = BusKind::slack;
            else if (kind == "pv")
                bus.kind = BusKind::pv;
            else if (kind == "pq")
                bus.kind = BusKind::pq;
            else
                throw SemanticError("unknown bus kind \"" + kind + "\"");
            bus.p_load = jb.at("p_load").get<double>();
            bus.q_load = jb.at("q_load").get<double>();
            bus.g_shunt = jb.value("g_shunt", 0.0);
            bus.b_shunt = jb.value("b_shunt", 0.0);
            bus.v_set = jb.at("v_set").get<double>();
            bus.base_kv = jb.at("base_kv").get<double>();
            grid.buses.push_back(bus);
        }
        int expected = 0;
        for (const auto& jb : j.at("branches")) {
            if (jb.at("index").get<int>() != expected)
                throw SemanticError("branch indices must be contiguous from 0");
            ++expected;
            Branch br;
            br.from_bus = jb.at("from_bus").get<int>();
            br.to_bus = jb.at("to_bus").get<int>();
            br.r = jb.at("r").get<double>();
            br.x = jb.at("x").get<double>();
            br.b_charging = jb.at("b_charging").get<double>();
            br.tap_ratio = jb.value("tap_ratio", 1.0);
            br.thermal_limit = jb.value("thermal_limit", 0.0);
            br.in_service = jb.at("in_service").get<bool>();
            grid.branches.push_back(br);
        }
        for (const auto& jg : j.at("generators")) {
            Generator gen;
            gen.bus = jg.at("bus").get<int>();
            gen.p_gen = jg.at("p_gen").get<double>();
            const auto& q = jg.at("q_limits");
            gen.q_min = q.at(0).get<double>();
            gen.q_max = q.at(1).get<double>();
            gen.v_set = jg.at("v_set").get<double>();
            gen.in_service = jg.at("in_service").get<bool>();
            grid.generators.push_back(gen);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SemanticError(std::string("grid json: ") + e.what());
    }
    validate(grid);
    return grid;
}

inline GridCase grid_parse(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("invalid json: ") + e.what());
    }
    return grid_from_json(j);
}

}  // namespace gridrisk
