#pragma once

#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridrisk/grid.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

// MATPOWER case format, version 2 subset: numeric mpc.bus / mpc.gen / mpc.branch
// matrices, mpc.baseMVA, '%' comments. gencost and any other assignments are skipped.
namespace matpower_detail {

struct Row {
    int line = 0;
    std::vector<double> values;
};

inline std::string_view strip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string_view strip_comment(std::string_view s) {
    auto pos = s.find('%');
    return pos == std::string_view::npos ? s : s.substr(0, pos);
}

inline double parse_number(std::string_view tok, int line) {
    double value = 0.0;
    const char* begin = tok.data();
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw ParseError(line, "bad numeric token '" + std::string(tok) + "'");
    return value;
}

inline int as_int(double v, int line, const char* what) {
    double r = std::round(v);
    if (std::abs(v - r) > 1e-9)
        throw ParseError(line, std::string(what) + " must be an integer, got " + std::to_string(v));
    return static_cast<int>(r);
}

// Numbers from one matrix row; trailing ';' and ']' handled by the caller.
inline std::vector<double> parse_row(std::string_view s, int line) {
    std::vector<double> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
        if (i >= s.size()) break;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != ',') ++j;
        out.push_back(parse_number(s.substr(i, j - i), line));
        i = j;
    }
    return out;
}

}  // namespace matpower_detail

inline GridCase parse_matpower(std::string_view text) {
    using namespace matpower_detail;

    std::map<std::string, std::vector<Row>> matrices;
    std::optional<double> base_mva;

    std::vector<std::string_view> lines;
    {
        std::size_t start = 0;
        while (start <= text.size()) {
            std::size_t nl = text.find('\n', start);
            if (nl == std::string_view::npos) {
                lines.push_back(text.substr(start));
                break;
            }
            lines.push_back(text.substr(start, nl - start));
            start = nl + 1;
        }
    }

    std::string current_matrix;  // empty when not inside [ ... ]
    int matrix_open_line = 0;
    bool keep_current = false;

    for (std::size_t li = 0; li < lines.size(); ++li) {
        const int line_no = static_cast<int>(li) + 1;
        std::string_view line = strip(strip_comment(lines[li]));
        if (line.empty()) continue;

        if (!current_matrix.empty()) {
            bool closes = false;
            auto close = line.find(']');
            if (close != std::string_view::npos) {
                closes = true;
                line = strip(line.substr(0, close));
            }
            while (!line.empty() && line.back() == ';') line = strip(line.substr(0, line.size() - 1));
            if (!line.empty() && keep_current)
                matrices[current_matrix].push_back({line_no, parse_row(line, line_no)});
            if (closes) current_matrix.clear();
            continue;
        }

        if (line.starts_with("function")) continue;

        if (line.starts_with("mpc.")) {
            auto eq = line.find('=');
            if (eq == std::string_view::npos) throw ParseError(line_no, "expected '=' in assignment");
            std::string name(strip(line.substr(4, eq - 4)));
            std::string_view rhs = strip(line.substr(eq + 1));

            if (rhs.starts_with("[")) {
                current_matrix = name;
                matrix_open_line = line_no;
                keep_current = (name == "bus" || name == "gen" || name == "branch");
                if (keep_current) matrices[name];  // present even if the matrix body is empty
                std::string_view rest = strip(rhs.substr(1));
                auto close = rest.find(']');
                if (close != std::string_view::npos) {
                    rest = strip(rest.substr(0, close));
                    current_matrix.clear();
                }
                while (!rest.empty() && rest.back() == ';') rest = strip(rest.substr(0, rest.size() - 1));
                if (!rest.empty() && keep_current)
                    matrices[name].push_back({line_no, parse_row(rest, line_no)});
                continue;
            }

            while (!rhs.empty() && rhs.back() == ';') rhs = strip(rhs.substr(0, rhs.size() - 1));
            if (name == "baseMVA") {
                base_mva = parse_number(rhs, line_no);
            } else if (name == "version") {
                if (rhs != "'2'" && rhs != "\"2\"" && rhs != "2")
                    throw ParseError(line_no, "unsupported case format version " + std::string(rhs));
            }
            // other scalar assignments are ignored
            continue;
        }

        throw ParseError(line_no, "unrecognized statement '" + std::string(line.substr(0, 40)) + "'");
    }

    if (!current_matrix.empty())
        throw ParseError(matrix_open_line, "matrix mpc." + current_matrix + " is never closed with ']'");

    const int eof_line = static_cast<int>(lines.size());
    if (!base_mva) throw ParseError(eof_line, "missing mpc.baseMVA");
    for (const char* required : {"bus", "gen", "branch"})
        if (!matrices.count(required)) throw ParseError(eof_line, std::string("missing mpc.") + required);

    GridCase grid;
    grid.base_mva = *base_mva;

    for (const Row& row : matrices["bus"]) {
        if (row.values.size() < 13)
            throw ParseError(row.line, "bus row needs >= 13 columns, got " + std::to_string(row.values.size()));
        Bus bus;
        bus.id = as_int(row.values[0], row.line, "bus id");
        int type = as_int(row.values[1], row.line, "bus type");
        switch (type) {
            case 3: bus.kind = BusKind::slack; break;
            case 2: bus.kind = BusKind::pv; break;
            case 1: bus.kind = BusKind::pq; break;
            default: throw SemanticError("bus " + std::to_string(bus.id) + ": unsupported bus type " + std::to_string(type));
        }
        bus.p_load = row.values[2];
        bus.q_load = row.values[3];
        bus.g_shunt = row.values[4];
        bus.b_shunt = row.values[5];
        double vm = row.values[7];
        bus.v_set = vm > 0.0 ? vm : 1.0;  // refined below from the regulating generator
        double base_kv = row.values[9];
        bus.base_kv = base_kv > 0.0 ? base_kv : 1.0;  // historic cases carry 0 for "unknown"
        grid.buses.push_back(bus);
    }

    for (const Row& row : matrices["gen"]) {
        if (row.values.size() < 10)
            throw ParseError(row.line, "gen row needs >= 10 columns, got " + std::to_string(row.values.size()));
        Generator gen;
        gen.bus = as_int(row.values[0], row.line, "gen bus");
        gen.p_gen = row.values[1];
        gen.q_max = row.values[3];
        gen.q_min = row.values[4];
        gen.v_set = row.values[5] > 0.0 ? row.values[5] : 1.0;
        gen.in_service = as_int(row.values[7], row.line, "gen status") > 0;
        grid.generators.push_back(gen);
    }

    for (const Row& row : matrices["branch"]) {
        if (row.values.size() < 11)
            throw ParseError(row.line, "branch row needs >= 11 columns, got " + std::to_string(row.values.size()));
        Branch br;
        br.from_bus = as_int(row.values[0], row.line, "branch from bus");
        br.to_bus = as_int(row.values[1], row.line, "branch to bus");
        br.r = row.values[2];
        br.x = row.values[3];
        br.b_charging = row.values[4];
        // rating columns 5..7 are intentionally ignored; limits come from calibration
        br.tap_ratio = row.values[8] != 0.0 ? row.values[8] : 1.0;
        if (row.values[9] != 0.0)
            throw SemanticError("branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) +
                                ": phase-shift angle is not supported");
        br.in_service = as_int(row.values[10], row.line, "branch status") > 0;
        br.thermal_limit = 0.0;
        grid.branches.push_back(br);
    }

    // PV and slack buses take their setpoint from the first in-service machine there.
    auto index = grid.bus_index();
    std::vector<char> vset_assigned(grid.buses.size(), 0);
    for (const Generator& gen : grid.generators) {
        if (!gen.in_service) continue;
        auto it = index.find(gen.bus);
        if (it == index.end()) continue;  // caught by validate below
        Bus& bus = grid.buses[it->second];
        if (bus.kind != BusKind::pq && !vset_assigned[it->second]) {
            bus.v_set = gen.v_set;
            vset_assigned[it->second] = 1;
        }
    }

    validate(grid);
    return grid;
}

}  // namespace gridrisk
