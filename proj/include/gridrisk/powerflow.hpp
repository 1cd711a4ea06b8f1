#pragma once

#include <atomic>
#include <cmath>
#include <complex>
#include <filesystem>
#include <limits>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "gridrisk/csv.hpp"
#include "gridrisk/grid.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

struct SolverOptions {
    double tolerance = 1e-8;  // pu mismatch, infinity norm
    int max_iterations = 20;
    bool flat_start = true;  // the solver always flat-starts; kept so callers can state intent

    void check() const {
        if (!(tolerance > 0.0)) throw ValidationError("solver tolerance must be positive");
        if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
    }
};

struct PowerFlowSolution {
    Eigen::VectorXd v_mag;  // pu, per bus in case order; 0 for de-energized buses
    Eigen::VectorXd v_ang;  // radians
    // Apparent-power magnitude at the more-loaded end, MW scale. NaN for
    // out-of-service branches, 0 for in-service branches in de-energized islands.
    Eigen::VectorXd flows;
    bool converged = false;
    int iterations = 0;
    double max_mismatch = std::numeric_limits<double>::infinity();
};

namespace pf_detail {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct BranchY {
    std::complex<double> yff, yft, ytf, ytt;
};

inline BranchY branch_admittance(const Branch& br) {
    std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    std::complex<double> bc(0.0, br.b_charging / 2.0);
    double tau = br.tap_ratio;
    BranchY y;
    y.yff = (ys + bc) / (tau * tau);
    y.yft = -ys / tau;
    y.ytf = -ys / tau;
    y.ytt = ys + bc;
    return y;
}

// Union-find over buses joined by active branches.
inline std::vector<int> components_by_index(const GridCase& grid,
                                            const std::unordered_map<int, int>& index,
                                            const std::vector<char>& branch_active) {
    const int nb = static_cast<int>(grid.buses.size());
    std::vector<int> parent(nb);
    for (int i = 0; i < nb; ++i) parent[i] = i;
    auto find = [&](int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    for (std::size_t b = 0; b < grid.branches.size(); ++b) {
        if (!branch_active[b]) continue;
        const Branch& br = grid.branches[b];
        int pa = find(index.at(br.from_bus));
        int pb = find(index.at(br.to_bus));
        if (pa != pb) parent[pa] = pb;
    }
    std::vector<int> root(nb);
    for (int i = 0; i < nb; ++i) root[i] = find(i);
    return root;
}

inline std::vector<char> in_service_mask(const GridCase& grid) {
    std::vector<char> mask(grid.branches.size());
    for (std::size_t b = 0; b < grid.branches.size(); ++b) mask[b] = grid.branches[b].in_service;
    return mask;
}

struct BusModel {
    // effective kind after accounting for generator status: slack bus stays slack,
    // a PV bus without any in-service machine is solved as PQ
    std::vector<BusKind> kind;
    Eigen::VectorXd p_spec;  // pu
    Eigen::VectorXd q_spec;  // pu
    int slack = -1;          // bus index
};

inline BusModel build_bus_model(const GridCase& grid, const std::unordered_map<int, int>& index,
                                const std::vector<char>& bus_active) {
    const int nb = static_cast<int>(grid.buses.size());
    BusModel m;
    m.kind.assign(nb, BusKind::pq);
    m.p_spec = Eigen::VectorXd::Zero(nb);
    m.q_spec = Eigen::VectorXd::Zero(nb);

    std::vector<char> has_gen(nb, 0);
    for (const Generator& gen : grid.generators) {
        if (!gen.in_service) continue;
        int i = index.at(gen.bus);
        has_gen[i] = 1;
        m.p_spec[i] += gen.p_gen / grid.base_mva;
    }
    for (int i = 0; i < nb; ++i) {
        if (!bus_active[i]) continue;
        const Bus& bus = grid.buses[i];
        m.p_spec[i] -= bus.p_load / grid.base_mva;
        m.q_spec[i] -= bus.q_load / grid.base_mva;
        if (bus.kind == BusKind::slack) {
            m.kind[i] = BusKind::slack;
            if (m.slack >= 0) throw SolverError("more than one active slack bus");
            m.slack = i;
        } else if (bus.kind == BusKind::pv && has_gen[i]) {
            m.kind[i] = BusKind::pv;
        } else {
            m.kind[i] = BusKind::pq;
        }
    }
    if (m.slack < 0) throw SolverError("no active slack bus in the solved component");
    return m;
}

// Sorted-and-merged admittance rows (diagonal included) for active buses.
inline std::vector<std::vector<std::tuple<int, double, double>>> build_admittance_rows(
    const GridCase& grid, const std::unordered_map<int, int>& index, const std::vector<char>& bus_active,
    const std::vector<char>& branch_active) {
    const int nb = static_cast<int>(grid.buses.size());
    std::vector<std::vector<std::tuple<int, double, double>>> rows(nb);
    auto add = [&](int i, int k, std::complex<double> y) {
        rows[i].emplace_back(k, y.real(), y.imag());
    };
    for (int i = 0; i < nb; ++i) {
        if (!bus_active[i]) continue;
        const Bus& bus = grid.buses[i];
        add(i, i, std::complex<double>(bus.g_shunt, bus.b_shunt) / grid.base_mva);
    }
    for (std::size_t b = 0; b < grid.branches.size(); ++b) {
        if (!branch_active[b]) continue;
        const Branch& br = grid.branches[b];
        int f = index.at(br.from_bus);
        int t = index.at(br.to_bus);
        if (!bus_active[f] || !bus_active[t]) continue;
        BranchY y = branch_admittance(br);
        add(f, f, y.yff);
        add(f, t, y.yft);
        add(t, f, y.ytf);
        add(t, t, y.ytt);
    }
    for (auto& row : rows) {
        std::sort(row.begin(), row.end(),
                  [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
        std::size_t w = 0;
        for (std::size_t r = 0; r < row.size(); ++r) {
            if (w > 0 && std::get<0>(row[w - 1]) == std::get<0>(row[r])) {
                std::get<1>(row[w - 1]) += std::get<1>(row[r]);
                std::get<2>(row[w - 1]) += std::get<2>(row[r]);
            } else {
                row[w++] = row[r];
            }
        }
        row.resize(w);
    }
    return rows;
}

inline void compute_flows(const GridCase& grid, const std::unordered_map<int, int>& index,
                          const std::vector<char>& bus_active, const std::vector<char>& branch_active,
                          const Eigen::VectorXd& vm, const Eigen::VectorXd& va, Eigen::VectorXd& flows) {
    const int nbr = static_cast<int>(grid.branches.size());
    flows.resize(nbr);
    for (int b = 0; b < nbr; ++b) {
        const Branch& br = grid.branches[b];
        if (!branch_active[b] || !br.in_service) {
            // out of the solved network, whether by case data or by outage
            flows[b] = kNan;
            continue;
        }
        int f = index.at(br.from_bus);
        int t = index.at(br.to_bus);
        if (!bus_active[f] || !bus_active[t]) {
            flows[b] = 0.0;  // de-energized island: no sources, no flow
            continue;
        }
        BranchY y = branch_admittance(br);
        std::complex<double> vf = std::polar(vm[f], va[f]);
        std::complex<double> vt = std::polar(vm[t], va[t]);
        std::complex<double> sf = vf * std::conj(y.yff * vf + y.yft * vt);
        std::complex<double> st = vt * std::conj(y.ytf * vf + y.ytt * vt);
        flows[b] = std::max(std::abs(sf), std::abs(st)) * grid.base_mva;
    }
}

// Full Newton-Raphson on the polar mismatch equations, restricted to active buses
// and branches. Throws SolverError for structural problems (no slack, singular
// Jacobian); plain non-convergence comes back as converged=false.
inline PowerFlowSolution solve_ac_masked(const GridCase& grid, const SolverOptions& opts,
                                         const std::vector<char>& bus_active,
                                         const std::vector<char>& branch_active) {
    opts.check();
    const int nb = static_cast<int>(grid.buses.size());
    const auto index = grid.bus_index();
    BusModel model = build_bus_model(grid, index, bus_active);
    auto rows = build_admittance_rows(grid, index, bus_active, branch_active);

    // unknown numbering
    std::vector<int> ang_pos(nb, -1), vm_pos(nb, -1);
    int n_unknown = 0;
    for (int i = 0; i < nb; ++i)
        if (bus_active[i] && model.kind[i] != BusKind::slack) ang_pos[i] = n_unknown++;
    for (int i = 0; i < nb; ++i)
        if (bus_active[i] && model.kind[i] == BusKind::pq) vm_pos[i] = n_unknown++;

    PowerFlowSolution sol;
    Eigen::VectorXd vm = Eigen::VectorXd::Zero(nb);
    Eigen::VectorXd va = Eigen::VectorXd::Zero(nb);
    for (int i = 0; i < nb; ++i) {
        if (!bus_active[i]) continue;
        vm[i] = (model.kind[i] == BusKind::pq) ? 1.0 : grid.buses[i].v_set;
    }

    Eigen::VectorXd p_calc = Eigen::VectorXd::Zero(nb);
    Eigen::VectorXd q_calc = Eigen::VectorXd::Zero(nb);
    auto calc_injections = [&]() {
        for (int i = 0; i < nb; ++i) {
            if (!bus_active[i]) continue;
            double p = 0.0, q = 0.0;
            for (const auto& [k, g, bsus] : rows[i]) {
                double th = va[i] - va[k];
                double c = std::cos(th), s = std::sin(th);
                p += vm[k] * (g * c + bsus * s);
                q += vm[k] * (g * s - bsus * c);
            }
            p_calc[i] = vm[i] * p;
            q_calc[i] = vm[i] * q;
        }
    };

    Eigen::VectorXd mismatch(n_unknown);
    auto fill_mismatch = [&]() {
        for (int i = 0; i < nb; ++i) {
            if (ang_pos[i] >= 0) mismatch[ang_pos[i]] = model.p_spec[i] - p_calc[i];
            if (vm_pos[i] >= 0) mismatch[vm_pos[i]] = model.q_spec[i] - q_calc[i];
        }
    };

    Eigen::SparseMatrix<double> jac(n_unknown, n_unknown);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    std::vector<Eigen::Triplet<double>> trips;
    bool pattern_ready = false;

    for (int iter = 0;; ++iter) {
        calc_injections();
        if (n_unknown == 0) {
            sol.converged = true;
            sol.iterations = iter;
            sol.max_mismatch = 0.0;
            break;
        }
        fill_mismatch();
        double mm = mismatch.cwiseAbs().maxCoeff();
        if (std::isfinite(mm)) sol.max_mismatch = mm;
        if (mm <= opts.tolerance) {
            sol.converged = true;
            sol.iterations = iter;
            break;
        }
        if (iter >= opts.max_iterations || !std::isfinite(mm)) {
            sol.converged = false;
            sol.iterations = iter;
            break;
        }

        trips.clear();
        for (int i = 0; i < nb; ++i) {
            if (!bus_active[i]) continue;
            int pi = ang_pos[i], qi = vm_pos[i];
            if (pi < 0 && qi < 0) continue;
            for (const auto& [k, g, bsus] : rows[i]) {
                if (i == k) {
                    if (pi >= 0) {
                        trips.emplace_back(pi, pi, -q_calc[i] - bsus * vm[i] * vm[i]);
                        if (vm_pos[i] >= 0)
                            trips.emplace_back(pi, vm_pos[i], p_calc[i] / vm[i] + g * vm[i]);
                    }
                    if (qi >= 0) {
                        trips.emplace_back(qi, ang_pos[i], p_calc[i] - g * vm[i] * vm[i]);
                        trips.emplace_back(qi, qi, q_calc[i] / vm[i] - bsus * vm[i]);
                    }
                    continue;
                }
                double th = va[i] - va[k];
                double c = std::cos(th), s = std::sin(th);
                double gc_bs = g * c + bsus * s;
                double gs_bc = g * s - bsus * c;
                if (pi >= 0) {
                    if (ang_pos[k] >= 0) trips.emplace_back(pi, ang_pos[k], vm[i] * vm[k] * gs_bc);
                    if (vm_pos[k] >= 0) trips.emplace_back(pi, vm_pos[k], vm[i] * gc_bs);
                }
                if (qi >= 0) {
                    if (ang_pos[k] >= 0) trips.emplace_back(qi, ang_pos[k], -vm[i] * vm[k] * gc_bs);
                    if (vm_pos[k] >= 0) trips.emplace_back(qi, vm_pos[k], vm[i] * gs_bc);
                }
            }
        }
        jac.setFromTriplets(trips.begin(), trips.end());
        if (!pattern_ready) {
            lu.analyzePattern(jac);
            pattern_ready = true;
        }
        lu.factorize(jac);
        if (lu.info() != Eigen::Success) throw SolverError("singular jacobian");
        Eigen::VectorXd delta = lu.solve(mismatch);
        if (lu.info() != Eigen::Success) throw SolverError("jacobian solve failed");
        for (int i = 0; i < nb; ++i) {
            if (ang_pos[i] >= 0) va[i] += delta[ang_pos[i]];
            if (vm_pos[i] >= 0) vm[i] += delta[vm_pos[i]];
        }
    }

    // diagonal Jacobian terms divide by vm; a collapsed magnitude would already
    // have shown up as a non-finite mismatch and exited the loop above
    sol.v_mag = vm;
    sol.v_ang = va;
    compute_flows(grid, index, bus_active, branch_active, vm, va, sol.flows);
    if (!sol.converged) sol.flows.setConstant(kNan);
    return sol;
}

}  // namespace pf_detail

inline PowerFlowSolution solve_ac(const GridCase& grid, const SolverOptions& opts = {}) {
    const auto index = grid.bus_index();
    auto branch_active = pf_detail::in_service_mask(grid);
    auto comp = pf_detail::components_by_index(grid, index, branch_active);
    for (int root : comp)
        if (root != comp[0])
            throw SolverError("network is disconnected; pre-split islands before solve_ac");
    std::vector<char> bus_active(grid.buses.size(), 1);
    return pf_detail::solve_ac_masked(grid, opts, bus_active, branch_active);
}

inline PowerFlowSolution solve_dc(const GridCase& grid) {
    const int nb = static_cast<int>(grid.buses.size());
    const auto index = grid.bus_index();
    auto branch_active = pf_detail::in_service_mask(grid);
    auto comp = pf_detail::components_by_index(grid, index, branch_active);
    {
        std::vector<int> roots;
        for (int i = 0; i < nb; ++i)
            if (std::find(roots.begin(), roots.end(), comp[i]) == roots.end()) roots.push_back(comp[i]);
        if (roots.size() > 1)
            throw SolverError("B matrix is singular: network splits into " + std::to_string(roots.size()) +
                              " components");
    }

    int slack = -1;
    for (int i = 0; i < nb; ++i)
        if (grid.buses[i].kind == BusKind::slack) slack = i;
    if (slack < 0) throw SolverError("no slack bus");

    std::vector<int> pos(nb, -1);
    int n_unknown = 0;
    for (int i = 0; i < nb; ++i)
        if (i != slack) pos[i] = n_unknown++;

    Eigen::VectorXd p = Eigen::VectorXd::Zero(nb);
    for (const Generator& gen : grid.generators)
        if (gen.in_service) p[index.at(gen.bus)] += gen.p_gen;
    for (int i = 0; i < nb; ++i) p[i] = (p[i] - grid.buses[i].p_load - grid.buses[i].g_shunt) / grid.base_mva;

    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t b = 0; b < grid.branches.size(); ++b) {
        if (!branch_active[b]) continue;
        const Branch& br = grid.branches[b];
        int f = index.at(br.from_bus);
        int t = index.at(br.to_bus);
        double susceptance = 1.0 / (br.x * br.tap_ratio);
        if (pos[f] >= 0) trips.emplace_back(pos[f], pos[f], susceptance);
        if (pos[t] >= 0) trips.emplace_back(pos[t], pos[t], susceptance);
        if (pos[f] >= 0 && pos[t] >= 0) {
            trips.emplace_back(pos[f], pos[t], -susceptance);
            trips.emplace_back(pos[t], pos[f], -susceptance);
        }
    }
    Eigen::SparseMatrix<double> bmat(n_unknown, n_unknown);
    bmat.setFromTriplets(trips.begin(), trips.end());
    Eigen::VectorXd rhs(n_unknown);
    for (int i = 0; i < nb; ++i)
        if (pos[i] >= 0) rhs[pos[i]] = p[i];

    Eigen::VectorXd theta_red;
    if (n_unknown > 0) {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(bmat);
        if (lu.info() != Eigen::Success) throw SolverError("B matrix is singular");
        theta_red = lu.solve(rhs);
        if (lu.info() != Eigen::Success) throw SolverError("B matrix solve failed");
    }

    PowerFlowSolution sol;
    sol.v_mag = Eigen::VectorXd::Ones(nb);
    sol.v_ang = Eigen::VectorXd::Zero(nb);
    for (int i = 0; i < nb; ++i)
        if (pos[i] >= 0) sol.v_ang[i] = theta_red[pos[i]];
    sol.flows.resize(grid.branches.size());
    for (std::size_t b = 0; b < grid.branches.size(); ++b) {
        const Branch& br = grid.branches[b];
        if (!br.in_service) {
            sol.flows[b] = pf_detail::kNan;
            continue;
        }
        double df = sol.v_ang[index.at(br.from_bus)] - sol.v_ang[index.at(br.to_bus)];
        sol.flows[b] = std::abs(df / (br.x * br.tap_ratio)) * grid.base_mva;
    }
    sol.converged = true;
    sol.iterations = 1;
    sol.max_mismatch = 0.0;
    return sol;
}

// One contingency solved end to end: split off islands, keep the slack
// component, flag islanded load/generation, and record per-line flows.
struct SecurityRecord {
    Contingency z;
    bool converged = false;
    bool islanded = false;  // the outage separated load or generation from the slack
    int loss = -1;          // -1 until limits are applied
    double max_loading_ratio = pf_detail::kNan;
    int iterations = 0;
    Eigen::VectorXd flows;  // MW; NaN at outed lines, 0 in de-energized islands
};

inline SecurityRecord solve_contingency(const GridCase& grid, const Contingency& z,
                                        const SolverOptions& opts = {}) {
    const int nb = static_cast<int>(grid.buses.size());
    const auto index = grid.bus_index();

    auto branch_active = pf_detail::in_service_mask(grid);
    for (int line : z.outed_lines()) {
        if (line < 0 || line >= static_cast<int>(grid.branches.size()))
            throw ValidationError("contingency line index out of range: " + std::to_string(line));
        if (!branch_active[line])
            throw ValidationError("contingency names already out-of-service branch " + std::to_string(line));
        branch_active[line] = 0;
    }

    auto comp = pf_detail::components_by_index(grid, index, branch_active);
    int slack = -1;
    for (int i = 0; i < nb; ++i)
        if (grid.buses[i].kind == BusKind::slack) slack = i;
    if (slack < 0) throw ValidationError("case has no slack bus");

    std::vector<char> has_gen(nb, 0);
    for (const Generator& gen : grid.generators)
        if (gen.in_service) has_gen[index.at(gen.bus)] = 1;

    SecurityRecord rec;
    rec.z = z;
    std::vector<char> bus_active(nb, 0);
    for (int i = 0; i < nb; ++i) {
        if (comp[i] == comp[slack]) {
            bus_active[i] = 1;
        } else if (grid.buses[i].p_load != 0.0 || grid.buses[i].q_load != 0.0 || has_gen[i]) {
            rec.islanded = true;
        }
    }

    try {
        PowerFlowSolution sol = pf_detail::solve_ac_masked(grid, opts, bus_active, branch_active);
        rec.converged = sol.converged;
        rec.iterations = sol.iterations;
        rec.flows = std::move(sol.flows);
    } catch (const SolverError&) {
        rec.converged = false;
        rec.flows = Eigen::VectorXd::Constant(grid.branches.size(), pf_detail::kNan);
    }
    return rec;
}

// Loss semantics: non-convergence => 1, islanded load/generation => 1,
// otherwise 1 iff some in-service line exceeds its thermal limit.
inline void apply_limits(SecurityRecord& rec, const std::vector<double>& limits_mw) {
    if (!rec.converged) {
        rec.loss = 1;
        rec.max_loading_ratio = pf_detail::kNan;
        return;
    }
    double ratio = 0.0;
    for (Eigen::Index b = 0; b < rec.flows.size(); ++b) {
        double f = rec.flows[b];
        if (std::isnan(f)) continue;  // outed or out-of-service line
        if (!(limits_mw[static_cast<std::size_t>(b)] > 0.0))
            throw ValidationError("thermal limit not calibrated for line " + std::to_string(b));
        ratio = std::max(ratio, f / limits_mw[static_cast<std::size_t>(b)]);
    }
    rec.max_loading_ratio = ratio;
    rec.loss = (rec.islanded || ratio > 1.0) ? 1 : 0;
}

inline std::vector<double> thermal_limits_of(const GridCase& grid) {
    std::vector<double> limits(grid.branches.size());
    for (std::size_t b = 0; b < grid.branches.size(); ++b) limits[b] = grid.branches[b].thermal_limit;
    return limits;
}

inline int loss(const GridCase& grid, const Contingency& z, const SolverOptions& opts = {}) {
    SecurityRecord rec = solve_contingency(grid, z, opts);
    apply_limits(rec, thermal_limits_of(grid));
    return rec.loss;
}

struct EnumerationOptions {
    SolverOptions solver;
    int workers = 0;          // 0: hardware concurrency
    bool with_limits = true;  // fill loss/max_loading_ratio from the case's limits
};

// Batch contingency evaluation. Each record is computed independently at a fixed
// slot, so results are bit-identical for any worker count and arrive in the
// caller's (canonical) contingency order.
inline std::vector<SecurityRecord> full_enumeration(const GridCase& grid,
                                                    const std::vector<Contingency>& contingencies,
                                                    const EnumerationOptions& eo = {}) {
    std::vector<SecurityRecord> records(contingencies.size());
    std::vector<double> limits = thermal_limits_of(grid);
    int workers = eo.workers > 0 ? eo.workers : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = std::min<int>(workers, std::max<std::size_t>(contingencies.size(), 1));

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto run = [&](int w) {
        try {
            for (;;) {
                std::size_t k = next.fetch_add(1);
                if (k >= contingencies.size()) break;
                records[k] = solve_contingency(grid, contingencies[k], eo.solver);
                if (eo.with_limits) apply_limits(records[k], limits);
            }
        } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& th : pool) th.join();
    }
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
    return records;
}

inline void export_enumeration_csv(const std::vector<SecurityRecord>& records,
                                   const std::filesystem::path& path) {
    CsvWriter csv({"contingency_kind", "line_i", "line_j", "converged", "loss", "max_loading_ratio"});
    for (const SecurityRecord& rec : records) {
        auto row = csv.row();
        if (rec.z.kind == ContingencyKind::single) {
            row.cell("single").cell(rec.z.i).empty();
        } else {
            row.cell("double").cell(rec.z.i).cell(rec.z.j);
        }
        row.cell(rec.converged ? 1 : 0).cell(rec.loss);
        if (std::isnan(rec.max_loading_ratio))
            row.empty();
        else
            row.cell(rec.max_loading_ratio);
    }
    csv.save(path);
}

}  // namespace gridrisk
