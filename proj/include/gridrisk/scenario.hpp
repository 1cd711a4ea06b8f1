#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridrisk/grid.hpp"
#include "gridrisk/powerflow.hpp"
#include "gridrisk/rng.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

// Random operating states around a base case. Loads move with a global uniform
// factor, a correlated zonal factor, and a per-bus factor; generators suffer
// independent outages and the survivors are rescaled to a fixed margin over the
// sampled load. States that do not admit a converged AC solution are redrawn.
struct ScenarioOptions {
    double load_factor_min = 0.85;
    double load_factor_max = 1.15;
    // lognormal sd shared by the zonal and per-bus factors; both are mean-one
    double per_unit_noise_sd = 0.05;
    // zonal latent = rho * global shock + sqrt(1-rho^2) * own shock
    double zone_correlation = 0.4;
    // zones are contiguous bands of bus indices
    int zone_size = 20;
    double gen_outage_rate = 0.02;
    // surviving generation is rescaled to margin * total load
    double gen_margin = 1.02;
    int max_attempts = 100;

    void check() const {
        if (!(load_factor_min > 0.0) || !(load_factor_max >= load_factor_min))
            throw ValidationError("load factor range must satisfy 0 < min <= max");
        if (!(per_unit_noise_sd >= 0.0)) throw ValidationError("noise sd must be non-negative");
        if (!(std::abs(zone_correlation) <= 1.0))
            throw ValidationError("zone correlation must lie in [-1, 1]");
        if (zone_size < 1) throw ValidationError("zone size must be at least 1");
        if (!(gen_outage_rate >= 0.0 && gen_outage_rate < 1.0))
            throw ValidationError("generator outage rate must lie in [0, 1)");
        if (!(gen_margin > 0.0)) throw ValidationError("generation margin must be positive");
        if (max_attempts < 1) throw ValidationError("max_attempts must be at least 1");
    }
};

struct SampledState {
    GridCase grid;
    // 1-based attempt that produced the convergent state
    int attempts = 0;
};

// Draw order is part of the determinism contract: global load factor, global
// shock, zonal shocks in band order, one per-bus factor in bus storage order,
// one outage draw per generator in storage order. Every attempt uses its own
// substream so a redraw never perturbs later states.
inline SampledState sample_state(const GridCase& base, std::uint64_t root_seed,
                                 const std::string& set_name, int state_index,
                                 const ScenarioOptions& opts = {}, const SolverOptions& solver = {}) {
    opts.check();
    solver.check();
    if (state_index < 0) throw ValidationError("state index must be non-negative");
    validate(base);

    int slack_bus_id = -1;
    for (const Bus& b : base.buses)
        if (b.kind == BusKind::slack) slack_bus_id = b.id;

    const int nb = static_cast<int>(base.buses.size());
    const int nz = (nb + opts.zone_size - 1) / opts.zone_size;
    const double sd = opts.per_unit_noise_sd;
    const double rho = opts.zone_correlation;
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));

    for (int attempt = 1; attempt <= opts.max_attempts; ++attempt) {
        Rng rng(derive_seed(root_seed, "scenario",
                            {fnv1a64(set_name), static_cast<std::uint64_t>(state_index),
                             static_cast<std::uint64_t>(attempt)}));
        GridCase g = base;

        double u = rng.uniform(opts.load_factor_min, opts.load_factor_max);
        double w = rng.normal();
        std::vector<double> zonal(nz);
        for (int z = 0; z < nz; ++z) {
            double latent = rho * w + mix * rng.normal();
            zonal[z] = std::exp(sd * latent - 0.5 * sd * sd);
        }
        for (int i = 0; i < nb; ++i) {
            double f = u * zonal[i / opts.zone_size] * rng.lognormal_mean_one(sd);
            g.buses[i].p_load *= f;
            g.buses[i].q_load *= f;
        }
        for (Generator& gen : g.generators) {
            bool out = rng.bernoulli(opts.gen_outage_rate);
            if (gen.bus != slack_bus_id && gen.in_service) gen.in_service = !out;
        }

        double total_load = 0.0;
        for (const Bus& b : g.buses) total_load += b.p_load;
        double target = opts.gen_margin * total_load;
        double available = 0.0;
        for (const Generator& gen : g.generators)
            if (gen.in_service) available += gen.p_gen;
        if (!(available > 0.0) || !std::isfinite(target / available)) continue;
        double rescale = target / available;
        for (Generator& gen : g.generators)
            if (gen.in_service) gen.p_gen *= rescale;

        try {
            PowerFlowSolution sol = solve_ac(g, solver);
            if (sol.converged) return {std::move(g), attempt};
        } catch (const SolverError&) {
            // structural failure for this draw; redraw like any divergence
        }
    }
    throw SolverError("no convergent state after " + std::to_string(opts.max_attempts) +
                      " attempts (set " + set_name + ", index " + std::to_string(state_index) + ")");
}

// Outage probabilities for a fleet of n lines, anchored to a published
// reference fleet through the share of total risk carried by single and double
// events. With independent single outages at rate pi1, those shares sit at
// n*pi1 (singles) versus C(n,2)*pi1^2 (pairs), so
//   mass_single / mass_double = 2 / ((n - 1) * pi1)
// and solving for pi1 keeps the published split on the smaller fleet. The
// reference fleet's own per-line rate and size are carried along for
// reporting; the scaling itself only needs the mass split.
struct ReferenceFleet {
    double pi1 = 1.2e-6;
    int n_lines = 10000;
    double risk_mass_single = 0.12;
    double risk_mass_double = 0.06;
};

struct ProbabilityModel {
    double pi1 = 0.0;
    // always exactly pi1 * pi1
    double pi2 = 0.0;
};

inline ProbabilityModel scale_probabilities(int n_lines, const ReferenceFleet& ref = {}) {
    if (n_lines < 2) throw ValidationError("probability scaling needs at least 2 lines");
    if (!(ref.risk_mass_single > 0.0) || !(ref.risk_mass_double > 0.0))
        throw ValidationError("reference risk masses must be positive");
    ProbabilityModel pm;
    pm.pi1 = 2.0 * ref.risk_mass_double / ((n_lines - 1) * ref.risk_mass_single);
    if (!(pm.pi1 > 0.0 && pm.pi1 < 1.0)) throw ValidationError("scaled pi1 must lie in (0, 1)");
    pm.pi2 = pm.pi1 * pm.pi1;
    return pm;
}

// All singles, then all pairs (i, j) with i < j in lexicographic order. This
// is the canonical contingency order used everywhere downstream.
inline std::vector<Contingency> enumerate_contingencies(int n_lines, bool include_doubles,
                                                        const ProbabilityModel& pm) {
    if (n_lines < 1) throw ValidationError("contingency enumeration needs at least 1 line");
    std::vector<Contingency> out;
    std::size_t total = static_cast<std::size_t>(n_lines);
    if (include_doubles)
        total += static_cast<std::size_t>(n_lines) * (n_lines - 1) / 2;
    out.reserve(total);
    for (int i = 0; i < n_lines; ++i) out.push_back(Contingency::single(i, pm.pi1));
    if (include_doubles)
        for (int i = 0; i < n_lines; ++i)
            for (int j = i + 1; j < n_lines; ++j)
                out.push_back(Contingency::double_outage_of(i, j, pm.pi2));
    return out;
}

// Thermal limit calibration. Limits are a common multiple kappa of each line's
// flow envelope over the calibration states' intact solutions; kappa is chosen
// by bisection so that the fraction of single-outage records in thermal
// violation lands inside the target band. Records that diverged or islanded
// load are outside the thermal mechanism and are excluded from the rate.
struct CalibrationOptions {
    double target_rate = 0.0175;
    // half-width of the acceptance band around target_rate
    double tolerance = 0.0025;
    int max_iterations = 200;

    void check() const {
        if (!(target_rate > 0.0 && target_rate < 1.0))
            throw ValidationError("target rate must lie in (0, 1)");
        if (!(tolerance > 0.0)) throw ValidationError("calibration tolerance must be positive");
        if (max_iterations < 1) throw ValidationError("max_iterations must be at least 1");
    }
};

struct CalibrationStep {
    double kappa = 0.0;
    double rate = 0.0;
};

struct CalibrationResult {
    // MVA limit per line, kappa * envelope
    Eigen::VectorXd limits;
    double kappa = 0.0;
    // achieved violation rate over the usable single-outage records
    double n1_violation_rate = 0.0;
    int usable_records = 0;
    std::vector<CalibrationStep> trace;
};

inline CalibrationResult calibrate_thermal_limits(const std::vector<Eigen::VectorXd>& intact_flows,
                                                  const std::vector<std::vector<SecurityRecord>>& n1_records,
                                                  const CalibrationOptions& opts = {}) {
    opts.check();
    if (intact_flows.empty()) throw ValidationError("calibration needs at least one state");
    if (n1_records.size() != intact_flows.size())
        throw ValidationError("one single-outage record set per state is required");

    const Eigen::Index n_lines = intact_flows.front().size();
    Eigen::VectorXd envelope = Eigen::VectorXd::Zero(n_lines);
    for (const Eigen::VectorXd& f : intact_flows) {
        if (f.size() != n_lines) throw ValidationError("inconsistent line count across states");
        envelope = envelope.cwiseMax(f);
    }
    // A dead line (an unloaded radial stub) carries nothing in any state, so
    // no finite multiplier can make it violate; it sits outside the thermal
    // mechanism and is skipped below.
    const double top = envelope.maxCoeff();
    if (!(top > 0.0)) throw ValidationError("no line carries flow in any calibration state");

    // one stress number per usable record: the worst flow-to-envelope ratio.
    // A record violates at multiplier kappa exactly when its stress exceeds
    // kappa, so the bisection below never re-touches the flow data.
    std::vector<double> stress;
    for (const auto& state_records : n1_records) {
        for (const SecurityRecord& rec : state_records) {
            if (!rec.converged || rec.islanded) continue;
            if (rec.flows.size() != n_lines)
                throw ValidationError("record flow vector does not match the line count");
            double worst = 0.0;
            for (Eigen::Index i = 0; i < n_lines; ++i) {
                double f = rec.flows[i];
                if (std::isfinite(f) && envelope[i] > 0.0) worst = std::max(worst, f / envelope[i]);
            }
            stress.push_back(worst);
        }
    }
    if (stress.empty()) throw ValidationError("no usable single-outage records for calibration");

    const double n = static_cast<double>(stress.size());
    auto rate_at = [&](double kappa) {
        std::size_t hits = 0;
        for (double s : stress) hits += (s > kappa) ? 1 : 0;
        return static_cast<double>(hits) / n;
    };

    const double lo_band = opts.target_rate - opts.tolerance;
    const double hi_band = opts.target_rate + opts.tolerance;
    double lo = 0.0;
    // reach past the largest stress so a zero-violation calibration is a real
    // interval the search can land in, not an endpoint it only approaches
    double hi = 1.5 * *std::max_element(stress.begin(), stress.end()) + 1.0;

    CalibrationResult result;
    bool found = false;
    double kappa = 0.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        double mid = 0.5 * (lo + hi);
        double r = rate_at(mid);
        result.trace.push_back({mid, r});
        if (r > hi_band) {
            lo = mid;
        } else if (r < lo_band) {
            hi = mid;
        } else {
            kappa = mid;
            found = true;
            break;
        }
    }
    if (!found) {
        // the rate only moves at distinct stress values; report the two
        // achievable rates bracketing the target so the failure is actionable
        std::vector<double> sorted = stress;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        double below = 0.0, above = 1.0;
        for (double v : sorted) {
            double r = rate_at(v);
            if (r <= opts.target_rate) below = std::max(below, r);
            if (r >= opts.target_rate) above = std::min(above, r);
        }
        throw ValidationError("calibration cannot reach a violation rate of " +
                              std::to_string(opts.target_rate) + "; nearest achievable rates are " +
                              std::to_string(below) + " and " + std::to_string(above));
    }

    result.limits = kappa * envelope;
    // dead lines get the most generous limit on the system so downstream
    // ratio checks stay defined and can never fire on their zero flows
    for (Eigen::Index i = 0; i < n_lines; ++i)
        if (!(envelope[i] > 0.0)) result.limits[i] = kappa * top;
    result.kappa = kappa;
    result.n1_violation_rate = rate_at(kappa);
    result.usable_records = static_cast<int>(stress.size());
    return result;
}

}  // namespace gridrisk
