#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridrisk/csv.hpp"
#include "gridrisk/grid.hpp"
#include "gridrisk/matpower.hpp"
#include "gridrisk/powerflow.hpp"
#include "gridrisk/risk.hpp"
#include "gridrisk/scenario.hpp"
#include "gridrisk/surrogate.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

// One oracle artifact: the exact AC flows for every contingency of one tier on
// one sampled state, plus the intact flows on the single-outage tier.
struct OracleShard {
    bool has_intact = false;
    Eigen::VectorXd intact;
    std::vector<SecurityRecord> records;
};

namespace pipeline_detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    surrogate_detail::put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
    surrogate_detail::put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

constexpr std::uint32_t kNoSecondLine = 0xffffffffu;

}  // namespace pipeline_detail

// Flow shards are little-endian binary: "GRFL", version, flags, record and
// line counts, optional intact flows, then per record the contingency, its
// status, and the full f64 flow vector. Doubles are stored exactly so results
// recomputed from disk match results computed in memory bit for bit. A 64-bit
// checksum trails the payload.
inline std::string shard_serialize(const OracleShard& shard) {
    using surrogate_detail::put_f64;
    using surrogate_detail::put_u32;
    int n_lines = shard.has_intact ? static_cast<int>(shard.intact.size())
                                   : (shard.records.empty() ? 0 : static_cast<int>(shard.records.front().flows.size()));
    std::string out = "GRFL";
    put_u32(out, 1);
    put_u32(out, shard.has_intact ? 1u : 0u);
    put_u32(out, static_cast<std::uint32_t>(shard.records.size()));
    put_u32(out, static_cast<std::uint32_t>(n_lines));
    if (shard.has_intact)
        for (Eigen::Index i = 0; i < shard.intact.size(); ++i) put_f64(out, shard.intact[i]);
    for (const SecurityRecord& rec : shard.records) {
        if (rec.flows.size() != n_lines)
            throw ValidationError("flow shard has records with inconsistent line counts");
        put_u32(out, rec.z.kind == ContingencyKind::single ? 0u : 1u);
        put_u32(out, static_cast<std::uint32_t>(rec.z.i));
        put_u32(out, rec.z.kind == ContingencyKind::single
                         ? pipeline_detail::kNoSecondLine
                         : static_cast<std::uint32_t>(rec.z.j));
        put_f64(out, rec.z.probability);
        put_u32(out, (rec.converged ? 1u : 0u) | (rec.islanded ? 2u : 0u));
        put_u32(out, static_cast<std::uint32_t>(rec.iterations));
        for (Eigen::Index i = 0; i < rec.flows.size(); ++i) put_f64(out, rec.flows[i]);
    }
    pipeline_detail::put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

inline OracleShard shard_deserialize(const std::string& bytes) {
    if (bytes.size() < 28 || bytes.compare(0, 4, "GRFL") != 0)
        throw IoError("not a flow shard: bad magic");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i]))
                  << (8 * i);
    if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
        throw IoError("flow shard checksum mismatch");

    surrogate_detail::Reader in(bytes, 4);
    std::uint32_t version = in.u32();
    if (version != 1) throw IoError("unsupported flow shard version " + std::to_string(version));
    bool has_intact = in.u32() != 0;
    std::uint32_t n_records = in.u32();
    std::uint32_t n_lines = in.u32();

    OracleShard shard;
    shard.has_intact = has_intact;
    if (has_intact) {
        shard.intact.resize(n_lines);
        for (std::uint32_t i = 0; i < n_lines; ++i) shard.intact[i] = in.f64();
    }
    shard.records.resize(n_records);
    for (std::uint32_t r = 0; r < n_records; ++r) {
        SecurityRecord& rec = shard.records[r];
        std::uint32_t kind = in.u32();
        std::uint32_t i = in.u32();
        std::uint32_t j = in.u32();
        double p = in.f64();
        if (kind == 0)
            rec.z = Contingency::single(static_cast<int>(i), p);
        else if (kind == 1 && j != pipeline_detail::kNoSecondLine)
            rec.z = Contingency::double_outage_of(static_cast<int>(i), static_cast<int>(j), p);
        else
            throw IoError("flow shard record " + std::to_string(r) + " has a malformed contingency");
        std::uint32_t status = in.u32();
        rec.converged = (status & 1u) != 0;
        rec.islanded = (status & 2u) != 0;
        rec.iterations = static_cast<int>(in.u32());
        rec.flows.resize(n_lines);
        for (std::uint32_t f = 0; f < n_lines; ++f) rec.flows[f] = in.f64();
    }
    if (in.pos() != bytes.size() - 8) throw IoError("flow shard has trailing bytes");
    return shard;
}

struct SetSizes {
    int train = 150;
    int calibration = 25;
    int test = 25;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string case_file;
    SetSizes sets;
    ScenarioOptions scenario;
    ReferenceFleet fleet;
    CalibrationOptions calibration;
    TrainOptions training;
    int budget_max = 400;
    // 0 evaluates every line pair; a positive value evaluates a fixed
    // deterministic sample of pairs instead, for quick runs
    int oracle_n2_sample = 0;
    int workers = 0;

    // where the config file lived; used to resolve a relative case_file
    std::filesystem::path config_dir;

    void check() const {
        if (case_file.empty()) throw ValidationError("config: case_file is required");
        if (sets.train < 1 || sets.calibration < 1 || sets.test < 1)
            throw ValidationError("config: every set needs at least one state");
        if (budget_max < 1) throw ValidationError("config: budget_max must be positive");
        if (oracle_n2_sample < 0) throw ValidationError("config: oracle_n2_sample must be >= 0");
        if (workers < 0) throw ValidationError("config: workers must be >= 0");
        scenario.check();
        calibration.check();
        training.check();
    }
};

namespace pipeline_detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                        const std::string& ctx) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(keys.begin(), keys.end(),
                         [&](const char* k) { return key == k; }) == keys.end())
            throw SemanticError("config: unknown key \"" + key + "\" in " + ctx);
    }
}

}  // namespace pipeline_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using pipeline_detail::expect_keys;
    RunConfig cfg;
    try {
        expect_keys(j,
                    {"seed", "case_file", "sets", "scenario", "probability", "calibration",
                     "training", "budget_max", "oracle_n2_sample", "workers"},
                    "the top level");
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.case_file = j.at("case_file").get<std::string>();
        if (j.contains("sets")) {
            const auto& s = j.at("sets");
            expect_keys(s, {"train", "calibration", "test"}, "sets");
            cfg.sets.train = s.value("train", cfg.sets.train);
            cfg.sets.calibration = s.value("calibration", cfg.sets.calibration);
            cfg.sets.test = s.value("test", cfg.sets.test);
        }
        if (j.contains("scenario")) {
            const auto& s = j.at("scenario");
            expect_keys(s,
                        {"load_factor_min", "load_factor_max", "per_unit_noise_sd",
                         "zone_correlation", "zone_size", "gen_outage_rate", "gen_margin",
                         "max_attempts"},
                        "scenario");
            cfg.scenario.load_factor_min = s.value("load_factor_min", cfg.scenario.load_factor_min);
            cfg.scenario.load_factor_max = s.value("load_factor_max", cfg.scenario.load_factor_max);
            cfg.scenario.per_unit_noise_sd =
                s.value("per_unit_noise_sd", cfg.scenario.per_unit_noise_sd);
            cfg.scenario.zone_correlation =
                s.value("zone_correlation", cfg.scenario.zone_correlation);
            cfg.scenario.zone_size = s.value("zone_size", cfg.scenario.zone_size);
            cfg.scenario.gen_outage_rate = s.value("gen_outage_rate", cfg.scenario.gen_outage_rate);
            cfg.scenario.gen_margin = s.value("gen_margin", cfg.scenario.gen_margin);
            cfg.scenario.max_attempts = s.value("max_attempts", cfg.scenario.max_attempts);
        }
        if (j.contains("probability")) {
            const auto& p = j.at("probability");
            expect_keys(p,
                        {"reference_pi1", "reference_n_lines", "reference_risk_mass_single",
                         "reference_risk_mass_double"},
                        "probability");
            cfg.fleet.pi1 = p.value("reference_pi1", cfg.fleet.pi1);
            cfg.fleet.n_lines = p.value("reference_n_lines", cfg.fleet.n_lines);
            cfg.fleet.risk_mass_single =
                p.value("reference_risk_mass_single", cfg.fleet.risk_mass_single);
            cfg.fleet.risk_mass_double =
                p.value("reference_risk_mass_double", cfg.fleet.risk_mass_double);
        }
        if (j.contains("calibration")) {
            const auto& c = j.at("calibration");
            expect_keys(c, {"target_n1_unsafe_rate", "tolerance", "max_iterations"}, "calibration");
            cfg.calibration.target_rate = c.value("target_n1_unsafe_rate", cfg.calibration.target_rate);
            cfg.calibration.tolerance = c.value("tolerance", cfg.calibration.tolerance);
            cfg.calibration.max_iterations =
                c.value("max_iterations", cfg.calibration.max_iterations);
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            expect_keys(t,
                        {"hidden", "base_units", "units_per_line", "epochs", "batch_size",
                         "learning_rate", "momentum", "lr_decay", "validation_fraction"},
                        "training");
            cfg.training.hidden = t.value("hidden", cfg.training.hidden);
            cfg.training.base_units = t.value("base_units", cfg.training.base_units);
            cfg.training.units_per_line = t.value("units_per_line", cfg.training.units_per_line);
            cfg.training.epochs = t.value("epochs", cfg.training.epochs);
            cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
            cfg.training.learning_rate = t.value("learning_rate", cfg.training.learning_rate);
            cfg.training.momentum = t.value("momentum", cfg.training.momentum);
            cfg.training.lr_decay = t.value("lr_decay", cfg.training.lr_decay);
            cfg.training.validation_fraction =
                t.value("validation_fraction", cfg.training.validation_fraction);
        }
        cfg.budget_max = j.value("budget_max", cfg.budget_max);
        cfg.oracle_n2_sample = j.value("oracle_n2_sample", cfg.oracle_n2_sample);
        cfg.workers = j.value("workers", cfg.workers);
    } catch (const nlohmann::json::exception& e) {
        throw SemanticError(std::string("config: ") + e.what());
    }
    cfg.check();
    return cfg;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["case_file"] = cfg.case_file;
    j["sets"] = {{"train", cfg.sets.train},
                 {"calibration", cfg.sets.calibration},
                 {"test", cfg.sets.test}};
    j["scenario"] = {{"load_factor_min", cfg.scenario.load_factor_min},
                     {"load_factor_max", cfg.scenario.load_factor_max},
                     {"per_unit_noise_sd", cfg.scenario.per_unit_noise_sd},
                     {"zone_correlation", cfg.scenario.zone_correlation},
                     {"zone_size", cfg.scenario.zone_size},
                     {"gen_outage_rate", cfg.scenario.gen_outage_rate},
                     {"gen_margin", cfg.scenario.gen_margin},
                     {"max_attempts", cfg.scenario.max_attempts}};
    j["probability"] = {{"reference_pi1", cfg.fleet.pi1},
                        {"reference_n_lines", cfg.fleet.n_lines},
                        {"reference_risk_mass_single", cfg.fleet.risk_mass_single},
                        {"reference_risk_mass_double", cfg.fleet.risk_mass_double}};
    j["calibration"] = {{"target_n1_unsafe_rate", cfg.calibration.target_rate},
                        {"tolerance", cfg.calibration.tolerance},
                        {"max_iterations", cfg.calibration.max_iterations}};
    j["training"] = {{"hidden", cfg.training.hidden},
                     {"base_units", cfg.training.base_units},
                     {"units_per_line", cfg.training.units_per_line},
                     {"epochs", cfg.training.epochs},
                     {"batch_size", cfg.training.batch_size},
                     {"learning_rate", cfg.training.learning_rate},
                     {"momentum", cfg.training.momentum},
                     {"lr_decay", cfg.training.lr_decay},
                     {"validation_fraction", cfg.training.validation_fraction}};
    j["budget_max"] = cfg.budget_max;
    j["oracle_n2_sample"] = cfg.oracle_n2_sample;
    j["workers"] = cfg.workers;
    return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("config: ") + e.what());
    }
    RunConfig cfg = run_config_from_json(j);
    cfg.config_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return cfg;
}

// The contingency space for one case under one config: all singles, then the
// (possibly sampled) pairs, both in canonical order.
struct ContingencySpace {
    int n_lines = 0;
    ProbabilityModel pm;
    std::vector<Contingency> singles;
    std::vector<Contingency> doubles;
    std::vector<Contingency> all;
};

inline ContingencySpace contingency_space_of(const RunConfig& cfg, int n_lines) {
    ContingencySpace sp;
    sp.n_lines = n_lines;
    sp.pm = scale_probabilities(n_lines, cfg.fleet);
    sp.singles = enumerate_contingencies(n_lines, false, sp.pm);
    std::vector<Contingency> with_doubles = enumerate_contingencies(n_lines, true, sp.pm);
    sp.doubles.assign(with_doubles.begin() + n_lines, with_doubles.end());
    if (cfg.oracle_n2_sample > 0 && cfg.oracle_n2_sample < static_cast<int>(sp.doubles.size())) {
        // fixed deterministic sample, shared by every state and set
        std::vector<int> idx(sp.doubles.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng = Rng::derive(cfg.seed, "n2-sample");
        for (int k = 0; k < cfg.oracle_n2_sample; ++k) {
            std::size_t pick = static_cast<std::size_t>(k) +
                               static_cast<std::size_t>(rng.below(idx.size() - static_cast<std::size_t>(k)));
            std::swap(idx[static_cast<std::size_t>(k)], idx[pick]);
        }
        idx.resize(static_cast<std::size_t>(cfg.oracle_n2_sample));
        std::sort(idx.begin(), idx.end());
        std::vector<Contingency> picked;
        picked.reserve(idx.size());
        for (int i : idx) picked.push_back(sp.doubles[static_cast<std::size_t>(i)]);
        sp.doubles = std::move(picked);
    }
    sp.all = sp.singles;
    sp.all.insert(sp.all.end(), sp.doubles.begin(), sp.doubles.end());
    return sp;
}

// Thermal limits plus the score calibration that travels with them.
struct CalibrationArtifact {
    double kappa = 0.0;
    double n1_violation_rate = 0.0;
    int usable_records = 0;
    double bias = 0.0;
    Eigen::VectorXd limits;
    Eigen::VectorXd sigma;
};

// Runs the whole study against one output directory. Every stage reads its
// inputs from disk and verifies them against the manifest, so a stage can be
// rerun, resumed, or executed in a fresh process without hidden state. All
// randomness descends from the config seed.
class Pipeline {
public:
    Pipeline(RunConfig cfg, std::filesystem::path out_dir)
        : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
        cfg_.check();
        std::filesystem::create_directories(out_);
        load_manifest_();
    }

    static const std::vector<std::string>& set_names() {
        static const std::vector<std::string> names = {"train", "calibration", "test"};
        return names;
    }

    const RunConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return out_; }

    int set_size(const std::string& set) const {
        if (set == "train") return cfg_.sets.train;
        if (set == "calibration") return cfg_.sets.calibration;
        if (set == "test") return cfg_.sets.test;
        throw ValidationError("unknown state set \"" + set + "\"");
    }

    void generate() {
        Timer t;
        GridCase base = load_base_();
        for (const std::string& set : set_names()) {
            std::filesystem::create_directories(out_ / "states" / set);
            for (int idx = 0; idx < set_size(set); ++idx) {
                SampledState state = sample_state(base, cfg_.seed, set, idx, cfg_.scenario);
                nlohmann::ordered_json j;
                j["set"] = set;
                j["index"] = idx;
                j["attempts"] = state.attempts;
                j["grid"] = grid_to_json(state.grid);
                std::string rel = state_rel_(set, idx);
                atomic_write_file(out_ / rel, j.dump() + "\n");
                note_artifact_(rel);
            }
        }
        record_timing_("generate", t.seconds(),
                       {{"states", cfg_.sets.train + cfg_.sets.calibration + cfg_.sets.test}});
    }

    void oracle(const std::string& set, const std::string& tier) {
        if (tier == "both") {
            oracle(set, "n1");
            oracle(set, "n2");
            return;
        }
        if (tier != "n1" && tier != "n2")
            throw ValidationError("oracle tier must be n1, n2, or both, got \"" + tier + "\"");
        Timer t;
        GridCase base = load_base_();
        ContingencySpace sp = contingency_space_of(cfg_, static_cast<int>(base.branches.size()));
        const std::vector<Contingency>& zs = tier == "n1" ? sp.singles : sp.doubles;
        std::filesystem::create_directories(out_ / "oracle" / set);

        long long solves = 0;
        for (int idx = 0; idx < set_size(set); ++idx) {
            std::string rel = shard_rel_(set, idx, tier);
            if (artifact_is_current_(rel)) continue;  // resume: shard already on disk and intact
            GridCase state = load_state_(set, idx);
            OracleShard shard;
            if (tier == "n1") {
                PowerFlowSolution intact = solve_ac(state);
                if (!intact.converged)
                    throw SolverError("intact state " + set + "/" + std::to_string(idx) +
                                      " no longer converges");
                shard.has_intact = true;
                shard.intact = intact.flows;
                ++solves;
            }
            EnumerationOptions eo;
            eo.workers = cfg_.workers;
            eo.with_limits = false;
            shard.records = full_enumeration(state, zs, eo);
            solves += static_cast<long long>(zs.size());
            atomic_write_file(out_ / rel, shard_serialize(shard));
            note_artifact_(rel);
        }
        // a fully resumed pass computed nothing; keep the original timing entry
        if (solves > 0) record_timing_("oracle:" + set + ":" + tier, t.seconds(), {{"solves", solves}});
        if (std::filesystem::exists(out_ / "calibration.json")) write_losses_csv_(set);
    }

    void train() {
        Timer t;
        require_states_("train");
        require_shards_("train", "n1");

        SurrogateDataset ds;
        FeatureExtractor fx{0, 0, 0.0};
        for (int idx = 0; idx < cfg_.sets.train; ++idx) {
            GridCase state = load_state_("train", idx);
            if (idx == 0) fx = FeatureExtractor::for_case(state);
            OracleShard shard = load_shard_("train", idx, "n1");
            ds.add_intact(fx, state, shard.intact, idx);
            for (const SecurityRecord& rec : shard.records) ds.add_record(fx, state, rec, idx);
        }
        TrainResult result = train_surrogate(ds, fx, cfg_.training, cfg_.seed);

        std::filesystem::create_directories(out_ / "model");
        save_surrogate(result.model, out_ / "model/gridrisk_model.bin");
        note_artifact_("model/gridrisk_model.bin");
        CsvWriter curve({"epoch", "train_loss", "val_loss"});
        for (std::size_t e = 0; e < result.curve.size(); ++e)
            curve.row()
                .cell(static_cast<int>(e + 1))
                .cell(result.curve[e].train_loss)
                .cell(result.curve[e].val_loss);
        curve.save(out_ / "model/loss_curve.csv");
        note_artifact_("model/loss_curve.csv");
        record_timing_("train", t.seconds(),
                       {{"samples", static_cast<long long>(ds.samples.size())},
                        {"epochs", cfg_.training.epochs}});
    }

    void calibrate() {
        Timer t;
        require_states_("calibration");
        require_shards_("calibration", "n1");
        require_shards_("calibration", "n2");
        require_artifact_("model/gridrisk_model.bin", "run the train stage first");

        Surrogate model = load_surrogate(out_ / "model/gridrisk_model.bin");
        FeatureExtractor fx = model.extractor();
        GridCase base = load_base_();
        ContingencySpace sp = contingency_space_of(cfg_, static_cast<int>(base.branches.size()));

        // thermal limits from the intact envelope and the single-outage records
        std::vector<Eigen::VectorXd> intact_flows;
        std::vector<std::vector<SecurityRecord>> n1_records;
        for (int idx = 0; idx < cfg_.sets.calibration; ++idx) {
            OracleShard shard = load_shard_("calibration", idx, "n1");
            intact_flows.push_back(shard.intact);
            n1_records.push_back(std::move(shard.records));
        }
        CalibrationResult cal = calibrate_thermal_limits(intact_flows, n1_records, cfg_.calibration);
        std::vector<double> limits(cal.limits.data(), cal.limits.data() + cal.limits.size());

        // residual spread of the surrogate on the same single-outage records
        std::vector<Eigen::VectorXd> predicted, truth;
        std::vector<BatchPredictor> predictors;
        for (int idx = 0; idx < cfg_.sets.calibration; ++idx) {
            GridCase state = load_state_("calibration", idx);
            predictors.emplace_back(model, fx(state));
            const BatchPredictor& bp = predictors.back();
            predicted.push_back(bp.intact());
            truth.push_back(intact_flows[static_cast<std::size_t>(idx)]);
            for (const SecurityRecord& rec : n1_records[static_cast<std::size_t>(idx)]) {
                predicted.push_back(bp.predict(rec.z));
                truth.push_back(rec.flows);
            }
        }
        Eigen::VectorXd sigma = residual_sigma(predicted, truth);

        // score bias over the full calibration contingency space
        std::vector<double> aux_scores;
        std::vector<int> losses;
        for (int idx = 0; idx < cfg_.sets.calibration; ++idx) {
            const BatchPredictor& bp = predictors[static_cast<std::size_t>(idx)];
            std::vector<ScoredContingency> scored =
                score_contingencies(bp, sp.all, cal.limits, sigma, 0.0);
            OracleShard n2 = load_shard_("calibration", idx, "n2");
            std::vector<SecurityRecord> recs = std::move(n1_records[static_cast<std::size_t>(idx)]);
            recs.insert(recs.end(), std::make_move_iterator(n2.records.begin()),
                        std::make_move_iterator(n2.records.end()));
            check_space_match_(recs, sp.all, "calibration", idx);
            for (std::size_t k = 0; k < recs.size(); ++k) {
                apply_limits(recs[k], limits);
                aux_scores.push_back(scored[k].aux);
                losses.push_back(recs[k].loss);
            }
        }
        double bias = score_bias(aux_scores, losses);

        nlohmann::ordered_json j;
        j["kappa"] = cal.kappa;
        j["n1_violation_rate"] = cal.n1_violation_rate;
        j["usable_records"] = cal.usable_records;
        j["bias"] = bias;
        j["limits"] = std::vector<double>(cal.limits.data(), cal.limits.data() + cal.limits.size());
        j["sigma"] = std::vector<double>(sigma.data(), sigma.data() + sigma.size());
        auto& trace = j["trace"] = nlohmann::ordered_json::array();
        for (const CalibrationStep& step : cal.trace)
            trace.push_back({{"kappa", step.kappa}, {"rate", step.rate}});
        atomic_write_file(out_ / "calibration.json", j.dump(2) + "\n");
        note_artifact_("calibration.json");
        write_losses_csv_("calibration");
        record_timing_("calibrate", t.seconds(),
                       {{"usable_records", cal.usable_records},
                        {"bisection_steps", static_cast<long long>(cal.trace.size())}});
    }

    void evaluate() {
        Timer t;
        require_states_("test");
        require_shards_("test", "n1");
        require_shards_("test", "n2");
        require_artifact_("model/gridrisk_model.bin", "run the train stage first");
        require_artifact_("calibration.json", "run the calibrate stage first");

        Surrogate model = load_surrogate(out_ / "model/gridrisk_model.bin");
        FeatureExtractor fx = model.extractor();
        CalibrationArtifact cal = load_calibration_();
        GridCase base = load_base_();
        ContingencySpace sp = contingency_space_of(cfg_, static_cast<int>(base.branches.size()));
        const int m = static_cast<int>(sp.all.size());
        const int n_singles = static_cast<int>(sp.singles.size());
        if (cfg_.budget_max < n_singles)
            throw ValidationError("budget_max must reach the single-outage count (" +
                                  std::to_string(n_singles) + ") so the budget = n row exists");
        const int k_max = std::min(cfg_.budget_max, m);
        std::vector<double> limits(cal.limits.data(), cal.limits.data() + cal.limits.size());

        std::filesystem::create_directories(out_ / "reports/figures");
        std::vector<double> r_true_states, r_hat_states, hybrid_n_states;
        std::vector<std::vector<double>> hybrid_by_state;
        long long n1_usable = 0, n1_thermal_violations = 0;
        long long n1_losses = 0, n2_losses = 0, n2_count = 0;
        double surrogate_seconds = 0.0;

        CsvWriter summary({"state", "r_max_true", "r_max_hat", "hybrid_at_n"});

        for (int idx = 0; idx < cfg_.sets.test; ++idx) {
            GridCase state = load_state_("test", idx);
            OracleShard n1 = load_shard_("test", idx, "n1");
            OracleShard n2 = load_shard_("test", idx, "n2");
            std::vector<SecurityRecord> recs = std::move(n1.records);
            recs.insert(recs.end(), std::make_move_iterator(n2.records.begin()),
                        std::make_move_iterator(n2.records.end()));
            check_space_match_(recs, sp.all, "test", idx);

            BatchPredictor bp(model, fx(state));
            Timer sur;
            std::vector<ScoredContingency> scored =
                score_contingencies(bp, sp.all, cal.limits, cal.sigma, cal.bias);
            surrogate_seconds += sur.seconds();
            std::vector<int> ranking = rank_by_severity(scored);

            std::vector<int> losses(recs.size());
            for (std::size_t k = 0; k < recs.size(); ++k) {
                apply_limits(recs[k], limits);
                losses[k] = recs[k].loss;
                bool is_single = k < static_cast<std::size_t>(n_singles);
                if (is_single) {
                    n1_losses += losses[k];
                    if (recs[k].converged && !recs[k].islanded) {
                        ++n1_usable;
                        if (recs[k].max_loading_ratio > 1.0) ++n1_thermal_violations;
                    }
                } else {
                    n2_losses += losses[k];
                    ++n2_count;
                }
            }

            double r_true = true_total_risk(sp.all, losses);
            RiskCurves curves = risk_curves(scored, ranking, losses, k_max);
            r_true_states.push_back(r_true);
            r_hat_states.push_back(curves.r_max_hat);
            hybrid_n_states.push_back(curves.hybrid[static_cast<std::size_t>(n_singles)]);
            hybrid_by_state.push_back(curves.hybrid);

            CsvWriter ranking_csv(
                {"rank", "contingency", "probability", "l_hat", "s_hat", "true_loss"});
            for (std::size_t r = 0; r < ranking.size(); ++r) {
                const ScoredContingency& sc = scored[static_cast<std::size_t>(ranking[r])];
                ranking_csv.row()
                    .cell(static_cast<int>(r + 1))
                    .cell(sc.z.label())
                    .cell(sc.z.probability)
                    .cell(sc.l_hat)
                    .cell(sc.s_hat)
                    .cell(losses[static_cast<std::size_t>(ranking[r])]);
            }
            std::string rank_rel = "reports/" + numbered_("ranking_", idx, ".csv");
            ranking_csv.save(out_ / rank_rel);
            note_artifact_(rank_rel);

            CsvWriter curve_csv(
                {"budget_k", "hybrid_risk", "true_residual_risk", "estimated_residual_risk"});
            for (int k = 0; k <= k_max; ++k)
                curve_csv.row()
                    .cell(k)
                    .cell(curves.hybrid[static_cast<std::size_t>(k)])
                    .cell(curves.residual_true[static_cast<std::size_t>(k)])
                    .cell(curves.residual_hat[static_cast<std::size_t>(k)]);
            std::string curve_rel = "reports/" + numbered_("curve_", idx, ".csv");
            curve_csv.save(out_ / curve_rel);
            note_artifact_(curve_rel);

            summary.row().cell(idx).cell(r_true).cell(curves.r_max_hat).cell(
                hybrid_n_states.back());
        }

        // per-state estimates against the truth, sorted by increasing true risk
        std::vector<std::size_t> by_true(r_true_states.size());
        for (std::size_t s = 0; s < by_true.size(); ++s) by_true[s] = s;
        std::sort(by_true.begin(), by_true.end(), [&](std::size_t a, std::size_t b) {
            if (r_true_states[a] != r_true_states[b]) return r_true_states[a] < r_true_states[b];
            return a < b;
        });
        CsvWriter fig1a({"order", "state", "r_max_true", "r_max_hat"});
        CsvWriter fig1b({"order", "state", "r_max_true", "hybrid_at_n"});
        for (std::size_t o = 0; o < by_true.size(); ++o) {
            std::size_t s = by_true[o];
            fig1a.row()
                .cell(static_cast<int>(o))
                .cell(static_cast<int>(s))
                .cell(r_true_states[s])
                .cell(r_hat_states[s]);
            fig1b.row()
                .cell(static_cast<int>(o))
                .cell(static_cast<int>(s))
                .cell(r_true_states[s])
                .cell(hybrid_n_states[s]);
        }
        fig1a.save(out_ / "reports/figures/fig1a.csv");
        note_artifact_("reports/figures/fig1a.csv");
        fig1b.save(out_ / "reports/figures/fig1b.csv");
        note_artifact_("reports/figures/fig1b.csv");
        summary.save(out_ / "reports/risk_summary.csv");
        note_artifact_("reports/risk_summary.csv");
        write_losses_csv_("test");

        // budget sweep aggregated over states, with the 25-75% spread of the
        // per-state absolute percentage errors at each budget
        std::vector<double> mape_vs_budget(static_cast<std::size_t>(k_max) + 1);
        CsvWriter fig2({"budget_k", "mape_hybrid", "ape_p25", "ape_p75"});
        for (int k = 0; k <= k_max; ++k) {
            std::vector<double> ape;
            ape.reserve(hybrid_by_state.size());
            double sum = 0.0;
            for (std::size_t s = 0; s < hybrid_by_state.size(); ++s) {
                if (r_true_states[s] == 0.0) continue;
                ape.push_back(std::abs(hybrid_by_state[s][static_cast<std::size_t>(k)] -
                                       r_true_states[s]) /
                              r_true_states[s]);
                sum += ape.back();
            }
            double mape = ape.empty() ? 0.0 : sum / static_cast<double>(ape.size());
            mape_vs_budget[static_cast<std::size_t>(k)] = mape;
            fig2.row()
                .cell(k)
                .cell(mape)
                .cell(ape.empty() ? 0.0 : quantile_of(ape, 0.25))
                .cell(ape.empty() ? 0.0 : quantile_of(ape, 0.75));
        }
        fig2.save(out_ / "reports/figures/fig2.csv");
        note_artifact_("reports/figures/fig2.csv");

        MapeResult ml_only = mape_of(r_hat_states, r_true_states);
        MapeResult hybrid_n = mape_of(hybrid_n_states, r_true_states);
        double ac_per_solve = ac_seconds_per_solve_();
        double sur_per_state = surrogate_seconds / std::max(1, cfg_.sets.test);

        nlohmann::ordered_json mj;
        mj["n_test_states"] = cfg_.sets.test;
        mj["n_contingencies"] = m;
        mj["n_singles"] = n_singles;
        mj["budget_max"] = k_max;
        mj["pearson"] = r_true_states.size() >= 2 ? pearson_of(r_hat_states, r_true_states) : 0.0;
        mj["mape_ml_only"] = ml_only.mape;
        mj["mape_hybrid_at_n"] = hybrid_n.mape;
        mj["states_excluded_zero_risk"] = ml_only.excluded_zero_truth;
        mj["n1_thermal_violation_rate"] =
            n1_usable > 0 ? static_cast<double>(n1_thermal_violations) / n1_usable : 0.0;
        mj["n1_loss_rate"] =
            static_cast<double>(n1_losses) / (static_cast<double>(n_singles) * cfg_.sets.test);
        mj["n2_loss_rate"] = n2_count > 0 ? static_cast<double>(n2_losses) / n2_count : 0.0;
        mj["surrogate_seconds_per_state"] = sur_per_state;
        mj["ac_seconds_per_solve"] = ac_per_solve;
        mj["speedup_full_space"] =
            sur_per_state > 0.0 ? ac_per_solve * static_cast<double>(m) / sur_per_state : 0.0;
        mj["mape_vs_budget"] = mape_vs_budget;
        auto& per_state = mj["per_state"] = nlohmann::ordered_json::array();
        for (std::size_t s = 0; s < r_true_states.size(); ++s)
            per_state.push_back({{"state", s},
                                 {"r_max_true", r_true_states[s]},
                                 {"r_max_hat", r_hat_states[s]},
                                 {"hybrid_at_n", hybrid_n_states[s]}});
        atomic_write_file(out_ / "reports/metrics.json", mj.dump(2) + "\n");
        note_artifact_("reports/metrics.json");
        record_timing_("evaluate", t.seconds(), {{"states", cfg_.sets.test}});
    }

    void report() {
        Timer t;
        require_artifact_("reports/metrics.json", "run the evaluate stage first");
        require_artifact_("calibration.json", "run the calibrate stage first");
        nlohmann::json mj = nlohmann::json::parse(read_file(out_ / "reports/metrics.json"));
        nlohmann::json cj = nlohmann::json::parse(read_file(out_ / "calibration.json"));
        GridCase base = load_base_();
        ContingencySpace sp = contingency_space_of(cfg_, static_cast<int>(base.branches.size()));

        auto pct = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
            return std::string(buf);
        };
        auto num = [](double v, const char* fmt = "%.4g") {
            char buf[48];
            std::snprintf(buf, sizeof(buf), fmt, v);
            return std::string(buf);
        };

        std::string md;
        md += "# Security screening run\n\n";
        md += "Exact AC contingency analysis with a guided-dropout flow surrogate, ranked\n";
        md += "screening, and risk estimation under a limited solver budget.\n\n";
        md += "## Setup\n\n";
        md += "| quantity | value |\n|---|---|\n";
        md += "| case | `" + cfg_.case_file + "` (" + std::to_string(base.buses.size()) +
              " buses, " + std::to_string(base.branches.size()) + " lines) |\n";
        md += "| states (train / calibration / test) | " + std::to_string(cfg_.sets.train) + " / " +
              std::to_string(cfg_.sets.calibration) + " / " + std::to_string(cfg_.sets.test) +
              " |\n";
        md += "| contingency space | " + std::to_string(sp.all.size()) + " (" +
              std::to_string(sp.singles.size()) + " singles, " + std::to_string(sp.doubles.size()) +
              " pairs" + (cfg_.oracle_n2_sample > 0 ? ", sampled" : "") + ") |\n";
        md += "| single-outage probability | " + num(sp.pm.pi1) + " |\n";
        md += "| pair probability | " + num(sp.pm.pi2) + " |\n";
        md += "| seed | " + std::to_string(cfg_.seed) + " |\n";
        md += "| solver budget | " + std::to_string(mj.value("budget_max", 0)) + " |\n\n";

        md += "## Thermal calibration\n\n";
        md += "| quantity | value |\n|---|---|\n";
        md += "| limit multiplier kappa | " + num(cj.value("kappa", 0.0), "%.6g") + " |\n";
        md += "| single-outage violation rate (calibration set) | " +
              pct(cj.value("n1_violation_rate", 0.0)) + " |\n";
        md += "| usable records | " + std::to_string(cj.value("usable_records", 0)) + " |\n";
        md += "| score bias | " + num(cj.value("bias", 0.0)) + " |\n\n";

        md += "## Results against the reference\n\n";
        md += "| metric | reference | this run |\n|---|---|---|\n";
        bool canonical_case = sp.n_lines == 186 && cfg_.oracle_n2_sample == 0;
        md += "| single-outage probability | " +
              std::string(canonical_case ? "5.405e-03" : "n/a for this case") + " | " +
              num(sp.pm.pi1, "%.3e") + " |\n";
        md += "| pair probability | " +
              std::string(canonical_case ? "2.922e-05" : "n/a for this case") + " | " +
              num(sp.pm.pi2, "%.3e") + " |\n";
        md += "| single-outage thermal violation rate (calibration set) | 1.5% to 2.0% | " +
              pct(cj.value("n1_violation_rate", 0.0)) + " |\n";
        md += "| risk estimate correlation across states | at least 0.80 | " +
              num(mj.value("pearson", 0.0), "%.3f") + " |\n";
        double ratio = mj.value("mape_hybrid_at_n", 0.0) > 0.0
                           ? mj.value("mape_ml_only", 0.0) / mj.value("mape_hybrid_at_n", 0.0)
                           : 0.0;
        md += "| hybrid risk error improvement at budget = n | at least 2x | " +
              num(ratio, "%.2f") + "x |\n";
        md += "| full-space screening speedup | at least 100x | " +
              num(mj.value("speedup_full_space", 0.0), "%.0f") + "x |\n\n";
        md += "Surrogate-only total-risk error " + pct(mj.value("mape_ml_only", 0.0)) +
              ", hybrid at budget = n " + pct(mj.value("mape_hybrid_at_n", 0.0)) +
              ". On the test set: single-outage thermal violation rate " +
              pct(mj.value("n1_thermal_violation_rate", 0.0)) + ", loss rate incl. islanding " +
              pct(mj.value("n1_loss_rate", 0.0)) + ", pair loss rate " +
              pct(mj.value("n2_loss_rate", 0.0)) + ".\n\n";

        md += "## Artifacts\n\n";
        md += "| path | content |\n|---|---|\n";
        md += "| `states/<set>/state_NNNN.json` | sampled operating states |\n";
        md += "| `oracle/<set>/state_NNNN.<tier>.bin` | exact AC flows per contingency |\n";
        md += "| `oracle/<set>/losses.csv` | per-record loss labels under the calibrated limits |\n";
        md += "| `model/gridrisk_model.bin`, `model/loss_curve.csv` | trained surrogate |\n";
        md += "| `calibration.json` | thermal limits, residual spread, score bias |\n";
        md += "| `reports/ranking_NNNN.csv` | per-state severity ranking |\n";
        md += "| `reports/curve_NNNN.csv` | hybrid and residual risk vs budget |\n";
        md += "| `reports/risk_summary.csv`, `reports/metrics.json` | headline numbers |\n";
        md += "| `reports/figures/` | risk estimates sorted by true risk, budget sweep band |\n";
        atomic_write_file(out_ / "report.md", md);
        note_artifact_("report.md");
        record_timing_("report", t.seconds(), {});
    }

    void run_all() {
        generate();
        oracle("train", "n1");
        train();
        oracle("calibration", "both");
        calibrate();
        oracle("test", "both");
        evaluate();
        report();
    }

    // exposed for tests and the acceptance binary
    CalibrationArtifact load_calibration_artifact() {
        require_artifact_("calibration.json", "run the calibrate stage first");
        return load_calibration_();
    }
    OracleShard load_oracle_shard(const std::string& set, int idx, const std::string& tier) {
        require_artifact_(shard_rel_(set, idx, tier), "run the oracle stage first");
        return load_shard_(set, idx, tier);
    }
    GridCase load_sampled_state(const std::string& set, int idx) {
        require_artifact_(state_rel_(set, idx), "run the generate stage first");
        return load_state_(set, idx);
    }

private:
    class Timer {
    public:
        Timer() : start_(std::chrono::steady_clock::now()) {}
        double seconds() const {
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        }

    private:
        std::chrono::steady_clock::time_point start_;
    };

    static std::string numbered_(const char* stem, int idx, const char* suffix) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s%04d%s", stem, idx, suffix);
        return buf;
    }

    std::string state_rel_(const std::string& set, int idx) const {
        return "states/" + set + "/" + numbered_("state_", idx, ".json");
    }

    std::string shard_rel_(const std::string& set, int idx, const std::string& tier) const {
        return "oracle/" + set + "/" + numbered_("state_", idx, ("." + tier + ".bin").c_str());
    }

    // A relative case_file resolves against the working directory, then the
    // config file's directory, then its parent (configs/ next to data/).
    GridCase load_base_() const {
        std::filesystem::path p = cfg_.case_file;
        if (p.is_relative() && !std::filesystem::exists(p) && !cfg_.config_dir.empty()) {
            if (std::filesystem::exists(cfg_.config_dir / p))
                p = cfg_.config_dir / p;
            else if (std::filesystem::exists(cfg_.config_dir.parent_path() / p))
                p = cfg_.config_dir.parent_path() / p;
        }
        return parse_matpower(read_file(p));
    }

    GridCase load_state_(const std::string& set, int idx) {
        std::string rel = state_rel_(set, idx);
        require_artifact_(rel, "run the generate stage first");
        nlohmann::json j = nlohmann::json::parse(read_file(out_ / rel));
        if (j.value("set", "") != set || j.value("index", -1) != idx)
            throw ValidationError("state file " + rel + " does not describe " + set + "/" +
                                  std::to_string(idx));
        return grid_from_json(j.at("grid"));
    }

    OracleShard load_shard_(const std::string& set, int idx, const std::string& tier) {
        std::string rel = shard_rel_(set, idx, tier);
        require_artifact_(rel, "run the oracle stage for the " + set + " set");
        return shard_deserialize(read_file(out_ / rel));
    }

    void require_states_(const std::string& set) {
        for (int idx = 0; idx < set_size(set); ++idx)
            require_artifact_(state_rel_(set, idx), "run the generate stage first");
    }

    void require_shards_(const std::string& set, const std::string& tier) {
        for (int idx = 0; idx < set_size(set); ++idx)
            require_artifact_(shard_rel_(set, idx, tier),
                              "run the oracle stage for the " + set + " set");
    }

    CalibrationArtifact load_calibration_() {
        nlohmann::json j = nlohmann::json::parse(read_file(out_ / "calibration.json"));
        CalibrationArtifact cal;
        try {
            cal.kappa = j.at("kappa").get<double>();
            cal.n1_violation_rate = j.at("n1_violation_rate").get<double>();
            cal.usable_records = j.at("usable_records").get<int>();
            cal.bias = j.at("bias").get<double>();
            std::vector<double> limits = j.at("limits").get<std::vector<double>>();
            std::vector<double> sigma = j.at("sigma").get<std::vector<double>>();
            cal.limits = Eigen::Map<Eigen::VectorXd>(limits.data(), static_cast<Eigen::Index>(limits.size()));
            cal.sigma = Eigen::Map<Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
        } catch (const nlohmann::json::exception& e) {
            throw SemanticError(std::string("calibration.json: ") + e.what());
        }
        return cal;
    }

    void check_space_match_(const std::vector<SecurityRecord>& recs,
                            const std::vector<Contingency>& zs, const std::string& set, int idx) {
        if (recs.size() != zs.size())
            throw ValidationError("oracle shards for " + set + "/" + std::to_string(idx) +
                                  " cover " + std::to_string(recs.size()) +
                                  " contingencies but the config describes " +
                                  std::to_string(zs.size()) + "; rerun the oracle stage");
        for (std::size_t k = 0; k < recs.size(); ++k)
            if (!(recs[k].z == zs[k]))
                throw ValidationError("oracle shard for " + set + "/" + std::to_string(idx) +
                                      " does not match the configured contingency space at " +
                                      zs[k].label() + "; rerun the oracle stage");
    }

    void write_losses_csv_(const std::string& set) {
        CalibrationArtifact cal = load_calibration_();
        std::vector<double> limits(cal.limits.data(), cal.limits.data() + cal.limits.size());
        CsvWriter csv({"state", "contingency_kind", "line_i", "line_j", "converged", "islanded",
                       "loss", "max_loading_ratio"});
        for (int idx = 0; idx < set_size(set); ++idx) {
            for (const std::string& tier : {std::string("n1"), std::string("n2")}) {
                std::string rel = shard_rel_(set, idx, tier);
                if (!std::filesystem::exists(out_ / rel)) continue;  // train set has no pair tier
                OracleShard shard = load_shard_(set, idx, tier);
                for (SecurityRecord& rec : shard.records) {
                    apply_limits(rec, limits);
                    auto row = csv.row();
                    row.cell(idx)
                        .cell(rec.z.kind == ContingencyKind::single ? "single" : "double")
                        .cell(rec.z.i);
                    if (rec.z.kind == ContingencyKind::single)
                        row.empty();
                    else
                        row.cell(rec.z.j);
                    row.cell(rec.converged ? 1 : 0).cell(rec.islanded ? 1 : 0).cell(rec.loss);
                    if (std::isnan(rec.max_loading_ratio))
                        row.empty();
                    else
                        row.cell(rec.max_loading_ratio);
                }
            }
        }
        std::string rel = "oracle/" + set + "/losses.csv";
        csv.save(out_ / rel);
        note_artifact_(rel);
    }

    double ac_seconds_per_solve_() const {
        std::filesystem::path p = out_ / "timings.json";
        if (!std::filesystem::exists(p)) return 0.0;
        nlohmann::json j = nlohmann::json::parse(read_file(p), nullptr, false);
        if (j.is_discarded()) return 0.0;
        double seconds = 0.0;
        long long solves = 0;
        for (const auto& [key, entry] : j.items()) {
            if (key.rfind("oracle:", 0) != 0) continue;
            seconds += entry.value("seconds", 0.0);
            solves += entry.value("solves", 0ll);
        }
        return solves > 0 ? seconds / static_cast<double>(solves) : 0.0;
    }

    // ---- manifest: config identity plus a checksum per artifact ----

    void load_manifest_() {
        std::filesystem::path p = out_ / "manifest.json";
        std::string want = config_checksum_();
        if (std::filesystem::exists(p)) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_file(p));
                std::string have = j.value("config_checksum", "");
                if (have != want)
                    throw ValidationError(
                        "output directory was produced with a different configuration; use a fresh "
                        "directory or restore the original config");
                artifacts_.clear();
                for (const auto& [rel, sum] : j.at("artifacts").items())
                    artifacts_[rel] = sum.get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw IoError("manifest.json is corrupt: " + std::string(e.what()));
            }
        } else {
            artifacts_.clear();
            save_manifest_();
        }
    }

    void save_manifest_() const {
        nlohmann::ordered_json j;
        j["config"] = run_config_to_json(cfg_);
        j["config_checksum"] = config_checksum_();
        auto& arts = j["artifacts"] = nlohmann::ordered_json::object();
        std::vector<std::string> keys;
        keys.reserve(artifacts_.size());
        for (const auto& [rel, sum] : artifacts_) keys.push_back(rel);
        std::sort(keys.begin(), keys.end());
        for (const std::string& rel : keys) arts[rel] = artifacts_.at(rel);
        atomic_write_file(out_ / "manifest.json", j.dump(2) + "\n");
    }

    std::string config_checksum_() const {
        std::string dump = run_config_to_json(cfg_).dump();
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(dump)));
        return buf;
    }

    void note_artifact_(const std::string& rel) {
        artifacts_[rel] = file_checksum_hex(out_ / rel);
        save_manifest_();
    }

    bool artifact_is_current_(const std::string& rel) const {
        auto it = artifacts_.find(rel);
        if (it == artifacts_.end()) return false;
        if (!std::filesystem::exists(out_ / rel)) return false;
        return file_checksum_hex(out_ / rel) == it->second;
    }

    void require_artifact_(const std::string& rel, const std::string& hint) const {
        auto it = artifacts_.find(rel);
        if (it == artifacts_.end() || !std::filesystem::exists(out_ / rel))
            throw ValidationError("missing artifact " + rel + "; " + hint);
        if (file_checksum_hex(out_ / rel) != it->second)
            throw ValidationError("artifact " + rel +
                                  " does not match the manifest; rerun the stage that produces it");
    }

    void record_timing_(const std::string& name, double seconds,
                        std::initializer_list<std::pair<const char*, long long>> extras) {
        std::filesystem::path p = out_ / "timings.json";
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        if (std::filesystem::exists(p)) {
            nlohmann::ordered_json prev = nlohmann::ordered_json::parse(read_file(p), nullptr, false);
            if (!prev.is_discarded() && prev.is_object()) j = std::move(prev);
        }
        nlohmann::ordered_json entry;
        entry["seconds"] = seconds;
        for (const auto& [key, value] : extras) entry[key] = value;
        j[name] = entry;
        atomic_write_file(p, j.dump(2) + "\n");
    }

    RunConfig cfg_;
    std::filesystem::path out_;
    std::map<std::string, std::string> artifacts_;
};

}  // namespace gridrisk
