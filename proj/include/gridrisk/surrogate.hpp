#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridrisk/grid.hpp"
#include "gridrisk/powerflow.hpp"
#include "gridrisk/rng.hpp"
#include "gridrisk/util.hpp"

namespace gridrisk {

// Fixed mapping from an operating state to the network input: per-bus active
// and reactive load, per-generator set-point (zero when the unit is off) and
// on-flag, all in per-unit of the case power base. The topology itself is not
// an input; outages enter through the conditioned layer's unit mask.
struct FeatureExtractor {
    int n_buses = 0;
    int n_gens = 0;
    double base_mva = 100.0;

    static FeatureExtractor for_case(const GridCase& g) {
        return {static_cast<int>(g.buses.size()), static_cast<int>(g.generators.size()), g.base_mva};
    }

    int size() const { return 2 * n_buses + 2 * n_gens; }

    Eigen::VectorXd operator()(const GridCase& g) const {
        if (static_cast<int>(g.buses.size()) != n_buses ||
            static_cast<int>(g.generators.size()) != n_gens)
            throw ValidationError("state does not match the feature layout");
        Eigen::VectorXd x(size());
        for (int i = 0; i < n_buses; ++i) {
            x[i] = g.buses[i].p_load / base_mva;
            x[n_buses + i] = g.buses[i].q_load / base_mva;
        }
        for (int j = 0; j < n_gens; ++j) {
            const Generator& gen = g.generators[j];
            x[2 * n_buses + j] = gen.in_service ? gen.p_gen / base_mva : 0.0;
            x[2 * n_buses + n_gens + j] = gen.in_service ? 1.0 : 0.0;
        }
        return x;
    }
};

struct SurrogateSample {
    Eigen::VectorXd features;
    Eigen::VectorXd targets_mw;  // NaN where the line flow is undefined
    std::vector<int> outed;      // ascending line indices, empty for the intact state
    int state_id = 0;
};

// Training corpus: intact states and single-outage records only. Double
// outages are never trained on; the conditioned layer generalizes to them by
// activating both single-outage unit blocks.
struct SurrogateDataset {
    int n_features = 0;
    int n_lines = 0;
    std::vector<SurrogateSample> samples;

    void add_intact(const FeatureExtractor& fx, const GridCase& state, const Eigen::VectorXd& flows_mw,
                    int state_id) {
        push(fx(state), flows_mw, {}, state_id);
    }

    // skips diverged records (no usable target); throws on double outages
    bool add_record(const FeatureExtractor& fx, const GridCase& state, const SecurityRecord& rec,
                    int state_id) {
        if (rec.z.kind != ContingencyKind::single)
            throw ValidationError("surrogate training is restricted to single line outages");
        if (!rec.converged) return false;
        push(fx(state), rec.flows, rec.z.outed_lines(), state_id);
        return true;
    }

private:
    void push(Eigen::VectorXd x, const Eigen::VectorXd& y, std::vector<int> outed, int state_id) {
        if (samples.empty()) {
            n_features = static_cast<int>(x.size());
            n_lines = static_cast<int>(y.size());
        }
        if (x.size() != n_features || y.size() != n_lines)
            throw ValidationError("sample shape does not match the dataset");
        samples.push_back({std::move(x), y, std::move(outed), state_id});
    }
};

// Per-feature input and per-line target standardization, fitted on the
// training corpus and frozen into the model.
struct Normalization {
    Eigen::VectorXd x_mean, x_scale, y_mean, y_scale;
};

inline Normalization normalization_of(const SurrogateDataset& ds) {
    if (ds.samples.empty()) throw ValidationError("cannot normalize an empty dataset");
    const int nf = ds.n_features, nl = ds.n_lines;
    Normalization nm;
    nm.x_mean = Eigen::VectorXd::Zero(nf);
    nm.x_scale = Eigen::VectorXd::Zero(nf);
    nm.y_mean = Eigen::VectorXd::Zero(nl);
    nm.y_scale = Eigen::VectorXd::Zero(nl);

    for (const SurrogateSample& s : ds.samples) nm.x_mean += s.features;
    nm.x_mean /= static_cast<double>(ds.samples.size());
    for (const SurrogateSample& s : ds.samples) {
        Eigen::VectorXd d = s.features - nm.x_mean;
        nm.x_scale += d.cwiseProduct(d);
    }
    nm.x_scale = (nm.x_scale / static_cast<double>(ds.samples.size())).cwiseSqrt();

    Eigen::VectorXd count = Eigen::VectorXd::Zero(nl);
    for (const SurrogateSample& s : ds.samples)
        for (int i = 0; i < nl; ++i)
            if (std::isfinite(s.targets_mw[i])) {
                nm.y_mean[i] += s.targets_mw[i];
                count[i] += 1.0;
            }
    for (int i = 0; i < nl; ++i)
        if (count[i] > 0.0) nm.y_mean[i] /= count[i];
    for (const SurrogateSample& s : ds.samples)
        for (int i = 0; i < nl; ++i)
            if (std::isfinite(s.targets_mw[i])) {
                double d = s.targets_mw[i] - nm.y_mean[i];
                nm.y_scale[i] += d * d;
            }
    for (int i = 0; i < nl; ++i)
        nm.y_scale[i] = count[i] > 0.0 ? std::sqrt(nm.y_scale[i] / count[i]) : 0.0;

    // constant features and dead lines get unit scale so standardization stays
    // a bijection
    for (int i = 0; i < nf; ++i)
        if (nm.x_scale[i] < 1e-9) nm.x_scale[i] = 1.0;
    for (int i = 0; i < nl; ++i)
        if (nm.y_scale[i] < 1e-9) nm.y_scale[i] = 1.0;
    return nm;
}

// Two-layer network whose second hidden layer is partitioned into a block
// that is always active and one small block per line that only switches on
// while that line is out. Scalar is float in production and double in
// gradient verification.
template <typename Scalar>
struct GuidedDropoutNet {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    int n_features = 0;
    int n_lines = 0;
    int hidden = 0;
    int base_units = 0;
    int units_per_line = 0;

    Mat w1;  // hidden x features
    Vec b1;
    Mat w2;  // conditioned x hidden
    Vec b2;
    Mat w3;  // lines x conditioned
    Vec b3;

    int conditioned() const { return base_units + n_lines * units_per_line; }

    void init(int features, int lines, int hidden_units, int base, int per_line, Rng& rng) {
        if (features < 1 || lines < 1 || hidden_units < 1 || base < 1 || per_line < 1)
            throw ValidationError("network dimensions must be positive");
        n_features = features;
        n_lines = lines;
        hidden = hidden_units;
        base_units = base;
        units_per_line = per_line;
        auto glorot = [&](Mat& w, int rows, int cols) {
            double limit = std::sqrt(6.0 / (rows + cols));
            w.resize(rows, cols);
            for (int c = 0; c < cols; ++c)
                for (int r = 0; r < rows; ++r) w(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
        };
        glorot(w1, hidden, n_features);
        glorot(w2, conditioned(), hidden);
        glorot(w3, n_lines, conditioned());
        b1 = Vec::Zero(hidden);
        b2 = Vec::Zero(conditioned());
        b3 = Vec::Zero(n_lines);
    }

    // active conditioned units for an outage set: the base block plus the
    // per-line block of every outed line
    std::vector<int> active_units(const std::vector<int>& outed) const {
        std::vector<int> units(static_cast<std::size_t>(base_units));
        std::iota(units.begin(), units.end(), 0);
        for (int line : outed) {
            if (line < 0 || line >= n_lines) throw ValidationError("outed line index out of range");
            int start = base_units + line * units_per_line;
            for (int u = 0; u < units_per_line; ++u) units.push_back(start + u);
        }
        return units;
    }
};

namespace surrogate_detail {

// forward pass restricted to the active conditioned units; inactive units
// contribute exactly zero, so they are never touched
template <typename Scalar>
struct Activations {
    using Vec = typename GuidedDropoutNet<Scalar>::Vec;
    Vec h1;         // tanh encoder output
    Vec h2_active;  // tanh of the active conditioned units
    Vec y;          // normalized flow prediction
};

template <typename Scalar>
inline Activations<Scalar> forward(const GuidedDropoutNet<Scalar>& net,
                                   const typename GuidedDropoutNet<Scalar>::Vec& x,
                                   const std::vector<int>& units) {
    Activations<Scalar> act;
    act.h1 = (net.w1 * x + net.b1).array().tanh().matrix();
    act.h2_active.resize(static_cast<Eigen::Index>(units.size()));
    act.y = net.b3;
    for (std::size_t k = 0; k < units.size(); ++k) {
        int u = units[k];
        Scalar a = net.w2.row(u).dot(act.h1) + net.b2[u];
        Scalar h = std::tanh(a);
        act.h2_active[static_cast<Eigen::Index>(k)] = h;
        act.y += net.w3.col(u) * h;
    }
    return act;
}

template <typename Scalar>
struct Gradients {
    using Mat = typename GuidedDropoutNet<Scalar>::Mat;
    using Vec = typename GuidedDropoutNet<Scalar>::Vec;
    Mat w1, w2, w3;
    Vec b1, b2, b3;

    void zero_like(const GuidedDropoutNet<Scalar>& net) {
        w1 = Mat::Zero(net.w1.rows(), net.w1.cols());
        w2 = Mat::Zero(net.w2.rows(), net.w2.cols());
        w3 = Mat::Zero(net.w3.rows(), net.w3.cols());
        b1 = Vec::Zero(net.b1.size());
        b2 = Vec::Zero(net.b2.size());
        b3 = Vec::Zero(net.b3.size());
    }
};

// accumulates d(sum_i w_i e_i^2)/d(theta) for one sample into grad and returns
// (sum_i w_i e_i^2, sum_i w_i); the caller divides by the batch weight total
template <typename Scalar>
inline std::pair<double, double> accumulate_squared_error(
    const GuidedDropoutNet<Scalar>& net, const typename GuidedDropoutNet<Scalar>::Vec& x,
    const typename GuidedDropoutNet<Scalar>::Vec& y_target,
    const typename GuidedDropoutNet<Scalar>::Vec& weight, const std::vector<int>& units,
    Gradients<Scalar>& grad) {
    using Vec = typename GuidedDropoutNet<Scalar>::Vec;
    Activations<Scalar> act = forward(net, x, units);

    Vec err = act.y - y_target;
    double num = 0.0, den = 0.0;
    Vec dy(net.n_lines);
    for (int i = 0; i < net.n_lines; ++i) {
        double w = static_cast<double>(weight[i]);
        double e = static_cast<double>(err[i]);
        num += w * e * e;
        den += w;
        dy[i] = static_cast<Scalar>(2.0 * w) * err[i];
    }

    grad.b3 += dy;
    Vec dh1 = Vec::Zero(net.hidden);
    for (std::size_t k = 0; k < units.size(); ++k) {
        int u = units[k];
        Scalar h = act.h2_active[static_cast<Eigen::Index>(k)];
        Scalar dh2 = net.w3.col(u).dot(dy);
        Scalar da2 = dh2 * (Scalar(1) - h * h);
        grad.w3.col(u) += dy * h;
        grad.w2.row(u) += da2 * act.h1.transpose();
        grad.b2[u] += da2;
        dh1 += da2 * net.w2.row(u).transpose();
    }
    Vec da1 = dh1.cwiseProduct((Scalar(1) - act.h1.array().square()).matrix());
    grad.w1 += da1 * x.transpose();
    grad.b1 += da1;
    return {num, den};
}

}  // namespace surrogate_detail

// Central-difference verification of the analytic gradients on one sample.
// Returns the worst relative error over the probed parameters.
inline double gradient_check(GuidedDropoutNet<double>& net, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y_target, const Eigen::VectorXd& weight,
                             const std::vector<int>& outed, int probes_per_tensor, Rng& rng) {
    std::vector<int> units = net.active_units(outed);
    surrogate_detail::Gradients<double> grad;
    grad.zero_like(net);
    auto [num, den] = surrogate_detail::accumulate_squared_error(net, x, y_target, weight, units, grad);
    if (!(den > 0.0)) throw ValidationError("gradient check needs at least one weighted line");

    auto loss_now = [&]() {
        auto act = surrogate_detail::forward(net, x, units);
        Eigen::VectorXd err = act.y - y_target;
        return err.cwiseProduct(err).dot(weight) / den;
    };

    double worst = 0.0;
    auto probe = [&](auto& theta, const auto& analytic) {
        for (int p = 0; p < probes_per_tensor; ++p) {
            int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(theta.rows())));
            int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(theta.cols())));
            double saved = theta(r, c);
            const double h = 1e-6;
            theta(r, c) = saved + h;
            double up = loss_now();
            theta(r, c) = saved - h;
            double down = loss_now();
            theta(r, c) = saved;
            double fd = (up - down) / (2.0 * h);
            double an = analytic(r, c) / den;
            double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, std::abs(fd - an) / scale);
        }
    };
    probe(net.w1, grad.w1);
    probe(net.w2, grad.w2);
    probe(net.w3, grad.w3);
    probe(net.b1, grad.b1);
    probe(net.b2, grad.b2);
    probe(net.b3, grad.b3);
    return worst;
}

// Production model: float weights plus the frozen normalization and the
// feature layout needed to rebuild the extractor.
struct Surrogate {
    int n_buses = 0;
    int n_gens = 0;
    double base_mva = 100.0;
    GuidedDropoutNet<float> net;
    Normalization norm;

    FeatureExtractor extractor() const { return {n_buses, n_gens, base_mva}; }
};

struct TrainOptions {
    int hidden = 96;
    int base_units = 48;
    int units_per_line = 4;
    int epochs = 60;
    int batch_size = 32;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double lr_decay = 0.995;           // per epoch
    double validation_fraction = 0.25;  // fraction of states, not samples

    void check() const {
        if (hidden < 1 || base_units < 1 || units_per_line < 1)
            throw ValidationError("network dimensions must be positive");
        if (epochs < 1 || batch_size < 1) throw ValidationError("epochs and batch size must be positive");
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr decay must lie in (0, 1]");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw ValidationError("validation fraction must lie in [0, 1)");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    Surrogate model;
    std::vector<EpochStats> curve;
};

namespace surrogate_detail {

template <typename Scalar>
struct PreparedSample {
    typename GuidedDropoutNet<Scalar>::Vec x, y, w;
    int pattern = 0;  // index into the shared active-unit table
};

template <typename Scalar>
inline double mean_loss(const GuidedDropoutNet<Scalar>& net,
                        const std::vector<PreparedSample<Scalar>>& samples,
                        const std::vector<int>& subset,
                        const std::vector<std::vector<int>>& patterns) {
    double num = 0.0, den = 0.0;
    for (int s : subset) {
        const PreparedSample<Scalar>& ps = samples[static_cast<std::size_t>(s)];
        auto act = forward(net, ps.x, patterns[static_cast<std::size_t>(ps.pattern)]);
        for (int i = 0; i < net.n_lines; ++i) {
            double e = static_cast<double>(act.y[i] - ps.y[i]);
            double w = static_cast<double>(ps.w[i]);
            num += w * e * e;
            den += w;
        }
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace surrogate_detail

// Minibatch SGD with momentum on the standardized weighted squared error.
// Undefined targets (the outed line itself, lines dropped with a dead island)
// carry zero weight. The split into train and validation states, the weight
// initialization, and the per-epoch shuffles all derive from root_seed, so a
// rerun reproduces the model bit for bit.
inline TrainResult train_surrogate(const SurrogateDataset& ds, const FeatureExtractor& fx,
                                   const TrainOptions& opts, std::uint64_t root_seed) {
    opts.check();
    if (ds.samples.empty()) throw TrainingError(0, "training dataset is empty");
    if (fx.size() != ds.n_features) throw TrainingError(0, "feature layout does not match the dataset");

    using Scalar = float;
    using Net = GuidedDropoutNet<Scalar>;

    TrainResult result;
    Surrogate& model = result.model;
    model.n_buses = fx.n_buses;
    model.n_gens = fx.n_gens;
    model.base_mva = fx.base_mva;
    model.norm = normalization_of(ds);

    Rng init_rng = Rng::derive(root_seed, "surrogate-init");
    model.net.init(ds.n_features, ds.n_lines, opts.hidden, opts.base_units, opts.units_per_line,
                   init_rng);
    Net& net = model.net;

    // one shared active-unit list per outage pattern
    std::vector<std::vector<int>> pattern_units;
    std::vector<std::vector<int>> pattern_keys;
    auto pattern_of = [&](const std::vector<int>& outed) {
        for (std::size_t k = 0; k < pattern_keys.size(); ++k)
            if (pattern_keys[k] == outed) return static_cast<int>(k);
        pattern_keys.push_back(outed);
        pattern_units.push_back(net.active_units(outed));
        return static_cast<int>(pattern_keys.size() - 1);
    };

    std::vector<surrogate_detail::PreparedSample<Scalar>> prepared(ds.samples.size());
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        const SurrogateSample& raw = ds.samples[s];
        auto& ps = prepared[s];
        ps.x = ((raw.features - model.norm.x_mean).cwiseQuotient(model.norm.x_scale)).cast<Scalar>();
        ps.y.resize(ds.n_lines);
        ps.w.resize(ds.n_lines);
        for (int i = 0; i < ds.n_lines; ++i) {
            if (std::isfinite(raw.targets_mw[i])) {
                ps.y[i] = static_cast<Scalar>((raw.targets_mw[i] - model.norm.y_mean[i]) /
                                              model.norm.y_scale[i]);
                ps.w[i] = Scalar(1);
            } else {
                ps.y[i] = Scalar(0);
                ps.w[i] = Scalar(0);
            }
        }
        ps.pattern = pattern_of(raw.outed);
    }

    // hold out whole states: residuals on unseen operating points are the
    // signal worth watching
    std::vector<int> state_ids;
    for (const SurrogateSample& s : ds.samples)
        if (std::find(state_ids.begin(), state_ids.end(), s.state_id) == state_ids.end())
            state_ids.push_back(s.state_id);
    Rng split_rng = Rng::derive(root_seed, "surrogate-split");
    for (std::size_t k = state_ids.size(); k > 1; --k)
        std::swap(state_ids[k - 1], state_ids[split_rng.below(k)]);
    std::size_t n_val_states = static_cast<std::size_t>(opts.validation_fraction * state_ids.size());
    std::vector<int> val_states(state_ids.begin(), state_ids.begin() + n_val_states);

    std::vector<int> train_idx, val_idx;
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        bool held = std::find(val_states.begin(), val_states.end(), ds.samples[s].state_id) !=
                    val_states.end();
        (held ? val_idx : train_idx).push_back(static_cast<int>(s));
    }
    if (train_idx.empty()) throw TrainingError(0, "state split left no training samples");

    surrogate_detail::Gradients<Scalar> grad, velocity;
    grad.zero_like(net);
    velocity.zero_like(net);

    Rng shuffle_rng = Rng::derive(root_seed, "surrogate-shuffle");
    double lr = opts.learning_rate;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (std::size_t k = train_idx.size(); k > 1; --k)
            std::swap(train_idx[k - 1], train_idx[shuffle_rng.below(k)]);

        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(opts.batch_size)) {
            std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(opts.batch_size));
            grad.w1.setZero();
            grad.w2.setZero();
            grad.w3.setZero();
            grad.b1.setZero();
            grad.b2.setZero();
            grad.b3.setZero();
            double total_weight = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const auto& ps = prepared[static_cast<std::size_t>(train_idx[k])];
                auto [num, den] = surrogate_detail::accumulate_squared_error(
                    net, ps.x, ps.y, ps.w, pattern_units[static_cast<std::size_t>(ps.pattern)], grad);
                total_weight += den;
            }
            if (!(total_weight > 0.0)) continue;
            Scalar step = static_cast<Scalar>(lr / total_weight);
            Scalar mu = static_cast<Scalar>(opts.momentum);
            auto update = [&](auto& v, auto& g, auto& w) {
                v = mu * v - step * g;
                w += v;
            };
            update(velocity.w1, grad.w1, net.w1);
            update(velocity.w2, grad.w2, net.w2);
            update(velocity.w3, grad.w3, net.w3);
            update(velocity.b1, grad.b1, net.b1);
            update(velocity.b2, grad.b2, net.b2);
            update(velocity.b3, grad.b3, net.b3);
        }
        lr *= opts.lr_decay;

        EpochStats stats;
        stats.train_loss = surrogate_detail::mean_loss(net, prepared, train_idx, pattern_units);
        stats.val_loss = val_idx.empty()
                             ? stats.train_loss
                             : surrogate_detail::mean_loss(net, prepared, val_idx, pattern_units);
        if (!std::isfinite(stats.train_loss))
            throw TrainingError(epoch, "training diverged to a non-finite loss");
        result.curve.push_back(stats);
    }
    return result;
}

// Per-state predictor. The encoder pass and the conditioned activations are
// shared across every contingency of the state; each prediction then only
// adds the unit blocks of its outed lines on top of the cached baseline.
class BatchPredictor {
public:
    BatchPredictor(const Surrogate& model, const Eigen::VectorXd& features) : model_(&model) {
        const GuidedDropoutNet<float>& net = model.net;
        if (features.size() != net.n_features)
            throw ValidationError("feature vector does not match the model");
        Eigen::VectorXf x =
            ((features - model.norm.x_mean).cwiseQuotient(model.norm.x_scale)).cast<float>();
        Eigen::VectorXf h1 = (net.w1 * x + net.b1).array().tanh().matrix();
        t_ = (net.w2 * h1 + net.b2).array().tanh().matrix();
        y_base_ = net.b3 + net.w3.leftCols(net.base_units) * t_.head(net.base_units);
    }

    // flows in MW; entries of outed lines are zeroed. The outage is a set:
    // blocks are added in sorted line order so the result is independent of
    // how the caller ordered the list.
    Eigen::VectorXd predict(std::vector<int> outed) const {
        std::sort(outed.begin(), outed.end());
        const GuidedDropoutNet<float>& net = model_->net;
        Eigen::VectorXf y = y_base_;
        for (int line : outed) {
            if (line < 0 || line >= net.n_lines) throw ValidationError("outed line index out of range");
            int start = net.base_units + line * net.units_per_line;
            y += net.w3.middleCols(start, net.units_per_line) * t_.segment(start, net.units_per_line);
        }
        Eigen::VectorXd out =
            y.cast<double>().cwiseProduct(model_->norm.y_scale) + model_->norm.y_mean;
        for (int line : outed) out[line] = 0.0;
        return out;
    }

    Eigen::VectorXd predict(const Contingency& z) const { return predict(z.outed_lines()); }

    Eigen::VectorXd intact() const { return predict(std::vector<int>{}); }

private:
    const Surrogate* model_;
    Eigen::VectorXf t_;       // tanh of every conditioned unit
    Eigen::VectorXf y_base_;  // bias plus the always-active block, normalized
};

inline Eigen::VectorXd predict_flows(const Surrogate& model, const Eigen::VectorXd& features,
                                     const Contingency& z) {
    return BatchPredictor(model, features).predict(z);
}

// Serialization: magic, version, integer header, then every tensor as little
// endian f64 in a fixed order, closed by a checksum of the payload.
namespace surrogate_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& data, std::size_t pos) : data_(&data), pos_(pos) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>((*data_)[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>((*data_)[pos_ + i])) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_->size()) throw IoError("surrogate file truncated");
    }
    const std::string* data_;
    std::size_t pos_;
};

}  // namespace surrogate_detail

inline std::string surrogate_serialize(const Surrogate& model) {
    using surrogate_detail::put_f64;
    using surrogate_detail::put_u32;
    const GuidedDropoutNet<float>& net = model.net;
    std::string out = "GRPX";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(net.n_features));
    put_u32(out, static_cast<std::uint32_t>(net.n_lines));
    put_u32(out, static_cast<std::uint32_t>(net.hidden));
    put_u32(out, static_cast<std::uint32_t>(net.base_units));
    put_u32(out, static_cast<std::uint32_t>(net.units_per_line));
    put_u32(out, static_cast<std::uint32_t>(model.n_buses));
    put_u32(out, static_cast<std::uint32_t>(model.n_gens));
    put_f64(out, model.base_mva);
    auto put_vecd = [&](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
    };
    put_vecd(model.norm.x_mean);
    put_vecd(model.norm.x_scale);
    put_vecd(model.norm.y_mean);
    put_vecd(model.norm.y_scale);
    auto put_mat = [&](const Eigen::MatrixXf& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) put_f64(out, static_cast<double>(m(r, c)));
    };
    auto put_vecf = [&](const Eigen::VectorXf& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, static_cast<double>(v[i]));
    };
    put_mat(net.w1);
    put_vecf(net.b1);
    put_mat(net.w2);
    put_vecf(net.b2);
    put_mat(net.w3);
    put_vecf(net.b3);
    std::uint64_t checksum = fnv1a64(out.data(), out.size());
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((checksum >> (8 * i)) & 0xff));
    return out;
}

inline Surrogate surrogate_deserialize(const std::string& data) {
    if (data.size() < 12 || data.compare(0, 4, "GRPX") != 0)
        throw IoError("not a surrogate model file");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[data.size() - 8 + i]))
                  << (8 * i);
    if (fnv1a64(data.data(), data.size() - 8) != stored)
        throw IoError("surrogate file checksum mismatch");

    surrogate_detail::Reader rd(data, 4);
    std::uint32_t version = rd.u32();
    if (version != 1) throw IoError("unsupported surrogate file version " + std::to_string(version));

    Surrogate model;
    GuidedDropoutNet<float>& net = model.net;
    net.n_features = static_cast<int>(rd.u32());
    net.n_lines = static_cast<int>(rd.u32());
    net.hidden = static_cast<int>(rd.u32());
    net.base_units = static_cast<int>(rd.u32());
    net.units_per_line = static_cast<int>(rd.u32());
    model.n_buses = static_cast<int>(rd.u32());
    model.n_gens = static_cast<int>(rd.u32());
    model.base_mva = rd.f64();

    auto get_vecd = [&](Eigen::VectorXd& v, int n) {
        v.resize(n);
        for (int i = 0; i < n; ++i) v[i] = rd.f64();
    };
    get_vecd(model.norm.x_mean, net.n_features);
    get_vecd(model.norm.x_scale, net.n_features);
    get_vecd(model.norm.y_mean, net.n_lines);
    get_vecd(model.norm.y_scale, net.n_lines);
    auto get_mat = [&](Eigen::MatrixXf& m, int rows, int cols) {
        m.resize(rows, cols);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) m(r, c) = static_cast<float>(rd.f64());
    };
    auto get_vecf = [&](Eigen::VectorXf& v, int n) {
        v.resize(n);
        for (int i = 0; i < n; ++i) v[i] = static_cast<float>(rd.f64());
    };
    int cond = net.conditioned();
    get_mat(net.w1, net.hidden, net.n_features);
    get_vecf(net.b1, net.hidden);
    get_mat(net.w2, cond, net.hidden);
    get_vecf(net.b2, cond);
    get_mat(net.w3, net.n_lines, cond);
    get_vecf(net.b3, net.n_lines);
    if (rd.pos() != data.size() - 8) throw IoError("surrogate file has trailing bytes");
    return model;
}

inline void save_surrogate(const Surrogate& model, const std::filesystem::path& path) {
    atomic_write_file(path, surrogate_serialize(model));
}

inline Surrogate load_surrogate(const std::filesystem::path& path) {
    return surrogate_deserialize(read_file(path));
}

}  // namespace gridrisk
