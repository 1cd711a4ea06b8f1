#include <gridrisk/surrogate.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gridrisk;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// four buses, six lines, one generator; the records are fabricated, only the
// shapes and the load-to-flow mapping matter here
GridCase tiny_grid(int state) {
    GridCase g;
    g.buses.push_back({1, BusKind::slack, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
    for (int i = 2; i <= 4; ++i) {
        double p = 50.0 + 10.0 * state + 5.0 * i;
        g.buses.push_back({i, BusKind::pq, p, 0.3 * p, 0.0, 0.0, 1.0, 1.0});
    }
    int ends[6][2] = {{1, 2}, {2, 3}, {3, 4}, {4, 1}, {1, 3}, {2, 4}};
    for (auto& e : ends) g.branches.push_back({e[0], e[1], 0.01, 0.1, 0.0, 1.0, 0.0, true});
    g.generators.push_back({1, 200.0 + 5.0 * state, -100.0, 100.0, 1.0, true});
    return g;
}

// smooth synthetic truth: flows respond linearly to the loads, and an outage
// shifts every surviving line by its own amount
Eigen::VectorXd tiny_flows(const GridCase& g, int outed) {
    Eigen::VectorXd f(6);
    double total = 0.0;
    for (const Bus& b : g.buses) total += b.p_load;
    for (int l = 0; l < 6; ++l) {
        f[l] = 20.0 + 3.0 * l + 0.4 * total + 1.5 * g.buses[1 + l % 3].p_load;
        if (outed >= 0 && l != outed) f[l] += 8.0 * (l + 1);
    }
    if (outed >= 0) f[outed] = kNan;
    return f;
}

SurrogateDataset tiny_dataset(int n_states) {
    SurrogateDataset ds;
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    for (int s = 0; s < n_states; ++s) {
        GridCase g = tiny_grid(s);
        ds.add_intact(fx, g, tiny_flows(g, -1), s);
        for (int l = 0; l < 6; ++l) {
            SecurityRecord rec;
            rec.z = Contingency::single(l, 0.0);
            rec.converged = true;
            rec.flows = tiny_flows(g, l);
            ds.add_record(fx, g, rec, s);
        }
    }
    return ds;
}

TrainOptions tiny_options() {
    TrainOptions opts;
    opts.hidden = 24;
    opts.base_units = 12;
    opts.units_per_line = 3;
    opts.epochs = 300;
    opts.batch_size = 8;
    opts.learning_rate = 0.1;
    opts.validation_fraction = 0.0;
    return opts;
}

}  // namespace

TEST(FeatureExtractor, LayoutAndValues) {
    GridCase g = grtest::load_case("case118.m");
    FeatureExtractor fx = FeatureExtractor::for_case(g);
    EXPECT_EQ(fx.size(), 2 * 118 + 2 * 54);

    GridCase tiny = tiny_grid(0);
    tiny.generators[0].in_service = false;
    FeatureExtractor tfx = FeatureExtractor::for_case(tiny);
    Eigen::VectorXd x = tfx(tiny);
    ASSERT_EQ(x.size(), 2 * 4 + 2 * 1);
    EXPECT_EQ(x[0], 0.0);                                // slack has no load
    EXPECT_EQ(x[1], tiny.buses[1].p_load / 100.0);
    EXPECT_EQ(x[4 + 1], tiny.buses[1].q_load / 100.0);
    EXPECT_EQ(x[8], 0.0);                                // off unit contributes nothing
    EXPECT_EQ(x[9], 0.0);                                // and its flag is down

    tiny.generators[0].in_service = true;
    x = tfx(tiny);
    EXPECT_EQ(x[8], tiny.generators[0].p_gen / 100.0);
    EXPECT_EQ(x[9], 1.0);

    EXPECT_THROW(tfx(grtest::load_case("case14.m")), ValidationError);
}

TEST(GuidedDropoutNet, ActiveUnitsComposeDisjointBlocks) {
    Rng rng(1);
    GuidedDropoutNet<double> net;
    net.init(8, 5, 6, 4, 3, rng);
    EXPECT_EQ(net.conditioned(), 4 + 5 * 3);

    std::vector<int> base = net.active_units({});
    EXPECT_EQ(base, (std::vector<int>{0, 1, 2, 3}));
    std::vector<int> one = net.active_units({2});
    EXPECT_EQ(one, (std::vector<int>{0, 1, 2, 3, 10, 11, 12}));
    std::vector<int> two = net.active_units({1, 3});
    EXPECT_EQ(two, (std::vector<int>{0, 1, 2, 3, 7, 8, 9, 13, 14, 15}));
    EXPECT_THROW(net.active_units({5}), ValidationError);
    EXPECT_THROW(net.active_units({-1}), ValidationError);
}

TEST(GradientCheck, AnalyticMatchesFiniteDifference) {
    Rng rng(77);
    GuidedDropoutNet<double> net;
    net.init(20, 10, 16, 6, 2, rng);

    Eigen::VectorXd x(20), y(10), w(10);
    for (int i = 0; i < 20; ++i) x[i] = rng.normal();
    for (int i = 0; i < 10; ++i) y[i] = rng.normal();
    w.setOnes();
    w[3] = 0.0;  // the outed line carries no target
    w[7] = 0.0;  // neither does a dead island line

    Rng probe_rng(5);
    double worst = gradient_check(net, x, y, w, {3}, 30, probe_rng);
    EXPECT_LT(worst, 1e-4);
}

TEST(GradientCheck, CatchesABrokenGradient) {
    // sanity check of the checker itself: a perturbed weight matrix must fail
    Rng rng(78);
    GuidedDropoutNet<double> net;
    net.init(6, 4, 5, 3, 1, rng);
    Eigen::VectorXd x(6), y(4), w(4);
    for (int i = 0; i < 6; ++i) x[i] = rng.normal();
    for (int i = 0; i < 4; ++i) y[i] = rng.normal();
    w.setOnes();

    GuidedDropoutNet<double> broken = net;
    broken.w1 *= 1.5;  // evaluate loss on one net, gradients on another
    std::vector<int> units = net.active_units({});
    surrogate_detail::Gradients<double> grad;
    grad.zero_like(broken);
    auto [num, den] = surrogate_detail::accumulate_squared_error(broken, x, y, w, units, grad);
    (void)num;

    Rng probe_rng(6);
    double worst = 0.0;
    for (int p = 0; p < 20; ++p) {
        int r = static_cast<int>(probe_rng.below(static_cast<std::uint64_t>(net.w1.rows())));
        int c = static_cast<int>(probe_rng.below(static_cast<std::uint64_t>(net.w1.cols())));
        const double h = 1e-6;
        double saved = net.w1(r, c);
        auto loss_of = [&]() {
            auto act = surrogate_detail::forward(net, x, units);
            Eigen::VectorXd err = act.y - y;
            return err.cwiseProduct(err).dot(w) / den;
        };
        net.w1(r, c) = saved + h;
        double up = loss_of();
        net.w1(r, c) = saved - h;
        double down = loss_of();
        net.w1(r, c) = saved;
        double fd = (up - down) / (2.0 * h);
        double an = grad.w1(r, c) / den;
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
    EXPECT_GT(worst, 1e-2);
}

TEST(SurrogateDataset, RejectsDoubleOutages) {
    SurrogateDataset ds;
    GridCase g = tiny_grid(0);
    FeatureExtractor fx = FeatureExtractor::for_case(g);
    SecurityRecord rec;
    rec.z = Contingency::double_outage_of(0, 1, 0.0);
    rec.converged = true;
    rec.flows = tiny_flows(g, -1);
    EXPECT_THROW(ds.add_record(fx, g, rec, 0), ValidationError);
}

TEST(SurrogateDataset, SkipsDivergedRecords) {
    SurrogateDataset ds;
    GridCase g = tiny_grid(0);
    FeatureExtractor fx = FeatureExtractor::for_case(g);
    SecurityRecord rec;
    rec.z = Contingency::single(0, 0.0);
    rec.converged = false;
    rec.flows = Eigen::VectorXd::Constant(6, kNan);
    EXPECT_FALSE(ds.add_record(fx, g, rec, 0));
    EXPECT_TRUE(ds.samples.empty());
}

TEST(Normalization, StandardizationIsABijection) {
    SurrogateDataset ds = tiny_dataset(4);
    Normalization nm = normalization_of(ds);
    ASSERT_EQ(nm.x_mean.size(), ds.n_features);
    ASSERT_EQ(nm.y_mean.size(), 6);
    for (int i = 0; i < ds.n_features; ++i) EXPECT_GT(nm.x_scale[i], 0.0);

    const Eigen::VectorXd& x = ds.samples[3].features;
    Eigen::VectorXd z = (x - nm.x_mean).cwiseQuotient(nm.x_scale);
    Eigen::VectorXd back = z.cwiseProduct(nm.x_scale) + nm.x_mean;
    for (int i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);

    // constant features (the slack load, the gen on-flag) fall back to unit scale
    EXPECT_EQ(nm.x_scale[0], 1.0);
    EXPECT_EQ(nm.x_scale[2 * 4 + 2 * 1 - 1], 1.0);
}

TEST(TrainSurrogate, MemorizesATinyCorpus) {
    SurrogateDataset ds = tiny_dataset(4);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainResult res = train_surrogate(ds, fx, tiny_options(), 2024);

    ASSERT_EQ(res.curve.size(), 300u);
    double first = res.curve.front().train_loss;
    double last = res.curve.back().train_loss;
    EXPECT_LT(last, 0.02);
    EXPECT_LT(last, first / 10.0);

    // the fitted model reproduces a training target through the public path
    BatchPredictor bp(res.model, ds.samples[1].features);
    Eigen::VectorXd yhat = bp.predict(ds.samples[1].outed);
    const Eigen::VectorXd& y = ds.samples[1].targets_mw;
    for (int l = 0; l < 6; ++l) {
        if (!std::isfinite(y[l])) continue;
        EXPECT_NEAR(yhat[l], y[l], 0.15 * std::abs(y[l]) + 5.0);
    }
}

TEST(TrainSurrogate, DeterministicGivenTheSeed) {
    SurrogateDataset ds = tiny_dataset(3);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 25;

    TrainResult a = train_surrogate(ds, fx, opts, 99);
    TrainResult b = train_surrogate(ds, fx, opts, 99);
    EXPECT_EQ(surrogate_serialize(a.model), surrogate_serialize(b.model));
    for (std::size_t e = 0; e < a.curve.size(); ++e) {
        EXPECT_EQ(a.curve[e].train_loss, b.curve[e].train_loss);
        EXPECT_EQ(a.curve[e].val_loss, b.curve[e].val_loss);
    }

    TrainResult c = train_surrogate(ds, fx, opts, 100);
    EXPECT_NE(surrogate_serialize(a.model), surrogate_serialize(c.model));
}

TEST(TrainSurrogate, HoldsOutWholeStates) {
    SurrogateDataset ds = tiny_dataset(4);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 5;
    opts.validation_fraction = 0.5;
    TrainResult res = train_surrogate(ds, fx, opts, 7);
    ASSERT_EQ(res.curve.size(), 5u);
    for (const EpochStats& e : res.curve) {
        EXPECT_TRUE(std::isfinite(e.train_loss));
        EXPECT_TRUE(std::isfinite(e.val_loss));
        EXPECT_NE(e.val_loss, e.train_loss);  // different sample sets
    }
}

TEST(TrainSurrogate, RejectsBadOptionsAndEmptyData) {
    SurrogateDataset empty;
    FeatureExtractor fx{4, 1, 100.0};
    EXPECT_THROW(train_surrogate(empty, fx, tiny_options(), 1), TrainingError);

    SurrogateDataset ds = tiny_dataset(2);
    TrainOptions opts = tiny_options();
    opts.learning_rate = 0.0;
    EXPECT_THROW(train_surrogate(ds, FeatureExtractor::for_case(tiny_grid(0)), opts, 1),
                 ValidationError);
    opts = tiny_options();
    opts.validation_fraction = 1.0;
    EXPECT_THROW(train_surrogate(ds, FeatureExtractor::for_case(tiny_grid(0)), opts, 1),
                 ValidationError);
}

TEST(BatchPredictor, MaskUnionIsOrderInvariant) {
    SurrogateDataset ds = tiny_dataset(3);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 20;
    Surrogate model = train_surrogate(ds, fx, opts, 3).model;

    BatchPredictor bp(model, ds.samples[0].features);
    Eigen::VectorXd ab = bp.predict({1, 4});
    Eigen::VectorXd ba = bp.predict({4, 1});
    for (int l = 0; l < 6; ++l) EXPECT_EQ(ab[l], ba[l]);

    // the double outage is the union of the two single-outage unit blocks:
    // its prediction moves away from the baseline exactly where those blocks
    // touch the decoder
    Eigen::VectorXd intact = bp.intact();
    Eigen::VectorXd single = bp.predict({1});
    EXPECT_NE((ab - intact).lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_NE((ab - single).lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_EQ(ab[1], 0.0);
    EXPECT_EQ(ab[4], 0.0);
    EXPECT_EQ(single[1], 0.0);
}

TEST(BatchPredictor, SinglePredictionGoesThroughTheSamePath) {
    SurrogateDataset ds = tiny_dataset(3);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 20;
    Surrogate model = train_surrogate(ds, fx, opts, 3).model;

    Contingency z = Contingency::double_outage_of(0, 5, 0.0);
    Eigen::VectorXd via_helper = predict_flows(model, ds.samples[2].features, z);
    Eigen::VectorXd via_batch = BatchPredictor(model, ds.samples[2].features).predict(z);
    for (int l = 0; l < 6; ++l) EXPECT_EQ(via_helper[l], via_batch[l]);

    EXPECT_THROW(BatchPredictor(model, Eigen::VectorXd::Zero(3)), ValidationError);
    EXPECT_THROW(BatchPredictor(model, ds.samples[2].features).predict({99}), ValidationError);
}

TEST(Serialization, RoundTripIsExact) {
    SurrogateDataset ds = tiny_dataset(3);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 10;
    Surrogate model = train_surrogate(ds, fx, opts, 11).model;

    std::string bytes = surrogate_serialize(model);
    EXPECT_EQ(bytes.compare(0, 4, "GRPX"), 0);
    Surrogate back = surrogate_deserialize(bytes);
    EXPECT_EQ(surrogate_serialize(back), bytes);

    Eigen::VectorXd a = predict_flows(model, ds.samples[0].features, Contingency::single(2, 0.0));
    Eigen::VectorXd b = predict_flows(back, ds.samples[0].features, Contingency::single(2, 0.0));
    for (int l = 0; l < 6; ++l) EXPECT_EQ(a[l], b[l]);

    grtest::TempDir tmp("surrogate");
    auto path = tmp.path() / "model.bin";
    save_surrogate(model, path);
    Surrogate loaded = load_surrogate(path);
    EXPECT_EQ(surrogate_serialize(loaded), bytes);
}

TEST(Serialization, RejectsDamagedFiles) {
    SurrogateDataset ds = tiny_dataset(2);
    FeatureExtractor fx = FeatureExtractor::for_case(tiny_grid(0));
    TrainOptions opts = tiny_options();
    opts.epochs = 3;
    Surrogate model = train_surrogate(ds, fx, opts, 1).model;
    std::string bytes = surrogate_serialize(model);

    std::string flipped = bytes;
    flipped[100] = static_cast<char>(flipped[100] ^ 0x01);
    EXPECT_THROW(surrogate_deserialize(flipped), IoError);

    EXPECT_THROW(surrogate_deserialize(bytes.substr(0, bytes.size() / 2)), IoError);

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    EXPECT_THROW(surrogate_deserialize(wrong_magic), IoError);

    EXPECT_THROW(surrogate_deserialize(""), IoError);
}
