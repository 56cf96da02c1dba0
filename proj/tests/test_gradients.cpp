#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "springid/errors.hpp"
#include "springid/gradients.hpp"

using namespace springid;

namespace {

SpringParams springs_of(const oracle::GradScene& g, const TriPlaneField& f) {
    return materialize_spring_params(f, g.base, g.topology, g.system.canonical_positions, g.bounds);
}

}  // namespace

TEST_CASE("backprop_springs matches finite differences of an independent forward pass") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto g = oracle::grad_scene(12, 4, seed);
        const auto p = g.problem();
        auto springs = SpringParams::uniform(g.topology.size(), 45.0, 0.05);
        const auto r = backprop_springs(g.start(), 4, springs, p);
        CHECK(r.loss == doctest::Approx(g.forward(springs, 4)).epsilon(1e-12));
        for (std::size_t e = 0; e < g.topology.size(); ++e) {
            const double hk = 1e-4 * springs.stiffness[e];
            auto up = springs, dn = springs;
            up.stiffness[e] += hk;
            dn.stiffness[e] -= hk;
            const double fd = (g.forward(up, 4) - g.forward(dn, 4)) / (2 * hk);
            CHECK(oracle::relative_error(fd, r.d_stiffness[e], 1e-9) < 1e-4);
        }
    }
}

TEST_CASE("backprop_window matches finite differences on random field parameters") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto g = oracle::grad_scene(8 + 3 * seed, 5, seed);
        const auto p = g.problem();
        const auto f = oracle::randomized_field(g.topology.size(), BoundingBox::around(g.system.canonical_positions),
                                                seed, 0.2, 12, 4, 2);
        const auto r = backprop_window(g.start(), 5, f, p);
        CHECK(r.loss == doctest::Approx(g.forward(springs_of(g, f), 5)).epsilon(1e-12));

        const auto base = ParameterVector::flatten(f);
        std::mt19937_64 rng(seed);
        const auto pattern = oracle::relu_pattern(f, g.topology, g.system.canonical_positions);
        int good = 0, samples = 0, straddling = 0;
        while (samples < 200) {
            const std::size_t k = rng() % base.size();
            auto up = base, dn = base;
            up.values[k] += 1e-4;
            dn.values[k] -= 1e-4;
            auto fu = f, fd = f;
            up.unflatten(fu);
            dn.unflatten(fd);
            // A stencil that flips a ReLU is not a valid difference quotient; draw again.
            if (oracle::relu_pattern(fu, g.topology, g.system.canonical_positions) != pattern ||
                oracle::relu_pattern(fd, g.topology, g.system.canonical_positions) != pattern) {
                ++straddling;
                continue;
            }
            ++samples;
            const double num = (g.forward(springs_of(g, fu), 5) - g.forward(springs_of(g, fd), 5)) / 2e-4;
            if (oracle::relative_error(num, r.gradient.values[k], 1e-9) < 1e-4) ++good;
        }
        CHECK(good >= 198);
        CHECK(straddling < 20);
    }
}

TEST_CASE("empty window frame gives zero loss and zero gradient") {
    auto g = oracle::grad_scene(6, 2, 1);
    for (auto& fr : g.observations.frames) {
        fr.observed.clear();
        for (auto& [id, pos] : fr.tracks) pos = std::nullopt;
    }
    const auto f = oracle::randomized_field(g.topology.size(), BoundingBox::around(g.system.canonical_positions), 1, 0.2);
    const auto r = backprop_window(g.start(), 1, f, g.problem());
    CHECK(r.loss == 0.0);
    for (double v : r.gradient.values) CHECK(v == 0.0);
}

TEST_CASE("plane cells no midpoint touches get exactly zero gradient") {
    const auto g = oracle::grad_scene(10, 3, 2);
    // Box much larger than the points so most plane cells are never sampled.
    BoundingBox box = BoundingBox::around(g.system.canonical_positions);
    const Vec3 ext = box.hi - box.lo;
    box.hi = box.hi + ext * 4.0;
    auto f = oracle::randomized_field(g.topology.size(), box, 2, 0.2, 8, 2, 1);
    const auto r = backprop_window(g.start(), 3, f, g.problem());
    std::vector<char> touched(3 * f.plane_size(), 0);
    for (const auto& e : g.topology.edges) {
        const Vec3 pn = normalize_coord(midpoint(e, g.system.canonical_positions), f.bbox);
        for (int axis = 0; axis < 3; ++axis) {
            const auto [u, v] = plane_coords(pn, axis);
            const auto s = plane_sample(f.resolution, u, v);
            for (int k = 0; k < 4; ++k)
                for (int c = 0; c < f.channels; ++c) touched[axis * f.plane_size() + s.node[k] * f.channels + c] = 1;
        }
    }
    std::size_t untouched = 0;
    for (std::size_t k = 0; k < touched.size(); ++k)
        if (!touched[k]) {
            ++untouched;
            CHECK(r.gradient.values[k] == 0.0);
        }
    CHECK(untouched > 0);
}

TEST_CASE("optimizer_step examples") {
    TrainingConfig cfg;
    cfg.grad_clip_norm = 0.0;
    std::vector<double> x{1.0, -2.0};
    AdamState fresh;
    optimizer_step(x, {0.0, 0.0}, fresh, cfg, 0.01);
    CHECK(x == std::vector<double>{1.0, -2.0});

    AdamState st;
    st.first = {0.5, 0.5};
    st.second = {0.25, 0.25};
    st.step = 3;
    optimizer_step(x, {0.0, 0.0}, st, cfg, 0.01);
    CHECK(st.first[0] == doctest::Approx(0.45));
    CHECK(st.second[0] == doctest::Approx(0.25 * 0.999));

    std::vector<double> y{0.0};
    AdamState s2;
    double step = 0;
    for (int i = 0; i < 2000; ++i) {
        const double prev = y[0];
        optimizer_step(y, {3.0}, s2, cfg, 0.01);
        step = prev - y[0];
    }
    CHECK(step == doctest::Approx(0.01).epsilon(1e-6));

    TrainingConfig clip;
    clip.grad_clip_norm = 1.0;
    clip.beta1 = 0.0;
    clip.beta2 = 0.0;
    clip.epsilon = 0.0;
    std::vector<double> z{0.0, 0.0};
    AdamState s3;
    CHECK(optimizer_step(z, {6.0, 8.0}, s3, clip, 1.0) == 10.0);
    CHECK(s3.first[0] == doctest::Approx(0.6));
    CHECK(s3.first[1] == doctest::Approx(0.8));

    CHECK_THROWS_AS(optimizer_step(z, {NAN, 0.0}, s3, clip, 1.0), NumericalError);
}

TEST_CASE("training_windows") {
    CHECK(training_windows(1, 10).empty());
    CHECK(training_windows(11, 10) == std::vector<WindowSpan>{{0, 10}});
    CHECK(training_windows(42, 10) == std::vector<WindowSpan>{{0, 10}, {10, 10}, {20, 10}, {30, 10}, {40, 1}});
    CHECK(training_windows(42, 0) == std::vector<WindowSpan>{{0, 41}});
}

TEST_CASE("train_field: zero epochs and zero learning rate leave the field unchanged") {
    const auto g = oracle::grad_scene(10, 8, 3);
    FittingProblem problem(g.system, g.observations, g.globals, g.loss, FrameRange{0, 8});
    const auto f = init_field(g.topology.size(), BoundingBox::around(g.system.canonical_positions),
                              {4, 0.85, 8, 1, 1e-2, 1.0, 0});
    TrainingConfig cfg;
    cfg.window = 3;
    cfg.epochs = 0;
    const auto r0 = train_field(f, g.base, g.topology, problem, g.globals, cfg, g.bounds);
    CHECK(ParameterVector::flatten(r0.field).values == ParameterVector::flatten(f).values);
    CHECK(r0.history.empty());
    CHECK(r0.best_epoch == 0);

    cfg.epochs = 2;
    cfg.learning_rate = 0.0;
    const auto still = train_field(f, g.base, g.topology, problem, g.globals, cfg, g.bounds);
    CHECK(ParameterVector::flatten(still.field).values == ParameterVector::flatten(f).values);
    for (const auto& rec : still.history) CHECK(rec.objective == still.initial_objective);

    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(train_field(f, g.base, g.topology, problem, g.globals, cfg, g.bounds), ConfigError);
}

TEST_CASE("train_field is deterministic and never returns a worse field") {
    const auto g = oracle::grad_scene(10, 8, 4);
    FittingProblem problem(g.system, g.observations, g.globals, g.loss, FrameRange{0, 8});
    const auto f = init_field(g.topology.size(), BoundingBox::around(g.system.canonical_positions),
                              {4, 0.85, 8, 1, 1e-2, 1.0, 0});
    TrainingConfig cfg;
    cfg.window = 3;
    cfg.epochs = 4;
    cfg.learning_rate = 1e-2;
    std::size_t windows = 0;
    TrainingCallbacks cb;
    cb.on_window = [&](const WindowLog&) { ++windows; };
    const auto a = train_field(f, g.base, g.topology, problem, g.globals, cfg, g.bounds, cb);
    const auto b = train_field(f, g.base, g.topology, problem, g.globals, cfg, g.bounds);
    CHECK(windows == 4 * training_windows(8, 3).size());
    CHECK(a.history.size() == 4);
    CHECK(a.best_objective <= a.initial_objective);
    CHECK(ParameterVector::flatten(a.field).values == ParameterVector::flatten(b.field).values);
    for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].objective == b.history[e].objective);
}
