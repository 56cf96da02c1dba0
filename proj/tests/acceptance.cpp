// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (default: all of 1-8)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "springid/cmaes.hpp"
#include "springid/io.hpp"
#include "springid/log.hpp"
#include "springid/pipeline.hpp"
#include "springid/topology.hpp"

using namespace springid;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kPeriodTolerance = 0.02;
constexpr double kMomentumTolerance = 1e-10;
constexpr double kGradientStep = 1e-4;
constexpr double kGradientRelError = 1e-4;
constexpr double kGradientPassFraction = 0.99;
constexpr double kSphereTarget = 1e-6;
constexpr int kSphereBudget = 2000;
constexpr double kInterpolationTolerance = 1e-12;
constexpr double kTrainingRatio = 0.5;
constexpr double kFutureCdRatio = 0.75;
constexpr double kRegionRatioLo = 1.0 / 3.0;
constexpr double kRegionRatioHi = 3.0;
constexpr double kSpearmanMin = 0.7;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("springid_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Outcome oscillator() {
    auto sys = MassSystem::uniform({{0, 0, 0}, {1, 0, 0}}, 2.0, {0});
    auto topo = SpringTopology::from_pairs({{0, 1}}, sys.canonical_positions);
    auto params = SpringParams::uniform(1, 100.0, 0.0);
    GlobalPhysicalParams g;
    g.gravity = {0, 0, 0};
    g.ground_height = -1e9;
    g.drag = 1.0;
    g.dt = 1e-4;
    auto s = MassSystemState::at_rest(sys);
    s.positions[1].x = 1.1;
    const std::vector<Vec3> anchor{{0, 0, 0}};
    double prev = 0.1, t = 0.0;
    std::vector<double> up;  // upward zero crossings of the extension
    while (up.size() < 2 && t < 5.0) {
        const auto f = accumulate_forces(s, sys, topo, params, g);
        s = euler_step(s, f, sys, g, std::span<const Vec3>(anchor));
        t += g.dt;
        const double x = s.positions[1].x - 1.0;
        if (prev <= 0 && x > 0) up.push_back(t - g.dt * x / (x - prev));
        prev = x;
    }
    if (up.size() < 2) return {false, "no full cycle observed"};
    const double period = up[1] - up[0], expect = 2 * std::numbers::pi / std::sqrt(100.0);
    const double err = std::abs(period - expect) / expect;
    return {err < kPeriodTolerance, fmt("period %.5f s vs %.5f s, error %.3f%% (limit 2%%)", period, expect, 100 * err)};
}

Outcome momentum() {
    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MassSystem sys;
    sys.canonical_positions = oracle::random_points(50, 50);
    for (int i = 0; i < 50; ++i) sys.masses.push_back(0.5 + u(rng));
    std::vector<Edge> pairs;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = i + 1; j < 50; ++j)
            if (distance(sys.canonical_positions[i], sys.canonical_positions[j]) < 0.6) pairs.push_back({i, j});
    const auto topo = SpringTopology::from_pairs(pairs, sys.canonical_positions);
    SpringParams p;
    for (std::size_t e = 0; e < topo.size(); ++e) {
        p.stiffness.push_back(10 + 90 * u(rng));
        p.dashpot.push_back(u(rng));
    }
    GlobalPhysicalParams g;
    g.gravity = {0, 0, 0};
    g.ground_height = -1e9;
    g.drag = 1.0;
    g.dt = 1e-4;
    auto s = MassSystemState::at_rest(sys);
    for (auto& v : s.velocities) v = {u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5};
    for (auto& x : s.positions) x += Vec3{0.05 * (u(rng) - 0.5), 0.05 * (u(rng) - 0.5), 0.05 * (u(rng) - 0.5)};
    const auto total = [&](const MassSystemState& st) {
        Vec3 m;
        for (std::size_t i = 0; i < 50; ++i) m += st.velocities[i] * sys.masses[i];
        return m;
    };
    const Vec3 p0 = total(s);
    double scale = 0;
    for (std::size_t i = 0; i < 50; ++i) scale += sys.masses[i] * norm(s.velocities[i]);
    for (int step = 0; step < 1000; ++step) s = euler_step(s, accumulate_forces(s, sys, topo, p, g), sys, g);
    const double rel = norm(total(s) - p0) / scale;
    return {rel <= kMomentumTolerance, fmt("%zu springs, relative momentum drift %.2e over 1000 substeps (limit 1e-10)", topo.size(), rel)};
}

Outcome gradients() {
    int scenes_ok = 0;
    std::string worst;
    double worst_fraction = 1.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto g = oracle::grad_scene(8 + 3 * seed, 5, seed);
        const auto problem = g.problem();
        const auto f = oracle::randomized_field(g.topology.size(), BoundingBox::around(g.system.canonical_positions),
                                                seed, 0.2, 12, 4, 2);
        const auto springs = [&](const TriPlaneField& ff) {
            return materialize_spring_params(ff, g.base, g.topology, g.system.canonical_positions, g.bounds);
        };
        const auto r = backprop_window(g.start(), 5, f, problem);
        const auto base = ParameterVector::flatten(f);
        const auto pattern = oracle::relu_pattern(f, g.topology, g.system.canonical_positions);
        std::mt19937_64 rng(seed);
        int good = 0, samples = 0, straddling = 0;
        while (samples < 200) {
            const std::size_t k = rng() % base.size();
            auto up = base, dn = base;
            up.values[k] += kGradientStep;
            dn.values[k] -= kGradientStep;
            auto fu = f, fd = f;
            up.unflatten(fu);
            dn.unflatten(fd);
            if (oracle::relu_pattern(fu, g.topology, g.system.canonical_positions) != pattern ||
                oracle::relu_pattern(fd, g.topology, g.system.canonical_positions) != pattern) {
                ++straddling;
                continue;
            }
            ++samples;
            const double num = (g.forward(springs(fu), 5) - g.forward(springs(fd), 5)) / (2 * kGradientStep);
            if (oracle::relative_error(num, r.gradient.values[k]) < kGradientRelError) ++good;
        }
        const double fraction = good / 200.0;
        if (fraction >= kGradientPassFraction) ++scenes_ok;
        if (fraction <= worst_fraction) {
            worst_fraction = fraction;
            worst = fmt("worst scene %zu points: %d/200 within 1e-4 (%d stencils crossing a ReLU kink redrawn)",
                        g.system.size(), good, straddling);
        }
    }
    return {scenes_ok == 5, fmt("%d/5 scenes with >=99%% agreement; ", scenes_ok) + worst};
}

Outcome cmaes() {
    const auto sphere = [](const std::vector<double>& x) {
        double s = 0;
        for (double v : x) s += v * v;
        return s;
    };
    const std::vector<double> x0(10, 3.0 / std::sqrt(10.0));
    CmaesSettings s;
    s.sigma0 = 0.5;
    s.max_evaluations = kSphereBudget;
    s.tolerance = 0.0;
    s.seed = 42;
    const auto a = cmaes_minimize(sphere, x0, s);
    const auto b = cmaes_minimize(sphere, x0, s);
    bool monotone = true;
    for (std::size_t i = 1; i < a.history.size(); ++i) monotone &= a.history[i] <= a.history[i - 1];
    const bool same = a.best_x == b.best_x && a.history == b.history && a.best_f == b.best_f;
    return {a.best_f < kSphereTarget && a.evaluations <= kSphereBudget && monotone && same,
            fmt("best_f %.3e after %d evaluations, monotone %s, deterministic %s", a.best_f, a.evaluations,
                monotone ? "yes" : "no", same ? "yes" : "no")};
}

Outcome oracles() {
    int chamfer_bad = 0, knn_bad = 0, ward_bad = 0;
    double interp_err = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto obs = oracle::random_points(1 + 4 * seed, seed), pred = oracle::random_points(100, seed + 500);
        double expect = 0;
        for (const auto& q : obs) {
            double best = INFINITY;
            for (const auto& p : pred) best = std::min(best, distance(q, p));
            expect += best;
        }
        expect /= static_cast<double>(obs.size());
        chamfer_bad += chamfer_single(obs, pred) != expect;

        const auto pts = oracle::random_points(30, seed);
        const auto labels = cluster_points(pts, 2);
        const std::vector<std::pair<int, double>> hp{{static_cast<int>(1 + seed % 5), 0.5}, {static_cast<int>(2 + seed % 4), 0.8}};
        std::set<std::pair<std::size_t, std::size_t>> got;
        for (const auto& e : build_piecewise_knn(pts, {labels, {{hp[0].first, hp[0].second}, {hp[1].first, hp[1].second}}}).edges)
            got.insert({e.i, e.j});
        knn_bad += got != oracle::knn_edges(pts, labels, hp);

        const auto small = oracle::random_points(20, seed + 77);
        for (std::size_t k : {2, 5, 8}) ward_bad += cluster_points(small, k) != oracle::ward_labels(small, k);

        const auto f = oracle::randomized_field(100, {{-1, -1, -1}, {1, 1, 1}}, seed, 1.0, 16, 4, 2);
        for (const auto& p : oracle::random_points(50, seed + 9, 1.1)) {
            const Vec3 pn = normalize_coord(p, f.bbox);
            const auto q = triplane_query(f, pn);
            const auto xy = oracle::bilinear(f.planes[0], f.resolution, f.channels, pn.x, pn.y);
            const auto yz = oracle::bilinear(f.planes[1], f.resolution, f.channels, pn.y, pn.z);
            const auto xz = oracle::bilinear(f.planes[2], f.resolution, f.channels, pn.x, pn.z);
            for (int c = 0; c < f.channels; ++c) interp_err = std::max(interp_err, std::abs(q[c] - (xy[c] + yz[c] + xz[c])));
        }
    }
    return {chamfer_bad == 0 && knn_bad == 0 && ward_bad == 0 && interp_err <= kInterpolationTolerance,
            fmt("mismatches: chamfer %d/20, knn %d/20, ward %d/60; max interpolation error %.2e", chamfer_bad, knn_bad,
                ward_bad, interp_err)};
}

Outcome heterogeneity() {
    PipelineConfig c;
    c.out_dir = scratch("rope");
    cmd_synth(c);
    cmd_fit_topology(c);
    const auto tr = cmd_fit_field(c);
    const auto m = cmd_eval(c);
    const double train_ratio = tr.best_objective / tr.initial_objective;
    const double future = m["future_cd_ratio"].get<double>();
    const auto& oracle = m["oracle"];
    bool regions_ok = true;
    std::string ratios;
    for (const auto& r : oracle["regions"]) {
        const double v = r["ratio"].get<double>();
        regions_ok &= v >= kRegionRatioLo && v <= kRegionRatioHi;
        ratios += fmt("%s%.3f", ratios.empty() ? "" : "/", v);
    }
    const double rho = oracle["spearman"].get<double>();
    const bool a = train_ratio <= kTrainingRatio, b = future <= kFutureCdRatio, cc = regions_ok && rho >= kSpearmanMin;
    fs::remove_all(c.out_dir);
    return {a && b && cc, fmt("(a) training %.3f of stage one [%s] (b) future CD ratio %.3f [%s] "
                              "(c) region ratios %s, Spearman %.3f [%s]",
                              train_ratio, a ? "ok" : "fail", future, b ? "ok" : "fail", ratios.c_str(), rho,
                              cc ? "ok" : "fail")};
}

Outcome piecewise() {
    double objective[2];
    for (int run = 0; run < 2; ++run) {
        PipelineConfig c;
        c.scene = SceneSpec::default_cloth();
        c.out_dir = scratch("cloth");
        c.cluster_count = run == 0 ? 5 : 1;
        cmd_synth(c);
        objective[run] = cmd_fit_topology(c).best_objective;
        fs::remove_all(c.out_dir);
    }
    return {objective[0] <= objective[1],
            fmt("stage-one objective with 5 clusters %.5f, with 1 cluster %.5f", objective[0], objective[1])};
}

Outcome identity_determinism() {
    PipelineConfig c;
    c.out_dir = scratch("identity");
    c.training.epochs = 0;
    cmd_synth(c);
    cmd_fit_topology(c);
    cmd_fit_field(c);
    const auto m = cmd_eval(c);
    const bool identity = m["metrics"].dump() == m["baseline"].dump();

    // Full pipeline twice per scene kind with a shortened training run.
    int differing = 0, compared = 0;
    for (const auto& scene : {SceneSpec::default_rope(), SceneSpec::default_cloth()}) {
        fs::path dirs[2];
        for (int run = 0; run < 2; ++run) {
            PipelineConfig r;
            r.scene = scene;
            r.set_seed(7);
            r.training.epochs = 5;
            r.cmaes.max_evaluations = 300;
            r.export_ply = true;
            r.out_dir = dirs[run] = scratch("rerun" + std::to_string(run));
            cmd_run_all(r);
        }
        for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
            if (!e.is_regular_file()) continue;
            ++compared;
            differing += slurp(e.path()) != slurp(dirs[1] / fs::relative(e.path(), dirs[0]));
        }
        for (const auto& d : dirs) fs::remove_all(d);
    }
    fs::remove_all(c.out_dir);
    return {identity && differing == 0 && compared > 0,
            fmt("epochs=0 metrics identical to stage one: %s; reruns: %d of %d files differ", identity ? "yes" : "no",
                differing, compared)};
}

}  // namespace

int main(int argc, char** argv) {
    log::set_quiet(true);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"harmonic oscillator period", oscillator},
        {"momentum conservation", momentum},
        {"gradient fidelity", gradients},
        {"CMA-ES sphere", cmaes},
        {"brute-force oracles", oracles},
        {"heterogeneity recovery", heterogeneity},
        {"piecewise topology benefit", piecewise},
        {"residual identity and determinism", identity_determinism},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    if (selected.empty())
        for (int i = 1; i <= 8; ++i) selected.push_back(i);

    int failed = 0;
    for (int id : selected) {
        if (id < 1 || id > 8) {
            std::fprintf(stderr, "unknown criterion %d\n", id);
            return 2;
        }
        const auto& [name, run] = criteria[static_cast<std::size_t>(id - 1)];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d %s: %s (%s; %.1f s)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
