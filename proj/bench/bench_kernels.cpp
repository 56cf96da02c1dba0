#include <benchmark/benchmark.h>

#include <random>

#include "springid/field.hpp"
#include "springid/losses.hpp"
#include "springid/sim.hpp"
#include "springid/topology.hpp"

using namespace springid;

namespace {

Points cloud(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Points p(n);
    for (auto& x : p) x = {u(rng), u(rng), u(rng)};
    return p;
}

struct Scene {
    MassSystem system;
    SpringTopology topology;
    SpringParams springs;
    MassSystemState state;
    GlobalPhysicalParams globals;
};

Scene make_scene(std::size_t n) {
    Scene s;
    s.system = MassSystem::uniform(cloud(n, 1), 1.0);
    ClusterTopologyConfig cfg{std::vector<std::size_t>(n, 0), {{8, 0.4}}};
    s.topology = build_piecewise_knn(s.system.canonical_positions, cfg);
    s.springs = SpringParams::uniform(s.topology.size(), 100.0, 0.1);
    s.state = MassSystemState::at_rest(s.system);
    const auto jitter = cloud(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        s.state.positions[i] += jitter[i] * 0.01;
        s.state.velocities[i] = jitter[i];
    }
    return s;
}

template <bool Parallel>
void BM_forces(benchmark::State& st) {
    const auto s = make_scene(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(accumulate_forces(s.state, s.system, s.topology, s.springs, s.globals));
        else
            benchmark::DoNotOptimize(reference::accumulate_forces(s.state, s.system, s.topology, s.springs, s.globals));
    }
}

template <bool Parallel>
void BM_chamfer(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto obs = cloud(n, 3), pred = cloud(n, 4);
    for (auto _ : st) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(chamfer_single(obs, pred));
        else
            benchmark::DoNotOptimize(reference::chamfer_single(obs, pred));
    }
}

template <bool Parallel>
void BM_knn(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const auto pts = cloud(n, 5);
    const ClusterTopologyConfig cfg{cluster_points(pts, 2), {{6, 0.3}, {10, 0.5}}};
    for (auto _ : st) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(build_piecewise_knn(pts, cfg));
        else
            benchmark::DoNotOptimize(reference::build_piecewise_knn(pts, cfg));
    }
}

template <bool Parallel>
void BM_field(benchmark::State& st) {
    const auto s = make_scene(static_cast<std::size_t>(st.range(0)));
    const auto f = init_field(s.topology.size(), BoundingBox::around(s.system.canonical_positions));
    for (auto _ : st) {
        if constexpr (Parallel)
            benchmark::DoNotOptimize(field_eval_batch(f, s.topology, s.system.canonical_positions));
        else
            benchmark::DoNotOptimize(reference::field_eval_batch(f, s.topology, s.system.canonical_positions));
    }
}

}  // namespace

BENCHMARK(BM_forces<true>)->Arg(500)->Arg(4000);
BENCHMARK(BM_forces<false>)->Arg(500)->Arg(4000);
BENCHMARK(BM_chamfer<true>)->Arg(1000)->Arg(5000);
BENCHMARK(BM_chamfer<false>)->Arg(1000)->Arg(5000);
BENCHMARK(BM_knn<true>)->Arg(500)->Arg(2000);
BENCHMARK(BM_knn<false>)->Arg(500)->Arg(2000);
BENCHMARK(BM_field<true>)->Arg(500)->Arg(2000);
BENCHMARK(BM_field<false>)->Arg(500)->Arg(2000);

BENCHMARK_MAIN();
