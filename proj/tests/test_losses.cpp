#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "springid/errors.hpp"
#include "springid/losses.hpp"

using namespace springid;

namespace {

double brute_chamfer(const Points& obs, const Points& pred) {
    if (obs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& q : obs) {
        double best = INFINITY;
        for (const auto& p : pred) best = std::min(best, distance(q, p));
        sum += best;
    }
    return sum / static_cast<double>(obs.size());
}

// Rotation about z by angle a, then translation t.
Points rigid(const Points& pts, double a, const Vec3& t) {
    Points out;
    for (const auto& p : pts)
        out.push_back(Vec3{std::cos(a) * p.x - std::sin(a) * p.y, std::sin(a) * p.x + std::cos(a) * p.y, p.z} + t);
    return out;
}

ObservationSequence random_sequence(const Trajectory& traj, std::uint64_t seed, std::size_t tracks) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.01);
    ObservationSequence obs;
    for (const auto& s : traj.states) {
        ObservationFrame f;
        for (std::size_t i = 0; i < s.size(); i += 2) f.observed.push_back(s.positions[i] + Vec3{g(rng), g(rng), g(rng)});
        for (std::size_t t = 0; t < tracks; ++t)
            f.tracks["t" + std::to_string(t)] = s.positions[t] + Vec3{g(rng), g(rng), g(rng)};
        obs.frames.push_back(f);
    }
    obs.split_frame = ObservationSequence::default_split(obs.frame_count());
    return obs;
}

Trajectory random_trajectory(std::size_t frames, std::size_t n, std::uint64_t seed) {
    Trajectory t;
    for (std::size_t f = 0; f < frames; ++f) {
        MassSystemState s;
        s.positions = oracle::random_points(n, seed * 100 + f);
        s.velocities.resize(n);
        s.frame_index = f;
        t.states.push_back(s);
    }
    return t;
}

}  // namespace

TEST_CASE("chamfer_single examples") {
    const Points a = oracle::random_points(20, 1);
    CHECK(chamfer_single(a, a) == 0.0);
    CHECK(chamfer_single({{0, 0, 0}}, {{1, 0, 0}, {3, 0, 0}}) == 1.0);
    CHECK(chamfer_single({}, {{1, 0, 0}}) == 0.0);
    CHECK_THROWS_AS(chamfer_single({{0, 0, 0}}, {}), ConfigError);
}

TEST_CASE("chamfer_single matches the exhaustive oracle exactly") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto obs = oracle::random_points(1 + seed * 5, seed);
        const auto pred = oracle::random_points(100 - seed * 3, seed + 1000);
        const double expect = brute_chamfer(obs, pred);
        CHECK(chamfer_single(obs, pred) == expect);
        CHECK(reference::chamfer_single(obs, pred) == expect);
    }
}

TEST_CASE("chamfer_single properties") {
    const auto a = oracle::random_points(40, 2);
    auto b = oracle::random_points(60, 3);
    CHECK(chamfer_single(a, b) > 0.0);
    // Zero iff every observed point has a coincident prediction.
    Points superset = b;
    superset.insert(superset.end(), a.begin(), a.end());
    CHECK(chamfer_single(a, superset) == 0.0);

    auto pa = a, pb = b;
    std::mt19937_64 rng(4);
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);
    CHECK(chamfer_single(pa, pb) == doctest::Approx(chamfer_single(a, b)).epsilon(1e-14));

    const double moved = chamfer_single(rigid(a, 0.7, {1, -2, 3}), rigid(b, 0.7, {1, -2, 3}));
    CHECK(std::abs(moved - chamfer_single(a, b)) < 1e-10);
}

TEST_CASE("track_error examples") {
    std::map<TrackId, Vec3> pred{{"a", {0, 0, 0}}, {"b", {1, 1, 1}}};
    std::map<TrackId, std::optional<Vec3>> obs{{"a", Vec3{0, 0, 0}}, {"b", Vec3{1, 1, 1}}};
    CHECK(track_error(pred, obs) == 0.0);

    obs["a"] = Vec3{0, 3, 4};
    obs["b"] = std::nullopt;
    CHECK(track_error(pred, obs) == 5.0);

    obs["a"] = Vec3{1, 0, 0};
    obs["b"] = Vec3{1, 1, 4};
    CHECK(track_error(pred, obs) == 2.0);

    std::map<TrackId, std::optional<Vec3>> none{{"a", std::nullopt}};
    CHECK(track_error(pred, none) == 0.0);
}

TEST_CASE("track_error is invariant under rigid motion") {
    const auto p = oracle::random_points(10, 5), q = oracle::random_points(10, 6);
    const auto rp = rigid(p, -1.1, {0.3, 0.2, 0.1}), rq = rigid(q, -1.1, {0.3, 0.2, 0.1});
    std::map<TrackId, Vec3> a, ra;
    std::map<TrackId, std::optional<Vec3>> b, rb;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto id = std::to_string(i);
        a[id] = p[i];
        ra[id] = rp[i];
        b[id] = q[i];
        rb[id] = rq[i];
    }
    CHECK(std::abs(track_error(a, b) - track_error(ra, rb)) < 1e-10);
}

TEST_CASE("default split is floor(0.7 n)") {
    CHECK(ObservationSequence::default_split(60) == 42);
    CHECK(ObservationSequence::default_split(10) == 7);
    for (std::size_t n = 0; n < 200; ++n) CHECK(ObservationSequence::default_split(n) == static_cast<std::size_t>(std::floor(0.7 * n + 1e-9)));
}

TEST_CASE("bind_tracks") {
    MassSystem sys;
    for (int i = 0; i < 10; ++i) sys.canonical_positions.push_back({static_cast<double>(i), 0, 0});
    sys.masses.assign(10, 1.0);
    ObservationSequence obs;
    obs.frames.resize(1);
    obs.frames[0].tracks["exact"] = Vec3{4, 0, 0};
    obs.frames[0].tracks["missing"] = std::nullopt;
    // Equidistant to points 2 and 7 after moving them apart.
    sys.canonical_positions[7] = {2, 2, 0};
    obs.frames[0].tracks["tie"] = Vec3{2, 1, 0};
    const auto b = bind_tracks(obs, sys);
    REQUIRE(b.size() == 2);
    CHECK(b[0] == std::pair<TrackId, std::size_t>{"exact", 4});
    CHECK(b[1] == std::pair<TrackId, std::size_t>{"tie", 2});
}

TEST_CASE("bind_tracks matches brute-force nearest search") {
    MassSystem sys;
    sys.canonical_positions = oracle::random_points(50, 11);
    sys.masses.assign(50, 1.0);
    ObservationSequence obs;
    obs.frames.resize(1);
    const auto tracks = oracle::random_points(30, 12);
    for (std::size_t t = 0; t < tracks.size(); ++t) obs.frames[0].tracks[std::to_string(1000 + t)] = tracks[t];
    for (const auto& [id, idx] : bind_tracks(obs, sys)) {
        const Vec3 q = *obs.frames[0].tracks.at(id);
        std::size_t best = 0;
        for (std::size_t i = 1; i < 50; ++i)
            if (distance(q, sys.canonical_positions[i]) < distance(q, sys.canonical_positions[best])) best = i;
        CHECK(idx == best);
    }
}

TEST_CASE("sequence_objective sums per-frame losses") {
    const auto traj = random_trajectory(5, 12, 3);
    const auto obs = random_sequence(random_trajectory(5, 12, 4), 5, 4);
    TrackBinding binding;
    for (std::size_t t = 0; t < 4; ++t) binding.emplace_back("t" + std::to_string(t), t + 3);

    double expect = 0.0;
    for (std::size_t f = 0; f < 5; ++f) {
        std::map<TrackId, Vec3> pred;
        for (const auto& [id, i] : binding) pred[id] = traj.states[f].positions[i];
        expect += brute_chamfer(obs.frames[f].observed, traj.states[f].positions) + track_error(pred, obs.frames[f].tracks);
    }
    const auto all = sequence_objective(traj, obs, binding, {0, 5});
    CHECK(all.total == doctest::Approx(expect).epsilon(1e-13));
    CHECK(all.total == doctest::Approx(all.geometry + all.motion).epsilon(1e-14));

    auto split = sequence_objective(traj, obs, binding, {0, 2});
    split += sequence_objective(traj, obs, binding, {2, 5});
    CHECK(split.total == doctest::Approx(all.total).epsilon(1e-14));
}

TEST_CASE("sequence_objective with one frame and one point") {
    Trajectory traj;
    traj.states.push_back({{{1, 0, 0}}, {{0, 0, 0}}, 0});
    ObservationSequence obs;
    ObservationFrame f;
    f.observed = {{1, 2, 2}};
    f.tracks["a"] = Vec3{1, 0, 5};
    obs.frames.push_back(f);
    const auto r = sequence_objective(traj, obs, {{"a", 0}}, {0, 1});
    CHECK(r.geometry == doctest::Approx(std::sqrt(8.0)));
    CHECK(r.motion == 5.0);
    CHECK(r.total == doctest::Approx(std::sqrt(8.0) + 5.0));
}

TEST_CASE("eval_metrics") {
    const auto traj = random_trajectory(10, 8, 1);
    ObservationSequence exact;
    for (const auto& s : traj.states) {
        ObservationFrame f;
        f.observed = {s.positions[0], s.positions[5]};
        f.tracks["x"] = s.positions[2];
        exact.frames.push_back(f);
    }
    exact.split_frame = 7;
    const TrackBinding binding{{"x", 2}};
    const auto m = eval_metrics(traj, exact, binding, 7);
    CHECK(*m.cd_recon < 1e-9);
    CHECK(*m.te_recon < 1e-9);
    CHECK(*m.cd_future < 1e-9);
    CHECK(*m.te_future < 1e-9);

    const auto end = eval_metrics(traj, exact, binding, 10);
    CHECK(end.cd_recon.has_value());
    CHECK_FALSE(end.cd_future.has_value());
    CHECK_FALSE(end.te_future.has_value());
}

TEST_CASE("eval_metrics on a hand-built 3-frame case") {
    Trajectory traj;
    ObservationSequence obs;
    for (int f = 0; f < 3; ++f) {
        traj.states.push_back({{{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}, {0, 0, 0}}, static_cast<std::size_t>(f)});
        ObservationFrame o;
        o.observed = {{0, 0, static_cast<double>(f)}};
        o.tracks["a"] = Vec3{1, 2.0 * f, 0};
        obs.frames.push_back(o);
    }
    // Chamfer per frame: 0, 1, 2. Track error per frame: 0, 2, 4.
    const auto m = eval_metrics(traj, obs, {{"a", 1}}, 2);
    CHECK(m.cd_per_frame == std::vector<double>{0, 1, 2});
    CHECK(m.te_per_frame == std::vector<double>{0, 2, 4});
    CHECK(*m.cd_recon == 0.5);
    CHECK(*m.te_recon == 1.0);
    CHECK(*m.cd_future == 2.0);
    CHECK(*m.te_future == 4.0);
}
