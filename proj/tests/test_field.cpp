#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "springid/errors.hpp"
#include "springid/field.hpp"

using namespace springid;

namespace {

const BoundingBox kUnitBox{{-1, -1, -1}, {1, 1, 1}};

SpringTopology random_topology(const Points& pts, std::size_t edges, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Edge> pairs;
    while (pairs.size() < edges) {
        const std::size_t a = rng() % pts.size(), b = rng() % pts.size();
        if (a != b) pairs.push_back({a, b});
    }
    return SpringTopology::from_pairs(pairs, pts);
}

// Normalized coordinate of node i on an N-node cell-centered axis.
double node_coord(int i, int n) { return (i + 0.5) * 2.0 / n - 1.0; }

}  // namespace

TEST_CASE("midpoint and normalize_coord") {
    const Points pts{{0, 0, 0}, {2, 0, 0}, {2, 0, 0}};
    CHECK(midpoint({0, 1}, pts) == Vec3{1, 0, 0});
    CHECK(midpoint({1, 2}, pts) == Vec3{2, 0, 0});

    const BoundingBox box{{0, 0, 0}, {2, 4, 6}};
    CHECK(normalize_coord({1, 2, 3}, box) == Vec3{0, 0, 0});
    CHECK(normalize_coord({0, 0, 0}, box) == Vec3{-1, -1, -1});
    CHECK(normalize_coord({3, -1, 4.5}, box) == Vec3{1, -1, 0.5});
    const BoundingBox flat{{0, 1, 0}, {2, 1, 2}};
    CHECK(normalize_coord({1, 5, 1}, flat) == Vec3{0, 0, 0});
}

TEST_CASE("fourier_encode examples") {
    const auto z = fourier_encode({0, 0, 0}, 3);
    REQUIRE(z.size() == 18);
    for (int l = 0; l < 3; ++l)
        for (int a = 0; a < 3; ++a) {
            CHECK(z[6 * l + a] == 0.0);
            CHECK(z[6 * l + 3 + a] == 1.0);
        }
    CHECK(fourier_encode({0.3, 0.1, 0.2}, 0).empty());
    CHECK(fourier_encode({0.5, 0, 0}, 1)[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("triplane_query: zero planes, node exactness, cell centre") {
    FieldInit init;
    init.channels = 3;
    auto f = init_field(16, kUnitBox, init);
    REQUIRE(f.resolution == 4);
    CHECK(triplane_query(f, {0.1, -0.3, 0.7}) == std::vector<double>(3, 0.0));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (auto& plane : f.planes)
        for (auto& v : plane) v = g(rng);
    const int n = f.resolution, c = f.channels;
    const auto at = [&](int p, int u, int v, int ch) { return f.planes[p][(static_cast<std::size_t>(v) * n + u) * c + ch]; };
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z) {
                const auto q = triplane_query(f, {node_coord(x, n), node_coord(y, n), node_coord(z, n)});
                for (int ch = 0; ch < c; ++ch) CHECK(q[ch] == at(kPlaneXY, x, y, ch) + at(kPlaneYZ, y, z, ch) + at(kPlaneXZ, x, z, ch));
            }

    auto only_xy = f;
    std::fill(only_xy.planes[1].begin(), only_xy.planes[1].end(), 0.0);
    std::fill(only_xy.planes[2].begin(), only_xy.planes[2].end(), 0.0);
    const double u = 0.5 * (node_coord(1, n) + node_coord(2, n)), v = 0.5 * (node_coord(2, n) + node_coord(3, n));
    const auto q = triplane_query(only_xy, {u, v, 0.3});
    for (int ch = 0; ch < c; ++ch) {
        const double expect = (at(0, 1, 2, ch) + at(0, 2, 2, ch) + at(0, 1, 3, ch) + at(0, 2, 3, ch)) / 4.0;
        CHECK(q[ch] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("triplane_query matches the straight-line bilinear oracle") {
    auto f = oracle::randomized_field(200, kUnitBox, 4, 1.0);
    for (const auto& p : oracle::random_points(200, 5, 1.2)) {
        const Vec3 pn = normalize_coord(p, f.bbox);
        const auto got = triplane_query(f, pn);
        const auto xy = oracle::bilinear(f.planes[0], f.resolution, f.channels, pn.x, pn.y);
        const auto yz = oracle::bilinear(f.planes[1], f.resolution, f.channels, pn.y, pn.z);
        const auto xz = oracle::bilinear(f.planes[2], f.resolution, f.channels, pn.x, pn.z);
        for (int ch = 0; ch < f.channels; ++ch) CHECK(std::abs(got[ch] - (xy[ch] + yz[ch] + xz[ch])) < 1e-12);
    }
}

TEST_CASE("field_eval matches the straight-line oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto pts = oracle::random_points(30, seed);
        const auto topo = random_topology(pts, 60, seed);
        const auto f = oracle::randomized_field(topo.size(), BoundingBox::around(pts), seed, 0.5, 16, 4, 3);
        const auto batch = field_eval_batch(f, topo, pts);
        const auto ref = reference::field_eval_batch(f, topo, pts);
        for (std::size_t e = 0; e < topo.size(); ++e) {
            const auto expect = oracle::field(f, midpoint(topo.edges[e], pts));
            const auto r = field_eval(f, topo.edges[e], pts);
            const double tol = 1e-12 * std::max(1.0, std::abs(expect[0]) + std::abs(expect[1]));
            CHECK(std::abs(r.log_stiffness - expect[0]) < tol);
            CHECK(std::abs(r.log_dashpot - expect[1]) < tol);
            CHECK(std::abs(batch[e].log_stiffness - expect[0]) < tol);
            CHECK(std::abs(ref[e].log_dashpot - expect[1]) < tol);
        }
    }
}

TEST_CASE("field_eval depends on the midpoint only") {
    const Points pts{{0, 0, 0}, {1, 1, 0}, {1, 0, 0}, {0, 1, 0}};
    const auto f = oracle::randomized_field(2, BoundingBox::around(pts), 3, 0.5);
    CHECK(field_eval(f, {0, 1}, pts) == field_eval(f, {2, 3}, pts));
}

TEST_CASE("field_eval is continuous") {
    const auto pts = oracle::random_points(40, 8);
    const auto f = oracle::randomized_field(100, BoundingBox::around(pts), 8, 0.3, 32, 8, 4);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (const auto& p : oracle::random_points(100, 9, 0.9)) {
        Vec3 d{g(rng), g(rng), g(rng)};
        const Vec3 q = p + d * (1e-6 / norm(d));
        const auto a = field_eval(f, {0, 1}, {p, p});
        const auto b = field_eval(f, {0, 1}, {q, q});
        CHECK(std::abs(a.log_stiffness - b.log_stiffness) <= 1e-3);
        CHECK(std::abs(a.log_dashpot - b.log_dashpot) <= 1e-3);
    }
}

TEST_CASE("init_field resolution and residual identity") {
    CHECK(adaptive_resolution(10000, 0.85) == 85);
    CHECK(adaptive_resolution(16, 0.85) == 4);
    const auto pts = oracle::random_points(20, 1);
    const auto topo = random_topology(pts, 40, 1);
    const auto f = init_field(topo.size(), BoundingBox::around(pts));
    CHECK(f.channels == 32);
    CHECK(f.mlp[0].outputs() == 128);
    CHECK(f.mlp[1].outputs() == 128);
    CHECK(f.mlp[2].outputs() == 2);
    for (const auto& r : field_eval_batch(f, topo, pts)) CHECK(r == Residual{0.0, 0.0});

    const HomogeneousInit s0{std::log(300.0), std::log(0.7), 1.0, 0.5, 0.5};
    const auto p = materialize_spring_params(f, s0, topo, pts);
    for (std::size_t e = 0; e < topo.size(); ++e) {
        CHECK(p.stiffness[e] == s0.stiffness());
        CHECK(p.dashpot[e] == s0.dashpot());
    }
    CHECK_THROWS_AS(init_field(0, kUnitBox), ConfigError);
}

TEST_CASE("materialize_spring_params") {
    const HomogeneousInit s0{std::log(100.0), std::log(1.0), 1.0, 0.5, 0.5};
    const auto doubled = materialize_spring_params({{std::log(2.0), 0.0}, {0.0, 0.0}}, s0);
    CHECK(doubled.stiffness[0] == doctest::Approx(200.0).epsilon(1e-14));
    CHECK(doubled.stiffness[1] == std::exp(std::log(100.0)));

    MaterializationBounds b;
    double prev = 0.0;
    for (double r = 0.0; r < 1e4; r = r * 2 + 1) {
        const double k = materialize_spring_params({{r, 0.0}}, s0, b).stiffness[0];
        CHECK(k >= prev);
        CHECK(k <= b.stiffness_max * (1 + 1e-15));
        prev = k;
    }
    CHECK(prev == doctest::Approx(b.stiffness_max).epsilon(1e-9));

    for (double r : {-1e300, -50.0, 50.0, 1e300}) {
        const auto p = materialize_spring_params({{r, r}}, s0, b);
        CHECK(p.stiffness[0] > 0.0);
        CHECK(p.dashpot[0] >= 0.0);
        CHECK(std::isfinite(p.stiffness[0]));
    }

    b.tie_dashpot = true;
    CHECK(materialize_spring_params({{0.3, 2.0}}, s0, b).dashpot[0] == 1.0);
}

TEST_CASE("saturate_residual is the identity near zero and its derivative is consistent") {
    const double base = std::log(100.0), lo = 0.0, hi = std::log(1e5);
    for (double r : {-0.5, 0.0, 0.25, 1.0}) CHECK(saturate_residual(r, base, lo, hi) == r);
    for (double r = -8.0; r < 12.0; r += 0.37) {
        const double h = 1e-6;
        const double fd = (saturate_residual(r + h, base, lo, hi) - saturate_residual(r - h, base, lo, hi)) / (2 * h);
        CHECK(saturate_residual_derivative(r, base, lo, hi) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("flatten and unflatten round-trip") {
    auto f = oracle::randomized_field(50, kUnitBox, 6, 1.0);
    const auto v = ParameterVector::flatten(f);
    CHECK(v.size() == f.parameter_count());
    auto g = init_field(50, kUnitBox, {4, 0.85, 16, 2, 1e-2, 1.0, 0});
    v.unflatten(g);
    CHECK(ParameterVector::flatten(g).values == v.values);
    CHECK(parameter_block_name(f, 0) == "plane_xy");
    CHECK(parameter_block_name(f, f.plane_size()) == "plane_yz");
    CHECK(parameter_block_name(f, 3 * f.plane_size()) == "layer0.weight");
    CHECK(parameter_block_name(f, f.parameter_count() - 1) == "layer2.bias");
}
