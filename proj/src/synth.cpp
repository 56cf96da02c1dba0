#include "springid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "springid/errors.hpp"
#include "springid/field.hpp"
#include "springid/stage_one.hpp"

namespace springid {

Vec3 ControlMotion::offset(double t) const {
    if (kind == Kind::Linear) return velocity * t;
    return amplitude * std::sin(2.0 * std::numbers::pi * frequency * t);
}

SceneSpec SceneSpec::default_rope() {
    SceneSpec s;
    s.kind = Kind::Rope;
    const double mid = -0.5 * s.length;
    SceneRegion stiff;
    stiff.axis = 1;
    stiff.min = mid;
    stiff.stiffness = 500.0;
    SceneRegion soft;
    soft.axis = 1;
    soft.max = mid;
    soft.stiffness = 50.0;
    s.regions = {stiff, soft};
    s.view_axis = 0;
    return s;
}

SceneSpec SceneSpec::default_cloth() {
    SceneSpec s;
    s.kind = Kind::Cloth;
    s.topology = TopologyMode::Knn;
    SceneRegion dense;
    dense.axis = 0;
    dense.max = 0.0;
    dense.stiffness = 200.0;
    dense.dashpot = 0.1;
    dense.knn = {8, 1.5};
    SceneRegion sparse = dense;
    sparse.min = 0.0;
    sparse.max = std::numeric_limits<double>::infinity();
    sparse.knn = {4, 1.1};
    s.regions = {dense, sparse};
    s.view_axis = 1;
    return s;
}

void SceneSpec::validate() const {
    if (kind == Kind::Rope) {
        if (points < 2) throw ConfigError("scene: a rope needs at least 2 points");
        if (!(length > 0.0)) throw ConfigError("scene: rope length must be positive");
    } else {
        if (rows < 2 || cols < 2) throw ConfigError("scene: a cloth needs at least 2 x 2 points");
        if (!(size > 0.0)) throw ConfigError("scene: cloth size must be positive");
    }
    if (!(total_mass > 0.0)) throw ConfigError("scene: total_mass must be positive");
    if (regions.empty()) throw ConfigError("scene: at least one region is required");
    for (const auto& r : regions) {
        if (r.axis < 0 || r.axis > 2) throw ConfigError("scene: region axis must be x, y or z");
        if (!(r.min < r.max)) throw ConfigError("scene: region range is empty");
        if (!(r.stiffness > 0.0) || !(r.dashpot >= 0.0)) throw ConfigError("scene: invalid region material");
        if (topology == TopologyMode::Knn && (r.knn.max_neighbors < 1 || !(r.knn.radius > 0.0)))
            throw ConfigError("scene: knn regions need max_neighbors >= 1 and radius > 0");
    }
    if (frames < 10) throw ConfigError("scene: frames must be at least 10");
    if (!(dt_frame > 0.0)) throw ConfigError("scene: dt_frame must be positive");
    if (substeps < 1) throw ConfigError("scene: substeps must be at least 1");
    if (!(drag > 0.0 && drag <= 1.0)) throw ConfigError("scene: drag must be in (0, 1]");
    if (view_axis < 0 || view_axis > 2) throw ConfigError("scene: view axis must be x, y or z");
    if (!(track_fraction >= 0.0 && track_fraction <= 1.0)) throw ConfigError("scene: track_fraction must be in [0, 1]");
    if (!(noise_std >= 0.0)) throw ConfigError("scene: noise_std must be non-negative");
}

std::size_t region_of(const std::vector<SceneRegion>& regions, const Vec3& p) {
    for (std::size_t r = 0; r < regions.size(); ++r)
        if (regions[r].contains(p)) return r;
    char buf[128];
    std::snprintf(buf, sizeof buf, "no region contains (%g, %g, %g)", p.x, p.y, p.z);
    throw ConfigError(buf);
}

namespace {

double spacing_of(const SceneSpec& spec) {
    return spec.kind == SceneSpec::Kind::Rope ? spec.length / static_cast<double>(spec.points - 1)
                                              : spec.size / static_cast<double>(spec.cols - 1);
}

std::vector<Edge> lattice_edges(const SceneSpec& spec) {
    std::vector<Edge> edges;
    if (spec.kind == SceneSpec::Kind::Rope) {
        for (std::size_t i = 0; i + 1 < spec.points; ++i) edges.push_back({i, i + 1});
        for (std::size_t i = 0; i + 2 < spec.points; ++i) edges.push_back({i, i + 2});
        return edges;
    }
    const auto id = [&](std::size_t r, std::size_t c) { return r * spec.cols + c; };
    for (std::size_t r = 0; r < spec.rows; ++r)
        for (std::size_t c = 0; c < spec.cols; ++c) {
            if (c + 1 < spec.cols) edges.push_back({id(r, c), id(r, c + 1)});
            if (r + 1 < spec.rows) edges.push_back({id(r, c), id(r + 1, c)});
            if (r + 1 < spec.rows && c + 1 < spec.cols) {
                edges.push_back({id(r, c), id(r + 1, c + 1)});
                edges.push_back({id(r, c + 1), id(r + 1, c)});
            }
        }
    return edges;
}

}  // namespace

Scene build_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    Points canonical;
    std::vector<std::size_t> controls;
    const double h = spacing_of(spec);
    if (spec.kind == SceneSpec::Kind::Rope) {
        // Hangs along -y from the controlled point 0 at the origin.
        for (std::size_t i = 0; i < spec.points; ++i) canonical.push_back({0.0, -h * static_cast<double>(i), 0.0});
        controls = {0};
    } else {
        // Horizontal sheet in the xz plane, held at the two corners of row 0.
        const double x0 = -0.5 * spec.size;
        for (std::size_t r = 0; r < spec.rows; ++r)
            for (std::size_t c = 0; c < spec.cols; ++c)
                canonical.push_back({x0 + h * static_cast<double>(c), 0.0, h * static_cast<double>(r)});
        controls = {0, spec.cols - 1};
    }
    scene.system = MassSystem::uniform(canonical, spec.total_mass, controls);

    if (spec.topology == SceneSpec::TopologyMode::Lattice) {
        scene.topology = SpringTopology::from_pairs(lattice_edges(spec), canonical);
    } else {
        ClusterTopologyConfig config;
        for (const auto& p : canonical) config.labels.push_back(region_of(spec.regions, p));
        for (const auto& r : spec.regions) config.per_cluster.push_back({r.knn.max_neighbors, r.knn.radius * h});
        scene.topology = connect_components(canonical, build_piecewise_knn(canonical, config));
    }

    for (const auto& e : scene.topology.edges) {
        const std::size_t r = region_of(spec.regions, midpoint(e, canonical));
        scene.edge_regions.push_back(r);
        scene.params.stiffness.push_back(spec.regions[r].stiffness);
        scene.params.dashpot.push_back(spec.regions[r].dashpot);
    }

    scene.globals.gravity = spec.gravity;
    scene.globals.ground_height = spec.ground_height;
    scene.globals.drag = spec.drag;
    scene.globals.set_frame_interval(spec.dt_frame, spec.substeps);

    scene.controls.indices = controls;
    for (std::size_t f = 0; f < spec.frames; ++f) {
        const Vec3 off = spec.motion.offset(static_cast<double>(f) * spec.dt_frame);
        Points row;
        for (const std::size_t c : controls) row.push_back(canonical[c] + off);
        scene.controls.frames.push_back(std::move(row));
    }
    return scene;
}

Trajectory simulate_scene(const Scene& scene, const SceneSpec& spec) {
    return rollout(initial_state(scene.system, scene.controls), scene.system, scene.topology, scene.params,
                   scene.globals, scene.controls, spec.frames);
}

ObservationSequence emit_observations(const Trajectory& truth, const Scene& scene, const SceneSpec& spec,
                                      std::uint64_t seed) {
    const std::size_t n = scene.system.size();
    std::mt19937_64 rng(seed);
    // noise_std is the RMS length of the 3-D displacement.
    std::normal_distribution<double> gauss(0.0, spec.noise_std / std::sqrt(3.0));
    const auto noisy = [&](const Vec3& p) {
        if (spec.noise_std == 0.0) return p;
        const double dx = gauss(rng);
        const double dy = gauss(rng);
        const double dz = gauss(rng);
        return p + Vec3{dx, dy, dz};
    };

    const auto control_mask = scene.system.control_mask();
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i)
        if (!control_mask[i]) candidates.push_back(i);
    const auto tracked_count =
        static_cast<std::size_t>(std::ceil(spec.track_fraction * static_cast<double>(candidates.size()) - 1e-9));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min(tracked_count, candidates.size()));
    std::sort(candidates.begin(), candidates.end());

    ObservationSequence obs;
    obs.dt_frame = spec.dt_frame;
    obs.split_frame = ObservationSequence::default_split(truth.frame_count());
    const int axis = spec.view_axis;
    for (std::size_t f = 0; f < truth.frame_count(); ++f) {
        const Points& x = truth.states[f].positions;
        ObservationFrame frame;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        if (spec.view == SceneSpec::ViewPolicy::MedianSplit) {
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return x[a][axis] > x[b][axis]; });
            order.resize((n + 1) / 2);
        }
        for (const std::size_t i : order) frame.observed.push_back(noisy(x[i]));
        for (const std::size_t i : candidates) {
            char id[32];
            std::snprintf(id, sizeof id, "t%05zu", i);
            frame.tracks[id] = noisy(x[i]);
        }
        for (std::size_t c = 0; c < scene.controls.indices.size(); ++c)
            frame.controls[scene.controls.indices[c]] = scene.controls.frames[f][c];
        obs.frames.push_back(std::move(frame));
    }
    return obs;
}

SpringParams truth_on_topology(const SpringTopology& topology, const Scene& scene, const SceneSpec& spec,
                               std::vector<std::size_t>* regions) {
    const Points& canonical = scene.system.canonical_positions;
    SpringParams out;
    if (regions) regions->clear();
    for (const auto& e : topology.edges) {
        const auto it = std::lower_bound(scene.topology.edges.begin(), scene.topology.edges.end(), e);
        std::size_t r;
        if (it != scene.topology.edges.end() && *it == e) {
            const auto idx = static_cast<std::size_t>(it - scene.topology.edges.begin());
            r = scene.edge_regions[idx];
            out.stiffness.push_back(scene.params.stiffness[idx]);
            out.dashpot.push_back(scene.params.dashpot[idx]);
        } else {
            r = region_of(spec.regions, midpoint(e, canonical));
            out.stiffness.push_back(spec.regions[r].stiffness);
            out.dashpot.push_back(spec.regions[r].dashpot);
        }
        if (regions) regions->push_back(r);
    }
    return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double mean = 0.5 * static_cast<double>(n + 1);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (ra[i] - mean) * (rb[i] - mean);
        saa += (ra[i] - mean) * (ra[i] - mean);
        sbb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

OracleReport oracle_report(const std::vector<double>& recovered, const std::vector<double>& truth,
                           const std::vector<std::size_t>& edge_regions) {
    if (recovered.size() != truth.size() || edge_regions.size() != truth.size())
        throw ConfigError("oracle_report: recovered and true parameters are on different topologies (" +
                          std::to_string(recovered.size()) + " vs " + std::to_string(truth.size()) + " edges)");
    std::size_t region_count = 0;
    for (const auto r : edge_regions) region_count = std::max(region_count, r + 1);
    std::vector<double> log_rec(region_count), log_true(region_count);
    std::vector<std::size_t> count(region_count);
    for (std::size_t e = 0; e < truth.size(); ++e) {
        if (!(recovered[e] > 0.0) || !(truth[e] > 0.0)) throw NumericalError("oracle_report: non-positive stiffness");
        log_rec[edge_regions[e]] += std::log(recovered[e]);
        log_true[edge_regions[e]] += std::log(truth[e]);
        ++count[edge_regions[e]];
    }
    OracleReport report;
    for (std::size_t r = 0; r < region_count; ++r) {
        if (count[r] == 0) continue;
        RegionRatio rr;
        rr.region = r;
        rr.edges = count[r];
        rr.recovered_geomean = std::exp(log_rec[r] / static_cast<double>(count[r]));
        rr.true_geomean = std::exp(log_true[r] / static_cast<double>(count[r]));
        rr.ratio = std::exp((log_rec[r] - log_true[r]) / static_cast<double>(count[r]));
        report.regions.push_back(rr);
    }
    report.spearman = spearman(recovered, truth);
    return report;
}

}  // namespace springid
