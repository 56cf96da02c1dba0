#pragma once

// Synthetic rope / cloth scenes with known heterogeneous springs, their
// observation files, and the recovered-vs-true stiffness report.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "springid/losses.hpp"
#include "springid/sim.hpp"
#include "springid/topology.hpp"

namespace springid {

/// Material and (for knn topologies) connection density of an axis-aligned slab.
/// Membership is min <= coordinate < max.
struct SceneRegion {
    int axis = 1;
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    double stiffness = 100.0;
    double dashpot = 1.0;
    KnnHyperparams knn{4, 0.0};  // radius in multiples of the point spacing

    bool contains(const Vec3& p) const { return p[axis] >= min && p[axis] < max; }
};

struct ControlMotion {
    enum class Kind { Sinusoid, Linear };
    Kind kind = Kind::Sinusoid;
    Vec3 amplitude{0.1, 0.0, 0.0};  // sinusoid
    double frequency = 1.0;         // Hz
    Vec3 velocity{0.0, 0.0, 0.0};   // linear, m/s

    Vec3 offset(double t) const;
};

struct SceneSpec {
    enum class Kind { Rope, Cloth };
    enum class TopologyMode { Lattice, Knn };
    enum class ViewPolicy { All, MedianSplit };

    Kind kind = Kind::Rope;
    std::size_t points = 64;  // rope
    double length = 0.64;     // rope, m
    std::size_t rows = 16;    // cloth
    std::size_t cols = 16;
    double size = 0.32;  // cloth side along the columns, m
    double total_mass = 1.0;
    TopologyMode topology = TopologyMode::Lattice;
    std::vector<SceneRegion> regions;
    ControlMotion motion;
    std::size_t frames = 60;
    double dt_frame = 1.0 / 30.0;
    int substeps = 32;
    Vec3 gravity{0.0, -9.8, 0.0};
    double ground_height = -1.0;
    double drag = 1.0;
    ViewPolicy view = ViewPolicy::MedianSplit;
    int view_axis = 0;
    double track_fraction = 0.3;
    /// RMS magnitude of the isotropic position noise, m.
    double noise_std = 1e-3;
    std::uint64_t seed = 0;

    /// Two regions split at the rope midpoint (stiff above) or the cloth's middle column.
    static SceneSpec default_rope();
    static SceneSpec default_cloth();
    void validate() const;
};

struct Scene {
    MassSystem system;
    SpringTopology topology;
    SpringParams params;
    ControlSchedule controls;
    GlobalPhysicalParams globals;
    /// Region index of every true edge.
    std::vector<std::size_t> edge_regions;
};

Scene build_scene(const SceneSpec& spec);

/// Index of the first region containing p; throws ConfigError when none does.
std::size_t region_of(const std::vector<SceneRegion>& regions, const Vec3& p);

Trajectory simulate_scene(const Scene& scene, const SceneSpec& spec);

ObservationSequence emit_observations(const Trajectory& truth, const Scene& scene, const SceneSpec& spec,
                                      std::uint64_t seed);

/// Ground-truth springs expressed on another topology: an edge present in the
/// true topology keeps its values, any other edge takes its midpoint's region.
SpringParams truth_on_topology(const SpringTopology& topology, const Scene& scene, const SceneSpec& spec,
                               std::vector<std::size_t>* regions = nullptr);

struct RegionRatio {
    std::size_t region = 0;
    std::size_t edges = 0;
    double recovered_geomean = 0.0;
    double true_geomean = 0.0;
    double ratio = 0.0;
};

struct OracleReport {
    std::vector<RegionRatio> regions;
    double spearman = 0.0;
};

/// Per region geomean(recovered k) / geomean(true k), and the Spearman rank
/// correlation of recovered vs true per-edge stiffness. All three vectors are per edge.
OracleReport oracle_report(const std::vector<double>& recovered, const std::vector<double>& truth,
                           const std::vector<std::size_t>& edge_regions);

/// Pearson correlation of average ranks; 0 when either side has no spread.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace springid
