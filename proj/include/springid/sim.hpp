#pragma once

// Spring-mass dynamics: per-spring forces, impulse ground contact, explicit
// Euler substeps with drag damping, multi-frame rollout and point skinning.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "springid/vec3.hpp"

namespace springid {

/// Spring endpoints, always stored with i < j.
struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;

    friend constexpr bool operator==(const Edge&, const Edge&) = default;
    friend constexpr auto operator<=>(const Edge&, const Edge&) = default;
};

struct MassSystem {
    Points canonical_positions;
    std::vector<double> masses;
    std::vector<std::size_t> control_indices;

    std::size_t size() const { return canonical_positions.size(); }
    /// Uniform masses summing to total_mass.
    static MassSystem uniform(Points canonical, double total_mass, std::vector<std::size_t> controls = {});
    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    /// One flag per point, true for kinematically driven points.
    std::vector<char> control_mask() const;
};

struct MassSystemState {
    Points positions;
    Points velocities;
    std::size_t frame_index = 0;

    /// Canonical positions, zero velocity, frame 0.
    static MassSystemState at_rest(const MassSystem& system);
    std::size_t size() const { return positions.size(); }
    friend bool operator==(const MassSystemState&, const MassSystemState&) = default;
};

struct SpringTopology {
    std::vector<Edge> edges;
    std::vector<double> rest_lengths;

    std::size_t size() const { return edges.size(); }
    /// Normalizes, sorts and deduplicates the pairs; rest lengths come from `canonical`.
    static SpringTopology from_pairs(std::vector<Edge> pairs, const Points& canonical);
    void validate(std::size_t point_count) const;
    friend bool operator==(const SpringTopology&, const SpringTopology&) = default;
};

struct SpringParams {
    std::vector<double> stiffness;  // N/m
    std::vector<double> dashpot;    // N*s/m

    static SpringParams uniform(std::size_t edge_count, double stiffness, double dashpot);
    std::size_t size() const { return stiffness.size(); }
    void validate(std::size_t edge_count) const;
};

struct GlobalPhysicalParams {
    double drag = 1.0;  // per-substep velocity scale, (0, 1]
    Vec3 gravity{0.0, -9.8, 0.0};
    double ground_height = -1.0;
    double restitution = 0.5;
    double friction = 0.5;
    double dt = 1.0 / 30.0 / 32.0;  // substep duration
    int substeps_per_frame = 32;
    /// Point-point sphere collision radius; 0 disables it.
    double point_radius = 0.0;

    double frame_interval() const { return dt * substeps_per_frame; }
    /// Sets dt so that substeps_per_frame substeps span one frame.
    void set_frame_interval(double dt_frame, int substeps);
    void validate() const;
};

/// Prescribed positions of the control points, one row per frame.
/// frames[f][c] is the target of indices[c] at frame f.
struct ControlSchedule {
    std::vector<std::size_t> indices;
    std::vector<Points> frames;

    std::size_t frame_count() const { return frames.size(); }
    /// Linear interpolation between frame f and f + 1 at substep s of S (s in 1..S).
    Points substep_targets(std::size_t frame, int substep, int substeps) const;
    void validate(const MassSystem& system) const;
};

struct Trajectory {
    std::vector<MassSystemState> states;

    std::size_t frame_count() const { return states.size(); }
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// For each point, the edges it touches and whether it is the edge's first endpoint.
/// Compressed row layout; entries per point are in ascending edge order.
struct SpringIncidence {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> edge;
    std::vector<char> is_first;

    static SpringIncidence build(std::size_t point_count, const SpringTopology& topology);
};

/// Endpoints closer than this produce no spring force.
inline constexpr double kDegenerateSpringLength = 1e-9;
/// Norm threshold used by the divergence checks.
inline constexpr double kDivergenceBound = 1e6;
/// Regularizer in the friction scaling denominator.
inline constexpr double kFrictionEpsilon = 1e-9;

/// Number of degenerate-spring evaluations seen by this process.
std::uint64_t degenerate_spring_count();
void reset_degenerate_spring_count();

/// Elastic force on xi from the spring (xi, xj).
Vec3 spring_force(const Vec3& xi, const Vec3& xj, double k, double rest_length);
/// Damping force on point i from the dashpot (i, j).
Vec3 dashpot_force(const Vec3& vi, const Vec3& vj, double gamma);

/// Net force per point: springs, dashpots and gravity. Gathers per point over
/// the incidence lists; parallel over points for large systems.
std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals);
std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals,
                                    const SpringIncidence& incidence);

/// Ground-contact velocity corrections for the velocities stored in `state`.
std::vector<Vec3> collision_impulse(const MassSystemState& state, const GlobalPhysicalParams& globals);

/// True when the point is in contact with the ground plane.
inline bool in_ground_contact(const Vec3& x, const Vec3& v, const GlobalPhysicalParams& g) {
    return x.y < g.ground_height && v.y < 0.0;
}
/// Post-contact velocity for one point (normal reflection plus friction scaling).
Vec3 ground_contact_velocity(const Vec3& v, const GlobalPhysicalParams& globals);

/// One explicit Euler substep. When `prescribed` is given it holds one target per
/// entry of system.control_indices; otherwise every point is integrated freely.
MassSystemState euler_step(const MassSystemState& state, std::span<const Vec3> forces,
                           const MassSystem& system, const GlobalPhysicalParams& globals,
                           std::optional<std::span<const Vec3>> prescribed = std::nullopt);

/// Simulates n_frames - 1 frame transitions; states[0] is `initial`.
Trajectory rollout(const MassSystemState& initial, const MassSystem& system,
                   const SpringTopology& topology, const SpringParams& springs,
                   const GlobalPhysicalParams& globals, const ControlSchedule& controls,
                   std::size_t n_frames);

/// Advances one frame (substeps_per_frame substeps) from `state`, which must be at
/// frame `frame`. Controls interpolate between frames `frame` and `frame + 1`.
MassSystemState advance_frame(const MassSystemState& state, const MassSystem& system,
                              const SpringTopology& topology, const SpringParams& springs,
                              const GlobalPhysicalParams& globals, const ControlSchedule& controls,
                              const SpringIncidence& incidence);

/// Throws SimulationDiverged if any position or velocity is non-finite or too large.
void check_state(const MassSystemState& state);

/// Inverse-distance skinning of canonical query points onto the mass-point motion.
/// Returns per-frame query positions.
std::vector<Points> skin_points(const Points& query_canonical, const MassSystem& system,
                                const Trajectory& trajectory, std::size_t k_neighbors);

namespace reference {

/// Serial per-edge scatter; the baseline the gather kernel is checked against.
std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals);

}  // namespace reference

}  // namespace springid
