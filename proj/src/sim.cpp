#include "springid/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "springid/errors.hpp"
#include "springid/parallel.hpp"

namespace springid {

namespace {

std::atomic<std::uint64_t> g_degenerate_springs{0};

}  // namespace

std::uint64_t degenerate_spring_count() { return g_degenerate_springs.load(std::memory_order_relaxed); }
void reset_degenerate_spring_count() { g_degenerate_springs.store(0, std::memory_order_relaxed); }

MassSystem MassSystem::uniform(Points canonical, double total_mass, std::vector<std::size_t> controls) {
    if (canonical.empty()) throw ConfigError("mass system needs at least one point");
    if (!(total_mass > 0.0)) throw ConfigError("total mass must be positive");
    MassSystem s;
    s.masses.assign(canonical.size(), total_mass / static_cast<double>(canonical.size()));
    s.canonical_positions = std::move(canonical);
    s.control_indices = std::move(controls);
    s.validate();
    return s;
}

void MassSystem::validate() const {
    if (canonical_positions.size() != masses.size())
        throw ConfigError("mass system: position and mass counts differ");
    for (const auto& p : canonical_positions)
        if (!is_finite(p)) throw ConfigError("mass system: non-finite canonical position");
    for (double m : masses)
        if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError("mass system: masses must be positive");
    std::vector<char> seen(size(), 0);
    for (std::size_t c : control_indices) {
        if (c >= size()) throw ConfigError("mass system: control index out of range");
        if (seen[c]) throw ConfigError("mass system: duplicate control index");
        seen[c] = 1;
    }
}

std::vector<char> MassSystem::control_mask() const {
    std::vector<char> mask(size(), 0);
    for (std::size_t c : control_indices) mask[c] = 1;
    return mask;
}

MassSystemState MassSystemState::at_rest(const MassSystem& system) {
    MassSystemState s;
    s.positions = system.canonical_positions;
    s.velocities.assign(system.size(), Vec3{});
    s.frame_index = 0;
    return s;
}

SpringTopology SpringTopology::from_pairs(std::vector<Edge> pairs, const Points& canonical) {
    for (auto& e : pairs) {
        if (e.i > e.j) std::swap(e.i, e.j);
        if (e.i == e.j) throw ConfigError("spring topology: self-loop");
        if (e.j >= canonical.size()) throw ConfigError("spring topology: index out of range");
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    SpringTopology t;
    t.rest_lengths.reserve(pairs.size());
    for (const auto& e : pairs) t.rest_lengths.push_back(distance(canonical[e.i], canonical[e.j]));
    t.edges = std::move(pairs);
    return t;
}

void SpringTopology::validate(std::size_t point_count) const {
    if (edges.size() != rest_lengths.size()) throw ConfigError("spring topology: rest length count mismatch");
    for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].i >= edges[e].j) throw ConfigError("spring topology: edge must satisfy i < j");
        if (edges[e].j >= point_count) throw ConfigError("spring topology: index out of range");
        if (e > 0 && !(edges[e - 1] < edges[e])) throw ConfigError("spring topology: edges unsorted or duplicated");
        if (!(rest_lengths[e] > 0.0)) throw ConfigError("spring topology: rest lengths must be positive");
    }
}

SpringParams SpringParams::uniform(std::size_t edge_count, double stiffness, double dashpot) {
    SpringParams p;
    p.stiffness.assign(edge_count, stiffness);
    p.dashpot.assign(edge_count, dashpot);
    return p;
}

void SpringParams::validate(std::size_t edge_count) const {
    if (stiffness.size() != edge_count || dashpot.size() != edge_count)
        throw ConfigError("spring params: length does not match edge count");
    for (double k : stiffness)
        if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("spring params: stiffness must be positive");
    for (double g : dashpot)
        if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("spring params: dashpot must be non-negative");
}

void GlobalPhysicalParams::set_frame_interval(double dt_frame, int substeps) {
    if (!(dt_frame > 0.0) || substeps < 1) throw ConfigError("frame interval and substeps must be positive");
    substeps_per_frame = substeps;
    dt = dt_frame / substeps;
}

void GlobalPhysicalParams::validate() const {
    if (!(drag > 0.0 && drag <= 1.0)) throw ConfigError("drag must lie in (0, 1]");
    if (!is_finite(gravity)) throw ConfigError("gravity must be finite");
    if (!std::isfinite(ground_height)) throw ConfigError("ground height must be finite");
    if (!(restitution >= 0.0 && restitution <= 1.0)) throw ConfigError("restitution must lie in [0, 1]");
    if (!(friction >= 0.0) || !std::isfinite(friction)) throw ConfigError("friction must be non-negative");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (substeps_per_frame < 1) throw ConfigError("substeps_per_frame must be at least 1");
    if (!(point_radius >= 0.0)) throw ConfigError("point radius must be non-negative");
}

Points ControlSchedule::substep_targets(std::size_t frame, int substep, int substeps) const {
    const Points& a = frames.at(frame);
    if (substep >= substeps) return frames.at(frame + 1);
    const Points& b = frames.at(frame + 1);
    const double t = static_cast<double>(substep) / static_cast<double>(substeps);
    Points out(a.size());
    for (std::size_t c = 0; c < a.size(); ++c) out[c] = a[c] + (b[c] - a[c]) * t;
    return out;
}

void ControlSchedule::validate(const MassSystem& system) const {
    if (indices != system.control_indices)
        throw ConfigError("control schedule indices differ from the mass system's control points");
    for (const auto& row : frames) {
        if (row.size() != indices.size()) throw ConfigError("control schedule frame does not cover all control points");
        for (const auto& p : row)
            if (!is_finite(p)) throw ConfigError("control schedule: non-finite target");
    }
}

SpringIncidence SpringIncidence::build(std::size_t point_count, const SpringTopology& topology) {
    SpringIncidence inc;
    inc.offsets.assign(point_count + 1, 0);
    for (const auto& e : topology.edges) {
        ++inc.offsets[e.i + 1];
        ++inc.offsets[e.j + 1];
    }
    for (std::size_t p = 0; p < point_count; ++p) inc.offsets[p + 1] += inc.offsets[p];
    inc.edge.resize(inc.offsets.back());
    inc.is_first.resize(inc.offsets.back());
    std::vector<std::size_t> cursor(inc.offsets.begin(), inc.offsets.end() - 1);
    for (std::size_t e = 0; e < topology.edges.size(); ++e) {
        const auto& ed = topology.edges[e];
        inc.edge[cursor[ed.i]] = e;
        inc.is_first[cursor[ed.i]++] = 1;
        inc.edge[cursor[ed.j]] = e;
        inc.is_first[cursor[ed.j]++] = 0;
    }
    return inc;
}

Vec3 spring_force(const Vec3& xi, const Vec3& xj, double k, double rest_length) {
    const Vec3 d = xj - xi;
    const double len = norm(d);
    if (len < kDegenerateSpringLength) {
        g_degenerate_springs.fetch_add(1, std::memory_order_relaxed);
        return {};
    }
    return d * (k * (len - rest_length) / len);
}

Vec3 dashpot_force(const Vec3& vi, const Vec3& vj, double gamma) { return (vi - vj) * (-gamma); }

std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals) {
    return accumulate_forces(state, system, topology, springs, globals,
                             SpringIncidence::build(system.size(), topology));
}

std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals,
                                    const SpringIncidence& incidence) {
    const auto n = static_cast<std::ptrdiff_t>(system.size());
    std::vector<Vec3> forces(system.size());
    // Lowest offending edge, so the reported edge does not depend on scheduling.
    std::size_t bad_edge = std::numeric_limits<std::size_t>::max();

#pragma omp parallel for schedule(static) reduction(min : bad_edge) if (n >= kParallelPointThreshold)
    for (std::ptrdiff_t p = 0; p < n; ++p) {
        Vec3 f = globals.gravity * system.masses[p];
        for (std::size_t slot = incidence.offsets[p]; slot < incidence.offsets[p + 1]; ++slot) {
            const std::size_t e = incidence.edge[slot];
            const Edge& ed = topology.edges[e];
            Vec3 fe = spring_force(state.positions[ed.i], state.positions[ed.j], springs.stiffness[e],
                                   topology.rest_lengths[e]) +
                      dashpot_force(state.velocities[ed.i], state.velocities[ed.j], springs.dashpot[e]);
            if (!is_finite(fe)) bad_edge = std::min(bad_edge, e);
            if (incidence.is_first[slot])
                f += fe;
            else
                f -= fe;
        }
        forces[p] = f;
    }
    if (bad_edge != std::numeric_limits<std::size_t>::max())
        throw SimulationDiverged(state.frame_index, bad_edge, "non-finite spring force");
    return forces;
}

Vec3 ground_contact_velocity(const Vec3& v, const GlobalPhysicalParams& g) {
    const double vn = v.y;
    const Vec3 vt{v.x, 0.0, v.z};
    const double scale =
        std::max(0.0, 1.0 - g.friction * (1.0 + g.restitution) * std::abs(vn) / (norm(vt) + kFrictionEpsilon));
    return {vt.x * scale, -g.restitution * vn, vt.z * scale};
}

namespace {

// Equal-mass sphere impulses between approaching pairs.
std::vector<Vec3> pair_impulses(const MassSystemState& state, const GlobalPhysicalParams& globals) {
    const std::size_t n = state.size();
    std::vector<Vec3> dv(n);
    if (!(globals.point_radius > 0.0)) return dv;
    const double contact2 = 4.0 * globals.point_radius * globals.point_radius;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const Vec3 d = state.positions[i] - state.positions[j];
            const double d2 = squared_norm(d);
            if (d2 >= contact2 || d2 < kDegenerateSpringLength * kDegenerateSpringLength) continue;
            const Vec3 nrm = d / std::sqrt(d2);
            const double approach = dot(state.velocities[i] - state.velocities[j], nrm);
            if (approach >= 0.0) continue;
            const Vec3 impulse = nrm * (-0.5 * (1.0 + globals.restitution) * approach);
            dv[i] += impulse;
            dv[j] -= impulse;
        }
    }
    return dv;
}

}  // namespace

std::vector<Vec3> collision_impulse(const MassSystemState& state, const GlobalPhysicalParams& globals) {
    std::vector<Vec3> dv = pair_impulses(state, globals);
    for (std::size_t i = 0; i < state.size(); ++i) {
        const Vec3 v = state.velocities[i] + dv[i];
        if (in_ground_contact(state.positions[i], v, globals)) dv[i] += ground_contact_velocity(v, globals) - v;
    }
    return dv;
}

MassSystemState euler_step(const MassSystemState& state, std::span<const Vec3> forces,
                           const MassSystem& system, const GlobalPhysicalParams& globals,
                           std::optional<std::span<const Vec3>> prescribed) {
    if (!(globals.dt > 0.0)) throw ConfigError("euler_step: dt must be positive");
    const std::size_t n = system.size();
    if (forces.size() != n || state.size() != n) throw ConfigError("euler_step: size mismatch");
    if (prescribed && prescribed->size() != system.control_indices.size())
        throw ConfigError("euler_step: prescribed targets do not match control points");

    const double dt = globals.dt;
    MassSystemState next;
    next.frame_index = state.frame_index;
    next.positions = state.positions;
    next.velocities.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        next.velocities[i] = (state.velocities[i] + forces[i] * (dt / system.masses[i])) * globals.drag;

    // Contact is resolved on the candidate velocities at the current positions;
    // this applies exactly the corrections collision_impulse reports.
    if (globals.point_radius > 0.0) {
        const auto dv = pair_impulses(next, globals);
        for (std::size_t i = 0; i < n; ++i) next.velocities[i] += dv[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const bool contact = in_ground_contact(state.positions[i], next.velocities[i], globals);
        if (contact) next.velocities[i] = ground_contact_velocity(next.velocities[i], globals);
        next.positions[i] = state.positions[i] + next.velocities[i] * dt;
        if (contact) next.positions[i].y = std::max(next.positions[i].y, globals.ground_height);
    }

    if (prescribed) {
        for (std::size_t c = 0; c < system.control_indices.size(); ++c) {
            const std::size_t i = system.control_indices[c];
            const Vec3& target = (*prescribed)[c];
            next.velocities[i] = (target - state.positions[i]) / dt;
            next.positions[i] = target;
        }
    }
    return next;
}

void check_state(const MassSystemState& state) {
    for (std::size_t i = 0; i < state.size(); ++i) {
        const Vec3& x = state.positions[i];
        const Vec3& v = state.velocities[i];
        if (!is_finite(x) || !is_finite(v))
            throw SimulationDiverged(state.frame_index, SimulationDiverged::kNoEdge,
                                     "non-finite state at point " + std::to_string(i));
        if (norm(x) > kDivergenceBound)
            throw SimulationDiverged(state.frame_index, SimulationDiverged::kNoEdge,
                                     "position magnitude exceeds bound at point " + std::to_string(i));
    }
}

MassSystemState advance_frame(const MassSystemState& state, const MassSystem& system,
                              const SpringTopology& topology, const SpringParams& springs,
                              const GlobalPhysicalParams& globals, const ControlSchedule& controls,
                              const SpringIncidence& incidence) {
    const std::size_t frame = state.frame_index;
    const int substeps = globals.substeps_per_frame;
    MassSystemState cur = state;
    for (int s = 1; s <= substeps; ++s) {
        const auto forces = accumulate_forces(cur, system, topology, springs, globals, incidence);
        if (controls.indices.empty()) {
            cur = euler_step(cur, forces, system, globals);
        } else {
            const Points targets = controls.substep_targets(frame, s, substeps);
            cur = euler_step(cur, forces, system, globals, std::span<const Vec3>(targets));
        }
    }
    cur.frame_index = frame + 1;
    check_state(cur);
    return cur;
}

Trajectory rollout(const MassSystemState& initial, const MassSystem& system,
                   const SpringTopology& topology, const SpringParams& springs,
                   const GlobalPhysicalParams& globals, const ControlSchedule& controls,
                   std::size_t n_frames) {
    if (n_frames < 1) throw ConfigError("rollout: n_frames must be at least 1");
    globals.validate();
    if (initial.size() != system.size() || initial.velocities.size() != system.size())
        throw ConfigError("rollout: initial state size mismatch");
    springs.validate(topology.size());
    if (!controls.indices.empty() && controls.frame_count() < initial.frame_index + n_frames)
        throw ConfigError("rollout: control schedule does not cover the requested frames");

    const auto incidence = SpringIncidence::build(system.size(), topology);
    Trajectory traj;
    traj.states.reserve(n_frames);
    traj.states.push_back(initial);
    for (std::size_t f = 1; f < n_frames; ++f)
        traj.states.push_back(advance_frame(traj.states.back(), system, topology, springs, globals, controls, incidence));
    return traj;
}

std::vector<Points> skin_points(const Points& query_canonical, const MassSystem& system,
                                const Trajectory& trajectory, std::size_t k_neighbors) {
    if (trajectory.states.empty()) throw ConfigError("skin_points: empty trajectory");
    const std::size_t n = system.size();
    if (k_neighbors < 1 || k_neighbors > n) throw ConfigError("skin_points: k_neighbors out of range");

    struct Binding {
        std::vector<std::size_t> idx;
        std::vector<double> w;
    };
    std::vector<Binding> bindings(query_canonical.size());
    std::vector<std::pair<double, std::size_t>> cand(n);
    for (std::size_t q = 0; q < query_canonical.size(); ++q) {
        for (std::size_t i = 0; i < n; ++i)
            cand[i] = {distance(query_canonical[q], system.canonical_positions[i]), i};
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_neighbors), cand.end());
        double total = 0.0;
        for (std::size_t k = 0; k < k_neighbors; ++k) {
            bindings[q].idx.push_back(cand[k].second);
            bindings[q].w.push_back(1.0 / (cand[k].first + 1e-8));
            total += bindings[q].w.back();
        }
        for (double& w : bindings[q].w) w /= total;
    }

    std::vector<Points> out(trajectory.frame_count(), Points(query_canonical.size()));
    for (std::size_t f = 0; f < trajectory.frame_count(); ++f) {
        const auto& pos = trajectory.states[f].positions;
        for (std::size_t q = 0; q < query_canonical.size(); ++q) {
            Vec3 disp;
            for (std::size_t k = 0; k < k_neighbors; ++k) {
                const std::size_t i = bindings[q].idx[k];
                disp += (pos[i] - system.canonical_positions[i]) * bindings[q].w[k];
            }
            out[f][q] = query_canonical[q] + disp;
        }
    }
    return out;
}

namespace reference {

std::vector<Vec3> accumulate_forces(const MassSystemState& state, const MassSystem& system,
                                    const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals) {
    std::vector<Vec3> forces(system.size());
    for (std::size_t p = 0; p < system.size(); ++p) forces[p] = globals.gravity * system.masses[p];
    for (std::size_t e = 0; e < topology.size(); ++e) {
        const Edge& ed = topology.edges[e];
        const Vec3 fe = spring_force(state.positions[ed.i], state.positions[ed.j], springs.stiffness[e],
                                     topology.rest_lengths[e]) +
                        dashpot_force(state.velocities[ed.i], state.velocities[ed.j], springs.dashpot[e]);
        if (!is_finite(fe)) throw SimulationDiverged(state.frame_index, e, "non-finite spring force");
        forces[ed.i] += fe;
        forces[ed.j] -= fe;
    }
    return forces;
}

}  // namespace reference

}  // namespace springid
