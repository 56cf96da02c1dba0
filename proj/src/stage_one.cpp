#include "springid/stage_one.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "springid/errors.hpp"
#include "springid/log.hpp"

namespace springid {

namespace {

constexpr double kCodeLimit = 50.0;
constexpr double kFractionFloor = 1e-12;

double logistic(double code) {
    code = std::clamp(code, -kCodeLimit, kCodeLimit);
    return 1.0 / (1.0 + std::exp(-code));
}

}  // namespace

double HomogeneousInit::stiffness() const { return std::exp(log_stiffness); }
double HomogeneousInit::dashpot() const { return std::exp(log_dashpot); }

double BoundedScale::decode(double code) const {
    if (std::isnan(code)) throw NumericalError("decode: NaN code");
    const double t = logistic(code);
    if (logarithmic) {
        const double a = std::log(lo), b = std::log(hi);
        return std::clamp(std::exp(a + (b - a) * t), lo, hi);
    }
    return std::clamp(lo + (hi - lo) * t, lo, hi);
}

double BoundedScale::encode(double value) const {
    double t = 0.5;
    if (hi > lo) {
        t = logarithmic ? (std::log(value) - std::log(lo)) / (std::log(hi) - std::log(lo)) : (value - lo) / (hi - lo);
    }
    t = std::clamp(t, kFractionFloor, 1.0 - kFractionFloor);
    return std::log(t / (1.0 - t));
}

void ParameterBounds::validate() const {
    if (max_neighbors < 1) throw ConfigError("bounds: max_neighbors must be at least 1");
    if (!(radius_min_factor > 0.0 && radius_max_factor >= radius_min_factor))
        throw ConfigError("bounds: invalid radius factors");
    if (!(stiffness_min > 0.0 && stiffness_max >= stiffness_min)) throw ConfigError("bounds: invalid stiffness range");
    if (!(dashpot_min > 0.0 && dashpot_max >= dashpot_min))
        throw ConfigError("bounds: dashpot range must be positive (it is searched in log space)");
    if (!(drag_min > 0.0 && drag_max <= 1.0 && drag_max >= drag_min)) throw ConfigError("bounds: invalid drag range");
    if (!(restitution_min >= 0.0 && restitution_max <= 1.0 && restitution_max >= restitution_min))
        throw ConfigError("bounds: invalid restitution range");
    if (!(friction_min >= 0.0 && friction_max >= friction_min)) throw ConfigError("bounds: invalid friction range");
}

DecisionSpace DecisionSpace::resolve(const ParameterBounds& b, std::size_t cluster_count, double spacing) {
    b.validate();
    if (cluster_count < 1) throw ConfigError("decision space: cluster_count must be at least 1");
    if (!(spacing > 0.0)) throw ConfigError("decision space: point spacing must be positive");
    DecisionSpace s;
    s.cluster_count = cluster_count;
    s.neighbors = {1.0, static_cast<double>(b.max_neighbors), false};
    s.radius = {b.radius_min_factor * spacing, b.radius_max_factor * spacing, true};
    s.stiffness = {b.stiffness_min, b.stiffness_max, true};
    s.dashpot = {b.dashpot_min, b.dashpot_max, true};
    s.drag = {b.drag_min, b.drag_max, false};
    s.restitution = {b.restitution_min, b.restitution_max, false};
    s.friction = {b.friction_min, b.friction_max, false};
    return s;
}

DecodedDecision decode(const DecisionVector& x, const DecisionSpace& space) {
    if (x.size() != space.dimension())
        throw ConfigError("decode: expected " + std::to_string(space.dimension()) + " entries, got " +
                          std::to_string(x.size()));
    DecodedDecision d;
    d.per_cluster.resize(space.cluster_count);
    for (std::size_t c = 0; c < space.cluster_count; ++c) {
        const double k = std::round(space.neighbors.decode(x[2 * c]));
        d.per_cluster[c].max_neighbors = static_cast<int>(std::clamp(k, space.neighbors.lo, space.neighbors.hi));
        d.per_cluster[c].radius = space.radius.decode(x[2 * c + 1]);
    }
    const std::size_t o = 2 * space.cluster_count;
    d.physical.log_stiffness = std::log(space.stiffness.decode(x[o]));
    d.physical.log_dashpot = std::log(space.dashpot.decode(x[o + 1]));
    d.physical.drag = space.drag.decode(x[o + 2]);
    d.physical.restitution = space.restitution.decode(x[o + 3]);
    d.physical.friction = space.friction.decode(x[o + 4]);
    return d;
}

DecisionVector encode(const DecodedDecision& d, const DecisionSpace& space) {
    if (d.per_cluster.size() != space.cluster_count) throw ConfigError("encode: cluster count mismatch");
    DecisionVector x(space.dimension());
    for (std::size_t c = 0; c < space.cluster_count; ++c) {
        x[2 * c] = space.neighbors.encode(d.per_cluster[c].max_neighbors);
        x[2 * c + 1] = space.radius.encode(d.per_cluster[c].radius);
    }
    const std::size_t o = 2 * space.cluster_count;
    x[o] = space.stiffness.encode(d.physical.stiffness());
    x[o + 1] = space.dashpot.encode(d.physical.dashpot());
    x[o + 2] = space.drag.encode(d.physical.drag);
    x[o + 3] = space.restitution.encode(d.physical.restitution);
    x[o + 4] = space.friction.encode(d.physical.friction);
    return x;
}

MassSystemState initial_state(const MassSystem& system, const ControlSchedule& controls) {
    MassSystemState s = MassSystemState::at_rest(system);
    if (!controls.frames.empty())
        for (std::size_t c = 0; c < controls.indices.size(); ++c) s.positions[controls.indices[c]] = controls.frames[0][c];
    return s;
}

FittingProblem::FittingProblem(const MassSystem& system, const ObservationSequence& observations,
                               GlobalPhysicalParams base, LossConfig loss, std::optional<FrameRange> frames)
    : system_(system), observations_(observations), loss_(loss) {
    system_.validate();
    observations_.validate();
    controls_ = observations_.control_schedule();
    if (controls_.indices != system_.control_indices) {
        // Control points are whatever the observations prescribe.
        system_.control_indices = controls_.indices;
        system_.validate();
    }
    base.set_frame_interval(observations_.dt_frame, base.substeps_per_frame);
    base.validate();
    base_ = base;
    frames_ = frames.value_or(FrameRange{0, observations_.split_frame});
    if (frames_.end > observations_.frame_count() || frames_.empty())
        throw ConfigError("fitting frame range is empty or exceeds the observations");
    binding_ = bind_tracks(observations_, system_);
    start_ = initial_state(system_, controls_);
}

GlobalPhysicalParams FittingProblem::globals_for(const HomogeneousInit& physical) const {
    GlobalPhysicalParams g = base_;
    g.drag = physical.drag;
    g.restitution = physical.restitution;
    g.friction = physical.friction;
    return g;
}

LossReport FittingProblem::evaluate(const SpringTopology& topology, const SpringParams& springs,
                                    const GlobalPhysicalParams& globals) const {
    const Trajectory traj = rollout(start_, system_, topology, springs, globals, controls_, frames_.end);
    return sequence_objective(traj, observations_, binding_, frames_, loss_);
}

SpringTopology topology_for(const Points& canonical, const std::vector<std::size_t>& labels,
                            const std::vector<KnnHyperparams>& per_cluster) {
    const ClusterTopologyConfig config{labels, per_cluster};
    return connect_components(canonical, build_piecewise_knn(canonical, config));
}

StageOneResult solve_stage_one(const MassSystem& system, const ObservationSequence& observations,
                               const StageOneSettings& settings) {
    if (observations.frames.empty()) throw ConfigError("solve_stage_one: no observations");
    const FittingProblem problem(system, observations, settings.base_globals, settings.loss, settings.frames);
    const Points& canonical = problem.system().canonical_positions;
    const auto labels = cluster_points(canonical, settings.cluster_count);
    const auto space = DecisionSpace::resolve(settings.bounds, settings.cluster_count, median_nearest_spacing(canonical));

    DecodedDecision start;
    start.per_cluster.assign(settings.cluster_count, {});
    start.physical = settings.initial;
    DecisionVector x0 = encode(start, space);
    for (std::size_t c = 0; c < settings.cluster_count; ++c) x0[2 * c] = x0[2 * c + 1] = 0.0;

    const double penalty = settings.cmaes.penalty;
    const Objective objective = [&](const DecisionVector& x) {
        const DecodedDecision d = decode(x, space);
        const SpringTopology topology = topology_for(canonical, labels, d.per_cluster);
        const SpringParams springs = SpringParams::uniform(topology.size(), d.physical.stiffness(), d.physical.dashpot());
        try {
            const double f = problem.evaluate(topology, springs, problem.globals_for(d.physical)).total;
            return std::isfinite(f) ? std::min(f, penalty) : penalty;
        } catch (const SimulationDiverged&) {
            return penalty;
        }
    };

    const CmaesResult run = cmaes_minimize(objective, x0, settings.cmaes);
    if (!(run.best_f < penalty))
        throw NumericalError("stage one: every evaluation diverged; reduce dt (more substeps) or tighten the bounds");

    StageOneResult r;
    const DecodedDecision best = decode(run.best_x, space);
    r.config = {labels, best.per_cluster};
    r.topology = topology_for(canonical, labels, best.per_cluster);
    r.physical = best.physical;
    r.globals = problem.globals_for(best.physical);
    r.best_x = run.best_x;
    r.best_objective = run.best_f;
    r.initial_objective = run.initial_f;
    r.evaluations = run.evaluations;
    r.seed = settings.cmaes.seed;
    r.history = run.history;
    return r;
}

}  // namespace springid
