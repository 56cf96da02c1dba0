#pragma once

// Joint zeroth-order search over per-cluster KNN hyperparameters and
// homogeneous physical parameters.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "springid/cmaes.hpp"
#include "springid/losses.hpp"
#include "springid/sim.hpp"
#include "springid/topology.hpp"

namespace springid {

/// Homogeneous spring and contact parameters shared by every spring.
struct HomogeneousInit {
    double log_stiffness = 0.0;
    double log_dashpot = 0.0;
    double drag = 1.0;
    double restitution = 0.5;
    double friction = 0.5;

    double stiffness() const;
    double dashpot() const;
};

/// A scalar confined to [lo, hi] through a logistic code, optionally in log space.
struct BoundedScale {
    double lo = 0.0;
    double hi = 1.0;
    bool logarithmic = false;

    double decode(double code) const;
    double encode(double value) const;
};

/// Search bounds. Radius bounds are multiples of the median nearest-neighbor spacing.
struct ParameterBounds {
    int max_neighbors = 12;
    double radius_min_factor = 0.5;
    double radius_max_factor = 4.0;
    double stiffness_min = 1.0;
    double stiffness_max = 1e5;
    double dashpot_min = 1e-3;
    double dashpot_max = 100.0;
    double drag_min = 0.5;
    double drag_max = 1.0;
    double restitution_min = 0.0;
    double restitution_max = 1.0;
    double friction_min = 0.0;
    double friction_max = 2.0;

    void validate() const;
};

/// Bounds resolved against a point set: one scale per decision-vector entry kind.
struct DecisionSpace {
    std::size_t cluster_count = 1;
    BoundedScale neighbors;
    BoundedScale radius;
    BoundedScale stiffness;
    BoundedScale dashpot;
    BoundedScale drag;
    BoundedScale restitution;
    BoundedScale friction;

    static DecisionSpace resolve(const ParameterBounds& bounds, std::size_t cluster_count, double spacing);
    /// 2 * cluster_count + 5
    std::size_t dimension() const { return 2 * cluster_count + 5; }
};

using DecisionVector = std::vector<double>;

struct DecodedDecision {
    std::vector<KnnHyperparams> per_cluster;
    HomogeneousInit physical;
};

DecodedDecision decode(const DecisionVector& x, const DecisionSpace& space);
DecisionVector encode(const DecodedDecision& decision, const DecisionSpace& space);

struct StageOneSettings {
    std::size_t cluster_count = 5;
    ParameterBounds bounds;
    /// Starting point; topology codes start at the bound midpoints.
    HomogeneousInit initial{std::log(300.0), 0.0, 0.999, 0.5, 0.5};
    CmaesSettings cmaes;
    /// Gravity, ground, substeps and point radius; drag/restitution/friction are searched.
    GlobalPhysicalParams base_globals;
    LossConfig loss;
    /// Frames scored by the objective; defaults to [0, split_frame).
    std::optional<FrameRange> frames;
};

struct StageOneResult {
    ClusterTopologyConfig config;
    SpringTopology topology;
    HomogeneousInit physical;
    GlobalPhysicalParams globals;
    DecisionVector best_x;
    double best_objective = 0.0;
    double initial_objective = 0.0;
    int evaluations = 0;
    std::uint64_t seed = 0;
    std::vector<double> history;
};

/// Frame-0 state: canonical positions with control points at their frame-0 targets.
MassSystemState initial_state(const MassSystem& system, const ControlSchedule& controls);

/// Everything needed to score a candidate model against the observations.
class FittingProblem {
public:
    FittingProblem(const MassSystem& system, const ObservationSequence& observations, GlobalPhysicalParams base,
                   LossConfig loss, std::optional<FrameRange> frames);

    const MassSystem& system() const { return system_; }
    const ObservationSequence& observations() const { return observations_; }
    const ControlSchedule& controls() const { return controls_; }
    const TrackBinding& binding() const { return binding_; }
    const GlobalPhysicalParams& base_globals() const { return base_; }
    const LossConfig& loss() const { return loss_; }
    FrameRange frames() const { return frames_; }
    const MassSystemState& start() const { return start_; }

    /// Globals with the searched contact/drag entries substituted.
    GlobalPhysicalParams globals_for(const HomogeneousInit& physical) const;
    /// Objective over the fitting frames; throws on divergence.
    LossReport evaluate(const SpringTopology& topology, const SpringParams& springs,
                        const GlobalPhysicalParams& globals) const;

private:
    MassSystem system_;
    ObservationSequence observations_;
    ControlSchedule controls_;
    TrackBinding binding_;
    GlobalPhysicalParams base_;
    LossConfig loss_;
    FrameRange frames_;
    MassSystemState start_;
};

/// Topology for decoded KNN hyperparameters (with component bridging).
SpringTopology topology_for(const Points& canonical, const std::vector<std::size_t>& labels,
                            const std::vector<KnnHyperparams>& per_cluster);

StageOneResult solve_stage_one(const MassSystem& system, const ObservationSequence& observations,
                               const StageOneSettings& settings);

}  // namespace springid
