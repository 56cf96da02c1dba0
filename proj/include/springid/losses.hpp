#pragma once

// Geometry (single-direction Chamfer) and motion (tracking) terms of the
// fitting objective, plus the resimulation / future-prediction metrics.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "springid/sim.hpp"
#include "springid/vec3.hpp"

namespace springid {

using TrackId = std::string;

struct ObservationFrame {
    Points observed;
    std::map<TrackId, std::optional<Vec3>> tracks;
    std::map<std::size_t, Vec3> controls;
};

struct ObservationSequence {
    std::vector<ObservationFrame> frames;
    double dt_frame = 1.0 / 30.0;
    std::size_t split_frame = 0;

    std::size_t frame_count() const { return frames.size(); }
    /// floor(0.7 * frames)
    static std::size_t default_split(std::size_t frame_count);
    void validate() const;
    /// Control targets as a schedule over the control points named in frame 0.
    ControlSchedule control_schedule() const;
};

struct LossConfig {
    double geometry_weight = 1.0;
    double motion_weight = 1.0;
    /// Use squared distances instead of Euclidean ones in both terms.
    bool squared = false;
};

struct LossReport {
    double geometry = 0.0;
    double motion = 0.0;
    double total = 0.0;

    LossReport& operator+=(const LossReport& o) {
        geometry += o.geometry;
        motion += o.motion;
        total += o.total;
        return *this;
    }
};

/// Half-open frame interval [begin, end).
struct FrameRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end > begin ? end - begin : 0; }
    bool empty() const { return size() == 0; }
};

/// Track id -> mass point index, in ascending track-id order.
using TrackBinding = std::vector<std::pair<TrackId, std::size_t>>;

/// Mean distance from each observed point to its nearest predicted point.
/// An empty observed set contributes 0 (with a warning).
double chamfer_single(const Points& observed, const Points& predicted, bool squared = false);

/// Mean distance over tracks present in the observation.
double track_error(const std::map<TrackId, Vec3>& predicted,
                   const std::map<TrackId, std::optional<Vec3>>& observed, bool squared = false);

/// Loss of one simulated frame against one observed frame.
LossReport frame_loss(const Points& positions, const ObservationFrame& frame, const TrackBinding& binding,
                      const LossConfig& config = {});

/// Sum of per-frame losses over `range`; the trajectory must cover it.
LossReport sequence_objective(const Trajectory& trajectory, const ObservationSequence& observations,
                              const TrackBinding& binding, FrameRange range, const LossConfig& config = {});

/// Binds every track present at frame 0 to its nearest canonical mass point.
TrackBinding bind_tracks(const ObservationSequence& observations, const MassSystem& system);

struct MetricsReport {
    std::optional<double> cd_recon;
    std::optional<double> te_recon;
    std::optional<double> cd_future;
    std::optional<double> te_future;
    std::vector<double> cd_per_frame;
    std::vector<double> te_per_frame;
};

/// Per-frame Chamfer and tracking error averaged over [0, split) and [split, end).
MetricsReport eval_metrics(const Trajectory& trajectory, const ObservationSequence& observations,
                           const TrackBinding& binding, std::size_t split);

namespace reference {

/// Exhaustive O(n*m) nearest-neighbor Chamfer, serial.
double chamfer_single(const Points& observed, const Points& predicted, bool squared = false);

}  // namespace reference

}  // namespace springid
