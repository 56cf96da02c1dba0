#include "springid/losses.hpp"

#include <cmath>
#include <limits>

#include "springid/errors.hpp"
#include "springid/log.hpp"
#include "springid/parallel.hpp"

namespace springid {

namespace {

double point_distance(const Vec3& a, const Vec3& b, bool squared) {
    const double d2 = squared_distance(a, b);
    return squared ? d2 : std::sqrt(d2);
}

double nearest_squared(const Vec3& q, const Points& predicted) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : predicted) {
        const double d2 = squared_distance(q, p);
        if (d2 < best) best = d2;
    }
    return best;
}

}  // namespace

std::size_t ObservationSequence::default_split(std::size_t frame_count) { return frame_count * 7 / 10; }

void ObservationSequence::validate() const {
    if (!(dt_frame > 0.0)) throw ConfigError("observations: dt_frame must be positive");
    if (frames.empty()) throw ConfigError("observations: no frames");
    if (split_frame > frames.size()) throw ConfigError("observations: split_frame beyond the last frame");
    for (const auto& f : frames) {
        for (const auto& p : f.observed)
            if (!is_finite(p)) throw ConfigError("observations: non-finite observed point");
        for (const auto& [id, t] : f.tracks)
            if (t && !is_finite(*t)) throw ConfigError("observations: non-finite track " + id);
        if (f.controls.size() != frames.front().controls.size())
            throw ConfigError("observations: control points differ between frames");
        for (const auto& [idx, p] : f.controls) {
            if (!frames.front().controls.contains(idx))
                throw ConfigError("observations: control points differ between frames");
            if (!is_finite(p)) throw ConfigError("observations: non-finite control target");
        }
    }
}

ControlSchedule ObservationSequence::control_schedule() const {
    ControlSchedule s;
    if (frames.empty()) return s;
    for (const auto& [idx, p] : frames.front().controls) s.indices.push_back(idx);
    s.frames.reserve(frames.size());
    for (const auto& f : frames) {
        Points row;
        row.reserve(s.indices.size());
        for (std::size_t idx : s.indices) {
            const auto it = f.controls.find(idx);
            if (it == f.controls.end()) throw ConfigError("observations: frame misses a control target");
            row.push_back(it->second);
        }
        s.frames.push_back(std::move(row));
    }
    return s;
}

double chamfer_single(const Points& observed, const Points& predicted, bool squared) {
    if (predicted.empty()) throw ConfigError("chamfer_single: predicted set is empty");
    if (observed.empty()) {
        log::warn("chamfer_single: empty observed cloud, frame skipped");
        return 0.0;
    }
    const auto n = static_cast<std::ptrdiff_t>(observed.size());
    std::vector<double> nearest(observed.size());
#pragma omp parallel for schedule(static) if (n * static_cast<std::ptrdiff_t>(predicted.size()) >= (1 << 20))
    for (std::ptrdiff_t q = 0; q < n; ++q) {
        const double d2 = nearest_squared(observed[q], predicted);
        nearest[q] = squared ? d2 : std::sqrt(d2);
    }
    // Ordered sum keeps the result independent of the thread count.
    double sum = 0.0;
    for (double d : nearest) sum += d;
    return sum / static_cast<double>(observed.size());
}

double track_error(const std::map<TrackId, Vec3>& predicted,
                   const std::map<TrackId, std::optional<Vec3>>& observed, bool squared) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [id, obs] : observed) {
        if (!obs) continue;
        const auto it = predicted.find(id);
        if (it == predicted.end()) throw ConfigError("track_error: no prediction for track " + id);
        sum += point_distance(it->second, *obs, squared);
        ++count;
    }
    if (count == 0) {
        log::warn("track_error: no tracks present in the observation");
        return 0.0;
    }
    return sum / static_cast<double>(count);
}

LossReport frame_loss(const Points& positions, const ObservationFrame& frame, const TrackBinding& binding,
                      const LossConfig& config) {
    LossReport r;
    r.geometry = chamfer_single(frame.observed, positions, config.squared);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [id, idx] : binding) {
        const auto it = frame.tracks.find(id);
        if (it == frame.tracks.end() || !it->second) continue;
        sum += point_distance(positions.at(idx), *it->second, config.squared);
        ++count;
    }
    if (count > 0)
        r.motion = sum / static_cast<double>(count);
    else if (!binding.empty())
        log::warn("frame_loss: no bound tracks present in a frame");
    r.total = config.geometry_weight * r.geometry + config.motion_weight * r.motion;
    return r;
}

LossReport sequence_objective(const Trajectory& trajectory, const ObservationSequence& observations,
                              const TrackBinding& binding, FrameRange range, const LossConfig& config) {
    if (trajectory.states.empty()) throw ConfigError("sequence_objective: empty trajectory");
    const std::size_t first = trajectory.states.front().frame_index;
    if (range.begin < first || range.end > first + trajectory.frame_count() || range.end > observations.frame_count())
        throw ConfigError("sequence_objective: trajectory or observations do not cover the frame range");
    LossReport total;
    for (std::size_t f = range.begin; f < range.end; ++f)
        total += frame_loss(trajectory.states[f - first].positions, observations.frames[f], binding, config);
    return total;
}

TrackBinding bind_tracks(const ObservationSequence& observations, const MassSystem& system) {
    if (observations.frames.empty()) throw ConfigError("bind_tracks: no frames");
    if (system.size() == 0) throw ConfigError("bind_tracks: empty mass system");
    TrackBinding binding;
    for (const auto& [id, pos] : observations.frames.front().tracks) {
        if (!pos) {
            log::warn("bind_tracks: track " + id + " absent at frame 0, excluded");
            continue;
        }
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < system.size(); ++i) {
            const double d2 = squared_distance(*pos, system.canonical_positions[i]);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        binding.emplace_back(id, best);
    }
    return binding;
}

MetricsReport eval_metrics(const Trajectory& trajectory, const ObservationSequence& observations,
                           const TrackBinding& binding, std::size_t split) {
    const std::size_t n = std::min(trajectory.frame_count(), observations.frame_count());
    MetricsReport m;
    m.cd_per_frame.resize(n);
    m.te_per_frame.resize(n);
    for (std::size_t f = 0; f < n; ++f) {
        const LossReport r = frame_loss(trajectory.states[f].positions, observations.frames[f], binding);
        m.cd_per_frame[f] = r.geometry;
        m.te_per_frame[f] = r.motion;
    }
    const auto mean = [&](const std::vector<double>& v, std::size_t a, std::size_t b) -> std::optional<double> {
        if (b <= a) return std::nullopt;
        double s = 0.0;
        for (std::size_t f = a; f < b; ++f) s += v[f];
        return s / static_cast<double>(b - a);
    };
    const std::size_t s = std::min(split, n);
    m.cd_recon = mean(m.cd_per_frame, 0, s);
    m.te_recon = mean(m.te_per_frame, 0, s);
    m.cd_future = mean(m.cd_per_frame, s, n);
    m.te_future = mean(m.te_per_frame, s, n);
    return m;
}

namespace reference {

double chamfer_single(const Points& observed, const Points& predicted, bool squared) {
    if (predicted.empty()) throw ConfigError("chamfer_single: predicted set is empty");
    if (observed.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& q : observed) {
        const double d2 = nearest_squared(q, predicted);
        sum += squared ? d2 : std::sqrt(d2);
    }
    return sum / static_cast<double>(observed.size());
}

}  // namespace reference

}  // namespace springid
