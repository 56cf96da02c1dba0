#pragma once

// Reverse-mode gradients of the fitting loss through truncated rollouts, with
// respect to every learnable of the spring field, and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "springid/field.hpp"
#include "springid/losses.hpp"
#include "springid/sim.hpp"
#include "springid/stage_one.hpp"

namespace springid {

/// Fixed inputs of a gradient computation. All referenced objects must outlive it.
struct GradientProblem {
    const MassSystem& system;
    const SpringTopology& topology;
    const GlobalPhysicalParams& globals;
    const ControlSchedule& controls;
    const ObservationSequence& observations;
    const TrackBinding& binding;
    HomogeneousInit base;
    MaterializationBounds bounds;
    LossConfig loss;

    void validate() const;
};

/// Loss and per-spring gradient of a window, for a fixed set of spring parameters.
struct SpringWindowResult {
    double loss = 0.0;
    std::vector<double> d_stiffness;
    std::vector<double> d_dashpot;
    MassSystemState end_state;
};

/// Simulates `frames` frames from `start` (at frame start.frame_index) and returns the
/// summed loss of the simulated frames with its gradient w.r.t. each spring's k and gamma.
SpringWindowResult backprop_springs(const MassSystemState& start, std::size_t frames, const SpringParams& springs,
                                    const GradientProblem& problem);

struct WindowResult {
    double loss = 0.0;
    ParameterVector gradient;
    MassSystemState end_state;
};

/// Same as backprop_springs with the springs materialized from `field`; the
/// gradient covers every plane entry and MLP weight.
WindowResult backprop_window(const MassSystemState& start, std::size_t frames, const TriPlaneField& field,
                             const GradientProblem& problem);

struct TrainingConfig {
    double learning_rate = 3e-3;
    int epochs = 600;
    /// Frames per truncated window; 0 unrolls the whole training range.
    std::size_t window = 10;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int max_retries = 3;

    void validate() const;
};

struct AdamState {
    std::vector<double> first;
    std::vector<double> second;
    long step = 0;
};

/// Adaptive-moment update with bias correction; the gradient is clipped to
/// grad_clip_norm by global norm first. Returns the (pre-clip) gradient norm.
double optimizer_step(std::vector<double>& params, std::vector<double> gradient, AdamState& state,
                      const TrainingConfig& config, double learning_rate);

struct WindowLog {
    int epoch = 0;
    std::size_t window = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double learning_rate = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    /// Sum of the window losses seen while training this epoch.
    double window_loss = 0.0;
    /// Objective over the training frames after the epoch's updates.
    double objective = 0.0;
    double learning_rate = 0.0;
    int retries = 0;
};

struct TrainingResult {
    TriPlaneField field;
    double initial_objective = 0.0;
    double best_objective = 0.0;
    int best_epoch = 0;  // 0 = untrained field
    std::vector<EpochRecord> history;
    std::vector<WindowLog> log;
};

struct TrainingCallbacks {
    std::function<void(const WindowLog&)> on_window;
    std::function<void(const EpochRecord&, const TriPlaneField&)> on_epoch;
};

/// A truncated-unroll window: simulate `frames` frames starting at `start_frame`.
struct WindowSpan {
    std::size_t start_frame = 0;
    std::size_t frames = 0;
    friend bool operator==(const WindowSpan&, const WindowSpan&) = default;
};

/// Consecutive windows covering the transitions 0 -> end_frame - 1; window 0
/// (or any window size >= the range) unrolls everything in one window.
std::vector<WindowSpan> training_windows(std::size_t end_frame, std::size_t window);

/// Trains the field on frames [0, problem.frames().end); S0, topology and globals stay fixed.
/// Returns the field with the lowest training objective (the input field counts as epoch 0).
TrainingResult train_field(const TriPlaneField& field, const HomogeneousInit& base, const SpringTopology& topology,
                           const FittingProblem& problem, const GlobalPhysicalParams& globals,
                           const TrainingConfig& config, const MaterializationBounds& bounds = {},
                           const TrainingCallbacks& callbacks = {});

}  // namespace springid
