#include "springid/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "springid/errors.hpp"
#include "springid/parallel.hpp"

namespace springid {

namespace {

// Adjoint of the ground-contact velocity map, evaluated at the pre-contact velocity u.
Vec3 contact_velocity_vjp(const Vec3& u, const Vec3& g, const GlobalPhysicalParams& globals) {
    const double c = globals.friction * (1.0 + globals.restitution);
    const double t = std::sqrt(u.x * u.x + u.z * u.z);
    const double denom = t + kFrictionEpsilon;
    const double raw = 1.0 - c * std::abs(u.y) / denom;
    Vec3 out{0.0, -globals.restitution * g.y, 0.0};
    if (raw <= 0.0) return out;
    // scale s(u) = 1 - c |u_y| / (|u_t| + eps)
    const double ds_dy = (u.y < 0.0 ? c : -c) / denom;
    const double common = t > 0.0 ? c * std::abs(u.y) / (denom * denom * t) : 0.0;
    const double ds_dx = common * u.x;
    const double ds_dz = common * u.z;
    const double proj = g.x * u.x + g.z * u.z;
    out.x = g.x * raw + proj * ds_dx;
    out.z = g.z * raw + proj * ds_dz;
    out.y += proj * ds_dy;
    return out;
}

// d(loss)/d(positions) of one frame, accumulated into grad.
void frame_loss_gradient(const Points& positions, const ObservationFrame& frame, const TrackBinding& binding,
                         const LossConfig& config, std::vector<Vec3>& grad) {
    if (!frame.observed.empty() && config.geometry_weight != 0.0) {
        const double w = config.geometry_weight / static_cast<double>(frame.observed.size());
        for (const auto& o : frame.observed) {
            std::size_t best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < positions.size(); ++i) {
                const double d2 = squared_distance(o, positions[i]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = i;
                }
            }
            const Vec3 diff = positions[best] - o;
            if (config.squared)
                grad[best] += diff * (2.0 * w);
            else if (best_d2 > 0.0)
                grad[best] += diff * (w / std::sqrt(best_d2));
        }
    }
    if (config.motion_weight == 0.0) return;
    std::size_t count = 0;
    for (const auto& [id, idx] : binding) {
        const auto it = frame.tracks.find(id);
        if (it != frame.tracks.end() && it->second) ++count;
    }
    if (count == 0) return;
    const double w = config.motion_weight / static_cast<double>(count);
    for (const auto& [id, idx] : binding) {
        const auto it = frame.tracks.find(id);
        if (it == frame.tracks.end() || !it->second) continue;
        const Vec3 diff = positions[idx] - *it->second;
        const double d = norm(diff);
        if (config.squared)
            grad[idx] += diff * (2.0 * w);
        else if (d > 0.0)
            grad[idx] += diff * (w / d);
    }
}

struct StepAdjoint {
    std::vector<Vec3>& x_bar;
    std::vector<Vec3>& v_bar;
    std::vector<double>& k_bar;
    std::vector<double>& g_bar;
};

// Reverse of one euler_step taken from `in`. On entry x_bar / v_bar hold the
// adjoints of the step's output; on exit those of its input.
void substep_backward(const MassSystemState& in, bool prescribed, const SpringParams& springs,
                      const GradientProblem& p, const SpringIncidence& incidence, const std::vector<char>& is_control,
                      StepAdjoint adj) {
    const auto& sys = p.system;
    const auto& g = p.globals;
    const auto& topo = p.topology;
    const std::size_t n = sys.size();
    const double dt = g.dt;

    const auto forces = accumulate_forces(in, sys, topo, springs, g, incidence);
    std::vector<Vec3> x_in(n), v_in(n), f_bar(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (prescribed && is_control[i]) {
            x_in[i] = adj.v_bar[i] * (-1.0 / dt);
            continue;
        }
        const Vec3 u = (in.velocities[i] + forces[i] * (dt / sys.masses[i])) * g.drag;
        const bool contact = in_ground_contact(in.positions[i], u, g);
        Vec3 xb = adj.x_bar[i];
        if (contact) {
            const Vec3 u2 = ground_contact_velocity(u, g);
            if (in.positions[i].y + u2.y * dt < g.ground_height) xb.y = 0.0;
        }
        x_in[i] = xb;
        const Vec3 u2_bar = adj.v_bar[i] + xb * dt;
        const Vec3 u_bar = contact ? contact_velocity_vjp(u, u2_bar, g) : u2_bar;
        v_in[i] = u_bar * g.drag;
        f_bar[i] = u_bar * (g.drag * dt / sys.masses[i]);
    }

    // Per-edge adjoints, then a per-point gather in incidence order.
    const auto e_count = static_cast<std::ptrdiff_t>(topo.size());
    std::vector<Vec3> dx_edge(topo.size()), dv_edge(topo.size());
#pragma omp parallel for schedule(static) if (e_count >= 4 * kParallelPointThreshold)
    for (std::ptrdiff_t e = 0; e < e_count; ++e) {
        const Edge& ed = topo.edges[e];
        const Vec3 G = f_bar[ed.i] - f_bar[ed.j];
        const Vec3 d = in.positions[ed.j] - in.positions[ed.i];
        const double len = norm(d);
        if (len >= kDegenerateSpringLength) {
            const double rest = topo.rest_lengths[e];
            const double k = springs.stiffness[e];
            const Vec3 n_hat = d / len;
            adj.k_bar[e] += dot(G, d) * ((len - rest) / len);
            dx_edge[e] = (G * (1.0 - rest / len) + n_hat * (rest / len * dot(n_hat, G))) * k;
        }
        const Vec3 rel = in.velocities[ed.i] - in.velocities[ed.j];
        adj.g_bar[e] += -dot(G, rel);
        dv_edge[e] = G * springs.dashpot[e];
    }
    const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (sn >= kParallelPointThreshold)
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        for (std::size_t slot = incidence.offsets[i]; slot < incidence.offsets[i + 1]; ++slot) {
            const std::size_t e = incidence.edge[slot];
            if (incidence.is_first[slot]) {
                x_in[i] -= dx_edge[e];
                v_in[i] -= dv_edge[e];
            } else {
                x_in[i] += dx_edge[e];
                v_in[i] += dv_edge[e];
            }
        }
    }
    adj.x_bar.swap(x_in);
    adj.v_bar.swap(v_in);
}

struct FieldTape {
    RowMatrix input;
    RowMatrix hidden1;
    RowMatrix hidden2;
    std::vector<std::array<PlaneSample, 3>> samples;
    std::vector<Residual> residuals;
};

FieldTape field_forward(const TriPlaneField& field, const SpringTopology& topology, const Points& canonical) {
    FieldTape tape;
    const auto e_count = static_cast<std::ptrdiff_t>(topology.size());
    const std::size_t in = field.input_dim();
    tape.input.resize(e_count, static_cast<Eigen::Index>(in));
    tape.samples.resize(topology.size());
#pragma omp parallel for schedule(static) if (e_count >= kParallelEdgeThreshold)
    for (std::ptrdiff_t e = 0; e < e_count; ++e) {
        const Vec3 p = normalize_coord(midpoint(topology.edges[e], canonical), field.bbox);
        field_input(field, p, {tape.input.row(e).data(), in});
        for (int axis = 0; axis < 3; ++axis) {
            const auto [u, v] = plane_coords(p, axis);
            tape.samples[e][axis] = plane_sample(field.resolution, u, v);
        }
    }
    tape.hidden1 = ((tape.input * field.mlp[0].weight.transpose()).rowwise() + field.mlp[0].bias.transpose()).cwiseMax(0.0);
    tape.hidden2 = ((tape.hidden1 * field.mlp[1].weight.transpose()).rowwise() + field.mlp[1].bias.transpose()).cwiseMax(0.0);
    const RowMatrix out = (tape.hidden2 * field.mlp[2].weight.transpose()).rowwise() + field.mlp[2].bias.transpose();
    tape.residuals.resize(topology.size());
    for (std::ptrdiff_t e = 0; e < e_count; ++e) {
        tape.residuals[e] = {field.residual_scale * out(e, 0), field.residual_scale * out(e, 1)};
        if (!std::isfinite(tape.residuals[e].log_stiffness) || !std::isfinite(tape.residuals[e].log_dashpot))
            throw NumericalError("field_eval: non-finite output for edge " + std::to_string(e));
    }
    return tape;
}

// Gradient w.r.t. the flattened field parameters given d(loss)/d(output) per edge.
ParameterVector field_backward(const TriPlaneField& field, const FieldTape& tape, const RowMatrix& d_out) {
    ParameterVector grad;
    grad.values.assign(field.parameter_count(), 0.0);
    const std::size_t plane_size = field.plane_size();
    std::size_t offset = 3 * plane_size;

    const auto write = [&](const auto& m) {
        std::copy(m.data(), m.data() + m.size(), grad.values.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += static_cast<std::size_t>(m.size());
    };
    const RowMatrix& d2 = d_out;
    const RowMatrix dh2 = (d2 * field.mlp[2].weight).cwiseProduct((tape.hidden2.array() > 0.0).cast<double>().matrix());
    const RowMatrix dh1 = (dh2 * field.mlp[1].weight).cwiseProduct((tape.hidden1.array() > 0.0).cast<double>().matrix());
    const RowMatrix dx = dh1 * field.mlp[0].weight;

    write(RowMatrix(dh1.transpose() * tape.input));
    write(Eigen::VectorXd(dh1.colwise().sum().transpose()));
    write(RowMatrix(dh2.transpose() * tape.hidden1));
    write(Eigen::VectorXd(dh2.colwise().sum().transpose()));
    write(RowMatrix(d2.transpose() * tape.hidden2));
    write(Eigen::VectorXd(d2.colwise().sum().transpose()));

    const auto c_count = static_cast<std::size_t>(field.channels);
    for (std::size_t e = 0; e < tape.samples.size(); ++e) {
        for (int axis = 0; axis < 3; ++axis) {
            const auto& s = tape.samples[e][axis];
            double* plane = grad.values.data() + axis * plane_size;
            for (int k = 0; k < 4; ++k) {
                if (s.weight[k] == 0.0) continue;
                double* node = plane + s.node[k] * c_count;
                for (std::size_t c = 0; c < c_count; ++c) node[c] += s.weight[k] * dx(static_cast<Eigen::Index>(e), c);
            }
        }
    }
    return grad;
}

}  // namespace

void GradientProblem::validate() const {
    system.validate();
    topology.validate(system.size());
    globals.validate();
    if (globals.point_radius > 0.0)
        throw ConfigError("gradients: point-point collisions are not differentiated; set point_radius to 0");
}

SpringWindowResult backprop_springs(const MassSystemState& start, std::size_t frames, const SpringParams& springs,
                                    const GradientProblem& p) {
    p.validate();
    springs.validate(p.topology.size());
    if (frames < 1) throw ConfigError("backprop window must span at least one frame");
    const std::size_t first = start.frame_index;
    if (first + frames >= p.observations.frame_count())
        throw ConfigError("backprop window extends past the observations");
    const bool prescribed = !p.controls.indices.empty();
    if (prescribed && p.controls.frame_count() <= first + frames - 1)
        throw ConfigError("backprop window extends past the control schedule");
    check_state(start);

    const int substeps = p.globals.substeps_per_frame;
    const auto incidence = SpringIncidence::build(p.system.size(), p.topology);
    const auto is_control = p.system.control_mask();

    // Forward pass; mirrors advance_frame and keeps the state before every substep.
    std::vector<MassSystemState> tape;
    tape.reserve(frames * static_cast<std::size_t>(substeps));
    std::vector<Points> frame_positions;
    SpringWindowResult r;
    MassSystemState cur = start;
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t frame = first + f;
        for (int s = 1; s <= substeps; ++s) {
            tape.push_back(cur);
            const auto forces = accumulate_forces(cur, p.system, p.topology, springs, p.globals, incidence);
            if (prescribed) {
                const Points targets = p.controls.substep_targets(frame, s, substeps);
                cur = euler_step(cur, forces, p.system, p.globals, std::span<const Vec3>(targets));
            } else {
                cur = euler_step(cur, forces, p.system, p.globals);
            }
        }
        cur.frame_index = frame + 1;
        check_state(cur);
        r.loss += frame_loss(cur.positions, p.observations.frames[frame + 1], p.binding, p.loss).total;
        frame_positions.push_back(cur.positions);
    }
    r.end_state = cur;

    // Reverse pass.
    const std::size_t n = p.system.size();
    std::vector<Vec3> x_bar(n), v_bar(n);
    r.d_stiffness.assign(p.topology.size(), 0.0);
    r.d_dashpot.assign(p.topology.size(), 0.0);
    for (std::size_t f = frames; f-- > 0;) {
        frame_loss_gradient(frame_positions[f], p.observations.frames[first + f + 1], p.binding, p.loss, x_bar);
        for (int s = substeps; s >= 1; --s) {
            const auto& in = tape[f * static_cast<std::size_t>(substeps) + static_cast<std::size_t>(s - 1)];
            substep_backward(in, prescribed, springs, p, incidence, is_control, {x_bar, v_bar, r.d_stiffness, r.d_dashpot});
        }
    }
    return r;
}

WindowResult backprop_window(const MassSystemState& start, std::size_t frames, const TriPlaneField& field,
                             const GradientProblem& p) {
    field.validate();
    const FieldTape tape = field_forward(field, p.topology, p.system.canonical_positions);
    const SpringParams springs = materialize_spring_params(tape.residuals, p.base, p.bounds);
    SpringWindowResult sr = backprop_springs(start, frames, springs, p);

    const double k_lo = std::log(p.bounds.stiffness_min), k_hi = std::log(p.bounds.stiffness_max);
    const double g_lo = std::log(p.bounds.dashpot_min), g_hi = std::log(p.bounds.dashpot_max);
    RowMatrix d_out(static_cast<Eigen::Index>(p.topology.size()), 2);
    for (std::size_t e = 0; e < p.topology.size(); ++e) {
        const auto& res = tape.residuals[e];
        const double dk = sr.d_stiffness[e] * springs.stiffness[e] *
                          saturate_residual_derivative(res.log_stiffness, p.base.log_stiffness, k_lo, k_hi);
        const double dg = p.bounds.tie_dashpot ? 0.0 : sr.d_dashpot[e] * springs.dashpot[e] *
                          saturate_residual_derivative(res.log_dashpot, p.base.log_dashpot, g_lo, g_hi);
        d_out(static_cast<Eigen::Index>(e), 0) = dk * field.residual_scale;
        d_out(static_cast<Eigen::Index>(e), 1) = dg * field.residual_scale;
    }

    WindowResult r;
    r.loss = sr.loss;
    r.end_state = std::move(sr.end_state);
    r.gradient = field_backward(field, tape, d_out);
    for (std::size_t k = 0; k < r.gradient.size(); ++k)
        if (!std::isfinite(r.gradient.values[k]))
            throw NumericalError("non-finite gradient in parameter block " + parameter_block_name(field, k));
    return r;
}

void TrainingConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("training: learning_rate must be non-negative");
    if (epochs < 0) throw ConfigError("training: epochs must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("training: invalid decay rates");
    if (!(epsilon > 0.0)) throw ConfigError("training: epsilon must be positive");
    if (max_retries < 0) throw ConfigError("training: max_retries must be non-negative");
}

double optimizer_step(std::vector<double>& params, std::vector<double> gradient, AdamState& state,
                      const TrainingConfig& config, double learning_rate) {
    if (gradient.size() != params.size()) throw ConfigError("optimizer_step: gradient size mismatch");
    if (state.first.empty()) {
        state.first.assign(params.size(), 0.0);
        state.second.assign(params.size(), 0.0);
    }
    double sq = 0.0;
    for (double gi : gradient) {
        if (!std::isfinite(gi)) throw NumericalError("optimizer_step: non-finite gradient");
        sq += gi * gi;
    }
    const double grad_norm = std::sqrt(sq);
    if (config.grad_clip_norm > 0.0 && grad_norm > config.grad_clip_norm) {
        const double s = config.grad_clip_norm / grad_norm;
        for (double& gi : gradient) gi *= s;
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        state.first[k] = config.beta1 * state.first[k] + (1.0 - config.beta1) * gradient[k];
        state.second[k] = config.beta2 * state.second[k] + (1.0 - config.beta2) * gradient[k] * gradient[k];
        const double m_hat = state.first[k] / c1;
        const double v_hat = state.second[k] / c2;
        params[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    return grad_norm;
}

std::vector<WindowSpan> training_windows(std::size_t end_frame, std::size_t window) {
    std::vector<WindowSpan> out;
    if (end_frame < 2) return out;
    const std::size_t last = end_frame - 1;
    const std::size_t w = window == 0 ? last : window;
    for (std::size_t a = 0; a < last; a += w) out.push_back({a, std::min(w, last - a)});
    return out;
}

TrainingResult train_field(const TriPlaneField& field, const HomogeneousInit& base, const SpringTopology& topology,
                           const FittingProblem& problem, const GlobalPhysicalParams& globals,
                           const TrainingConfig& config, const MaterializationBounds& bounds,
                           const TrainingCallbacks& callbacks) {
    config.validate();
    field.validate();
    if (problem.frames().begin != 0) throw ConfigError("train_field: the training range must start at frame 0");
    const GradientProblem gp{problem.system(), topology,  globals, problem.controls(), problem.observations(),
                             problem.binding(), base,     bounds,  problem.loss()};
    gp.validate();
    const auto windows = training_windows(problem.frames().end, config.window);
    const auto objective = [&](const TriPlaneField& f) {
        return problem.evaluate(topology, materialize_spring_params(f, base, topology, problem.system().canonical_positions, bounds),
                                globals)
            .total;
    };

    TrainingResult result;
    result.field = field;
    result.initial_objective = objective(field);
    result.best_objective = result.initial_objective;

    TriPlaneField current = field;
    std::vector<double> params = ParameterVector::flatten(field).values;
    AdamState adam;
    double lr = config.learning_rate;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const std::vector<double> saved_params = params;
        const AdamState saved_adam = adam;
        EpochRecord record;
        record.epoch = epoch;
        std::vector<WindowLog> epoch_log;
        for (int attempt = 0;; ++attempt) {
            try {
                epoch_log.clear();
                record.window_loss = 0.0;
                MassSystemState state = problem.start();
                for (std::size_t w = 0; w < windows.size(); ++w) {
                    ParameterVector{params}.unflatten(current);
                    WindowResult wr = backprop_window(state, windows[w].frames, current, gp);
                    const double gn = optimizer_step(params, std::move(wr.gradient.values), adam, config, lr);
                    epoch_log.push_back({epoch, w, wr.loss, gn, lr});
                    record.window_loss += wr.loss;
                    state = std::move(wr.end_state);
                }
                ParameterVector{params}.unflatten(current);
                record.objective = objective(current);
                record.retries = attempt;
                break;
            } catch (const SimulationDiverged& e) {
                if (attempt >= config.max_retries)
                    throw NumericalError(std::string("training diverged after retries: ") + e.what());
                params = saved_params;
                adam = saved_adam;
                lr *= 0.5;
            }
        }
        record.learning_rate = lr;
        for (const auto& entry : epoch_log) {
            result.log.push_back(entry);
            if (callbacks.on_window) callbacks.on_window(entry);
        }
        result.history.push_back(record);
        if (record.objective < result.best_objective) {
            result.best_objective = record.objective;
            result.best_epoch = epoch;
            result.field = current;
        }
        if (callbacks.on_epoch) callbacks.on_epoch(record, current);
    }
    return result;
}

}  // namespace springid
