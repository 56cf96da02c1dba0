#include "springid/pipeline.hpp"

#include <cstdio>

#include "springid/errors.hpp"
#include "springid/log.hpp"

namespace springid {

namespace fs = std::filesystem;
using io::Json;

namespace {

template <class T>
void take(const Json& j, const char* key, T& value) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        value = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid value for '") + key + "': " + e.what());
    }
}

const Json& section(const Json& j, const char* key) {
    static const Json empty = Json::object();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) throw ConfigError(std::string("config: '") + key + "' must be an object");
    return j.at(key);
}

MaterializationBounds materialization_of(const PipelineConfig& c) {
    return MaterializationBounds::from(c.bounds, c.tie_dashpot);
}

Json to_json(const MaterializationBounds& b) {
    return {{"stiffness_min", b.stiffness_min},
            {"stiffness_max", b.stiffness_max},
            {"dashpot_min", b.dashpot_min},
            {"dashpot_max", b.dashpot_max},
            {"tie_dashpot", b.tie_dashpot}};
}

MaterializationBounds materialization_from_json(const Json& j, MaterializationBounds b) {
    take(j, "stiffness_min", b.stiffness_min);
    take(j, "stiffness_max", b.stiffness_max);
    take(j, "dashpot_min", b.dashpot_min);
    take(j, "dashpot_max", b.dashpot_max);
    take(j, "tie_dashpot", b.tie_dashpot);
    return b;
}

fs::path out_file(const PipelineConfig& c, const char* name) { return c.out_dir / name; }

ObservationSequence load_observations(const PipelineConfig& c) {
    return io::observations_from_json(io::read_json(out_file(c, files::kObservations)));
}

StageOneResult load_stage_one(const PipelineConfig& c) {
    const fs::path p = out_file(c, files::kStageOne);
    if (!fs::exists(p)) throw ConfigError("missing stage-one result " + p.string() + " (run fit-topology first)");
    return io::stage_one_from_json(io::read_json(p));
}

struct LoadedField {
    TriPlaneField field;
    MaterializationBounds bounds;
};

LoadedField load_field(const PipelineConfig& c) {
    const fs::path p = out_file(c, files::kField);
    if (!fs::exists(p)) throw ConfigError("missing field checkpoint " + p.string() + " (run fit-field first)");
    const Json j = io::read_json(p);
    MaterializationBounds b = materialization_of(c);
    if (j.contains("materialization")) b = materialization_from_json(j.at("materialization"), b);
    return {io::field_from_json(j), b};
}

Json field_file(const TriPlaneField& field, const MaterializationBounds& b) {
    Json j = io::to_json(field);
    j["materialization"] = to_json(b);
    return j;
}

struct Truth {
    Scene scene;
    SceneSpec spec;
};

std::optional<Truth> load_truth(const PipelineConfig& c) {
    const fs::path truth_path = out_file(c, files::kTruth);
    const fs::path scene_path = out_file(c, files::kScene);
    if (!fs::exists(truth_path) || !fs::exists(scene_path)) return std::nullopt;
    const Json j = io::read_json(truth_path);
    if (!j.contains("params")) return std::nullopt;
    Truth t;
    t.spec = io::scene_from_json(io::read_json(scene_path));
    t.scene.system = io::system_from_json(j.at("system"));
    t.scene.topology = io::topology_from_json(j.at("topology"));
    t.scene.params = io::params_from_json(j.at("params"));
    t.scene.globals = io::globals_from_json(j.at("globals"));
    t.scene.edge_regions = j.at("edge_regions").get<std::vector<std::size_t>>();
    return t;
}

FittingProblem make_problem(const PipelineConfig& c, const MassSystem& system, const ObservationSequence& obs,
                            GlobalPhysicalParams base, std::optional<FrameRange> frames) {
    return FittingProblem(system, obs, base, c.loss, frames);
}

Trajectory full_rollout(const FittingProblem& p, const SpringTopology& topology, const SpringParams& springs,
                        const GlobalPhysicalParams& globals) {
    return rollout(p.start(), p.system(), topology, springs, globals, p.controls(), p.observations().frame_count());
}

}  // namespace

void PipelineConfig::set_seed(std::uint64_t s) {
    seed = s;
    scene.seed = s;
    cmaes.seed = s;
    field.seed = s;
    training.seed = s;
}

void PipelineConfig::set_substeps(int substeps) {
    if (substeps < 1) throw ConfigError("substeps must be at least 1");
    scene.substeps = substeps;
    simulator.substeps_per_frame = substeps;
}

void PipelineConfig::validate() const {
    if (cluster_count < 1) throw ConfigError("cluster_count must be at least 1");
    bounds.validate();
    training.validate();
    if (field.channels < 1 || field.hidden < 1 || field.fourier_bands < 0 || !(field.resolution_coefficient > 0.0))
        throw ConfigError("invalid field settings");
    if (skin_neighbors < 1) throw ConfigError("skin_neighbors must be at least 1");
    if (frames && frames->empty()) throw ConfigError("frame range is empty");
}

PipelineConfig config_from_json(const Json& j, PipelineConfig c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
    if (j.contains("system_file")) c.system_file = j.at("system_file").get<std::string>();
    if (j.contains("query_file")) c.query_file = j.at("query_file").get<std::string>();
    if (j.contains("scene")) {
        const auto seed = c.scene.seed;
        Json s = j.at("scene");
        if (!s.contains("seed")) s["seed"] = seed;
        c.scene = io::scene_from_json(s);
    }
    take(j, "cluster_count", c.cluster_count);
    take(j, "tie_dashpot", c.tie_dashpot);
    take(j, "export_ply", c.export_ply);
    take(j, "skin_neighbors", c.skin_neighbors);
    take(j, "use_truth", c.use_truth);
    if (j.contains("frames")) {
        const auto f = j.at("frames").get<std::vector<std::size_t>>();
        if (f.size() != 2) throw ConfigError("config: frames must be [begin, end]");
        c.frames = FrameRange{f[0], f[1]};
    }

    const Json& cm = section(j, "cmaes");
    take(cm, "population", c.cmaes.population);
    take(cm, "sigma0", c.cmaes.sigma0);
    take(cm, "max_evaluations", c.cmaes.max_evaluations);
    take(cm, "max_generations", c.cmaes.max_generations);
    take(cm, "seed", c.cmaes.seed);
    take(cm, "tolerance", c.cmaes.tolerance);
    take(cm, "stall_generations", c.cmaes.stall_generations);

    const Json& b = section(j, "bounds");
    take(b, "max_neighbors", c.bounds.max_neighbors);
    take(b, "radius_min_factor", c.bounds.radius_min_factor);
    take(b, "radius_max_factor", c.bounds.radius_max_factor);
    take(b, "stiffness_min", c.bounds.stiffness_min);
    take(b, "stiffness_max", c.bounds.stiffness_max);
    take(b, "dashpot_min", c.bounds.dashpot_min);
    take(b, "dashpot_max", c.bounds.dashpot_max);
    take(b, "drag_min", c.bounds.drag_min);
    take(b, "drag_max", c.bounds.drag_max);
    take(b, "restitution_min", c.bounds.restitution_min);
    take(b, "restitution_max", c.bounds.restitution_max);
    take(b, "friction_min", c.bounds.friction_min);
    take(b, "friction_max", c.bounds.friction_max);

    if (j.contains("initial")) c.initial = io::homogeneous_from_json(j.at("initial"));

    const Json& t = section(j, "training");
    take(t, "learning_rate", c.training.learning_rate);
    take(t, "epochs", c.training.epochs);
    take(t, "window", c.training.window);
    take(t, "grad_clip_norm", c.training.grad_clip_norm);
    take(t, "seed", c.training.seed);
    take(t, "beta1", c.training.beta1);
    take(t, "beta2", c.training.beta2);
    take(t, "epsilon", c.training.epsilon);
    take(t, "max_retries", c.training.max_retries);

    const Json& f = section(j, "field");
    take(f, "channels", c.field.channels);
    take(f, "resolution_coefficient", c.field.resolution_coefficient);
    take(f, "hidden", c.field.hidden);
    take(f, "fourier_bands", c.field.fourier_bands);
    take(f, "hidden_weight_scale", c.field.hidden_weight_scale);
    take(f, "residual_scale", c.field.residual_scale);
    take(f, "seed", c.field.seed);

    if (j.contains("simulator")) {
        const Json& s = section(j, "simulator");
        c.simulator = io::globals_from_json(s, c.simulator);
        if (s.contains("substeps")) c.set_substeps(s.at("substeps").get<int>());
    }

    const Json& l = section(j, "loss");
    take(l, "geometry_weight", c.loss.geometry_weight);
    take(l, "motion_weight", c.loss.motion_weight);
    take(l, "squared", c.loss.squared);
    c.validate();
    return c;
}

Json to_json(const PipelineConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["scene"] = io::to_json(c.scene);
    j["cluster_count"] = c.cluster_count;
    j["cmaes"] = {{"population", c.cmaes.population},
                  {"sigma0", c.cmaes.sigma0},
                  {"max_evaluations", c.cmaes.max_evaluations},
                  {"tolerance", c.cmaes.tolerance},
                  {"seed", c.cmaes.seed}};
    j["training"] = {{"learning_rate", c.training.learning_rate},
                     {"epochs", c.training.epochs},
                     {"window", c.training.window},
                     {"grad_clip_norm", c.training.grad_clip_norm}};
    j["field"] = {{"channels", c.field.channels},
                  {"resolution_coefficient", c.field.resolution_coefficient},
                  {"hidden", c.field.hidden},
                  {"fourier_bands", c.field.fourier_bands},
                  {"residual_scale", c.field.residual_scale},
                  {"seed", c.field.seed}};
    j["bounds"] = {{"max_neighbors", c.bounds.max_neighbors},
                   {"radius_min_factor", c.bounds.radius_min_factor},
                   {"radius_max_factor", c.bounds.radius_max_factor},
                   {"stiffness_min", c.bounds.stiffness_min},
                   {"stiffness_max", c.bounds.stiffness_max},
                   {"dashpot_min", c.bounds.dashpot_min},
                   {"dashpot_max", c.bounds.dashpot_max},
                   {"drag_min", c.bounds.drag_min},
                   {"drag_max", c.bounds.drag_max},
                   {"restitution_min", c.bounds.restitution_min},
                   {"restitution_max", c.bounds.restitution_max},
                   {"friction_min", c.bounds.friction_min},
                   {"friction_max", c.bounds.friction_max}};
    j["initial"] = io::to_json(c.initial);
    if (c.frames) j["frames"] = {c.frames->begin, c.frames->end};
    j["tie_dashpot"] = c.tie_dashpot;
    j["export_ply"] = c.export_ply;
    j["skin_neighbors"] = c.skin_neighbors;
    j["simulator"] = io::to_json(c.simulator);
    j["loss"] = {{"geometry_weight", c.loss.geometry_weight},
                 {"motion_weight", c.loss.motion_weight},
                 {"squared", c.loss.squared}};
    return j;
}

MassSystem load_system(const PipelineConfig& c) {
    const fs::path p = c.system_file.value_or(out_file(c, files::kTruth));
    if (!fs::exists(p)) throw ConfigError("missing mass-point file " + p.string() + " (set system_file or run synth)");
    const Json j = io::read_json(p);
    return io::system_from_json(j.contains("system") ? j.at("system") : j);
}

void cmd_synth(const PipelineConfig& c) {
    const Scene scene = build_scene(c.scene);
    const Trajectory truth = simulate_scene(scene, c.scene);
    const ObservationSequence obs = emit_observations(truth, scene, c.scene, c.scene.seed);

    io::write_json(out_file(c, files::kObservations), io::to_json(obs));
    Json t;
    t["system"] = io::to_json(scene.system);
    t["topology"] = io::to_json(scene.topology);
    t["params"] = io::to_json(scene.params);
    t["edge_regions"] = scene.edge_regions;
    t["globals"] = io::to_json(scene.globals);
    t["trajectory"] = Json::parse(io::trajectory_to_string(truth, c.scene.dt_frame));
    io::write_json(out_file(c, files::kTruth), t);
    io::write_json(out_file(c, files::kScene), io::to_json(c.scene));
    log::info("synth: " + std::to_string(scene.system.size()) + " points, " + std::to_string(scene.topology.size()) +
              " springs, " + std::to_string(obs.frame_count()) + " frames (split " + std::to_string(obs.split_frame) +
              ")");
}

StageOneResult cmd_fit_topology(const PipelineConfig& c) {
    const ObservationSequence obs = load_observations(c);
    const MassSystem system = load_system(c);
    StageOneSettings s;
    s.cluster_count = c.cluster_count;
    s.bounds = c.bounds;
    s.initial = c.initial;
    s.cmaes = c.cmaes;
    s.base_globals = c.simulator;
    s.loss = c.loss;
    s.frames = c.frames;
    const StageOneResult r = solve_stage_one(system, obs, s);
    io::write_json(out_file(c, files::kStageOne), io::to_json(r));
    char buf[160];
    std::snprintf(buf, sizeof buf, "fit-topology: objective %.6g (initial %.6g) after %d evaluations, %zu springs",
                  r.best_objective, r.initial_objective, r.evaluations, r.topology.size());
    log::info(buf);
    return r;
}

TrainingResult cmd_fit_field(const PipelineConfig& c) {
    const StageOneResult s1 = load_stage_one(c);
    const ObservationSequence obs = load_observations(c);
    const MassSystem system = load_system(c);
    if (c.frames && c.frames->begin != 0) throw ConfigError("fit-field: the frame range must start at 0");
    const FittingProblem problem = make_problem(c, system, obs, s1.globals, c.frames);
    const auto bounds = materialization_of(c);
    const TriPlaneField init =
        init_field(s1.topology.size(), BoundingBox::around(problem.system().canonical_positions), c.field);

    std::string log_lines;
    TrainingCallbacks callbacks;
    callbacks.on_window = [&](const WindowLog& w) { log_lines += io::to_json(w).dump() + "\n"; };
    callbacks.on_epoch = [&](const EpochRecord& e, const TriPlaneField& f) {
        io::write_json(out_file(c, files::kCheckpoint), field_file(f, bounds));
        if (e.epoch % 50 == 0) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "fit-field: epoch %d objective %.6g", e.epoch, e.objective);
            log::info(buf);
        }
    };
    const TrainingResult r = train_field(init, s1.physical, s1.topology, problem, s1.globals, c.training, bounds, callbacks);
    if (c.training.epochs == 0) io::write_json(out_file(c, files::kCheckpoint), field_file(init, bounds));

    io::write_json(out_file(c, files::kField), field_file(r.field, bounds));
    io::write_text(out_file(c, files::kTrainingLog), log_lines);
    Json history = Json::array();
    for (const auto& e : r.history) history.push_back(io::to_json(e));
    io::write_json(out_file(c, files::kTraining), {{"initial_objective", r.initial_objective},
                                                   {"best_objective", r.best_objective},
                                                   {"best_epoch", r.best_epoch},
                                                   {"stage_one_objective", s1.best_objective},
                                                   {"history", history}});
    char buf[128];
    std::snprintf(buf, sizeof buf, "fit-field: best objective %.6g at epoch %d (stage one %.6g)", r.best_objective,
                  r.best_epoch, s1.best_objective);
    log::info(buf);
    return r;
}

Json cmd_eval(const PipelineConfig& c) {
    const ObservationSequence obs = load_observations(c);
    const MassSystem system = load_system(c);
    const auto truth = load_truth(c);
    const FrameRange all{0, obs.frame_count()};
    Json report;

    if (c.use_truth) {
        if (!truth) throw ConfigError("eval --use-truth needs truth.json and scene.json in the output directory");
        const FittingProblem p = make_problem(c, truth->scene.system, obs, truth->scene.globals, all);
        const Trajectory traj = full_rollout(p, truth->scene.topology, truth->scene.params, truth->scene.globals);
        report["model"] = "truth";
        report["metrics"] = io::to_json(eval_metrics(traj, obs, p.binding(), obs.split_frame));
    } else {
        const StageOneResult s1 = load_stage_one(c);
        const LoadedField lf = load_field(c);
        const FittingProblem p = make_problem(c, system, obs, s1.globals, all);
        const Points& canonical = p.system().canonical_positions;
        const SpringParams fitted = materialize_spring_params(lf.field, s1.physical, s1.topology, canonical, lf.bounds);
        const SpringParams homogeneous =
            SpringParams::uniform(s1.topology.size(), s1.physical.stiffness(), s1.physical.dashpot());
        const MetricsReport m =
            eval_metrics(full_rollout(p, s1.topology, fitted, s1.globals), obs, p.binding(), obs.split_frame);
        const MetricsReport base =
            eval_metrics(full_rollout(p, s1.topology, homogeneous, s1.globals), obs, p.binding(), obs.split_frame);
        report["model"] = "field";
        report["metrics"] = io::to_json(m);
        report["baseline"] = io::to_json(base);
        if (m.cd_future && base.cd_future && *base.cd_future > 0.0)
            report["future_cd_ratio"] = *m.cd_future / *base.cd_future;
        else
            report["future_cd_ratio"] = nullptr;
        if (truth) {
            std::vector<std::size_t> regions;
            const SpringParams t = truth_on_topology(s1.topology, truth->scene, truth->spec, &regions);
            report["oracle"] = io::to_json(oracle_report(fitted.stiffness, t.stiffness, regions));
            report["oracle_baseline"] = io::to_json(oracle_report(homogeneous.stiffness, t.stiffness, regions));
        }
    }
    io::write_json(out_file(c, files::kMetrics), report);
    const Json& m = report["metrics"];
    char buf[200];
    const auto show = [](const Json& v) { return v.is_null() ? -1.0 : v.get<double>(); };
    std::snprintf(buf, sizeof buf, "eval: CD recon %.6g future %.6g, TE recon %.6g future %.6g", show(m["cd_recon"]),
                  show(m["cd_future"]), show(m["te_recon"]), show(m["te_future"]));
    log::info(buf);
    return report;
}

std::size_t cmd_export(const PipelineConfig& c) {
    const ObservationSequence obs = load_observations(c);
    const MassSystem system = load_system(c);
    const StageOneResult s1 = load_stage_one(c);
    const LoadedField lf = load_field(c);
    const FittingProblem p = make_problem(c, system, obs, s1.globals, FrameRange{0, obs.frame_count()});
    const SpringParams fitted =
        materialize_spring_params(lf.field, s1.physical, s1.topology, p.system().canonical_positions, lf.bounds);
    const Trajectory traj = full_rollout(p, s1.topology, fitted, s1.globals);
    io::write_text(out_file(c, files::kTrajectory), io::trajectory_to_string(traj, obs.dt_frame));
    if (c.export_ply) {
        for (const auto& s : traj.states) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04zu.ply", s.frame_index);
            io::write_text(c.out_dir / "ply" / name, io::ply_to_string(s.positions));
        }
    }
    if (c.query_file) {
        const Json q = io::read_json(*c.query_file);
        const Points query = io::points_from_json(q.is_object() ? q.at("points") : q);
        const auto skinned = skin_points(query, p.system(), traj, c.skin_neighbors);
        Trajectory qt;
        for (std::size_t f = 0; f < skinned.size(); ++f) {
            MassSystemState s;
            s.positions = skinned[f];
            s.velocities.assign(s.positions.size(), Vec3{});
            s.frame_index = traj.states[f].frame_index;
            qt.states.push_back(std::move(s));
        }
        io::write_text(out_file(c, files::kQueryTrajectory), io::trajectory_to_string(qt, obs.dt_frame));
    }
    log::info("export: " + std::to_string(traj.frame_count()) + " frames");
    return traj.frame_count();
}

void cmd_run_all(const PipelineConfig& c) {
    cmd_synth(c);
    cmd_fit_topology(c);
    cmd_fit_field(c);
    cmd_eval(c);
    cmd_export(c);
}

}  // namespace springid
