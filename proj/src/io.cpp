#include "springid/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "springid/errors.hpp"

namespace springid::io {

namespace {

template <class T>
T req(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
    }
}

template <class T>
T opt(const Json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    return req<T>(j, key);
}

Json real_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json optional_real(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

const char* axis_name(int axis) { return axis == 0 ? "x" : (axis == 1 ? "y" : "z"); }

int axis_from_json(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_number_integer()) return v.get<int>();
    const auto s = req<std::string>(j, key);
    if (s == "x") return 0;
    if (s == "y") return 1;
    if (s == "z") return 2;
    throw ConfigError("axis must be x, y or z, got '" + s + "'");
}

void append_real(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

}  // namespace

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const Json& value) { write_text(path, value.dump(1) + "\n"); }

Json to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
    try {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid 3-vector: ") + e.what());
    }
}

Json to_json(const Points& points) {
    Json a = Json::array();
    for (const auto& p : points) a.push_back(to_json(p));
    return a;
}

Points points_from_json(const Json& j) {
    if (!j.is_array()) throw ConfigError("expected a list of points");
    Points out;
    out.reserve(j.size());
    for (const auto& p : j) out.push_back(vec3_from_json(p));
    return out;
}

std::string trajectory_to_string(const Trajectory& trajectory, double dt_frame) {
    std::string out = "{\"frames\":[";
    for (std::size_t f = 0; f < trajectory.frame_count(); ++f) {
        const auto& s = trajectory.states[f];
        if (f) out += ',';
        out += "\n{\"t\":" + std::to_string(s.frame_index) + ",\"positions\":[";
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            if (i) out += ',';
            out += '[';
            append_real(out, s.positions[i].x);
            out += ',';
            append_real(out, s.positions[i].y);
            out += ',';
            append_real(out, s.positions[i].z);
            out += ']';
        }
        out += "]}";
    }
    out += "],\n\"dt_frame\":";
    append_real(out, dt_frame);
    out += "}\n";
    return out;
}

Trajectory trajectory_from_json(const Json& j, double* dt_frame) {
    Trajectory t;
    for (const auto& f : req<Json>(j, "frames")) {
        MassSystemState s;
        s.frame_index = req<std::size_t>(f, "t");
        s.positions = points_from_json(req<Json>(f, "positions"));
        s.velocities.assign(s.positions.size(), Vec3{});
        t.states.push_back(std::move(s));
    }
    if (dt_frame) *dt_frame = req<double>(j, "dt_frame");
    return t;
}

Json to_json(const ObservationSequence& obs) {
    Json frames = Json::array();
    for (const auto& f : obs.frames) {
        Json tracks = Json::object();
        for (const auto& [id, p] : f.tracks) tracks[id] = p ? to_json(*p) : Json(nullptr);
        Json controls = Json::object();
        for (const auto& [idx, p] : f.controls) controls[std::to_string(idx)] = to_json(p);
        frames.push_back({{"observed", to_json(f.observed)}, {"tracks", tracks}, {"controls", controls}});
    }
    return {{"dt_frame", obs.dt_frame}, {"split_frame", obs.split_frame}, {"frames", frames}};
}

ObservationSequence observations_from_json(const Json& j) {
    ObservationSequence obs;
    obs.dt_frame = req<double>(j, "dt_frame");
    for (const auto& f : req<Json>(j, "frames")) {
        ObservationFrame frame;
        frame.observed = points_from_json(opt<Json>(f, "observed", Json::array()));
        const Json tracks = opt<Json>(f, "tracks", Json::object());
        const Json controls = opt<Json>(f, "controls", Json::object());
        for (const auto& [id, p] : tracks.items())
            frame.tracks[id] = p.is_null() ? std::nullopt : std::optional<Vec3>(vec3_from_json(p));
        for (const auto& [idx, p] : controls.items()) {
            std::size_t pos = 0;
            unsigned long long value = 0;
            try {
                value = std::stoull(idx, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos == 0 || pos != idx.size()) throw ConfigError("control key '" + idx + "' is not a point index");
            frame.controls[static_cast<std::size_t>(value)] = vec3_from_json(p);
        }
        obs.frames.push_back(std::move(frame));
    }
    obs.split_frame = opt<std::size_t>(j, "split_frame", ObservationSequence::default_split(obs.frame_count()));
    obs.validate();
    return obs;
}

Json to_json(const MassSystem& system) {
    return {{"canonical_positions", to_json(system.canonical_positions)},
            {"masses", system.masses},
            {"control_indices", system.control_indices}};
}

MassSystem system_from_json(const Json& j) {
    MassSystem s;
    s.canonical_positions = points_from_json(req<Json>(j, "canonical_positions"));
    if (j.contains("masses")) {
        s.masses = req<std::vector<double>>(j, "masses");
    } else {
        s = MassSystem::uniform(s.canonical_positions, opt<double>(j, "total_mass", 1.0));
    }
    s.control_indices = opt<std::vector<std::size_t>>(j, "control_indices", {});
    s.validate();
    return s;
}

Json to_json(const SpringTopology& topology) {
    Json edges = Json::array();
    for (const auto& e : topology.edges) edges.push_back({e.i, e.j});
    return {{"edges", edges}, {"rest_lengths", topology.rest_lengths}};
}

SpringTopology topology_from_json(const Json& j) {
    SpringTopology t;
    for (const auto& e : req<Json>(j, "edges")) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("edges must be [i, j] pairs");
        t.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
    }
    t.rest_lengths = req<std::vector<double>>(j, "rest_lengths");
    if (t.rest_lengths.size() != t.edges.size()) throw ConfigError("rest_lengths must match edges");
    return t;
}

Json to_json(const SpringParams& params) { return {{"stiffness", params.stiffness}, {"dashpot", params.dashpot}}; }

SpringParams params_from_json(const Json& j) {
    return {req<std::vector<double>>(j, "stiffness"), req<std::vector<double>>(j, "dashpot")};
}

Json to_json(const GlobalPhysicalParams& g) {
    return {{"drag", g.drag},
            {"gravity", to_json(g.gravity)},
            {"ground_height", g.ground_height},
            {"restitution", g.restitution},
            {"friction", g.friction},
            {"dt", g.dt},
            {"substeps_per_frame", g.substeps_per_frame},
            {"point_radius", g.point_radius}};
}

GlobalPhysicalParams globals_from_json(const Json& j, GlobalPhysicalParams g) {
    g.drag = opt(j, "drag", g.drag);
    if (j.contains("gravity")) g.gravity = vec3_from_json(j.at("gravity"));
    g.ground_height = opt(j, "ground_height", g.ground_height);
    g.restitution = opt(j, "restitution", g.restitution);
    g.friction = opt(j, "friction", g.friction);
    g.dt = opt(j, "dt", g.dt);
    g.substeps_per_frame = opt(j, "substeps_per_frame", g.substeps_per_frame);
    g.point_radius = opt(j, "point_radius", g.point_radius);
    return g;
}

Json to_json(const HomogeneousInit& h) {
    return {{"stiffness", h.stiffness()}, {"dashpot", h.dashpot()},         {"log_stiffness", h.log_stiffness},
            {"log_dashpot", h.log_dashpot}, {"drag", h.drag}, {"restitution", h.restitution},
            {"friction", h.friction}};
}

HomogeneousInit homogeneous_from_json(const Json& j) {
    HomogeneousInit h;
    h.log_stiffness = j.contains("log_stiffness") ? req<double>(j, "log_stiffness") : std::log(req<double>(j, "stiffness"));
    h.log_dashpot = j.contains("log_dashpot") ? req<double>(j, "log_dashpot") : std::log(req<double>(j, "dashpot"));
    h.drag = opt(j, "drag", h.drag);
    h.restitution = opt(j, "restitution", h.restitution);
    h.friction = opt(j, "friction", h.friction);
    return h;
}

Json to_json(const SceneSpec& s) {
    Json regions = Json::array();
    for (const auto& r : s.regions)
        regions.push_back({{"axis", axis_name(r.axis)},
                           {"min", real_or_null(r.min)},
                           {"max", real_or_null(r.max)},
                           {"stiffness", r.stiffness},
                           {"dashpot", r.dashpot},
                           {"knn", {{"max_neighbors", r.knn.max_neighbors}, {"radius", r.knn.radius}}}});
    const bool sinusoid = s.motion.kind == ControlMotion::Kind::Sinusoid;
    return {{"kind", s.kind == SceneSpec::Kind::Rope ? "rope" : "cloth"},
            {"points", s.points},
            {"length", s.length},
            {"rows", s.rows},
            {"cols", s.cols},
            {"size", s.size},
            {"total_mass", s.total_mass},
            {"topology", s.topology == SceneSpec::TopologyMode::Lattice ? "lattice" : "knn"},
            {"regions", regions},
            {"motion",
             {{"kind", sinusoid ? "sinusoid" : "linear"},
              {"amplitude", to_json(s.motion.amplitude)},
              {"frequency", s.motion.frequency},
              {"velocity", to_json(s.motion.velocity)}}},
            {"frames", s.frames},
            {"dt_frame", s.dt_frame},
            {"substeps", s.substeps},
            {"gravity", to_json(s.gravity)},
            {"ground_height", s.ground_height},
            {"drag", s.drag},
            {"view", s.view == SceneSpec::ViewPolicy::All ? "all" : "median"},
            {"view_axis", axis_name(s.view_axis)},
            {"track_fraction", s.track_fraction},
            {"noise_std", s.noise_std},
            {"seed", s.seed}};
}

SceneSpec scene_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
    const auto kind = opt<std::string>(j, "kind", "rope");
    SceneSpec s;
    if (kind == "rope")
        s = SceneSpec::default_rope();
    else if (kind == "cloth")
        s = SceneSpec::default_cloth();
    else
        throw ConfigError("scene kind must be 'rope' or 'cloth', got '" + kind + "'");
    s.points = opt(j, "points", s.points);
    s.length = opt(j, "length", s.length);
    s.rows = opt(j, "rows", s.rows);
    s.cols = opt(j, "cols", s.cols);
    s.size = opt(j, "size", s.size);
    s.total_mass = opt(j, "total_mass", s.total_mass);
    if (j.contains("topology")) {
        const auto t = req<std::string>(j, "topology");
        if (t == "lattice")
            s.topology = SceneSpec::TopologyMode::Lattice;
        else if (t == "knn")
            s.topology = SceneSpec::TopologyMode::Knn;
        else
            throw ConfigError("scene topology must be 'lattice' or 'knn'");
    }
    if (j.contains("regions")) {
        s.regions.clear();
        for (const auto& r : req<Json>(j, "regions")) {
            SceneRegion region;
            region.axis = axis_from_json(r, "axis", region.axis);
            region.min = opt(r, "min", region.min);
            region.max = opt(r, "max", region.max);
            region.stiffness = opt(r, "stiffness", region.stiffness);
            region.dashpot = opt(r, "dashpot", region.dashpot);
            if (r.contains("knn")) {
                const auto& k = r.at("knn");
                region.knn.max_neighbors = opt(k, "max_neighbors", region.knn.max_neighbors);
                region.knn.radius = opt(k, "radius", region.knn.radius);
            }
            s.regions.push_back(region);
        }
    }
    if (j.contains("motion")) {
        const auto& m = j.at("motion");
        const auto mk = opt<std::string>(m, "kind", "sinusoid");
        if (mk == "sinusoid")
            s.motion.kind = ControlMotion::Kind::Sinusoid;
        else if (mk == "linear")
            s.motion.kind = ControlMotion::Kind::Linear;
        else
            throw ConfigError("motion kind must be 'sinusoid' or 'linear'");
        if (m.contains("amplitude")) s.motion.amplitude = vec3_from_json(m.at("amplitude"));
        s.motion.frequency = opt(m, "frequency", s.motion.frequency);
        if (m.contains("velocity")) s.motion.velocity = vec3_from_json(m.at("velocity"));
    }
    s.frames = opt(j, "frames", s.frames);
    s.dt_frame = opt(j, "dt_frame", s.dt_frame);
    s.substeps = opt(j, "substeps", s.substeps);
    if (j.contains("gravity")) s.gravity = vec3_from_json(j.at("gravity"));
    s.ground_height = opt(j, "ground_height", s.ground_height);
    s.drag = opt(j, "drag", s.drag);
    if (j.contains("view")) {
        const auto v = req<std::string>(j, "view");
        if (v == "all")
            s.view = SceneSpec::ViewPolicy::All;
        else if (v == "median")
            s.view = SceneSpec::ViewPolicy::MedianSplit;
        else
            throw ConfigError("view must be 'all' or 'median'");
    }
    s.view_axis = axis_from_json(j, "view_axis", s.view_axis);
    s.track_fraction = opt(j, "track_fraction", s.track_fraction);
    s.noise_std = opt(j, "noise_std", s.noise_std);
    s.seed = opt(j, "seed", s.seed);
    s.validate();
    return s;
}

Json to_json(const StageOneResult& r) {
    Json clusters = Json::array();
    for (const auto& c : r.config.per_cluster)
        clusters.push_back({{"max_neighbors", c.max_neighbors}, {"radius", c.radius}});
    Json out = to_json(r.topology);
    out["labels"] = r.config.labels;
    out["clusters"] = clusters;
    out["homogeneous"] = to_json(r.physical);
    out["globals"] = to_json(r.globals);
    out["best_objective"] = r.best_objective;
    out["initial_objective"] = r.initial_objective;
    out["evaluations"] = r.evaluations;
    out["seed"] = r.seed;
    out["best_x"] = r.best_x;
    out["history"] = r.history;
    return out;
}

StageOneResult stage_one_from_json(const Json& j) {
    StageOneResult r;
    r.topology = topology_from_json(j);
    r.config.labels = req<std::vector<std::size_t>>(j, "labels");
    for (const auto& c : req<Json>(j, "clusters"))
        r.config.per_cluster.push_back({req<int>(c, "max_neighbors"), req<double>(c, "radius")});
    r.physical = homogeneous_from_json(req<Json>(j, "homogeneous"));
    r.globals = globals_from_json(req<Json>(j, "globals"));
    r.best_objective = req<double>(j, "best_objective");
    r.initial_objective = opt(j, "initial_objective", r.best_objective);
    r.evaluations = opt(j, "evaluations", 0);
    r.seed = opt<std::uint64_t>(j, "seed", 0);
    r.best_x = opt<std::vector<double>>(j, "best_x", {});
    r.history = opt<std::vector<double>>(j, "history", {});
    return r;
}

Json to_json(const TriPlaneField& f) {
    Json layers = Json::array();
    for (const auto& l : f.mlp) {
        layers.push_back({{"inputs", l.inputs()},
                          {"outputs", l.outputs()},
                          {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"resolution", f.resolution},
            {"channels", f.channels},
            {"fourier_bands", f.fourier_bands},
            {"bbox", {{"min", to_json(f.bbox.lo)}, {"max", to_json(f.bbox.hi)}}},
            {"residual_scale", f.residual_scale},
            {"seed", f.seed},
            {"plane_order", {"xy", "yz", "xz"}},
            {"plane_layout", "((v * N) + u) * C + c"},
            {"planes", {f.planes[0], f.planes[1], f.planes[2]}},
            {"layers", layers}};
}

TriPlaneField field_from_json(const Json& j) {
    TriPlaneField f;
    f.resolution = req<int>(j, "resolution");
    f.channels = req<int>(j, "channels");
    f.fourier_bands = req<int>(j, "fourier_bands");
    const auto& bbox = req<Json>(j, "bbox");
    f.bbox.lo = vec3_from_json(req<Json>(bbox, "min"));
    f.bbox.hi = vec3_from_json(req<Json>(bbox, "max"));
    f.residual_scale = opt(j, "residual_scale", 1.0);
    f.seed = opt<std::uint64_t>(j, "seed", 0);
    const auto planes = req<std::vector<std::vector<double>>>(j, "planes");
    if (planes.size() != 3) throw ConfigError("field: expected three planes");
    for (int p = 0; p < 3; ++p) f.planes[p] = planes[p];
    const auto& layers = req<Json>(j, "layers");
    if (!layers.is_array() || layers.size() != 3) throw ConfigError("field: expected three layers");
    for (int l = 0; l < 3; ++l) {
        const auto in = req<Eigen::Index>(layers[l], "inputs");
        const auto out = req<Eigen::Index>(layers[l], "outputs");
        const auto w = req<std::vector<double>>(layers[l], "weight");
        const auto b = req<std::vector<double>>(layers[l], "bias");
        if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out)
            throw ConfigError("field: layer " + std::to_string(l) + " shape mismatch");
        f.mlp[l].weight = Eigen::Map<const RowMatrix>(w.data(), out, in);
        f.mlp[l].bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
    }
    f.validate();
    return f;
}

Json to_json(const WindowLog& e) {
    return {{"epoch", e.epoch}, {"window", e.window}, {"loss", e.loss}, {"grad_norm", e.grad_norm},
            {"lr", e.learning_rate}};
}

Json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"window_loss", r.window_loss},
            {"objective", r.objective},
            {"lr", r.learning_rate},
            {"retries", r.retries}};
}

Json to_json(const MetricsReport& m) {
    return {{"cd_recon", optional_real(m.cd_recon)},
            {"te_recon", optional_real(m.te_recon)},
            {"cd_future", optional_real(m.cd_future)},
            {"te_future", optional_real(m.te_future)},
            {"cd_per_frame", m.cd_per_frame},
            {"te_per_frame", m.te_per_frame}};
}

Json to_json(const OracleReport& r) {
    Json regions = Json::array();
    for (const auto& rr : r.regions)
        regions.push_back({{"region", rr.region},
                           {"edges", rr.edges},
                           {"recovered_geomean", rr.recovered_geomean},
                           {"true_geomean", rr.true_geomean},
                           {"ratio", rr.ratio}});
    return {{"regions", regions}, {"spearman", r.spearman}};
}

std::string ply_to_string(const Points& points) {
    std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(points.size()) +
                      "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    for (const auto& p : points) {
        append_real(out, p.x);
        out += ' ';
        append_real(out, p.y);
        out += ' ';
        append_real(out, p.z);
        out += '\n';
    }
    return out;
}

Points ply_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t count = 0;
    bool header_ok = false;
    if (!std::getline(in, line) || line != "ply") throw ConfigError("not a PLY file");
    while (std::getline(in, line)) {
        if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
        if (line == "end_header") {
            header_ok = true;
            break;
        }
    }
    if (!header_ok) throw ConfigError("PLY header is not terminated");
    Points pts;
    pts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw ConfigError("PLY vertex list is truncated");
        Vec3 p;
        if (std::sscanf(line.c_str(), "%lf %lf %lf", &p.x, &p.y, &p.z) != 3) throw ConfigError("malformed PLY vertex");
        pts.push_back(p);
    }
    return pts;
}

}  // namespace springid::io
