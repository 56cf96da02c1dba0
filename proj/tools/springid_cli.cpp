#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <regex>
#include <string>

#include "springid/errors.hpp"
#include "springid/log.hpp"
#include "springid/pipeline.hpp"

using namespace springid;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string frames;
    std::optional<std::size_t> cluster_count;
    std::optional<int> epochs;
    std::optional<std::size_t> window;
    std::optional<int> substeps;
    std::string spec;
    std::string query;
    bool ply = false;
    bool use_truth = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON pipeline configuration");
    cmd->add_option("--seed", f.seed, "Seed for scene noise, search and field initialization");
    cmd->add_option("--out", f.out, "Output directory (default: out)");
    cmd->add_option("--frames", f.frames, "Fitting frame range A..B (half-open)");
    cmd->add_option("--cluster-count", f.cluster_count, "Number of topology clusters");
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--window", f.window, "Frames per truncated training window (0 = whole range)");
    cmd->add_option("--substeps", f.substeps, "Integration substeps per frame");
    cmd->add_flag("--quiet", f.quiet, "Suppress progress messages");
}

FrameRange parse_frames(const std::string& text) {
    static const std::regex re(R"((\d+)\.\.(\d+))");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw ConfigError("--frames expects A..B, got '" + text + "'");
    return {std::stoul(m[1]), std::stoul(m[2])};
}

PipelineConfig resolve(const Flags& f) {
    PipelineConfig c;
    if (!f.config.empty()) c = config_from_json(io::read_json(f.config));
    if (!f.spec.empty()) {
        io::Json s = io::read_json(f.spec);
        if (!s.contains("seed")) s["seed"] = c.scene.seed;
        c.scene = io::scene_from_json(s);
    }
    if (f.seed) c.set_seed(*f.seed);
    if (!f.out.empty()) c.out_dir = f.out;
    if (!f.frames.empty()) c.frames = parse_frames(f.frames);
    if (f.cluster_count) c.cluster_count = *f.cluster_count;
    if (f.epochs) c.training.epochs = *f.epochs;
    if (f.window) c.training.window = *f.window;
    if (f.substeps) c.set_substeps(*f.substeps);
    if (!f.query.empty()) c.query_file = f.query;
    if (f.ply) c.export_ply = true;
    if (f.use_truth) c.use_truth = true;
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spring-mass system identification: synthetic scenes, topology search and neural spring fields"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene and its observation files");
    synth->add_option("spec", f.spec, "Scene spec JSON (default: two-region rope)");
    auto* topo = app.add_subcommand("fit-topology", "Stage one: search the piecewise topology and homogeneous parameters");
    auto* field = app.add_subcommand("fit-field", "Train the neural spring field from the stage-one result");
    auto* eval = app.add_subcommand("eval", "Report reconstruction and future-prediction metrics");
    eval->add_flag("--use-truth", f.use_truth, "Score the ground-truth model instead of the fitted one");
    auto* exp = app.add_subcommand("export", "Write the fitted rollout as a trajectory file (and PLY frames)");
    exp->add_flag("--ply", f.ply, "Also write one PLY file per frame");
    exp->add_option("--query", f.query, "Canonical query points to skin onto the rollout");
    auto* all = app.add_subcommand("run-all", "synth, fit-topology, fit-field, eval and export in sequence");
    all->add_option("--spec", f.spec, "Scene spec JSON");
    all->add_flag("--ply", f.ply, "Also write one PLY file per frame");
    for (auto* cmd : {synth, topo, field, eval, exp, all}) add_common(cmd, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        log::set_quiet(f.quiet);
        const PipelineConfig c = resolve(f);
        if (synth->parsed()) cmd_synth(c);
        if (topo->parsed()) cmd_fit_topology(c);
        if (field->parsed()) cmd_fit_field(c);
        if (eval->parsed()) cmd_eval(c);
        if (exp->parsed()) cmd_export(c);
        if (all->parsed()) cmd_run_all(c);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed input: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
