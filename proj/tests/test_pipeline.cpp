#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "springid/errors.hpp"
#include "springid/io.hpp"
#include "springid/pipeline.hpp"

using namespace springid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("springid_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string(SPRINGID_CLI) + " " + args + " --quiet > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small rope and a cheap search so the whole pipeline runs in seconds.
PipelineConfig small_config(const fs::path& out) {
    PipelineConfig c;
    c.out_dir = out;
    c.scene.points = 12;
    c.scene.frames = 20;
    c.scene.substeps = 16;
    c.simulator.substeps_per_frame = 16;
    c.cluster_count = 2;
    c.cmaes.max_evaluations = 40;
    c.training.epochs = 2;
    c.training.window = 5;
    c.field.channels = 4;
    c.field.hidden = 16;
    c.field.fourier_bands = 2;
    return c;
}

}  // namespace

TEST_CASE("synth writes three files with the default split and is reproducible") {
    const auto dir = scratch("synth");
    REQUIRE(cli("synth --out " + (dir / "a").string()) == 0);
    REQUIRE(cli("synth --out " + (dir / "b").string()) == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        ++files;
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
    }
    CHECK(files == 3);
    CHECK(io::read_json(dir / "a" / files::kObservations)["split_frame"] == 42);
    fs::remove_all(dir);
}

TEST_CASE("CLI exit codes") {
    const auto dir = scratch("exit");
    io::write_json(dir / "bad_spec.json", {{"kind", "rope"}, {"frames", 5}});
    CHECK(cli("synth " + (dir / "bad_spec.json").string() + " --out " + (dir / "x").string()) == 2);
    CHECK(cli("synth --no-such-flag") == 2);
    CHECK(cli("fit-field --out " + (dir / "empty").string()) == 2);
    CHECK(cli("--help") == 0);

    // A divergent search everywhere is a numerical failure.
    REQUIRE(cli("synth --out " + (dir / "d").string()) == 0);
    io::write_json(dir / "stiff.json", {{"bounds", {{"stiffness_min", 1e7}, {"stiffness_max", 1e8}}},
                                        {"cmaes", {{"max_evaluations", 30}}}});
    CHECK(cli("fit-topology --config " + (dir / "stiff.json").string() + " --out " + (dir / "d").string()) == 3);
    fs::remove_all(dir);
}

TEST_CASE("pipeline commands end to end") {
    const auto dir = scratch("e2e");
    auto config = small_config(dir / "run");
    cmd_synth(config);
    const auto s1 = cmd_fit_topology(config);
    CHECK(s1.best_objective <= s1.initial_objective);

    SUBCASE("zero epochs reproduces stage one") {
        auto c = config;
        c.training.epochs = 0;
        cmd_fit_field(c);
        const auto field = io::field_from_json(io::read_json(c.out_dir / files::kField));
        const auto p = materialize_spring_params(field, s1.physical, s1.topology,
                                                 load_system(c).canonical_positions);
        for (std::size_t e = 0; e < p.size(); ++e) {
            CHECK(p.stiffness[e] == s1.physical.stiffness());
            CHECK(p.dashpot[e] == s1.physical.dashpot());
        }
        const auto m = cmd_eval(c);
        CHECK(m["metrics"].dump() == m["baseline"].dump());
        CHECK(m["future_cd_ratio"].get<double>() == 1.0);
    }

    SUBCASE("training log has one line per window per epoch") {
        cmd_fit_field(config);
        std::ifstream log(config.out_dir / files::kTrainingLog);
        std::size_t lines = 0;
        for (std::string line; std::getline(log, line);) ++lines;
        CHECK(lines == 2 * training_windows(14, 5).size());
        const auto m = cmd_eval(config);
        CHECK(m.contains("future_cd_ratio"));

        const auto frames = cmd_export(config);
        const auto traj = io::trajectory_from_json(io::read_json(config.out_dir / files::kTrajectory));
        CHECK(frames == 20);
        CHECK(traj.frame_count() == 20);
    }
    fs::remove_all(dir);
}

TEST_CASE("truth model on noiseless data scores zero") {
    const auto dir = scratch("truth");
    auto config = small_config(dir / "run");
    config.scene.noise_std = 0.0;
    cmd_synth(config);
    config.use_truth = true;
    const auto m = cmd_eval(config);
    for (const char* key : {"cd_recon", "te_recon", "cd_future", "te_future"}) CHECK(m["metrics"][key].get<double>() < 1e-9);
    fs::remove_all(dir);
}

TEST_CASE("run-all reruns are byte-identical and PLY frames round-trip") {
    const auto dir = scratch("rerun");
    auto config = small_config("unused");
    io::Json j = to_json(config);
    j.erase("out");
    io::write_json(dir / "config.json", j);
    for (const char* run : {"a", "b"})
        REQUIRE(cli("run-all --ply --config " + (dir / "config.json").string() + " --out " + (dir / run).string()) == 0);
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir / "a");
        CHECK_MESSAGE(slurp(e.path()) == slurp(dir / "b" / rel), rel.string());
        ++compared;
    }
    CHECK(compared > 20);

    const auto traj = io::trajectory_from_json(io::read_json(dir / "a" / files::kTrajectory));
    const auto ply = io::ply_from_string(slurp(dir / "a" / "ply" / "frame_0007.ply"));
    CHECK(ply.size() == 12);
    CHECK(ply == traj.states[7].positions);
    fs::remove_all(dir);
}
