#pragma once

// The four pipeline commands (synth, fit-topology, fit-field, eval) plus export,
// all reading and writing files in one output directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "springid/field.hpp"
#include "springid/gradients.hpp"
#include "springid/io.hpp"
#include "springid/stage_one.hpp"
#include "springid/synth.hpp"

namespace springid {

struct PipelineConfig {
    std::filesystem::path out_dir = "out";
    /// Mass points for fitting: a truth file (its "system" entry) or a bare system file.
    /// Defaults to <out>/truth.json.
    std::optional<std::filesystem::path> system_file;
    /// Canonical query points to skin during export.
    std::optional<std::filesystem::path> query_file;
    SceneSpec scene = SceneSpec::default_rope();
    std::uint64_t seed = 0;
    std::size_t cluster_count = 5;
    CmaesSettings cmaes;
    ParameterBounds bounds;
    HomogeneousInit initial{std::log(300.0), 0.0, 0.999, 0.5, 0.5};
    TrainingConfig training;
    FieldInit field;
    bool tie_dashpot = false;
    /// Gravity, ground, substeps and point radius used while fitting.
    GlobalPhysicalParams simulator;
    LossConfig loss;
    /// Fitting frames; defaults to [0, split).
    std::optional<FrameRange> frames;
    bool export_ply = false;
    std::size_t skin_neighbors = 4;
    /// eval: score the ground-truth model of the truth file instead of the fitted one.
    bool use_truth = false;

    /// Copies `seed` into the scene, search, field and training seeds.
    void set_seed(std::uint64_t s);
    void set_substeps(int substeps);
    void validate() const;
};

/// Overlays the keys present in `j` onto `base`.
PipelineConfig config_from_json(const io::Json& j, PipelineConfig base = {});
io::Json to_json(const PipelineConfig& config);

namespace files {
inline constexpr const char* kObservations = "observations.json";
inline constexpr const char* kTruth = "truth.json";
inline constexpr const char* kScene = "scene.json";
inline constexpr const char* kStageOne = "stage_one.json";
inline constexpr const char* kField = "field.json";
inline constexpr const char* kCheckpoint = "field_checkpoint.json";
inline constexpr const char* kTrainingLog = "training_log.jsonl";
inline constexpr const char* kTraining = "training.json";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kTrajectory = "trajectory.json";
inline constexpr const char* kQueryTrajectory = "query_trajectory.json";
}  // namespace files

/// Writes observations.json, truth.json and scene.json.
void cmd_synth(const PipelineConfig& config);
StageOneResult cmd_fit_topology(const PipelineConfig& config);
TrainingResult cmd_fit_field(const PipelineConfig& config);
/// Writes metrics.json and returns its contents.
io::Json cmd_eval(const PipelineConfig& config);
/// Returns the number of frames written.
std::size_t cmd_export(const PipelineConfig& config);
void cmd_run_all(const PipelineConfig& config);

MassSystem load_system(const PipelineConfig& config);

}  // namespace springid
