#pragma once

// JSON (and PLY) readers and writers for every file the pipeline exchanges.
// Reals are written in shortest round-trip form, so a reload is bit-exact;
// trajectories use 17 significant digits.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "springid/field.hpp"
#include "springid/gradients.hpp"
#include "springid/losses.hpp"
#include "springid/sim.hpp"
#include "springid/stage_one.hpp"
#include "springid/synth.hpp"

namespace springid::io {

using Json = nlohmann::ordered_json;

/// Reads and parses a JSON file; ConfigError when missing or malformed.
Json read_json(const std::filesystem::path& path);
/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& value);

Json to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j);
Json to_json(const Points& points);
Points points_from_json(const Json& j);

/// {"frames":[{"t":int,"positions":[[x,y,z],...]}],"dt_frame":real}
std::string trajectory_to_string(const Trajectory& trajectory, double dt_frame);
Trajectory trajectory_from_json(const Json& j, double* dt_frame = nullptr);

Json to_json(const ObservationSequence& observations);
ObservationSequence observations_from_json(const Json& j);

Json to_json(const MassSystem& system);
MassSystem system_from_json(const Json& j);
Json to_json(const SpringTopology& topology);
SpringTopology topology_from_json(const Json& j);
Json to_json(const SpringParams& params);
SpringParams params_from_json(const Json& j);
Json to_json(const GlobalPhysicalParams& globals);
/// Missing keys keep the values already in `base`.
GlobalPhysicalParams globals_from_json(const Json& j, GlobalPhysicalParams base = {});
Json to_json(const HomogeneousInit& init);
HomogeneousInit homogeneous_from_json(const Json& j);

Json to_json(const SceneSpec& spec);
/// Missing keys keep the defaults of the named kind ("rope" or "cloth").
SceneSpec scene_from_json(const Json& j);

Json to_json(const StageOneResult& result);
StageOneResult stage_one_from_json(const Json& j);

Json to_json(const TriPlaneField& field);
TriPlaneField field_from_json(const Json& j);

Json to_json(const WindowLog& entry);
Json to_json(const EpochRecord& record);

Json to_json(const MetricsReport& metrics);
Json to_json(const OracleReport& report);

/// ASCII PLY with float64 vertex coordinates.
std::string ply_to_string(const Points& points);
Points ply_from_string(const std::string& text);

}  // namespace springid::io
