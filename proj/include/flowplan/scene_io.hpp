#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "flowplan/scene.hpp"

namespace flowplan {

// Scenario file: UTF-8 JSON, one scene per file. Masks are stored as
// row-major run-length-encoded boolean arrays. See README for the schema.
inline constexpr int kSceneFormatVersion = 1;

nlohmann::json scene_to_json(const Scene& scene, int t_f);
Scene scene_from_json(const nlohmann::json& j);

std::string scene_to_string(const Scene& scene, int t_f);

void write_scene_file(const std::filesystem::path& path, const Scene& scene, int t_f);
Scene read_scene_file(const std::filesystem::path& path);

nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace flowplan
