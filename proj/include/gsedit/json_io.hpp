#pragma once

#include "gsedit/camera.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace gsedit {

/// {"K": [[...]], "R": [[...]], "t": [...], "w": int, "h": int, "near": f, "far": f}
nlohmann::json camera_to_json(const Camera& camera);
/// Throws FormatError on schema problems and ValidationError on invalid cameras.
Camera camera_from_json(const nlohmann::json& j);

/// Camera set file: {"<id>": <camera>, ...}. Ids come back in sorted order.
std::vector<NamedCamera> cameras_from_json(const nlohmann::json& j);
nlohmann::json cameras_to_json(const std::vector<NamedCamera>& cameras);
std::vector<NamedCamera> load_cameras(const std::filesystem::path& path);

nlohmann::json load_json_file(const std::filesystem::path& path);

/// Looks a camera up by id; throws ValidationError naming the id when absent.
const NamedCamera& find_camera(const std::vector<NamedCamera>& cameras, const std::string& id);

}  // namespace gsedit
