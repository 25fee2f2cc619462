#pragma once

#include "gsedit/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

/// Sidecar JSON path that accompanies a scene PLY: "a/b.ply" -> "a/b.sidecar.json".
std::filesystem::path sidecar_path(const std::filesystem::path& ply_path);

/// Binary little-endian PLY with the 3DGS vertex layout:
/// x y z nx ny nz f_dc_0..2 f_rest_0..M opacity scale_0..2 rot_0..3 (all float).
/// f_rest is channel-major as in the reference splat files.
std::vector<std::uint8_t> encode_ply(const GaussianScene& scene);
/// Parses the vertex element; labels, generations and anchors are left empty.
GaussianScene decode_ply(std::span<const std::uint8_t> bytes);

/// {"labels": {id: {"name", "members"}}, "generations": [...], "anchors": base64|null}
std::string encode_sidecar(const GaussianScene& scene);
/// Applies a sidecar to a freshly decoded scene.
void apply_sidecar(GaussianScene& scene, const std::string& json_text);

/// Reads the PLY and, when present, its sidecar.
GaussianScene load_scene(const std::filesystem::path& path);
/// Writes the PLY and its sidecar.
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);

}  // namespace gsedit
