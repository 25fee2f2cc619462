#pragma once

#include "gsedit/math.hpp"
#include "gsedit/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace gsedit {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> colors;  // per vertex in [0, 1]; empty means uniform gray
    std::vector<std::array<std::uint32_t, 3>> faces;
};

/// Reads `v x y z [r g b]` and `f` records; polygons are fan-triangulated.
Mesh read_obj(const std::filesystem::path& path);

struct MeshSamplingOptions {
    std::size_t count = 10000;
    std::uint64_t seed = 0;
    double opacity = 0.9;
    /// Neighbours averaged for the per-sample radius.
    std::size_t neighbors = 3;
    /// Center on the vertex centroid and scale to unit radius first.
    bool normalize = true;
};

/// Area-weighted surface samples as isotropic degree-0 Gaussians whose radius
/// is the mean distance to their nearest neighbouring samples.
GaussianScene sample_mesh(const Mesh& mesh, const MeshSamplingOptions& options = {});

}  // namespace gsedit
