#pragma once

#include "gsedit/camera.hpp"
#include "gsedit/image.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gsedit {

/// Binary masks for one view, keyed by label id.
struct SemanticMask {
    std::string camera_id;
    Camera camera;
    std::map<LabelId, BinaryMask> masks;

    /// Throws ValidationError naming the camera when a mask size differs from the view.
    void validate() const;
};

/// How the accumulated weight is averaged before thresholding.
enum class TraceAverage {
    /// weight / sum of o*T over the same pixels: the fraction of the
    /// Gaussian's rendered contribution that falls inside the mask.
    Coverage,
    /// weight / number of pixels the Gaussian contributed to.
    Pixels,
};

TraceAverage trace_average_from_string(const std::string& name);
const char* to_string(TraceAverage mode);

/// Per-Gaussian, per-label mask weights and counters summed over views.
class TraceAccumulator {
public:
    struct Entry {
        std::vector<double> weight;    // sum of o*T*M
        std::vector<double> counter;   // pixels with o*T > 0
        std::vector<double> coverage;  // sum of o*T
    };

    explicit TraceAccumulator(std::size_t gaussians = 0) : size_(gaussians) {}

    std::size_t size() const { return size_; }
    std::vector<LabelId> labels() const;
    bool has(LabelId label) const { return entries_.count(label) != 0; }
    const Entry& entry(LabelId label) const;
    Entry& entry_for(LabelId label);

    double weight(std::size_t i, LabelId label) const { return entry(label).weight[i]; }
    double counter(std::size_t i, LabelId label) const { return entry(label).counter[i]; }
    double coverage(std::size_t i, LabelId label) const { return entry(label).coverage[i]; }
    double average(std::size_t i, LabelId label, TraceAverage mode) const;

private:
    std::size_t size_;
    std::map<LabelId, Entry> entries_;
};

/// Adds one view's mask weights. Renders the view with contributions recorded.
void accumulate(TraceAccumulator& acc, const GaussianScene& scene, const SemanticMask& mask,
                const RasterConfig& raster = {});
/// Same, reusing a forward pass of `scene` at mask.camera.
void accumulate(TraceAccumulator& acc, const RenderOutput& forward, const SemanticMask& mask);

/// Sets label bit j where average > threshold and clears it where the
/// Gaussian was seen (counter > 0) but stays at or below. Unseen Gaussians
/// keep their labels.
void assign_labels(const TraceAccumulator& acc, GaussianScene& scene, double threshold,
                   TraceAverage mode = TraceAverage::Coverage);

/// Children copy the parent's label row and get generation `round`.
void inherit_labels(GaussianScene& scene, std::size_t parent, std::span<const std::size_t> children, int round);

/// World point under `pixel` at the rendered depth. Throws ValidationError
/// when the pixel is outside the image or alpha there is at most 0.5.
Vec3 backproject_point(const Vec2& pixel, const Camera& camera, const Image& depth, const Image& alpha);

struct PromptPoint {
    std::size_t point = 0;  // index into the input list
    Vec2 pixel = Vec2::Zero();
};

/// Pixels of points in front of the camera and inside the image.
std::vector<PromptPoint> reproject_points(std::span<const Vec3> points, const Camera& camera);

/// Removes every member of `label` and the label itself. Throws
/// ValidationError when the label is neither named nor used.
GaussianScene remove_label(const GaussianScene& scene, LabelId label);

/// Manifest: {"masks": [{"file", "camera", "label", "name"?}, ...]}; relative
/// files resolve against the manifest directory. Masks are grouped by camera.
/// Names found in the manifest are returned in `names`.
std::vector<SemanticMask> load_mask_manifest(const std::filesystem::path& manifest,
                                             const std::vector<NamedCamera>& cameras,
                                             std::map<LabelId, std::string>* names = nullptr);

/// [{"view_id", "pixel": [u, v]}, ...]
nlohmann::json prompts_to_json(const std::vector<std::pair<std::string, PromptPoint>>& prompts);

}  // namespace gsedit
