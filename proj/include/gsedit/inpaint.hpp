#pragma once

#include "gsedit/camera.hpp"
#include "gsedit/hgs.hpp"
#include "gsedit/image.hpp"
#include "gsedit/scene.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace gsedit {

struct InterfaceOptions {
    std::size_t k = 16;
    int dilation_radius = 8;
};

/// Per-view masks of the region left behind by a removal, keyed by camera id.
struct InterfaceMask {
    std::map<std::string, BinaryMask> masks;
};

/// Survivors (rows of `scene` not in `removed`) among the k nearest to each
/// removed Gaussian, deduplicated and sorted.
std::vector<std::size_t> interface_gaussians(const GaussianScene& scene, const std::vector<std::size_t>& removed,
                                             std::size_t k);

/// Sets the pixels inside each listed Gaussian's support ellipse, ignoring occlusion.
void splat_footprint(const GaussianScene& scene, std::span<const std::size_t> rows, const Camera& camera,
                     BinaryMask& mask);

/// Sets every pixel within Euclidean distance `radius` of a set pixel.
BinaryMask dilate(const BinaryMask& mask, int radius);
/// Sets unset pixels that are not 4-connected to the image border through unset pixels.
BinaryMask fill_holes(const BinaryMask& mask);

InterfaceMask removal_interface_mask(const GaussianScene& scene_before, const std::vector<std::size_t>& removed,
                                     const std::vector<NamedCamera>& views, const InterfaceOptions& options = {});

/// Scene with `label` removed and its interface survivors tagged with a fresh
/// "interface" label, ready for a repair session restricted to that label.
struct Removal {
    GaussianScene scene;
    std::vector<std::size_t> removed;    // rows of the input scene
    std::vector<std::size_t> interface;  // rows of `scene`
    LabelId interface_label = 0;
    InterfaceMask mask;
};

Removal remove_object(const GaussianScene& scene, LabelId label, const std::vector<NamedCamera>& views,
                      const InterfaceOptions& options = {});

/// Optimizes `session` against the repaired images with the loss restricted to
/// the interface masks. Every session camera needs a mask and an image of its size.
void repair_removal(EditSession& session, const InterfaceMask& mask, const std::map<std::string, Image>& repaired,
                    int steps = 200, const std::function<bool(const StepReport&)>& on_step = {});

struct DepthAlignment {
    double scale = 1.0;
    double shift = 0.0;
    double rms = 0.0;

    double apply(double estimated) const { return scale * estimated + shift; }
};

/// Least-squares fit rendered ~ scale * estimated + shift over valid pixels.
/// Throws RankError when the valid estimated depths are all equal or fewer than two.
DepthAlignment align_depth(const Image& rendered, const Image& estimated, const BinaryMask& valid);

/// As align_depth, but also rejects non-positive scales with ValidationError.
DepthAlignment align_depth_checked(const Image& rendered, const Image& estimated, const BinaryMask& valid);

struct Incorporation {
    GaussianScene scene;
    LabelId object_label = 0;
    std::size_t first_row = 0;
    std::size_t row_count = 0;
    Vec3 center = Vec3::Zero();
    double scale = 1.0;
};

/// Places `object` (canonical frame, any extent) so that its centroid lies on
/// the ray through the mask centroid at the aligned median estimated depth
/// and the silhouette of its bounding sphere (about the position centroid)
/// spans the mask's larger bounding-box side.
/// The object takes the host's SH degree and loses its anchors.
Incorporation incorporate_object(const GaussianScene& scene, const GaussianScene& object, const Camera& camera,
                                 const BinaryMask& mask, const Image& estimated_depth,
                                 const DepthAlignment& alignment, const std::string& name = "object");

/// Multiplies the camera-space depth of rows [first, first + count) by `factor`
/// and adds ln(factor) to their log-scales. factor == 1 is a no-op.
void adjust_depth_scale(GaussianScene& scene, std::size_t first, std::size_t count, const Camera& camera,
                        double factor);

/// Depth scaling relative to a fixed base state, so successive factors compose
/// to exactly the same result as their product and returning to 1 restores
/// the base bit-exactly.
class DepthScaleHandle {
public:
    DepthScaleHandle(const GaussianScene& scene, std::size_t first, std::size_t count, const Camera& camera);

    /// Sets the cumulative factor.
    void set(GaussianScene& scene, double factor);
    /// Multiplies the cumulative factor by `factor`.
    void apply(GaussianScene& scene, double factor) { set(scene, factor_ * factor); }
    double factor() const { return factor_; }
    std::size_t first() const { return first_; }
    std::size_t count() const { return base_position_.size(); }

private:
    std::size_t first_;
    Vec3 center_;
    std::vector<Vec3> base_position_;
    std::vector<Vec3> base_log_scale_;
    double factor_ = 1.0;
};

}  // namespace gsedit
