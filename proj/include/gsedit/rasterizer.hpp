#pragma once

#include "gsedit/camera.hpp"
#include "gsedit/image.hpp"
#include "gsedit/scene.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gsedit {

struct RasterConfig {
    int tile_size = 16;
    /// Per-Gaussian alpha is clipped to this value.
    double alpha_clip = 0.99;
    /// A pixel stops blending once its transmittance falls below this.
    double min_transmittance = 1e-4;
    /// Added to the diagonal of every screen-space covariance (px^2).
    double cov2d_dilation = 0.3;
    /// A Gaussian touches pixels within this Mahalanobis radius of its mean.
    double support_sigma = 3.0;
};

/// Screen-space footprint of one Gaussian.
struct ProjectedGaussian {
    bool visible = false;
    Vec3 camera_point = Vec3::Zero();
    Vec2 mean2d = Vec2::Zero();
    /// J W Sigma W^T J^T plus the dilation term.
    Mat2 cov2d = Mat2::Identity();
    Mat2 conic = Mat2::Identity();
    double depth = 0.0;
    /// Color after clamping at zero; `color_raw` is the SH value before it.
    Vec3 color = Vec3::Zero();
    Vec3 color_raw = Vec3::Zero();
    double opacity = 0.0;
};

/// Inclusive pixel rectangle.
struct PixelRect {
    int x0, y0, x1, y1;
};

/// J W Sigma W^T J^T without dilation, for a Gaussian at camera-space point p.
Mat2 projected_covariance(const Gaussian& g, const Camera& camera);

/// Projects every Gaussian. Gaussians at depth <= near or > far, whose
/// support rectangle misses the image, or that lack `labels_only`, are
/// marked invisible.
std::vector<ProjectedGaussian> project(const GaussianScene& scene, const Camera& camera,
                                       const RasterConfig& config = {},
                                       std::optional<LabelId> labels_only = std::nullopt);

/// Pixels whose centers can fall inside the support ellipse, clipped to the
/// image; nullopt when none can.
std::optional<PixelRect> support_rect(const ProjectedGaussian& pg, int width, int height, double sigma);

struct RenderOptions {
    std::optional<LabelId> labels_only;
    bool record_contributions = true;
    RasterConfig raster;
};

/// One blended Gaussian at one pixel: alpha is o_i(p), transmittance is T_i(p),
/// the product of (1 - alpha) over the Gaussians in front of it.
struct Contribution {
    std::uint32_t gaussian;
    double alpha;
    double transmittance;
};

struct RenderOutput {
    Image color;  // 3 channels
    Image depth;  // alpha-weighted expected depth
    Image alpha;
    /// Per-pixel contributions in blend (front to back) order; empty unless
    /// recorded. Stored tile by tile.
    std::vector<Contribution> contributions;
    std::vector<std::uint32_t> pixel_offset;
    std::vector<std::uint32_t> pixel_count;

    int width() const { return color.width; }
    int height() const { return color.height; }
    bool has_contributions() const { return !pixel_offset.empty(); }
    std::span<const Contribution> contributions_at(int x, int y) const {
        const std::size_t p = static_cast<std::size_t>(y) * color.width + x;
        return {contributions.data() + pixel_offset[p], pixel_count[p]};
    }
};

/// Tile-based front-to-back alpha blending over a black background.
RenderOutput render(const GaussianScene& scene, const Camera& camera, const RenderOptions& options = {});

/// Gradients of a scalar loss with respect to every stored Gaussian parameter.
struct SceneGradients {
    /// Same layout as the scene; each field holds dL/d(field).
    std::vector<Gaussian> params;
    /// dL/d(mean2d) in pixels, the densification statistic source.
    std::vector<Vec2> mean2d;
    std::vector<std::uint8_t> visible;
};

/// Back-propagates dL/dColor (3 channels, camera resolution) through the
/// blend of `forward`, which must have been rendered with the same scene,
/// camera and options with contributions recorded.
SceneGradients render_backward(const GaussianScene& scene, const Camera& camera, const RenderOutput& forward,
                               const Image& dl_dcolor, const RenderOptions& options = {});

}  // namespace gsedit
