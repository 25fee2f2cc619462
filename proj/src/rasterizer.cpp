#include "gsedit/rasterizer.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/parallel.hpp"
#include "gsedit/sh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsedit {

namespace {

/// Jacobian of the pinhole projection at camera-space point p.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& p) {
    const double fx = cam.fx(), fy = cam.fy(), s = cam.skew();
    const double iz = 1.0 / p.z(), iz2 = iz * iz;
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, s * iz, -(fx * p.x() + s * p.y()) * iz2, 0.0, fy * iz, -fy * p.y() * iz2;
    return j;
}

struct TileGrid {
    int size, cols, rows;
    int count() const { return cols * rows; }
};

}  // namespace

Mat2 projected_covariance(const Gaussian& g, const Camera& camera) {
    const Vec3 p = camera.to_camera(g.position);
    const Eigen::Matrix<double, 2, 3> t = projection_jacobian(camera, p) * camera.R;
    return t * covariance(g) * t.transpose();
}

std::optional<PixelRect> support_rect(const ProjectedGaussian& pg, int width, int height, double sigma) {
    // Slightly widened so rounding never drops a pixel the blend test accepts.
    const double ex = sigma * std::sqrt(pg.cov2d(0, 0)) * (1.0 + 1e-9) + 1e-9;
    const double ey = sigma * std::sqrt(pg.cov2d(1, 1)) * (1.0 + 1e-9) + 1e-9;
    const double fx0 = std::ceil(pg.mean2d.x() - ex - 0.5), fx1 = std::floor(pg.mean2d.x() + ex - 0.5);
    const double fy0 = std::ceil(pg.mean2d.y() - ey - 0.5), fy1 = std::floor(pg.mean2d.y() + ey - 0.5);
    if (!(fx1 >= 0.0) || !(fy1 >= 0.0) || !(fx0 <= width - 1.0) || !(fy0 <= height - 1.0)) return std::nullopt;
    PixelRect r;
    r.x0 = static_cast<int>(std::max(fx0, 0.0));
    r.y0 = static_cast<int>(std::max(fy0, 0.0));
    r.x1 = static_cast<int>(std::min(fx1, width - 1.0));
    r.y1 = static_cast<int>(std::min(fy1, height - 1.0));
    if (r.x0 > r.x1 || r.y0 > r.y1) return std::nullopt;
    return r;
}

std::vector<ProjectedGaussian> project(const GaussianScene& scene, const Camera& camera, const RasterConfig& config,
                                       std::optional<LabelId> labels_only) {
    camera.validate();
    std::vector<ProjectedGaussian> out(scene.size());
    const Vec3 center = camera.center();
    const int degree = scene.sh_degree();
    parallel_for(scene.size(), [&](std::size_t i) {
        const Gaussian& g = scene[i];
        ProjectedGaussian& pg = out[i];
        if (labels_only && !scene.has_label(i, *labels_only)) return;
        const Vec3 p = camera.to_camera(g.position);
        pg.camera_point = p;
        pg.depth = p.z();
        if (!(p.z() > camera.near_plane) || p.z() > camera.far_plane) return;

        const Eigen::Matrix<double, 2, 3> t = projection_jacobian(camera, p) * camera.R;
        pg.cov2d = t * covariance(g) * t.transpose();
        pg.cov2d(0, 0) += config.cov2d_dilation;
        pg.cov2d(1, 1) += config.cov2d_dilation;
        const double det = pg.cov2d.determinant();
        if (!(det > 0.0)) return;
        pg.conic << pg.cov2d(1, 1) / det, -pg.cov2d(0, 1) / det, -pg.cov2d(1, 0) / det, pg.cov2d(0, 0) / det;
        pg.mean2d = camera.project_camera_point(p);

        const Vec3 dir = (g.position - center).normalized();
        pg.color_raw = sh_color_unclamped(g, degree, sh_basis(degree, dir));
        pg.color = pg.color_raw.cwiseMax(0.0);
        pg.opacity = g.activated_opacity();
        pg.visible = support_rect(pg, camera.width, camera.height, config.support_sigma).has_value();
    });
    return out;
}

RenderOutput render(const GaussianScene& scene, const Camera& camera, const RenderOptions& options) {
    const RasterConfig& cfg = options.raster;
    if (cfg.tile_size <= 0) throw ValidationError("tile size must be positive");
    const std::vector<ProjectedGaussian> projected = project(scene, camera, cfg, options.labels_only);
    const int width = camera.width, height = camera.height;

    std::vector<std::uint32_t> order;
    for (std::size_t i = 0; i < projected.size(); ++i)
        if (projected[i].visible) order.push_back(static_cast<std::uint32_t>(i));
    std::ranges::sort(order, [&](std::uint32_t a, std::uint32_t b) {
        if (projected[a].depth != projected[b].depth) return projected[a].depth < projected[b].depth;
        return a < b;
    });

    const TileGrid grid{cfg.tile_size, (width + cfg.tile_size - 1) / cfg.tile_size,
                        (height + cfg.tile_size - 1) / cfg.tile_size};
    std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(grid.count()));
    const double sigma2 = cfg.support_sigma * cfg.support_sigma;
    for (std::uint32_t idx : order) {
        const auto rect = support_rect(projected[idx], width, height, cfg.support_sigma);
        for (int ty = rect->y0 / grid.size; ty <= rect->y1 / grid.size; ++ty)
            for (int tx = rect->x0 / grid.size; tx <= rect->x1 / grid.size; ++tx)
                bins[static_cast<std::size_t>(ty) * grid.cols + tx].push_back(idx);
    }

    RenderOutput out;
    out.color = Image(width, height, 3);
    out.depth = Image(width, height, 1);
    out.alpha = Image(width, height, 1);
    const bool record = options.record_contributions;
    std::vector<std::vector<Contribution>> tile_entries(bins.size());
    std::vector<std::uint32_t> local_offset, local_count;
    if (record) {
        local_offset.assign(out.color.pixel_count(), 0);
        local_count.assign(out.color.pixel_count(), 0);
    }

    parallel_for(bins.size(), [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % grid.cols, ty = static_cast<int>(tile) / grid.cols;
        const auto& list = bins[tile];
        auto& entries = tile_entries[tile];
        for (int y = ty * grid.size; y < std::min(height, (ty + 1) * grid.size); ++y) {
            for (int x = tx * grid.size; x < std::min(width, (tx + 1) * grid.size); ++x) {
                const Vec2 pixel(x + 0.5, y + 0.5);
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                if (record) local_offset[p] = static_cast<std::uint32_t>(entries.size());
                double transmittance = 1.0;
                Vec3 color = Vec3::Zero();
                double depth = 0.0;
                for (std::uint32_t idx : list) {
                    const ProjectedGaussian& pg = projected[idx];
                    const Vec2 d = pixel - pg.mean2d;
                    const double power = d.dot(pg.conic * d);
                    if (power > sigma2) continue;
                    const double alpha = std::min(cfg.alpha_clip, pg.opacity * std::exp(-0.5 * power));
                    if (!(alpha > 0.0)) continue;
                    if (record) entries.push_back({idx, alpha, transmittance});
                    const double weight = alpha * transmittance;
                    color += weight * pg.color;
                    depth += weight * pg.depth;
                    transmittance *= 1.0 - alpha;
                    if (transmittance < cfg.min_transmittance) break;
                }
                const double a = 1.0 - transmittance;
                for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c];
                out.alpha.at(x, y) = a;
                out.depth.at(x, y) = depth / std::max(a, 1e-10);
                if (record) local_count[p] = static_cast<std::uint32_t>(entries.size()) - local_offset[p];
            }
        }
    });

    if (record) {
        std::vector<std::size_t> base(bins.size(), 0);
        std::size_t total = 0;
        for (std::size_t t = 0; t < bins.size(); ++t) {
            base[t] = total;
            total += tile_entries[t].size();
        }
        out.contributions.reserve(total);
        for (auto& entries : tile_entries) out.contributions.insert(out.contributions.end(), entries.begin(), entries.end());
        out.pixel_offset.resize(local_offset.size());
        out.pixel_count = std::move(local_count);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const std::size_t tile = static_cast<std::size_t>(y / grid.size) * grid.cols + x / grid.size;
                out.pixel_offset[p] = static_cast<std::uint32_t>(base[tile] + local_offset[p]);
            }
        }
    }
    return out;
}

}  // namespace gsedit
