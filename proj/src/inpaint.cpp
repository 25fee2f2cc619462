#include "gsedit/inpaint.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/guidance.hpp"
#include "gsedit/knn.hpp"
#include "gsedit/parallel.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace gsedit {

std::vector<std::size_t> interface_gaussians(const GaussianScene& scene, const std::vector<std::size_t>& removed,
                                             std::size_t k) {
    if (removed.empty()) throw ValidationError("removal set is empty");
    std::vector<bool> is_removed(scene.size());
    for (std::size_t r : removed) {
        if (r >= scene.size()) throw ValidationError("removed row " + std::to_string(r) + " out of range");
        is_removed[r] = true;
    }
    std::vector<std::size_t> survivors;
    std::vector<Vec3> points, queries;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (is_removed[i]) {
            queries.push_back(scene[i].position);
        } else {
            survivors.push_back(i);
            points.push_back(scene[i].position);
        }
    }
    auto local = knn_union(points, queries, k);
    for (auto& i : local) i = survivors[i];
    return local;
}

void splat_footprint(const GaussianScene& scene, std::span<const std::size_t> rows, const Camera& camera,
                     BinaryMask& mask) {
    const RasterConfig cfg;
    const auto projected = project(scene, camera, cfg);
    const double sigma2 = cfg.support_sigma * cfg.support_sigma;
    for (std::size_t row : rows) {
        const auto& pg = projected[row];
        if (!pg.visible) continue;
        const auto rect = support_rect(pg, mask.width, mask.height, cfg.support_sigma);
        if (!rect) continue;
        for (int y = rect->y0; y <= rect->y1; ++y)
            for (int x = rect->x0; x <= rect->x1; ++x) {
                const Vec2 d = Vec2(x + 0.5, y + 0.5) - pg.mean2d;
                if (d.dot(pg.conic * d) <= sigma2) mask.at(x, y) = 1;
            }
    }
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    BinaryMask out(mask.width, mask.height);
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dx, dy);
    parallel_for(static_cast<std::size_t>(mask.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < mask.width; ++x) {
            for (auto [dx, dy] : offsets) {
                const int sx = x + dx, sy = y + dy;
                if (sx < 0 || sy < 0 || sx >= mask.width || sy >= mask.height || !mask.at(sx, sy)) continue;
                out.at(x, y) = 1;
                break;
            }
        }
    });
    return out;
}

BinaryMask fill_holes(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<std::uint8_t> outside(mask.data.size(), 0);
    std::deque<std::pair<int, int>> queue;
    auto seed = [&](int x, int y) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (mask.data[i] || outside[i]) return;
        outside[i] = 1;
        queue.emplace_back(x, y);
    };
    for (int x = 0; x < w; ++x) seed(x, 0), seed(x, h - 1);
    for (int y = 0; y < h; ++y) seed(0, y), seed(w - 1, y);
    while (!queue.empty()) {
        auto [x, y] = queue.front();
        queue.pop_front();
        if (x > 0) seed(x - 1, y);
        if (x + 1 < w) seed(x + 1, y);
        if (y > 0) seed(x, y - 1);
        if (y + 1 < h) seed(x, y + 1);
    }
    BinaryMask out(w, h);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = outside[i] ? 0 : 1;
    return out;
}

InterfaceMask removal_interface_mask(const GaussianScene& scene_before, const std::vector<std::size_t>& removed,
                                     const std::vector<NamedCamera>& views, const InterfaceOptions& options) {
    const auto rows = interface_gaussians(scene_before, removed, options.k);
    InterfaceMask out;
    for (const auto& view : views) {
        BinaryMask mask(view.camera.width, view.camera.height);
        splat_footprint(scene_before, rows, view.camera, mask);
        out.masks[view.id] = fill_holes(dilate(mask, options.dilation_radius));
    }
    return out;
}

Removal remove_object(const GaussianScene& scene, LabelId label, const std::vector<NamedCamera>& views,
                      const InterfaceOptions& options) {
    Removal out;
    out.removed = scene.label_members(label);
    out.mask = removal_interface_mask(scene, out.removed, views, options);
    const auto before = interface_gaussians(scene, out.removed, options.k);
    out.scene = remove_label(scene, label);
    out.interface_label = out.scene.next_label_id();
    out.scene.set_label_name(out.interface_label, "interface");
    // Surviving rows keep their relative order, so map old rows by counting.
    std::vector<std::size_t> new_index(scene.size(), 0);
    std::size_t next = 0;
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (!scene.has_label(i, label)) new_index[i] = next++;
    for (std::size_t row : before) {
        out.interface.push_back(new_index[row]);
        out.scene.mutable_labels()[new_index[row]] |= label_bit(out.interface_label);
    }
    return out;
}

void repair_removal(EditSession& session, const InterfaceMask& mask, const std::map<std::string, Image>& repaired,
                    int steps, const std::function<bool(const StepReport&)>& on_step) {
    for (const auto& cam : session.cameras()) {
        auto m = mask.masks.find(cam.id);
        auto r = repaired.find(cam.id);
        if (m == mask.masks.end()) throw ValidationError("no interface mask for camera " + cam.id);
        if (r == repaired.end()) throw ValidationError("no repaired image for camera " + cam.id);
        if (m->second.width != cam.camera.width || m->second.height != cam.camera.height)
            throw ValidationError("interface mask size does not match camera " + cam.id);
        if (r->second.width != cam.camera.width || r->second.height != cam.camera.height || r->second.channels != 3)
            throw ValidationError("repaired image shape does not match camera " + cam.id);
    }
    session.set_guidance(std::make_shared<TargetImageGuidance>(repaired));
    session.set_request_masks(mask.masks);
    session.run(steps, on_step);
}

DepthAlignment align_depth(const Image& rendered, const Image& estimated, const BinaryMask& valid) {
    if (rendered.width != estimated.width || rendered.height != estimated.height || rendered.width != valid.width ||
        rendered.height != valid.height)
        throw ValidationError("depth maps and mask must have the same size");
    // Centered sums keep the normal equations well conditioned.
    double n = 0, mean_e = 0, mean_r = 0;
    for (std::size_t i = 0; i < valid.data.size(); ++i) {
        if (!valid.data[i]) continue;
        const double e = estimated.data[i * estimated.channels], r = rendered.data[i * rendered.channels];
        if (!std::isfinite(e) || !std::isfinite(r)) throw ValidationError("non-finite depth in the valid region");
        n += 1;
        mean_e += e;
        mean_r += r;
    }
    if (n < 2) throw RankError("depth alignment needs at least two valid pixels");
    mean_e /= n;
    mean_r /= n;
    double see = 0, ser = 0;
    for (std::size_t i = 0; i < valid.data.size(); ++i) {
        if (!valid.data[i]) continue;
        const double e = estimated.data[i * estimated.channels] - mean_e;
        const double r = rendered.data[i * rendered.channels] - mean_r;
        see += e * e;
        ser += e * r;
    }
    if (!(see > 0.0)) throw RankError("estimated depth is constant over the valid region");
    DepthAlignment a;
    a.scale = ser / see;
    a.shift = mean_r - a.scale * mean_e;
    double sq = 0;
    for (std::size_t i = 0; i < valid.data.size(); ++i) {
        if (!valid.data[i]) continue;
        const double d = a.apply(estimated.data[i * estimated.channels]) - rendered.data[i * rendered.channels];
        sq += d * d;
    }
    a.rms = std::sqrt(sq / n);
    return a;
}

DepthAlignment align_depth_checked(const Image& rendered, const Image& estimated, const BinaryMask& valid) {
    const auto a = align_depth(rendered, estimated, valid);
    if (!(a.scale > 0.0)) throw ValidationError("depth alignment has non-positive scale " + std::to_string(a.scale));
    return a;
}

Incorporation incorporate_object(const GaussianScene& scene, const GaussianScene& object, const Camera& camera,
                                 const BinaryMask& mask, const Image& estimated_depth,
                                 const DepthAlignment& alignment, const std::string& name) {
    camera.validate();
    if (object.empty()) throw ValidationError("object scene is empty");
    if (mask.width != camera.width || mask.height != camera.height)
        throw ValidationError("insertion mask size does not match the camera");
    if (estimated_depth.width != mask.width || estimated_depth.height != mask.height)
        throw ValidationError("estimated depth size does not match the mask");
    if (!(alignment.scale > 0.0)) throw ValidationError("depth alignment has non-positive scale");

    Vec2 centroid = Vec2::Zero();
    int x0 = mask.width, x1 = -1, y0 = mask.height, y1 = -1;
    std::vector<double> depths;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            centroid += Vec2(x + 0.5, y + 0.5);
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
            depths.push_back(estimated_depth.at(x, y, 0));
        }
    if (depths.empty()) throw ValidationError("insertion mask is empty");
    centroid /= static_cast<double>(depths.size());
    const auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
    std::nth_element(depths.begin(), mid, depths.end());
    double median = *mid;
    if (depths.size() % 2 == 0) median = 0.5 * (median + *std::max_element(depths.begin(), mid));
    const double depth = alignment.apply(median);
    if (!(depth > 0.0)) throw ValidationError("aligned insertion depth is not in front of the camera");

    Vec3 obj_center = Vec3::Zero();
    for (const auto& g : object.gaussians()) obj_center += g.position;
    obj_center /= static_cast<double>(object.size());
    double radius = 0.0;
    for (const auto& g : object.gaussians()) radius = std::max(radius, (g.position - obj_center).norm());
    if (!(radius > 0.0)) radius = object[0].scale().maxCoeff();

    const double extent_px = std::max(x1 - x0 + 1, y1 - y0 + 1);
    const double focal = 0.5 * (camera.fx() + camera.fy());
    Incorporation out;
    // Radius whose bounding-sphere silhouette spans extent_px at this depth.
    const double half_tan = extent_px / (2.0 * focal);
    out.scale = depth * half_tan / std::sqrt(1.0 + half_tan * half_tan) / radius;
    out.center = camera.backproject(centroid, depth);

    GaussianScene placed = object;
    placed.clear_anchors();
    placed.set_sh_degree(scene.sh_degree());
    const double log_s = std::log(out.scale);
    for (auto& g : placed.mutable_gaussians()) {
        g.position = out.center + out.scale * (g.position - obj_center);
        g.log_scale.array() += log_s;
    }
    for (const auto& [id, n] : object.label_names()) placed.erase_label(id);
    for (auto& bits : placed.mutable_labels()) bits = label_bit(0);
    placed.set_label_name(0, name);

    out.first_row = scene.size();
    out.row_count = placed.size();
    out.scene = concatenate(scene, placed);
    out.object_label = 0;
    while (!(out.scene.labels()[out.first_row] & label_bit(out.object_label))) ++out.object_label;
    return out;
}

namespace {

void check_rows(const GaussianScene& scene, std::size_t first, std::size_t count) {
    if (first > scene.size() || count > scene.size() - first)
        throw ValidationError("object rows [" + std::to_string(first) + ", " + std::to_string(first + count) +
                              ") exceed the scene size " + std::to_string(scene.size()));
}

void check_factor(double factor) {
    if (!(factor > 0.0) || !std::isfinite(factor))
        throw ValidationError("depth scale factor must be positive, got " + std::to_string(factor));
}

}  // namespace

void adjust_depth_scale(GaussianScene& scene, std::size_t first, std::size_t count, const Camera& camera,
                        double factor) {
    check_rows(scene, first, count);
    check_factor(factor);
    if (factor == 1.0) return;
    const Vec3 c = camera.center();
    const double log_f = std::log(factor);
    for (std::size_t i = first; i < first + count; ++i) {
        Gaussian& g = scene[i];
        g.position = c + factor * (g.position - c);
        g.log_scale.array() += log_f;
    }
}

DepthScaleHandle::DepthScaleHandle(const GaussianScene& scene, std::size_t first, std::size_t count,
                                   const Camera& camera)
    : first_(first), center_(camera.center()) {
    check_rows(scene, first, count);
    for (std::size_t i = first; i < first + count; ++i) {
        base_position_.push_back(scene[i].position);
        base_log_scale_.push_back(scene[i].log_scale);
    }
}

void DepthScaleHandle::set(GaussianScene& scene, double factor) {
    check_factor(factor);
    check_rows(scene, first_, count());
    factor_ = factor;
    const double log_f = std::log(factor);
    for (std::size_t k = 0; k < count(); ++k) {
        Gaussian& g = scene[first_ + k];
        if (factor == 1.0) {
            g.position = base_position_[k];
            g.log_scale = base_log_scale_[k];
        } else {
            g.position = center_ + factor * (base_position_[k] - center_);
            g.log_scale = base_log_scale_[k].array() + log_f;
        }
    }
}

}  // namespace gsedit
