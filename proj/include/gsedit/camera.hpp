#pragma once

#include "gsedit/math.hpp"

#include <optional>
#include <string>

namespace gsedit {

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
/// The intrinsic matrix must be upper triangular with K(2,2) = 1, i.e.
/// u = (fx X + skew Y) / Z + cx and v = fy Y / Z + cy in camera space
/// (x right, y down, z forward).
struct Camera {
    Mat3 K = Mat3::Identity();
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0;
    int height = 0;
    double near_plane = 0.01;
    double far_plane = 1000.0;

    double fx() const { return K(0, 0); }
    double fy() const { return K(1, 1); }
    double skew() const { return K(0, 1); }
    double cx() const { return K(0, 2); }
    double cy() const { return K(1, 2); }

    /// Throws ValidationError when the intrinsics or rotation are invalid.
    void validate() const;

    Vec3 center() const { return -R.transpose() * t; }
    Vec3 to_camera(const Vec3& world) const { return R * world + t; }
    Vec3 to_world(const Vec3& camera) const { return R.transpose() * (camera - t); }

    /// Pixel coordinates of a camera-space point (no depth test).
    Vec2 project_camera_point(const Vec3& p) const {
        return {(fx() * p.x() + skew() * p.y()) / p.z() + cx(), fy() * p.y() / p.z() + cy()};
    }

    /// Pixel coordinates of a world point, or nullopt when it is not in front
    /// of the near plane.
    std::optional<Vec2> project(const Vec3& world) const;

    /// World point at camera-space depth `depth` along the ray through `pixel`.
    Vec3 backproject(const Vec2& pixel, double depth) const;

    /// Same pose and field of view at a different resolution.
    Camera resized(int new_width, int new_height) const;

    /// Camera at `eye` looking at `target`. `up` is the world up direction;
    /// the image y axis points away from it.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                          int width, int height);
};

/// A camera together with the identifier used by manifests and guidance.
struct NamedCamera {
    std::string id;
    Camera camera;
};

}  // namespace gsedit
