#include "gsedit/camera.hpp"

#include "gsedit/errors.hpp"

#include <cmath>

namespace gsedit {

void Camera::validate() const {
    if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0))
        throw ValidationError("camera focal lengths must be positive");
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0)
        throw ValidationError("camera intrinsics must be upper triangular with K[2][2] = 1");
    if (width <= 0 || height <= 0) throw ValidationError("camera dimensions must be positive");
    if (!(near_plane > 0.0) || !(far_plane > near_plane))
        throw ValidationError("camera near/far planes must satisfy 0 < near < far");
    if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw ValidationError("camera rotation is not orthonormal");
    if (R.determinant() < 0.0) throw ValidationError("camera rotation is a reflection");
}

std::optional<Vec2> Camera::project(const Vec3& world) const {
    const Vec3 p = to_camera(world);
    if (p.z() <= near_plane) return std::nullopt;
    return project_camera_point(p);
}

Vec3 Camera::backproject(const Vec2& pixel, double depth) const {
    const double y = (pixel.y() - cy()) / fy();
    const double x = (pixel.x() - cx() - skew() * y) / fx();
    return to_world(Vec3(x * depth, y * depth, depth));
}

Camera Camera::resized(int new_width, int new_height) const {
    Camera out = *this;
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    out.K(0, 0) *= sx;
    out.K(0, 1) *= sx;
    out.K(0, 2) *= sx;
    out.K(1, 1) *= sy;
    out.K(1, 2) *= sy;
    out.width = new_width;
    out.height = new_height;
    return out;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                       int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) right = forward.unitOrthogonal();
    right.normalize();
    const Vec3 down = forward.cross(right);

    Camera cam;
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = forward.transpose();
    cam.t = -cam.R * eye;
    cam.K << focal, 0.0, width / 2.0, 0.0, focal, height / 2.0, 0.0, 0.0, 1.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

}  // namespace gsedit
