#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

namespace gsedit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix of a (w, x, y, z) quaternion. The input is normalized first.
inline Mat3 rotation_from_quaternion(const Vec4& q_raw) {
    const Vec4 q = q_raw / q_raw.norm();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// (w, x, y, z) quaternion of a rotation matrix.
inline Vec4 quaternion_from_rotation(const Mat3& r) {
    const Eigen::Quaterniond q(r);
    return {q.w(), q.x(), q.y(), q.z()};
}

/// Hamilton product a * b of (w, x, y, z) quaternions.
inline Vec4 quaternion_multiply(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

}  // namespace gsedit
