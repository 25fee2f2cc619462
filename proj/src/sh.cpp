#include "gsedit/sh.hpp"

namespace gsedit {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

}  // namespace

ShBasis sh_basis(int degree, const Vec3& dir) {
    ShBasis b;
    for (auto& g : b.gradient) g.setZero();
    b.value[0] = kShC0;
    if (degree < 1) return b;

    const double x = dir.x(), y = dir.y(), z = dir.z();
    b.value[1] = -kC1 * y;
    b.gradient[1] = {0.0, -kC1, 0.0};
    b.value[2] = kC1 * z;
    b.gradient[2] = {0.0, 0.0, kC1};
    b.value[3] = -kC1 * x;
    b.gradient[3] = {-kC1, 0.0, 0.0};
    if (degree < 2) return b;

    const double xx = x * x, yy = y * y, zz = z * z;
    b.value[4] = kC2[0] * x * y;
    b.gradient[4] = {kC2[0] * y, kC2[0] * x, 0.0};
    b.value[5] = kC2[1] * y * z;
    b.gradient[5] = {0.0, kC2[1] * z, kC2[1] * y};
    b.value[6] = kC2[2] * (2.0 * zz - xx - yy);
    b.gradient[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
    b.value[7] = kC2[3] * x * z;
    b.gradient[7] = {kC2[3] * z, 0.0, kC2[3] * x};
    b.value[8] = kC2[4] * (xx - yy);
    b.gradient[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    if (degree < 3) return b;

    b.value[9] = kC3[0] * y * (3.0 * xx - yy);
    b.gradient[9] = {6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
    b.value[10] = kC3[1] * x * y * z;
    b.gradient[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
    b.value[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    b.gradient[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
    b.value[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b.gradient[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    b.value[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    b.gradient[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
    b.value[14] = kC3[5] * z * (xx - yy);
    b.gradient[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
    b.value[15] = kC3[6] * x * (xx - 3.0 * yy);
    b.gradient[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
    return b;
}

Vec3 sh_color_unclamped(const Gaussian& g, int degree, const ShBasis& basis) {
    Vec3 color = Vec3::Constant(0.5);
    const int n = sh_coefficient_count(degree);
    for (int k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) color[c] += basis.value[k] * g.sh[3 * k + c];
    return color;
}

}  // namespace gsedit
