#include "gsedit/errors.hpp"
#include "gsedit/parallel.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/sh.hpp"

#include <cmath>

namespace gsedit {

namespace {

/// Screen-space gradient pieces of one contribution, later summed per Gaussian.
struct ScreenGrad {
    Vec2 mean2d = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

/// dR/dq for the normalized (w, x, y, z) quaternion, contracted with dL/dR.
Vec4 rotation_matrix_grad(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 out;
    out[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                    w * g(2, 1) - 2.0 * x * g(2, 2));
    out[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                    z * g(2, 1) - 2.0 * y * g(2, 2));
    out[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                    y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return out;
}

}  // namespace

SceneGradients render_backward(const GaussianScene& scene, const Camera& camera, const RenderOutput& forward,
                               const Image& dl_dcolor, const RenderOptions& options) {
    if (!forward.has_contributions())
        throw ValidationError("render_backward needs a forward pass with recorded contributions");
    if (dl_dcolor.width != camera.width || dl_dcolor.height != camera.height || dl_dcolor.channels != 3)
        throw ValidationError("dL/dColor must be a 3-channel image at camera resolution");
    if (forward.width() != camera.width || forward.height() != camera.height)
        throw ValidationError("forward pass resolution differs from the camera");

    const RasterConfig& cfg = options.raster;
    const std::vector<ProjectedGaussian> projected = project(scene, camera, cfg, options.labels_only);
    const int width = camera.width, height = camera.height;

    // Per-contribution partials; each pixel writes only its own slots.
    std::vector<ScreenGrad> partial(forward.contributions.size());
    const int rows_per_band = 8;
    const std::size_t bands = static_cast<std::size_t>((height + rows_per_band - 1) / rows_per_band);
    parallel_for(bands, [&](std::size_t band) {
        const int y_end = std::min(height, static_cast<int>(band + 1) * rows_per_band);
        for (int y = static_cast<int>(band) * rows_per_band; y < y_end; ++y) {
            for (int x = 0; x < width; ++x) {
                const Vec3 dl_dpixel(dl_dcolor.at(x, y, 0), dl_dcolor.at(x, y, 1), dl_dcolor.at(x, y, 2));
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                const std::size_t begin = forward.pixel_offset[p];
                const std::size_t count = forward.pixel_count[p];
                const Vec2 pixel(x + 0.5, y + 0.5);
                Vec3 behind = Vec3::Zero();  // color blended behind the current Gaussian
                for (std::size_t k = count; k-- > 0;) {
                    const Contribution& c = forward.contributions[begin + k];
                    const ProjectedGaussian& pg = projected[c.gaussian];
                    ScreenGrad& out = partial[begin + k];
                    out.color = c.alpha * c.transmittance * dl_dpixel;
                    const double dl_dalpha = c.transmittance * dl_dpixel.dot(pg.color - behind);
                    behind = c.alpha * pg.color + (1.0 - c.alpha) * behind;

                    const Vec2 d = pixel - pg.mean2d;
                    const double falloff = std::exp(-0.5 * d.dot(pg.conic * d));
                    if (pg.opacity * falloff > cfg.alpha_clip) continue;  // clipped: flat in every input
                    out.opacity = dl_dalpha * falloff;
                    out.mean2d = dl_dalpha * c.alpha * (pg.conic * d);
                    out.conic = (-0.5 * dl_dalpha * c.alpha) * (d * d.transpose());
                }
            }
        }
    });

    // Deterministic reduction in contribution order.
    const std::size_t n = scene.size();
    std::vector<ScreenGrad> total(n);
    SceneGradients grads;
    grads.params.assign(n, Gaussian{});
    grads.mean2d.assign(n, Vec2::Zero());
    grads.visible.assign(n, 0);
    for (auto& g : grads.params) {
        g.rotation.setZero();
        g.sh.fill(0.0);
    }
    for (std::size_t k = 0; k < partial.size(); ++k) {
        ScreenGrad& t = total[forward.contributions[k].gaussian];
        const ScreenGrad& s = partial[k];
        t.mean2d += s.mean2d;
        t.conic += s.conic;
        t.opacity += s.opacity;
        t.color += s.color;
    }

    const Vec3 center = camera.center();
    const int degree = scene.sh_degree();
    const int coeffs = sh_coefficient_count(degree);
    const double fx = camera.fx(), fy = camera.fy(), sk = camera.skew();
    parallel_for(n, [&](std::size_t i) {
        const ProjectedGaussian& pg = projected[i];
        if (!pg.visible) return;
        grads.visible[i] = 1;
        const ScreenGrad& t = total[i];
        const Gaussian& g = scene[i];
        Gaussian& out = grads.params[i];
        grads.mean2d[i] = t.mean2d;

        // Opacity (logit storage).
        out.opacity = t.opacity * pg.opacity * (1.0 - pg.opacity);

        // Color: SH coefficients and the view direction.
        Vec3 dl_draw = t.color;
        for (int c = 0; c < 3; ++c)
            if (pg.color_raw[c] < 0.0) dl_draw[c] = 0.0;
        const Vec3 offset = g.position - center;
        const double dist = offset.norm();
        const Vec3 dir = offset / dist;
        const ShBasis basis = sh_basis(degree, dir);
        Vec3 dl_ddir = Vec3::Zero();
        for (int k = 0; k < coeffs; ++k) {
            for (int c = 0; c < 3; ++c) {
                out.sh[3 * k + c] = basis.value[k] * dl_draw[c];
                dl_ddir += (g.sh[3 * k + c] * dl_draw[c]) * basis.gradient[k];
            }
        }
        Vec3 dl_dpos = (dl_ddir - dir * dir.dot(dl_ddir)) / dist;

        // Conic -> screen covariance: C^-1 varies as -C^-1 dC C^-1.
        const Mat2 dl_dcov2d = -pg.conic * t.conic * pg.conic;

        const Vec3& p = pg.camera_point;
        const double iz = 1.0 / p.z(), iz2 = iz * iz, iz3 = iz2 * iz;
        Eigen::Matrix<double, 2, 3> jac;
        jac << fx * iz, sk * iz, -(fx * p.x() + sk * p.y()) * iz2, 0.0, fy * iz, -fy * p.y() * iz2;
        const Eigen::Matrix<double, 2, 3> tmat = jac * camera.R;
        const Mat3 sigma = covariance(g);
        const Mat3 dl_dsigma = tmat.transpose() * dl_dcov2d * tmat;
        const Eigen::Matrix<double, 2, 3> dl_dt = 2.0 * dl_dcov2d * tmat * sigma;
        const Eigen::Matrix<double, 2, 3> dl_dj = dl_dt * camera.R.transpose();

        // Camera-space point through the mean and the Jacobian.
        const double u_num = fx * p.x() + sk * p.y();
        Vec3 dl_dp;
        dl_dp.x() = t.mean2d.x() * fx * iz - dl_dj(0, 2) * fx * iz2;
        dl_dp.y() = t.mean2d.x() * sk * iz + t.mean2d.y() * fy * iz - dl_dj(0, 2) * sk * iz2 -
                    dl_dj(1, 2) * fy * iz2;
        dl_dp.z() = -t.mean2d.x() * u_num * iz2 - t.mean2d.y() * fy * p.y() * iz2 - dl_dj(0, 0) * fx * iz2 -
                    dl_dj(0, 1) * sk * iz2 + dl_dj(0, 2) * 2.0 * u_num * iz3 - dl_dj(1, 1) * fy * iz2 +
                    dl_dj(1, 2) * 2.0 * fy * p.y() * iz3;
        dl_dpos += camera.R.transpose() * dl_dp;
        out.position = dl_dpos;

        // Sigma = M M^T with M = R(q) diag(exp(log_scale)).
        const Vec4 qn = g.unit_rotation();
        const Mat3 rot = rotation_from_quaternion(g.rotation);
        const Vec3 scale = g.scale();
        const Mat3 m = rot * scale.asDiagonal();
        const Mat3 dl_dm = 2.0 * dl_dsigma * m;
        for (int k = 0; k < 3; ++k) out.log_scale[k] = dl_dm.col(k).dot(rot.col(k)) * scale[k];
        const Mat3 dl_drot = dl_dm * scale.asDiagonal();
        const Vec4 dl_dqn = rotation_matrix_grad(qn, dl_drot);
        out.rotation = (dl_dqn - qn * qn.dot(dl_dqn)) / g.rotation.norm();
    });
    return grads;
}

}  // namespace gsedit
