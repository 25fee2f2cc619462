#pragma once

#include "gsedit/math.hpp"
#include "gsedit/scene.hpp"

#include <array>

namespace gsedit {

/// Real SH basis up to degree 3 at a unit direction, with the gradient of
/// each basis polynomial with respect to the (unnormalized) direction
/// components. Entries past the requested degree are zero.
struct ShBasis {
    std::array<double, kMaxShCoefficients> value{};
    std::array<Vec3, kMaxShCoefficients> gradient{};
};

ShBasis sh_basis(int degree, const Vec3& dir);

/// View-dependent color, before clamping: sum_k sh_k Y_k(dir) + 0.5.
Vec3 sh_color_unclamped(const Gaussian& g, int degree, const ShBasis& basis);

}  // namespace gsedit
