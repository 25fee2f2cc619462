#pragma once

#include "gsedit/math.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoefficients = (kMaxShDegree + 1) * (kMaxShDegree + 1);

/// Zeroth-order SH basis constant.
inline constexpr double kShC0 = 0.28209479177387814;

constexpr int sh_coefficient_count(int degree) { return (degree + 1) * (degree + 1); }

/// SH DC coefficient that evaluates to `rgb` (per channel).
inline double sh_dc_from_color(double rgb) { return (rgb - 0.5) / kShC0; }

/// One anisotropic 3D Gaussian in storage space.
///
///   - log_scale: axis lengths are exp(log_scale)
///   - rotation:  (w, x, y, z) quaternion, normalized before use
///   - opacity:   logit; sigmoid() gives the blending opacity
///   - sh:        coefficient-major, RGB interleaved: sh[3 * k + channel]
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    double opacity = 0.0;
    std::array<double, 3 * kMaxShCoefficients> sh{};

    Vec3 scale() const { return log_scale.array().exp(); }
    double activated_opacity() const { return sigmoid(opacity); }
    Vec4 unit_rotation() const { return rotation / rotation.norm(); }

    bool operator==(const Gaussian&) const = default;
};

/// The optimizable property groups of a Gaussian.
enum class Property { Position, Scale, Rotation, Opacity, Color };
inline constexpr std::array<Property, 5> kAllProperties = {
    Property::Position, Property::Scale, Property::Rotation, Property::Opacity, Property::Color};

const char* property_name(Property p);

/// Visits every scalar parameter of `g` as f(Property, double&). Only the SH
/// coefficients in use for `sh_degree` are visited.
template <class G, class F>
void for_each_parameter(G& g, int sh_degree, F&& f) {
    for (int i = 0; i < 3; ++i) f(Property::Position, g.position[i]);
    for (int i = 0; i < 3; ++i) f(Property::Scale, g.log_scale[i]);
    for (int i = 0; i < 4; ++i) f(Property::Rotation, g.rotation[i]);
    f(Property::Opacity, g.opacity);
    const int n = 3 * sh_coefficient_count(sh_degree);
    for (int i = 0; i < n; ++i) f(Property::Color, g.sh[i]);
}

/// Visits parameter pairs of two Gaussians in lockstep as f(Property, a&, b&).
template <class A, class B, class F>
void for_each_parameter_pair(A& a, B& b, int sh_degree, F&& f) {
    for (int i = 0; i < 3; ++i) f(Property::Position, a.position[i], b.position[i]);
    for (int i = 0; i < 3; ++i) f(Property::Scale, a.log_scale[i], b.log_scale[i]);
    for (int i = 0; i < 4; ++i) f(Property::Rotation, a.rotation[i], b.rotation[i]);
    f(Property::Opacity, a.opacity, b.opacity);
    const int n = 3 * sh_coefficient_count(sh_degree);
    for (int i = 0; i < n; ++i) f(Property::Color, a.sh[i], b.sh[i]);
}

/// R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance(const Gaussian& g);

using LabelId = int;
/// Bit j set means the Gaussian carries label j.
using LabelBits = std::uint64_t;
inline constexpr int kMaxLabels = 64;

inline constexpr LabelBits label_bit(LabelId id) { return LabelBits{1} << id; }

/// Ordered Gaussian collection plus the per-row semantic labels, generation
/// tags and optional anchor snapshot. Every per-row array always has exactly
/// size() rows; the only ways to change the row count keep them in lockstep.
class GaussianScene {
public:
    explicit GaussianScene(int sh_degree = kMaxShDegree);

    std::size_t size() const { return gaussians_.size(); }
    bool empty() const { return gaussians_.empty(); }
    int sh_degree() const { return sh_degree_; }
    /// Changes the SH degree; new coefficients are zero, dropped ones are cleared.
    void set_sh_degree(int degree);

    const std::vector<Gaussian>& gaussians() const { return gaussians_; }
    std::span<Gaussian> mutable_gaussians() { return gaussians_; }
    const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }
    Gaussian& operator[](std::size_t i) { return gaussians_[i]; }

    const std::vector<LabelBits>& labels() const { return labels_; }
    std::span<LabelBits> mutable_labels() { return labels_; }
    bool has_label(std::size_t row, LabelId id) const { return (labels_[row] & label_bit(id)) != 0; }

    const std::vector<int>& generations() const { return generations_; }
    std::span<int> mutable_generations() { return generations_; }
    int max_generation() const;

    bool has_anchors() const { return anchors_.has_value(); }
    const std::vector<Gaussian>& anchors() const;
    void set_anchors(std::vector<Gaussian> anchors);
    void clear_anchors() { anchors_.reset(); }

    const std::map<LabelId, std::string>& label_names() const { return label_names_; }
    void set_label_name(LabelId id, std::string name);
    /// Drops the label entry and clears its bit on every row.
    void erase_label(LabelId id);
    /// Smallest label id not in use.
    LabelId next_label_id() const;
    std::size_t label_member_count(LabelId id) const;
    std::vector<std::size_t> label_members(LabelId id) const;

    /// Appends one row. When anchors are set, the new row's anchor is `anchor`
    /// or, if absent, a copy of `g`.
    void push_back(const Gaussian& g, LabelBits labels = 0, int generation = 0,
                   const std::optional<Gaussian>& anchor = std::nullopt);

    /// Keeps the listed rows, in the listed order, across every per-row array.
    void select_rows(std::span<const std::size_t> rows);
    /// Removes rows where remove[i] is true; returns the surviving original indices.
    std::vector<std::size_t> remove_rows(const std::vector<bool>& remove);

    /// Throws ConsistencyError if any per-row array is out of step.
    void check_invariants() const;

    bool operator==(const GaussianScene&) const = default;

private:
    int sh_degree_;
    std::vector<Gaussian> gaussians_;
    std::vector<LabelBits> labels_;
    std::vector<int> generations_;
    std::optional<std::vector<Gaussian>> anchors_;
    std::map<LabelId, std::string> label_names_;
};

/// Row-wise union. Labels of `b` are shifted past the largest label id of `a`
/// and generations of `b` are offset by max_generation(a) + 1. The result has
/// anchors when either input has; missing anchor rows are the current values.
/// The SH degree is the larger of the two.
GaussianScene concatenate(const GaussianScene& a, const GaussianScene& b);

}  // namespace gsedit
