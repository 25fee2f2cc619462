#include "gsedit/scene.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <bit>

namespace gsedit {

const char* property_name(Property p) {
    switch (p) {
        case Property::Position: return "x";
        case Property::Scale: return "s";
        case Property::Rotation: return "q";
        case Property::Opacity: return "alpha";
        case Property::Color: return "c";
    }
    return "?";
}

Mat3 covariance(const Gaussian& g) {
    const Mat3 r = rotation_from_quaternion(g.rotation);
    const Mat3 m = r * g.scale().asDiagonal();
    return m * m.transpose();
}

GaussianScene::GaussianScene(int sh_degree) : sh_degree_(sh_degree) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree)
        throw ValidationError("SH degree must be in [0, 3], got " + std::to_string(sh_degree));
}

void GaussianScene::set_sh_degree(int degree) {
    if (degree < 0 || degree > kMaxShDegree)
        throw ValidationError("SH degree must be in [0, 3], got " + std::to_string(degree));
    const int keep = 3 * sh_coefficient_count(degree);
    auto clear_tail = [keep](Gaussian& g) { std::fill(g.sh.begin() + keep, g.sh.end(), 0.0); };
    std::ranges::for_each(gaussians_, clear_tail);
    if (anchors_) std::ranges::for_each(*anchors_, clear_tail);
    sh_degree_ = degree;
}

int GaussianScene::max_generation() const {
    if (generations_.empty()) return -1;
    return *std::ranges::max_element(generations_);
}

const std::vector<Gaussian>& GaussianScene::anchors() const {
    if (!anchors_) throw ValidationError("scene anchors are not set");
    return *anchors_;
}

void GaussianScene::set_anchors(std::vector<Gaussian> anchors) {
    if (anchors.size() != gaussians_.size())
        throw ConsistencyError("anchor rows (" + std::to_string(anchors.size()) +
                               ") do not match Gaussian rows (" + std::to_string(size()) + ")");
    anchors_ = std::move(anchors);
}

void GaussianScene::set_label_name(LabelId id, std::string name) {
    if (id < 0 || id >= kMaxLabels)
        throw ValidationError("label id " + std::to_string(id) + " outside [0, 63]");
    label_names_[id] = std::move(name);
}

void GaussianScene::erase_label(LabelId id) {
    if (id < 0 || id >= kMaxLabels) return;
    label_names_.erase(id);
    for (auto& bits : labels_) bits &= ~label_bit(id);
}

LabelId GaussianScene::next_label_id() const {
    LabelBits used = 0;
    for (const auto& [id, name] : label_names_) used |= label_bit(id);
    for (LabelBits bits : labels_) used |= bits;
    if (used == ~LabelBits{0}) throw ValidationError("all 64 label ids are in use");
    return std::countr_one(used);
}

std::size_t GaussianScene::label_member_count(LabelId id) const {
    return static_cast<std::size_t>(
        std::ranges::count_if(labels_, [id](LabelBits b) { return (b & label_bit(id)) != 0; }));
}

std::vector<std::size_t> GaussianScene::label_members(LabelId id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] & label_bit(id)) out.push_back(i);
    return out;
}

void GaussianScene::push_back(const Gaussian& g, LabelBits labels, int generation,
                              const std::optional<Gaussian>& anchor) {
    if (generation < 0) throw ValidationError("generation must be non-negative");
    gaussians_.push_back(g);
    labels_.push_back(labels);
    generations_.push_back(generation);
    if (anchors_) anchors_->push_back(anchor.value_or(g));
}

void GaussianScene::select_rows(std::span<const std::size_t> rows) {
    auto gather = [&rows](auto& column) {
        std::remove_reference_t<decltype(column)> out;
        out.reserve(rows.size());
        for (std::size_t r : rows) out.push_back(column.at(r));
        column = std::move(out);
    };
    gather(gaussians_);
    gather(labels_);
    gather(generations_);
    if (anchors_) gather(*anchors_);
}

std::vector<std::size_t> GaussianScene::remove_rows(const std::vector<bool>& remove) {
    if (remove.size() != size())
        throw ConsistencyError("removal mask has " + std::to_string(remove.size()) +
                               " rows, scene has " + std::to_string(size()));
    std::vector<std::size_t> keep;
    keep.reserve(size());
    for (std::size_t i = 0; i < remove.size(); ++i)
        if (!remove[i]) keep.push_back(i);
    select_rows(keep);
    return keep;
}

void GaussianScene::check_invariants() const {
    const std::size_t n = gaussians_.size();
    if (labels_.size() != n || generations_.size() != n || (anchors_ && anchors_->size() != n))
        throw ConsistencyError("per-Gaussian arrays are out of step");
    for (int g : generations_)
        if (g < 0) throw ConsistencyError("negative generation tag");
}

GaussianScene concatenate(const GaussianScene& a, const GaussianScene& b) {
    GaussianScene out(std::max(a.sh_degree(), b.sh_degree()));

    int max_label_a = -1;
    for (const auto& [id, name] : a.label_names()) max_label_a = std::max(max_label_a, id);
    for (LabelBits bits : a.labels())
        if (bits) max_label_a = std::max(max_label_a, 63 - std::countl_zero(bits));
    const int label_shift = max_label_a + 1;

    int max_label_b = -1;
    for (const auto& [id, name] : b.label_names()) max_label_b = std::max(max_label_b, id);
    for (LabelBits bits : b.labels())
        if (bits) max_label_b = std::max(max_label_b, 63 - std::countl_zero(bits));
    if (max_label_b >= 0 && max_label_b + label_shift >= kMaxLabels)
        throw ValidationError("concatenation would need more than 64 label ids");

    const int generation_offset = a.max_generation() + 1;
    const bool with_anchors = a.has_anchors() || b.has_anchors();
    if (with_anchors) out.set_anchors({});

    for (std::size_t i = 0; i < a.size(); ++i)
        out.push_back(a[i], a.labels()[i], a.generations()[i],
                      a.has_anchors() ? std::optional<Gaussian>(a.anchors()[i]) : std::nullopt);
    for (std::size_t i = 0; i < b.size(); ++i)
        out.push_back(b[i], b.labels()[i] ? b.labels()[i] << label_shift : 0, b.generations()[i] + generation_offset,
                      b.has_anchors() ? std::optional<Gaussian>(b.anchors()[i]) : std::nullopt);

    for (const auto& [id, name] : a.label_names()) out.set_label_name(id, name);
    for (const auto& [id, name] : b.label_names()) out.set_label_name(id + label_shift, name);
    return out;
}

}  // namespace gsedit
