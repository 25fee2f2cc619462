#include "gsedit/tracing.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/json_io.hpp"
#include "gsedit/parallel.hpp"


namespace gsedit {

namespace {

// Fixed partition so the reduction order does not depend on the thread count.
constexpr int kBands = 8;

}  // namespace

void SemanticMask::validate() const {
    camera.validate();
    for (const auto& [label, m] : masks) {
        if (label < 0 || label >= kMaxLabels)
            throw ValidationError("camera '" + camera_id + "': label id " + std::to_string(label) + " out of range");
        if (m.width != camera.width || m.height != camera.height)
            throw ValidationError("camera '" + camera_id + "': mask for label " + std::to_string(label) + " is " +
                                  std::to_string(m.width) + "x" + std::to_string(m.height) + ", view is " +
                                  std::to_string(camera.width) + "x" + std::to_string(camera.height));
    }
}

TraceAverage trace_average_from_string(const std::string& name) {
    if (name == "coverage") return TraceAverage::Coverage;
    if (name == "pixels") return TraceAverage::Pixels;
    throw ValidationError("unknown trace average '" + name + "'");
}

const char* to_string(TraceAverage mode) { return mode == TraceAverage::Coverage ? "coverage" : "pixels"; }

std::vector<LabelId> TraceAccumulator::labels() const {
    std::vector<LabelId> out;
    for (const auto& [label, e] : entries_) out.push_back(label);
    return out;
}

const TraceAccumulator::Entry& TraceAccumulator::entry(LabelId label) const {
    auto it = entries_.find(label);
    if (it == entries_.end()) throw ValidationError("no trace data for label " + std::to_string(label));
    return it->second;
}

TraceAccumulator::Entry& TraceAccumulator::entry_for(LabelId label) {
    auto [it, inserted] = entries_.try_emplace(label);
    if (inserted) {
        it->second.weight.assign(size_, 0.0);
        it->second.counter.assign(size_, 0.0);
        it->second.coverage.assign(size_, 0.0);
    }
    return it->second;
}

double TraceAccumulator::average(std::size_t i, LabelId label, TraceAverage mode) const {
    const Entry& e = entry(label);
    const double denom = mode == TraceAverage::Coverage ? e.coverage[i] : e.counter[i];
    return denom > 0.0 ? e.weight[i] / denom : 0.0;
}

void accumulate(TraceAccumulator& acc, const GaussianScene& scene, const SemanticMask& mask,
                const RasterConfig& raster) {
    if (scene.size() != acc.size())
        throw ValidationError("trace accumulator has " + std::to_string(acc.size()) + " rows, scene has " +
                              std::to_string(scene.size()));
    mask.validate();
    RenderOptions opt;
    opt.raster = raster;
    accumulate(acc, render(scene, mask.camera, opt), mask);
}

void accumulate(TraceAccumulator& acc, const RenderOutput& forward, const SemanticMask& mask) {
    mask.validate();
    if (!forward.has_contributions()) throw ValidationError("tracing needs recorded contributions");
    if (forward.width() != mask.camera.width || forward.height() != mask.camera.height)
        throw ValidationError("camera '" + mask.camera_id + "': render size does not match the view");
    const int w = forward.width(), h = forward.height();
    const std::size_t n = acc.size();

    for (const auto& [label, m] : mask.masks) {
        std::vector<TraceAccumulator::Entry> partial(kBands);
        parallel_for(kBands, [&](std::size_t band) {
            auto& e = partial[band];
            e.weight.assign(n, 0.0);
            e.counter.assign(n, 0.0);
            e.coverage.assign(n, 0.0);
            const int y0 = static_cast<int>(band * h / kBands), y1 = static_cast<int>((band + 1) * h / kBands);
            for (int y = y0; y < y1; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double inside = m.at(x, y) ? 1.0 : 0.0;
                    for (const Contribution& c : forward.contributions_at(x, y)) {
                        if (c.gaussian >= n) throw ValidationError("render has more Gaussians than the accumulator");
                        const double ot = c.alpha * c.transmittance;
                        if (!(ot > 0.0)) continue;
                        e.weight[c.gaussian] += ot * inside;
                        e.coverage[c.gaussian] += ot;
                        e.counter[c.gaussian] += 1.0;
                    }
                }
            }
        });
        auto& total = acc.entry_for(label);
        for (const auto& e : partial) {
            for (std::size_t i = 0; i < n; ++i) {
                total.weight[i] += e.weight[i];
                total.counter[i] += e.counter[i];
                total.coverage[i] += e.coverage[i];
            }
        }
    }
}

void assign_labels(const TraceAccumulator& acc, GaussianScene& scene, double threshold, TraceAverage mode) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("trace threshold must be in (0, 1)");
    if (scene.size() != acc.size()) throw ValidationError("trace accumulator does not match the scene");
    auto labels = scene.mutable_labels();
    for (LabelId label : acc.labels()) {
        const auto& e = acc.entry(label);
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (e.counter[i] <= 0.0) continue;
            if (acc.average(i, label, mode) > threshold)
                labels[i] |= label_bit(label);
            else
                labels[i] &= ~label_bit(label);
        }
    }
}

void inherit_labels(GaussianScene& scene, std::size_t parent, std::span<const std::size_t> children, int round) {
    auto labels = scene.mutable_labels();
    auto gens = scene.mutable_generations();
    for (std::size_t c : children) {
        labels[c] = labels[parent];
        gens[c] = round;
    }
}

Vec3 backproject_point(const Vec2& pixel, const Camera& camera, const Image& depth, const Image& alpha) {
    const int x = static_cast<int>(std::floor(pixel.x())), y = static_cast<int>(std::floor(pixel.y()));
    if (x < 0 || y < 0 || x >= depth.width || y >= depth.height)
        throw ValidationError("prompt pixel outside the image");
    if (!(alpha.at(x, y) > 0.5)) throw ValidationError("prompt pixel is on empty background");
    const double z = depth.at(x, y);
    if (!(z > 0.0)) throw ValidationError("prompt pixel has no depth");
    return camera.backproject(pixel, z);
}

std::vector<PromptPoint> reproject_points(std::span<const Vec3> points, const Camera& camera) {
    std::vector<PromptPoint> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto p = camera.project(points[i]);
        if (!p) continue;
        if (p->x() < 0.0 || p->y() < 0.0 || p->x() >= camera.width || p->y() >= camera.height) continue;
        out.push_back({i, *p});
    }
    return out;
}

GaussianScene remove_label(const GaussianScene& scene, LabelId label) {
    if (label < 0 || label >= kMaxLabels) throw ValidationError("label id " + std::to_string(label) + " out of range");
    const bool named = scene.label_names().count(label) != 0;
    const std::size_t members = scene.label_member_count(label);
    if (!named && members == 0) throw ValidationError("unknown label " + std::to_string(label));
    GaussianScene out = scene;
    std::vector<bool> drop(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) drop[i] = scene.has_label(i, label);
    out.remove_rows(drop);
    out.erase_label(label);
    return out;
}

std::vector<SemanticMask> load_mask_manifest(const std::filesystem::path& manifest,
                                             const std::vector<NamedCamera>& cameras,
                                             std::map<LabelId, std::string>* names) {
    const auto doc = load_json_file(manifest);
    const auto& list = doc.is_array() ? doc : doc.value("masks", nlohmann::json::array());
    if (!list.is_array()) throw FormatError(manifest.string() + ": \"masks\" must be a list");
    std::map<std::string, SemanticMask> by_camera;
    for (const auto& item : list) {
        if (!item.contains("file") || !item.contains("camera") || !item.contains("label"))
            throw FormatError(manifest.string() + ": mask entries need file, camera and label");
        const std::string id = item.at("camera").get<std::string>();
        const LabelId label = item.at("label").get<int>();
        const NamedCamera& cam = find_camera(cameras, id);
        std::filesystem::path file = item.at("file").get<std::string>();
        if (file.is_relative()) file = manifest.parent_path() / file;
        auto& sm = by_camera[id];
        sm.camera_id = id;
        sm.camera = cam.camera;
        BinaryMask m = read_mask_png(file);
        if (auto it = sm.masks.find(label); it != sm.masks.end()) {
            if (it->second.width != m.width || it->second.height != m.height)
                throw ValidationError("camera '" + id + "': masks for label " + std::to_string(label) +
                                      " differ in size");
            for (std::size_t k = 0; k < m.data.size(); ++k) it->second.data[k] |= m.data[k];
        } else {
            sm.masks.emplace(label, std::move(m));
        }
        if (names && item.contains("name")) (*names)[label] = item.at("name").get<std::string>();
    }
    std::vector<SemanticMask> out;
    for (auto& [id, sm] : by_camera) {
        sm.validate();
        out.push_back(std::move(sm));
    }
    return out;
}

nlohmann::json prompts_to_json(const std::vector<std::pair<std::string, PromptPoint>>& prompts) {
    auto out = nlohmann::json::array();
    for (const auto& [view, p] : prompts)
        out.push_back({{"view_id", view}, {"pixel", {p.pixel.x(), p.pixel.y()}}});
    return out;
}

}  // namespace gsedit
