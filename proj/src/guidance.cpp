#include "gsedit/guidance.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/json_io.hpp"

#include <cmath>
#include <random>

namespace gsedit {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void validate_request(const GuidanceRequest& request) {
    const Image& r = request.rendering;
    if (r.channels != 3 || r.data.size() != r.pixel_count() * 3)
        throw ValidationError("guidance rendering must be a 3-channel image");
    for (double v : r.data)
        if (!std::isfinite(v)) throw ValidationError("guidance rendering has non-finite values");
    if (request.mask && (request.mask->width != r.width || request.mask->height != r.height))
        throw ValidationError("guidance mask size differs from the rendering");
}

void validate_response(const GuidanceRequest& request, const GuidanceResponse& response) {
    const Image& r = request.rendering;
    const Image& g = response.grad;
    if (g.width != r.width || g.height != r.height || g.channels != r.channels || g.data.size() != r.data.size())
        throw ValidationError("guidance gradient is " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                              "x" + std::to_string(g.channels) + ", expected " + std::to_string(r.width) + "x" +
                              std::to_string(r.height) + "x" + std::to_string(r.channels));
    for (double v : g.data)
        if (!std::isfinite(v)) throw ValidationError("guidance gradient has non-finite values");
    if (!std::isfinite(response.loss)) throw ValidationError("guidance loss is not finite");
}

GuidanceResponse squared_error_guidance(const Image& rendering, const Image& target, const BinaryMask* mask) {
    if (target.width != rendering.width || target.height != rendering.height || target.channels != rendering.channels)
        throw ValidationError("guidance target size differs from the rendering");
    GuidanceResponse out;
    out.grad = Image(rendering.width, rendering.height, rendering.channels);
    const int ch = rendering.channels;
    for (std::size_t p = 0; p < rendering.pixel_count(); ++p) {
        if (mask && !mask->data[p]) continue;
        for (int c = 0; c < ch; ++c) {
            const std::size_t i = p * ch + c;
            const double d = rendering.data[i] - target.data[i];
            out.loss += d * d;
            out.grad.data[i] = 2.0 * d;
        }
    }
    return out;
}

TargetImageGuidance::TargetImageGuidance(std::map<std::string, Image> targets) : targets_(std::move(targets)) {
    for (const auto& [id, t] : targets_)
        if (t.channels != 3) throw ValidationError("target image for camera '" + id + "' must be RGB");
}

const Image& TargetImageGuidance::target(const std::string& camera_id) const {
    auto it = targets_.find(camera_id);
    if (it == targets_.end()) throw ValidationError("no target image for camera '" + camera_id + "'");
    return it->second;
}

GuidanceResponse TargetImageGuidance::guide(const GuidanceRequest& request) {
    validate_request(request);
    const Image& t = target(request.camera_id);
    auto out = squared_error_guidance(request.rendering, t, request.mask ? &*request.mask : nullptr);
    out.edited = t;
    return out;
}

Image correlated_noise(int width, int height, int channels, const NoiseOptions& o, int step,
                       const std::string& camera_id) {
    Image out(width, height, channels);
    if (o.sigma == 0.0) return out;
    std::seed_seq seq{static_cast<std::uint32_t>(o.seed), static_cast<std::uint32_t>(o.seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(fnv1a(camera_id)), static_cast<std::uint32_t>(fnv1a(camera_id) >> 32),
                      static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Separable Gaussian kernel scaled so the sum of squared 2D weights is 1,
    // which keeps each output sample at unit variance.
    const int radius = o.blob_radius > 0.0 ? static_cast<int>(std::ceil(3.0 * o.blob_radius)) : 0;
    std::vector<double> kernel(2 * radius + 1, 1.0);
    if (radius > 0)
        for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (o.blob_radius * o.blob_radius));
    double sq = 0.0;
    for (double k : kernel) sq += k * k;
    for (double& k : kernel) k /= std::sqrt(sq);

    const int pw = width + 2 * radius, ph = height + 2 * radius;
    std::vector<double> white(static_cast<std::size_t>(pw) * ph * channels);
    for (double& v : white) v = normal(rng);
    std::vector<double> rows(static_cast<std::size_t>(width) * ph * channels, 0.0);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                double s = 0.0;
                for (int k = 0; k <= 2 * radius; ++k)
                    s += kernel[k] * white[(static_cast<std::size_t>(y) * pw + x + k) * channels + c];
                rows[(static_cast<std::size_t>(y) * width + x) * channels + c] = s;
            }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                double s = 0.0;
                for (int k = 0; k <= 2 * radius; ++k)
                    s += kernel[k] * rows[(static_cast<std::size_t>(y + k) * width + x) * channels + c];
                out.at(x, y, c) = o.sigma * s;
            }
    return out;
}

NoisyTargetGuidance::NoisyTargetGuidance(std::map<std::string, Image> targets, NoiseOptions options)
    : base_(std::move(targets)), options_(options) {
    if (!(options_.sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0");
    if (!(options_.blob_radius >= 0.0)) throw ValidationError("noise blob radius must be >= 0");
}

GuidanceResponse NoisyTargetGuidance::guide(const GuidanceRequest& request) {
    validate_request(request);
    Image target = base_.target(request.camera_id);
    if (options_.sigma > 0.0) {
        const Image noise = correlated_noise(target.width, target.height, target.channels, options_, request.step,
                                             request.camera_id);
        for (std::size_t i = 0; i < target.data.size(); ++i) target.data[i] += noise.data[i];
    }
    auto out = squared_error_guidance(request.rendering, target, request.mask ? &*request.mask : nullptr);
    out.edited = std::move(target);
    return out;
}

Image read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pfm" || ext == ".PFM") return read_pfm(path);
    return read_png(path);
}

std::map<std::string, Image> load_image_manifest(const std::filesystem::path& manifest) {
    const auto doc = load_json_file(manifest);
    if (!doc.is_object()) throw FormatError(manifest.string() + ": expected an object keyed by camera id");
    std::map<std::string, Image> out;
    for (const auto& [id, value] : doc.items()) {
        if (!value.is_string()) throw FormatError(manifest.string() + ": entry '" + id + "' must be a file path");
        std::filesystem::path file = value.get<std::string>();
        if (file.is_relative()) file = manifest.parent_path() / file;
        out.emplace(id, read_image(file));
    }
    return out;
}

std::unique_ptr<Guidance> make_guidance(const nlohmann::json& config, const std::filesystem::path& base_dir) {
    const std::string backend = config.value("backend", "target");
    auto targets = [&] {
        if (!config.contains("targets")) throw ValidationError("guidance backend '" + backend + "' needs \"targets\"");
        std::filesystem::path p = config.at("targets").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        return load_image_manifest(p);
    };
    if (backend == "target") return std::make_unique<TargetImageGuidance>(targets());
    if (backend == "noisy") {
        NoiseOptions o;
        o.sigma = config.value("sigma", o.sigma);
        o.blob_radius = config.value("blob_radius", o.blob_radius);
        o.seed = config.value("seed", o.seed);
        return std::make_unique<NoisyTargetGuidance>(targets(), o);
    }
    if (backend == "remote") {
        RemoteGuidanceOptions o;
        if (!config.contains("endpoint")) throw ValidationError("remote guidance needs \"endpoint\"");
        o.endpoint = config.at("endpoint").get<std::string>();
        o.attempts = config.value("attempts", o.attempts);
        o.initial_backoff = std::chrono::milliseconds(config.value("backoff_ms", int(o.initial_backoff.count())));
        if (o.attempts < 1) throw ValidationError("remote guidance attempts must be >= 1");
        return std::make_unique<RemoteGuidance>(o);
    }
    throw ValidationError("unknown guidance backend '" + backend + "'");
}

}  // namespace gsedit
