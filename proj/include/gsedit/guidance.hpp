#pragma once

#include "gsedit/image.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace gsedit {

struct GuidanceRequest {
    Image rendering;  // 3 channels in [0, 1]
    std::string camera_id;
    std::string prompt;
    int step = 0;
    std::optional<BinaryMask> mask;
};

struct GuidanceResponse {
    Image grad;  // dL/dColor, same shape as the rendering
    double loss = 0.0;
    std::optional<Image> edited;
};

/// Source of image-space editing gradients. Implementations must be pure
/// functions of the request and their construction parameters, and safe to
/// call concurrently.
class Guidance {
public:
    virtual ~Guidance() = default;
    virtual GuidanceResponse guide(const GuidanceRequest& request) = 0;
};

/// Throws ValidationError on non-finite rendering values or a mask of the wrong size.
void validate_request(const GuidanceRequest& request);
/// Throws ValidationError when the gradient shape differs from the request or
/// any gradient value or the loss is not finite.
void validate_response(const GuidanceRequest& request, const GuidanceResponse& response);

/// Masked squared error against a per-camera target and its gradient:
/// L = sum M (r - t)^2, dL/dr = 2 M (r - t).
GuidanceResponse squared_error_guidance(const Image& rendering, const Image& target, const BinaryMask* mask);

/// Deterministic target images keyed by camera id.
class TargetImageGuidance : public Guidance {
public:
    explicit TargetImageGuidance(std::map<std::string, Image> targets);
    GuidanceResponse guide(const GuidanceRequest& request) override;
    const Image& target(const std::string& camera_id) const;

private:
    std::map<std::string, Image> targets_;
};

struct NoiseOptions {
    double sigma = 0.1;
    /// Standard deviation of the smoothing kernel in pixels; 0 gives white noise.
    double blob_radius = 4.0;
    std::uint64_t seed = 0;
};

/// Zero-mean, spatially correlated noise field. Every sample is marginally
/// N(0, sigma^2). Depends only on (seed, step, camera_id, size).
Image correlated_noise(int width, int height, int channels, const NoiseOptions& options, int step,
                       const std::string& camera_id);

/// Target images perturbed by fresh correlated noise at every step.
class NoisyTargetGuidance : public Guidance {
public:
    NoisyTargetGuidance(std::map<std::string, Image> targets, NoiseOptions options);
    GuidanceResponse guide(const GuidanceRequest& request) override;

private:
    TargetImageGuidance base_;
    NoiseOptions options_;
};

struct RemoteGuidanceOptions {
    std::string endpoint;  // scheme://host:port
    std::string path = "/v1/guide";
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    double backoff_factor = 2.0;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds read_timeout{120000};
};

/// JSON body of a guidance request (wire format of POST /v1/guide). The
/// rendering travels as a 16-bit RGB PNG.
nlohmann::json encode_guidance_request(const GuidanceRequest& request);
GuidanceRequest decode_guidance_request(const nlohmann::json& body);
nlohmann::json encode_guidance_response(const GuidanceResponse& response);
/// Throws GuidanceSchemaError on schema mismatches.
GuidanceResponse decode_guidance_response(const nlohmann::json& body);

/// HTTP client for an external guidance service. Retries network errors and
/// 5xx/429 answers with exponential backoff; other statuses fail at once.
class RemoteGuidance : public Guidance {
public:
    explicit RemoteGuidance(RemoteGuidanceOptions options);
    ~RemoteGuidance() override;
    GuidanceResponse guide(const GuidanceRequest& request) override;

    /// Replaces the sleep between attempts (tests observe the backoff schedule).
    void set_sleep(std::function<void(std::chrono::milliseconds)> sleep) { sleep_ = std::move(sleep); }

private:
    struct Pool;
    RemoteGuidanceOptions options_;
    std::unique_ptr<Pool> pool_;
    std::function<void(std::chrono::milliseconds)> sleep_;
};

/// {"<camera id>": "<file.png|file.pfm>", ...}; relative paths resolve against
/// the manifest directory.
std::map<std::string, Image> load_image_manifest(const std::filesystem::path& manifest);
/// PNG or PFM by extension.
Image read_image(const std::filesystem::path& path);

/// Builds a backend from a guidance config:
///   {"backend": "target" | "noisy" | "remote", "targets": manifest path,
///    "sigma", "blob_radius", "seed", "endpoint", "attempts", "backoff_ms"}
/// Relative paths resolve against `base_dir`.
std::unique_ptr<Guidance> make_guidance(const nlohmann::json& config, const std::filesystem::path& base_dir);

}  // namespace gsedit
