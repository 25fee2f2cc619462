#include "gsedit/base64.hpp"
#include "gsedit/errors.hpp"
#include "gsedit/guidance.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <thread>

namespace gsedit {

using nlohmann::json;

json encode_guidance_request(const GuidanceRequest& request) {
    json body = {{"prompt", request.prompt},
                 {"step", request.step},
                 {"camera_id", request.camera_id},
                 {"image",
                  {{"w", request.rendering.width},
                   {"h", request.rendering.height},
                   {"png_b64", base64_encode(encode_png(request.rendering, 16))}}}};
    if (request.mask) body["mask_png_b64"] = base64_encode(encode_mask_png(*request.mask));
    return body;
}

GuidanceRequest decode_guidance_request(const json& body) {
    try {
        GuidanceRequest r;
        r.prompt = body.at("prompt").get<std::string>();
        r.step = body.at("step").get<int>();
        r.camera_id = body.at("camera_id").get<std::string>();
        const auto& image = body.at("image");
        r.rendering = decode_png(base64_decode(image.at("png_b64").get<std::string>()));
        if (r.rendering.width != image.at("w").get<int>() || r.rendering.height != image.at("h").get<int>())
            throw FormatError("image size does not match w/h");
        if (body.contains("mask_png_b64") && !body.at("mask_png_b64").is_null())
            r.mask = decode_mask_png(base64_decode(body.at("mask_png_b64").get<std::string>()));
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("guidance request: ") + e.what());
    }
}

json encode_guidance_response(const GuidanceResponse& response) {
    json body = {{"loss", response.loss},
                 {"grad",
                  {{"w", response.grad.width},
                   {"h", response.grad.height},
                   {"f32_le_b64", base64_encode(pack_f32_le(response.grad.data))}}}};
    if (response.edited) body["edited_png_b64"] = base64_encode(encode_png(*response.edited));
    return body;
}

GuidanceResponse decode_guidance_response(const json& body) {
    try {
        GuidanceResponse r;
        r.loss = body.at("loss").get<double>();
        const auto& grad = body.at("grad");
        const int w = grad.at("w").get<int>(), h = grad.at("h").get<int>();
        if (w < 0 || h < 0) throw GuidanceSchemaError("guidance response: negative gradient size");
        const auto bytes = base64_decode(grad.at("f32_le_b64").get<std::string>());
        const std::size_t expected = static_cast<std::size_t>(w) * h * 3 * 4;
        if (bytes.size() != expected)
            throw GuidanceSchemaError("guidance response: gradient payload has " + std::to_string(bytes.size()) +
                                      " bytes, expected " + std::to_string(expected));
        r.grad = Image(w, h, 3);
        r.grad.data = unpack_f32_le(bytes);
        if (body.contains("edited_png_b64") && !body.at("edited_png_b64").is_null())
            r.edited = decode_png(base64_decode(body.at("edited_png_b64").get<std::string>()));
        return r;
    } catch (const json::exception& e) {
        throw GuidanceSchemaError(std::string("guidance response: ") + e.what());
    } catch (const FormatError& e) {
        throw GuidanceSchemaError(std::string("guidance response: ") + e.what());
    }
}

struct RemoteGuidance::Pool {
    std::mutex mutex;
    std::vector<std::unique_ptr<httplib::Client>> idle;
};

RemoteGuidance::RemoteGuidance(RemoteGuidanceOptions options)
    : options_(std::move(options)), pool_(std::make_unique<Pool>()),
      sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (options_.endpoint.empty()) throw ValidationError("remote guidance endpoint is empty");
    if (options_.attempts < 1) throw ValidationError("remote guidance attempts must be >= 1");
}

RemoteGuidance::~RemoteGuidance() = default;

GuidanceResponse RemoteGuidance::guide(const GuidanceRequest& request) {
    validate_request(request);
    const std::string body = encode_guidance_request(request).dump();

    std::unique_ptr<httplib::Client> client;
    {
        std::lock_guard lock(pool_->mutex);
        if (!pool_->idle.empty()) {
            client = std::move(pool_->idle.back());
            pool_->idle.pop_back();
        }
    }
    if (!client) {
        client = std::make_unique<httplib::Client>(options_.endpoint);
        if (!client->is_valid()) throw ValidationError("invalid guidance endpoint '" + options_.endpoint + "'");
        client->set_keep_alive(true);
        const auto ct = options_.connect_timeout.count(), rt = options_.read_timeout.count();
        client->set_connection_timeout(ct / 1000, (ct % 1000) * 1000);
        client->set_read_timeout(rt / 1000, (rt % 1000) * 1000);
    }

    int last_status = 0;
    std::string last_problem;
    auto backoff = options_.initial_backoff;
    for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
        auto res = client->Post(options_.path, body, "application/json");
        if (res && res->status == 200) {
            json parsed;
            try {
                parsed = json::parse(res->body);
            } catch (const json::exception& e) {
                throw GuidanceSchemaError(std::string("guidance response is not JSON: ") + e.what());
            }
            GuidanceResponse out = decode_guidance_response(parsed);
            validate_response(request, out);
            std::lock_guard lock(pool_->mutex);
            pool_->idle.push_back(std::move(client));
            return out;
        }
        if (res) {
            last_status = res->status;
            last_problem = "HTTP " + std::to_string(res->status);
            const bool retryable = res->status >= 500 || res->status == 429;
            if (!retryable)
                throw GuidanceTransportError("guidance service answered " + last_problem, attempt, last_status);
        } else {
            last_status = 0;
            last_problem = httplib::to_string(res.error());
        }
        spdlog::warn("guidance attempt {}/{} failed: {}", attempt, options_.attempts, last_problem);
        if (attempt < options_.attempts) {
            sleep_(backoff);
            backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * options_.backoff_factor));
        }
    }
    throw GuidanceTransportError("guidance service failed after " + std::to_string(options_.attempts) +
                                     " attempts: " + last_problem,
                                 options_.attempts, last_status);
}

}  // namespace gsedit
