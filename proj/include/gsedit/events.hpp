#pragma once

#include "gsedit/camera.hpp"
#include "gsedit/hgs.hpp"
#include "gsedit/image.hpp"
#include "gsedit/inpaint.hpp"
#include "gsedit/scene.hpp"

#include <json.hpp>

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gsedit {

/// Object placed by the latest insert, kept for depth-scale adjustment until
/// another mutation changes the rows.
struct InsertedObject {
    LabelId label = 0;
    Camera camera;
    DepthScaleHandle handle;
};

/// Everything a sequence of events mutates.
struct EditState {
    GaussianScene scene;
    std::vector<NamedCamera> cameras;
    std::filesystem::path base_dir;
    std::optional<InsertedObject> object;
};

struct EventHooks {
    /// Called after every optimization step; returning false stops the run
    /// early and the logged event records the steps actually taken.
    std::function<bool(const StepReport&)> on_step;
    /// Called after every optimization step with the scene being optimized.
    std::function<void(const GaussianScene&)> on_scene;
};

/// Result of applying one event: the event as it must be logged for an exact
/// replay, and a JSON summary for the caller. When an optimization fails after
/// some steps, the state keeps those steps, `event` records how many, and
/// `failure` holds the error. Failures before any change are thrown instead.
struct EventOutcome {
    nlohmann::json event;
    nlohmann::json result;
    std::exception_ptr failure;
};

/// Applies one mutation. Supported "op" values:
///   trace        {masks: [{camera, label, name?, mask}] | manifest, threshold?, average?}
///   edit         {config, steps?, prompt?}
///   remove       {label, repaired?, steps?, k?, radius?, config?}
///   insert       {object, camera, mask, depth, alignment?, name?, samples?, seed?}
///   depth_scale  {factor}   multiplies the current factor of the last insert
/// Images are {"path"} | {"png": base64} | {"pfm": base64} or a bare path;
/// relative paths resolve against state.base_dir.
EventOutcome apply_event(EditState& state, const nlohmann::json& event, const EventHooks& hooks = {});

Image load_image_ref(const nlohmann::json& ref, const std::filesystem::path& base_dir);
BinaryMask load_mask_ref(const nlohmann::json& ref, const std::filesystem::path& base_dir);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Append-only JSONL log. The first line records the starting scene:
/// {"op": "open", "scene", "sha256", "cameras", "base_dir"}.
class EventLog {
public:
    static EventLog create(const std::filesystem::path& path, const std::filesystem::path& scene_path,
                           const std::vector<NamedCamera>& cameras, const std::filesystem::path& base_dir);

    const std::filesystem::path& path() const { return path_; }
    void append(const nlohmann::json& event);

private:
    explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {}
    std::filesystem::path path_;
};

/// Opens the starting scene named by `header` and checks its hash.
EditState open_state(const nlohmann::json& header);

/// Rebuilds the final state from a log.
EditState replay(const std::filesystem::path& log_path);

}  // namespace gsedit
