#include "gsedit/events.hpp"

#include "gsedit/base64.hpp"
#include "gsedit/errors.hpp"
#include "gsedit/guidance.hpp"
#include "gsedit/json_io.hpp"
#include "gsedit/mesh_sampling.hpp"
#include "gsedit/ply_io.hpp"
#include "gsedit/tracing.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace gsedit {

using json = nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("field \"") + key + "\" has the wrong type");
    }
}

const json& require(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field \"") + key + "\"");
    return j.at(key);
}

LabelId label_from_json(const json& j, const GaussianScene& scene) {
    if (j.is_number_integer()) return j.get<LabelId>();
    if (j.is_string()) {
        for (const auto& [id, name] : scene.label_names())
            if (name == j.get<std::string>()) return id;
        throw ValidationError("unknown label name \"" + j.get<std::string>() + "\"");
    }
    throw ValidationError("label must be an id or a name");
}

std::map<std::string, Image> image_map(const json& j, const std::filesystem::path& base) {
    if (j.is_string()) return load_image_manifest(resolve(base, j.get<std::string>()));
    if (!j.is_object()) throw ValidationError("image set must be a manifest path or {camera: image}");
    std::map<std::string, Image> out;
    for (const auto& [id, ref] : j.items()) out[id] = load_image_ref(ref, base);
    return out;
}

HgsConfig config_from(const json& event, const char* key = "config") {
    return event.contains(key) ? HgsConfig::from_json(event.at(key)) : HgsConfig{};
}

std::shared_ptr<Guidance> guidance_from(const json& event, const std::filesystem::path& base) {
    if (!event.contains("config") || !event.at("config").contains("guidance"))
        throw ValidationError("edit needs config.guidance");
    return make_guidance(event.at("config").at("guidance"), base);
}

json label_summary(const GaussianScene& scene) {
    json out = json::object();
    for (const auto& [id, name] : scene.label_names())
        out[std::to_string(id)] = {{"name", name}, {"members", scene.label_member_count(id)}};
    return out;
}

std::function<bool(const StepReport&)> step_hook(const EditSession& session, const EventHooks& hooks) {
    if (!hooks.on_scene && !hooks.on_step) return {};
    return [&session, &hooks](const StepReport& r) {
        if (hooks.on_scene) hooks.on_scene(session.scene());
        return hooks.on_step ? hooks.on_step(r) : true;
    };
}

EventOutcome apply_trace(EditState& state, const json& event) {
    std::map<LabelId, std::string> names;
    std::vector<SemanticMask> masks;
    if (event.contains("manifest")) {
        masks = load_mask_manifest(resolve(state.base_dir, event["manifest"].get<std::string>()), state.cameras,
                                   &names);
    } else {
        std::map<std::string, SemanticMask> by_camera;
        for (const auto& item : require(event, "masks")) {
            const std::string cam = require(item, "camera").get<std::string>();
            const auto& view = find_camera(state.cameras, cam);
            auto& sm = by_camera[cam];
            sm.camera_id = cam;
            sm.camera = view.camera;
            const LabelId label = require(item, "label").get<LabelId>();
            if (label < 0 || label >= kMaxLabels) throw ValidationError("label id out of range");
            sm.masks[label] = load_mask_ref(require(item, "mask"), state.base_dir);
            if (item.contains("name")) names[label] = item["name"].get<std::string>();
        }
        for (auto& [id, m] : by_camera) masks.push_back(std::move(m));
    }
    if (masks.empty()) throw ValidationError("trace needs at least one mask");
    TraceAccumulator acc(state.scene.size());
    for (const auto& m : masks) {
        m.validate();
        accumulate(acc, state.scene, m);
    }
    const double threshold = get_or(event, "threshold", 0.7);
    const auto mode = trace_average_from_string(get_or<std::string>(event, "average", "coverage"));
    assign_labels(acc, state.scene, threshold, mode);
    for (const auto& [id, name] : names) state.scene.set_label_name(id, name);
    return {event, {{"labels", label_summary(state.scene)}}, nullptr};
}

EventOutcome apply_edit(EditState& state, const json& event, const EventHooks& hooks) {
    const HgsConfig cfg = config_from(event);
    const int steps = get_or(event, "steps", cfg.steps);
    if (steps < 0) throw ValidationError("steps must be non-negative");
    auto guidance = guidance_from(event, state.base_dir);
    EditSession session(state.scene, state.cameras, guidance, cfg);
    EventOutcome out{event, {}, nullptr};
    try {
        session.run(steps, step_hook(session, hooks));
    } catch (...) {
        out.failure = std::current_exception();
    }
    out.event["steps"] = session.steps_done();
    // A failed first step leaves nothing to log, so the state stays as it was.
    if (out.failure && session.steps_done() == 0) std::rethrow_exception(out.failure);
    state.scene = session.take_scene();
    out.result = {{"steps", session.steps_done()}, {"n_gaussians", state.scene.size()}, {"round", session.round()}};
    return out;
}

EventOutcome apply_remove(EditState& state, const json& event, const EventHooks& hooks) {
    const LabelId label = label_from_json(require(event, "label"), state.scene);
    InterfaceOptions opt;
    opt.k = get_or<std::size_t>(event, "k", opt.k);
    opt.dilation_radius = get_or(event, "radius", opt.dilation_radius);
    if (state.scene.label_member_count(label) == 0)
        throw ValidationError("label " + std::to_string(label) + " has no members");
    std::optional<std::map<std::string, Image>> repaired;
    if (event.contains("repaired")) repaired = image_map(event.at("repaired"), state.base_dir);
    const int steps = get_or(event, "steps", 200);
    Removal rem = remove_object(state.scene, label, state.cameras, opt);
    EventOutcome out{event, {{"removed", rem.removed.size()}, {"interface", rem.interface.size()}}, nullptr};
    if (repaired) {
        HgsConfig cfg = config_from(event);
        cfg.restrict_label = rem.interface_label;
        EditSession session(std::move(rem.scene), state.cameras, nullptr, cfg);
        try {
            repair_removal(session, rem.mask, *repaired, steps, step_hook(session, hooks));
        } catch (...) {
            out.failure = std::current_exception();
        }
        if (out.failure && session.steps_done() == 0) std::rethrow_exception(out.failure);
        out.event["steps"] = session.steps_done();
        out.result["steps"] = session.steps_done();
        rem.scene = session.take_scene();
    }
    rem.scene.erase_label(rem.interface_label);
    state.scene = std::move(rem.scene);
    out.result["n_gaussians"] = state.scene.size();
    return out;
}

EventOutcome apply_insert(EditState& state, const json& event) {
    const auto object_path = resolve(state.base_dir, require(event, "object").get<std::string>());
    GaussianScene object;
    if (object_path.extension() == ".obj") {
        MeshSamplingOptions mo;
        mo.count = get_or<std::size_t>(event, "samples", mo.count);
        mo.seed = get_or<std::uint64_t>(event, "seed", mo.seed);
        object = sample_mesh(read_obj(object_path), mo);
    } else {
        object = load_scene(object_path);
    }
    const auto& view = find_camera(state.cameras, require(event, "camera").get<std::string>());
    const BinaryMask mask = load_mask_ref(require(event, "mask"), state.base_dir);
    const Image depth = load_image_ref(require(event, "depth"), state.base_dir);
    DepthAlignment alignment;
    if (event.contains("alignment")) {
        alignment.scale = require(event["alignment"], "scale").get<double>();
        alignment.shift = require(event["alignment"], "shift").get<double>();
    } else {
        const auto rendered = render(state.scene, view.camera, {.labels_only = std::nullopt, .record_contributions = false, .raster = {}});
        BinaryMask valid(mask.width, mask.height);
        if (mask.width != rendered.width() || mask.height != rendered.height())
            throw ValidationError("insertion mask size does not match camera " + view.id);
        for (std::size_t i = 0; i < valid.data.size(); ++i)
            valid.data[i] = !mask.data[i] && rendered.alpha.data[i] > 0.5;
        alignment = align_depth_checked(rendered.depth, depth, valid);
    }
    auto inc = incorporate_object(state.scene, object, view.camera, mask, depth, alignment,
                                  get_or<std::string>(event, "name", "object"));
    state.scene = std::move(inc.scene);
    state.object.emplace(InsertedObject{inc.object_label, view.camera,
                                        DepthScaleHandle(state.scene, inc.first_row, inc.row_count, view.camera)});
    return {event,
            {{"label", inc.object_label},
             {"rows", inc.row_count},
             {"center", {inc.center.x(), inc.center.y(), inc.center.z()}},
             {"scale", inc.scale},
             {"alignment", {{"scale", alignment.scale}, {"shift", alignment.shift}, {"rms", alignment.rms}}}},
            nullptr};
}

EventOutcome apply_depth_scale(EditState& state, const json& event) {
    if (!state.object) throw ValidationError("no inserted object to scale");
    const double factor = require(event, "factor").get<double>();
    state.object->handle.apply(state.scene, factor);
    return {event, {{"factor", state.object->handle.factor()}}, nullptr};
}

}  // namespace

Image load_image_ref(const json& ref, const std::filesystem::path& base_dir) {
    if (ref.is_string()) return read_image(resolve(base_dir, ref.get<std::string>()));
    if (ref.is_object() && ref.contains("path")) return read_image(resolve(base_dir, ref["path"].get<std::string>()));
    if (ref.is_object() && ref.contains("png")) return decode_png(base64_decode(ref["png"].get<std::string>()));
    if (ref.is_object() && ref.contains("pfm")) return decode_pfm(base64_decode(ref["pfm"].get<std::string>()));
    throw ValidationError("image must be a path, {\"path\"}, {\"png\"} or {\"pfm\"}");
}

BinaryMask load_mask_ref(const json& ref, const std::filesystem::path& base_dir) {
    if (ref.is_string()) return read_mask_png(resolve(base_dir, ref.get<std::string>()));
    if (ref.is_object() && ref.contains("path")) return read_mask_png(resolve(base_dir, ref["path"].get<std::string>()));
    if (ref.is_object() && ref.contains("png")) return decode_mask_png(base64_decode(ref["png"].get<std::string>()));
    throw ValidationError("mask must be a path, {\"path\"} or {\"png\"}");
}

EventOutcome apply_event(EditState& state, const json& event, const EventHooks& hooks) {
    const std::string op = require(event, "op").get<std::string>();
    if (op == "depth_scale") return apply_depth_scale(state, event);
    // Any other mutation may move rows, so the depth-scale handle is dropped.
    state.object.reset();
    if (op == "trace") return apply_trace(state, event);
    if (op == "edit") return apply_edit(state, event, hooks);
    if (op == "remove") return apply_remove(state, event, hooks);
    if (op == "insert") return apply_insert(state, event);
    throw ValidationError("unknown event op \"" + op + "\"");
}

std::string file_sha256(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

EventLog EventLog::create(const std::filesystem::path& path, const std::filesystem::path& scene_path,
                          const std::vector<NamedCamera>& cameras, const std::filesystem::path& base_dir) {
    const json header = {{"op", "open"},
                         {"scene", std::filesystem::absolute(scene_path).string()},
                         {"sha256", file_sha256(scene_path)},
                         {"cameras", cameras_to_json(cameras)},
                         {"base_dir", std::filesystem::absolute(base_dir).string()}};
    write_text_file(path, header.dump() + "\n");
    return EventLog(path);
}

void EventLog::append(const json& event) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to " + path_.string());
    out << event.dump() << '\n';
    if (!out.flush()) throw IoError("cannot append to " + path_.string());
}

EditState open_state(const json& header) {
    if (get_or<std::string>(header, "op", "") != "open") throw FormatError("event log must start with an open record");
    const std::filesystem::path scene = require(header, "scene").get<std::string>();
    if (header.contains("sha256") && file_sha256(scene) != header["sha256"].get<std::string>())
        throw ValidationError("starting scene " + scene.string() + " changed since the log was written");
    EditState state;
    state.scene = load_scene(scene);
    state.cameras = cameras_from_json(require(header, "cameras"));
    state.base_dir = get_or<std::string>(header, "base_dir", scene.parent_path().string());
    return state;
}

EditState replay(const std::filesystem::path& log_path) {
    std::ifstream in(log_path);
    if (!in) throw IoError("cannot open " + log_path.string());
    std::string line;
    std::optional<EditState> state;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json event;
        try {
            event = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(log_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!state) {
            state = open_state(event);
            continue;
        }
        const auto outcome = apply_event(*state, event);
        if (outcome.failure) std::rethrow_exception(outcome.failure);
    }
    if (!state) throw FormatError(log_path.string() + " is empty");
    return std::move(*state);
}

}  // namespace gsedit
