#include "gsedit/cli.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/events.hpp"
#include "gsedit/json_io.hpp"
#include "gsedit/ply_io.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <optional>

namespace gsedit {

using json = nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitGuidance = 4;

struct Common {
    std::string scene;
    std::string cameras;
    std::string output;
    std::string events;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("scene", c.scene, "Input scene PLY")->required();
    cmd->add_option("--cameras", c.cameras, "Camera set JSON")->required();
    cmd->add_option("-o,--output", c.output, "Output scene PLY")->required();
    cmd->add_option("--events", c.events, "Write an event log that replays this run");
}

std::string absolute(const std::string& p) { return std::filesystem::absolute(p).string(); }

/// Applies one event to the scene named in `c`, saves the result and
/// optionally writes a replayable log.
void run_event(const Common& c, json event, const EventHooks& hooks = {}) {
    const auto cameras = load_cameras(c.cameras);
    const auto base = std::filesystem::current_path();
    std::optional<EventLog> log;
    if (!c.events.empty()) log = EventLog::create(c.events, c.scene, cameras, base);
    EditState state;
    state.scene = load_scene(c.scene);
    state.cameras = cameras;
    state.base_dir = base;
    auto outcome = apply_event(state, event, hooks);
    if (log) log->append(outcome.event);
    if (outcome.failure) std::rethrow_exception(outcome.failure);
    save_scene(state.scene, c.output);
    spdlog::info("{}: wrote {} ({} Gaussians)", event["op"].get<std::string>(), c.output, state.scene.size());
    std::cout << outcome.result.dump() << '\n';
}

json read_config(const std::string& path) { return path.empty() ? json::object() : load_json_file(path); }

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Gaussian splat scene editor"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    Common trace_c;
    std::string masks;
    double threshold = 0.7;
    std::string average = "coverage";
    auto* trace = app.add_subcommand("trace", "Label Gaussians from 2D masks");
    add_common(trace, trace_c);
    trace->add_option("--masks", masks, "Mask manifest JSON")->required();
    trace->add_option("--threshold", threshold, "Label threshold in (0, 1)");
    trace->add_option("--average", average, "coverage|pixels");

    Common edit_c;
    std::string config_path, endpoint, prompt, report_path;
    int steps = -1;
    auto* edit = app.add_subcommand("edit", "Optimize the scene under guidance");
    add_common(edit, edit_c);
    edit->add_option("--config", config_path, "HGS config JSON with a guidance block");
    edit->add_option("--endpoint", endpoint, "Remote guidance endpoint (overrides the config backend)");
    edit->add_option("--steps", steps, "Number of steps (default from config)");
    edit->add_option("--prompt", prompt, "Edit prompt passed to guidance");
    edit->add_option("--report", report_path, "Write JSONL step reports here (default stdout)");

    Common remove_c;
    std::string label, repaired, remove_config;
    int remove_steps = 200, radius = 8;
    std::size_t knn = 16;
    auto* remove = app.add_subcommand("remove", "Remove a labeled object and repair the gap");
    add_common(remove, remove_c);
    remove->add_option("--label", label, "Label id or name")->required();
    remove->add_option("--repaired", repaired, "Repaired image manifest; omit to skip repair");
    remove->add_option("--steps", remove_steps, "Repair steps");
    remove->add_option("--k", knn, "Interface neighbours per removed Gaussian");
    remove->add_option("--radius", radius, "Interface mask dilation radius in pixels");
    remove->add_option("--config", remove_config, "HGS config JSON for the repair");

    Common insert_c;
    std::string object, view, mask, depth, name = "object";
    std::optional<double> scale, shift;
    auto* insert = app.add_subcommand("insert", "Insert an object scene at a 2D mask");
    add_common(insert, insert_c);
    insert->add_option("--object", object, "Object PLY or OBJ mesh")->required();
    insert->add_option("--camera", view, "Camera id the mask and depth belong to")->required();
    insert->add_option("--mask", mask, "Insertion mask PNG")->required();
    insert->add_option("--depth", depth, "Estimated depth PFM")->required();
    auto* scale_opt = insert->add_option("--scale", scale, "Depth alignment scale (default: fit)");
    insert->add_option("--shift", shift, "Depth alignment shift")->needs(scale_opt);
    insert->add_option("--name", name, "Label name for the object");

    std::string render_scene, render_cameras, render_view, render_out, render_depth, render_alpha;
    std::optional<int> render_width, render_height, labels_only;
    auto* rend = app.add_subcommand("render", "Render a view to PNG/PFM");
    rend->add_option("scene", render_scene, "Scene PLY")->required();
    rend->add_option("--camera", render_cameras, "Camera JSON or camera set JSON")->required();
    rend->add_option("--view", render_view, "Camera id within a camera set");
    rend->add_option("-o,--output", render_out, "Color output (.png or .pfm)")->required();
    rend->add_option("--depth", render_depth, "Depth output PFM");
    rend->add_option("--alpha", render_alpha, "Alpha output PNG");
    rend->add_option("--width", render_width, "Resize the camera");
    rend->add_option("--height", render_height, "Resize the camera");
    rend->add_option("--labels-only", labels_only, "Render only Gaussians with this label");

    ServiceOptions serve_opt;
    std::string work_dir = ".";
    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    serve->add_option("--host", serve_opt.host, "Bind address");
    serve->add_option("--port", serve_opt.port, "Port (0 = any)");
    serve->add_option("--work-dir", work_dir, "Directory for event logs and saved scenes");

    std::string log_in, replay_out;
    auto* replay_cmd = app.add_subcommand("replay", "Rebuild a scene from an event log");
    replay_cmd->add_option("log", log_in, "Event log JSONL")->required();
    replay_cmd->add_option("-o,--output", replay_out, "Output scene PLY")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }
    if (!spdlog::get("gsedit")) spdlog::set_default_logger(spdlog::stderr_color_mt("gsedit"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*trace) {
            run_event(trace_c, {{"op", "trace"}, {"manifest", absolute(masks)}, {"threshold", threshold},
                                {"average", average}});
        } else if (*edit) {
            json config = read_config(config_path);
            if (!endpoint.empty()) {
                json g = config.value("guidance", json::object());
                g["backend"] = "remote";
                g["endpoint"] = endpoint;
                config["guidance"] = g;
            }
            if (config.contains("guidance") && config["guidance"].contains("targets") &&
                config["guidance"]["targets"].is_string() && !config_path.empty()) {
                const std::filesystem::path t = config["guidance"]["targets"].get<std::string>();
                if (t.is_relative())
                    config["guidance"]["targets"] =
                        (std::filesystem::absolute(config_path).parent_path() / t).string();
            }
            json event = {{"op", "edit"}, {"config", config}};
            if (steps >= 0) event["steps"] = steps;
            if (!prompt.empty()) event["config"]["prompt"] = prompt;
            std::ofstream report_file;
            if (!report_path.empty()) {
                report_file.open(report_path);
                if (!report_file) throw IoError("cannot write " + report_path);
            }
            std::ostream& report = report_path.empty() ? std::cout : report_file;
            EventHooks hooks;
            hooks.on_step = [&](const StepReport& r) {
                report << r.to_json().dump() << '\n';
                return true;
            };
            run_event(edit_c, event, hooks);
        } else if (*remove) {
            json event = {{"op", "remove"}, {"steps", remove_steps}, {"k", knn}, {"radius", radius}};
            event["label"] = (!label.empty() && std::all_of(label.begin(), label.end(), ::isdigit))
                                 ? json(std::stoi(label))
                                 : json(label);
            if (!repaired.empty()) event["repaired"] = absolute(repaired);
            if (!remove_config.empty()) event["config"] = read_config(remove_config);
            run_event(remove_c, event);
        } else if (*insert) {
            json event = {{"op", "insert"}, {"object", absolute(object)}, {"camera", view},
                          {"mask", absolute(mask)}, {"depth", absolute(depth)}, {"name", name}};
            if (scale) event["alignment"] = {{"scale", *scale}, {"shift", shift.value_or(0.0)}};
            run_event(insert_c, event);
        } else if (*rend) {
            const json doc = load_json_file(render_cameras);
            Camera cam;
            if (doc.contains("K")) {
                cam = camera_from_json(doc);
            } else {
                const auto cams = cameras_from_json(doc);
                if (render_view.empty() && cams.size() != 1) throw ValidationError("--view is required for camera sets");
                cam = render_view.empty() ? cams.front().camera : find_camera(cams, render_view).camera;
            }
            if (render_width || render_height)
                cam = cam.resized(render_width.value_or(cam.width), render_height.value_or(cam.height));
            RenderOptions opt;
            opt.record_contributions = false;
            if (labels_only) opt.labels_only = *labels_only;
            const auto out = render(load_scene(render_scene), cam, opt);
            if (std::filesystem::path(render_out).extension() == ".pfm") write_pfm(render_out, out.color);
            else write_png(render_out, out.color);
            if (!render_depth.empty()) write_pfm(render_depth, out.depth);
            if (!render_alpha.empty()) write_png(render_alpha, out.alpha);
        } else if (*serve) {
            serve_opt.work_dir = work_dir;
            Service service(serve_opt);
            service.listen();
        } else if (*replay_cmd) {
            const auto state = replay(log_in);
            save_scene(state.scene, replay_out);
            spdlog::info("replay: wrote {} ({} Gaussians)", replay_out, state.scene.size());
        }
    } catch (const GuidanceTransportError& e) {
        spdlog::error("{}", e.what());
        return kExitGuidance;
    } catch (const GuidanceSchemaError& e) {
        spdlog::error("{}", e.what());
        return kExitGuidance;
    } catch (const IoError& e) {
        spdlog::error("{}", e.what());
        return kExitIo;
    } catch (const FormatError& e) {
        spdlog::error("{}", e.what());
        return kExitIo;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const json::exception& e) {
        spdlog::error("bad JSON: {}", e.what());
        return kExitValidation;
    }
    return 0;
}

}  // namespace gsedit
