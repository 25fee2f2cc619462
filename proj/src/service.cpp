#include "gsedit/service.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/events.hpp"
#include "gsedit/json_io.hpp"
#include "gsedit/ply_io.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/tracing.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <deque>
#include <optional>
#include <map>
#include <mutex>
#include <random>
#include <thread>

namespace gsedit {

using json = nlohmann::json;

namespace {

enum class SessionState { Idle, Tracing, Editing, Paused };

const char* to_string(SessionState s) {
    switch (s) {
        case SessionState::Idle: return "idle";
        case SessionState::Tracing: return "tracing";
        case SessionState::Editing: return "editing";
        case SessionState::Paused: return "paused";
    }
    return "idle";
}

struct HttpError : std::runtime_error {
    HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
    int status;
};

struct Session {
    std::string id;
    EditState state;
    EventLog log;
    std::atomic<bool> busy{false};

    // Frames render from a published snapshot so they never wait on a mutation.
    std::mutex view_mutex;
    std::shared_ptr<const GaussianScene> view;

    std::mutex control_mutex;
    std::condition_variable control_cv;
    SessionState status = SessionState::Idle;
    bool paused = false;
    bool cancel = false;

    Session(std::string id, EditState s, EventLog l) : id(std::move(id)), state(std::move(s)), log(std::move(l)) {
        publish(state.scene);
    }

    void publish(const GaussianScene& scene) {
        auto copy = std::make_shared<const GaussianScene>(scene);
        std::lock_guard lock(view_mutex);
        view = std::move(copy);
    }
    std::shared_ptr<const GaussianScene> snapshot() {
        std::lock_guard lock(view_mutex);
        return view;
    }
    void set_status(SessionState s) {
        std::lock_guard lock(control_mutex);
        status = s;
    }
};

/// Holds a session's mutation slot for one request.
class BusyGuard {
public:
    explicit BusyGuard(std::shared_ptr<Session> s) : session_(std::move(s)) {
        if (session_->busy.exchange(true)) throw HttpError(409, "session " + session_->id + " is busy");
    }
    BusyGuard(BusyGuard&& other) noexcept : session_(std::move(other.session_)) {}
    ~BusyGuard() { release(); }
    void release() {
        if (!session_) return;
        {
            std::lock_guard lock(session_->control_mutex);
            session_->status = SessionState::Idle;
            session_->paused = false;
            session_->cancel = false;
        }
        session_->busy = false;
        session_.reset();
    }

private:
    std::shared_ptr<Session> session_;
};

int status_for(std::exception_ptr error, std::string& message) {
    try {
        std::rethrow_exception(error);
    } catch (const HttpError& e) {
        message = e.what();
        return e.status;
    } catch (const GuidanceTransportError& e) {
        message = e.what();
        return 502;
    } catch (const GuidanceSchemaError& e) {
        message = e.what();
        return 502;
    } catch (const Error& e) {
        message = e.what();
        return 422;
    } catch (const json::exception& e) {
        message = std::string("bad JSON: ") + e.what();
        return 422;
    } catch (const std::exception& e) {
        message = e.what();
        return 500;
    } catch (...) {
        message = "unknown error";
        return 500;
    }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw HttpError(422, std::string("request body is not JSON: ") + e.what());
    }
}

std::string random_id() {
    static std::mutex m;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(m);
    static const char* hex = "0123456789abcdef";
    std::string id(12, '0');
    for (auto& c : id) c = hex[rng() % 16];
    return id;
}

}  // namespace

struct Service::Impl {
    ServiceOptions options;
    httplib::Server server;
    std::thread thread;
    int port = -1;

    std::mutex sessions_mutex;
    std::map<std::string, std::shared_ptr<Session>> sessions;

    explicit Impl(ServiceOptions o) : options(std::move(o)) { routes(); }

    std::shared_ptr<Session> find(const std::string& id) {
        std::lock_guard lock(sessions_mutex);
        auto it = sessions.find(id);
        if (it == sessions.end()) throw HttpError(404, "no session " + id);
        return it->second;
    }

    Camera frame_camera(Session& s, const httplib::Request& req) {
        if (!req.has_param("camera")) throw HttpError(422, "frame needs ?camera=");
        const std::string spec = req.get_param_value("camera");
        Camera cam = spec.starts_with("{") ? camera_from_json(json::parse(spec))
                                           : find_camera(s.state.cameras, spec).camera;
        const int w = req.has_param("w") ? std::stoi(req.get_param_value("w")) : cam.width;
        const int h = req.has_param("h") ? std::stoi(req.get_param_value("h")) : cam.height;
        if (w <= 0 || h <= 0 || w > 8192 || h > 8192) throw HttpError(422, "frame size out of range");
        return (w == cam.width && h == cam.height) ? cam : cam.resized(w, h);
    }

    RenderOutput frame(Session& s, const httplib::Request& req) {
        const Camera cam = frame_camera(s, req);
        const auto scene = s.snapshot();
        RenderOptions opt;
        opt.record_contributions = false;
        return render(*scene, cam, opt);
    }

    /// Runs a non-streaming mutation under the session's busy flag.
    json mutate(const std::shared_ptr<Session>& s, const json& event, SessionState status) {
        BusyGuard guard(s);
        s->set_status(status);
        auto outcome = apply_event(s->state, event);
        s->log.append(outcome.event);
        s->publish(s->state.scene);
        if (outcome.failure) std::rethrow_exception(outcome.failure);
        return outcome.result;
    }

    void routes() {
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string message;
            const int status = status_for(ep, message);
            send_json(res, {{"error", message}}, status);
        });

        server.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"ok", true}}); });

        server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            if (!body.contains("scene")) throw HttpError(422, "missing field \"scene\"");
            const std::filesystem::path scene_path = body["scene"].get<std::string>();
            std::vector<NamedCamera> cameras;
            if (!body.contains("cameras")) throw HttpError(422, "missing field \"cameras\"");
            cameras = body["cameras"].is_string() ? load_cameras(body["cameras"].get<std::string>())
                                                  : cameras_from_json(body["cameras"]);
            const std::filesystem::path base = body.value("base_dir", scene_path.parent_path().string());
            const std::string id = random_id();
            std::filesystem::create_directories(options.work_dir);
            auto log = EventLog::create(options.work_dir / (id + ".events.jsonl"), scene_path, cameras, base);
            auto state = open_state(json::parse(read_file_text(log.path())));
            auto session = std::make_shared<Session>(id, std::move(state), std::move(log));
            const std::size_t n = session->state.scene.size();
            {
                std::lock_guard lock(sessions_mutex);
                sessions[id] = session;
            }
            json ids = json::array();
            for (const auto& c : session->state.cameras) ids.push_back(c.id);
            spdlog::info("session {} opened {} ({} Gaussians)", id, scene_path.string(), n);
            send_json(res, {{"id", id}, {"n_gaussians", n}, {"cameras", ids}, {"events", session->log.path().string()}},
                      201);
        });

        server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            json body = {{"id", s->id}, {"events", s->log.path().string()}};
            {
                std::lock_guard lock(s->control_mutex);
                body["state"] = to_string(s->status);
            }
            const auto scene = s->snapshot();
            body["n_gaussians"] = scene->size();
            json labels = json::object();
            for (const auto& [id, name] : scene->label_names())
                labels[std::to_string(id)] = {{"name", name}, {"members", scene->label_member_count(id)}};
            body["labels"] = labels;
            send_json(res, body);
        });

        server.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            BusyGuard guard(s);
            std::lock_guard lock(sessions_mutex);
            sessions.erase(s->id);
            send_json(res, {{"deleted", s->id}});
        });

        server.Get(R"(/sessions/([^/]+)/frame)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            const auto out = frame(*s, req);
            const auto bytes = encode_png(out.color);
            std::string query;
            for (const auto& [k, v] : req.params) query += (query.empty() ? "?" : "&") + k + "=" + httplib::detail::encode_url(v);
            res.set_header("X-Alpha", "/sessions/" + s->id + "/frame/alpha" + query);
            res.set_header("X-Depth", "/sessions/" + s->id + "/frame/depth" + query);
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
        });

        server.Get(R"(/sessions/([^/]+)/frame/alpha)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            const auto bytes = encode_png(frame(*s, req).alpha);
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
        });

        server.Get(R"(/sessions/([^/]+)/frame/depth)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            const auto bytes = encode_pfm(frame(*s, req).depth);
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/x-portable-floatmap");
        });

        server.Post(R"(/sessions/([^/]+)/prompt_points)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            const json body = parse_body(req);
            const auto& view = find_camera(s->state.cameras, body.at("camera").get<std::string>());
            const auto scene = s->snapshot();
            RenderOptions opt;
            opt.record_contributions = false;
            const auto out = render(*scene, view.camera, opt);
            std::vector<Vec3> points;
            for (const auto& p : body.at("points")) {
                const auto uv = p.get<std::vector<double>>();
                if (uv.size() != 2) throw HttpError(422, "points must be [u, v] pairs");
                points.push_back(backproject_point({uv[0], uv[1]}, view.camera, out.depth, out.alpha));
            }
            std::vector<std::pair<std::string, PromptPoint>> prompts;
            for (const auto& cam : s->state.cameras)
                for (const auto& p : reproject_points(points, cam.camera)) prompts.emplace_back(cam.id, p);
            json world = json::array();
            for (const auto& p : points) world.push_back({p.x(), p.y(), p.z()});
            send_json(res, {{"points", world}, {"prompts", prompts_to_json(prompts)}});
        });

        server.Post(R"(/sessions/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            json event = parse_body(req);
            event["op"] = "trace";
            send_json(res, mutate(s, event, SessionState::Tracing));
        });

        for (const char* op : {"remove", "insert", "depth_scale"}) {
            server.Post(std::string(R"(/sessions/([^/]+)/)") + op,
                        [this, op](const httplib::Request& req, httplib::Response& res) {
                            auto s = find(req.matches[1]);
                            json event = parse_body(req);
                            event["op"] = op;
                            send_json(res, mutate(s, event, SessionState::Editing));
                        });
        }

        server.Post(R"(/sessions/([^/]+)/save)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            const json body = parse_body(req);
            BusyGuard guard(s);
            const std::filesystem::path path =
                body.contains("path") ? std::filesystem::path(body["path"].get<std::string>())
                                      : options.work_dir / (s->id + ".ply");
            save_scene(s->state.scene, path);
            send_json(res, {{"path", path.string()}, {"events", s->log.path().string()}});
        });

        server.Post(R"(/sessions/([^/]+)/(pause|resume|cancel))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        auto s = find(req.matches[1]);
                        const std::string what = req.matches[2];
                        std::lock_guard lock(s->control_mutex);
                        if (s->status != SessionState::Editing && s->status != SessionState::Paused)
                            throw HttpError(409, "no edit is running");
                        if (what == "pause") s->paused = true, s->status = SessionState::Paused;
                        if (what == "resume") s->paused = false, s->status = SessionState::Editing;
                        if (what == "cancel") s->cancel = true, s->paused = false;
                        s->control_cv.notify_all();
                        send_json(res, {{"state", to_string(s->status)}});
                    });

        server.Post(R"(/sessions/([^/]+)/edit)", [this](const httplib::Request& req, httplib::Response& res) {
            auto s = find(req.matches[1]);
            json event = parse_body(req);
            event["op"] = "edit";
            const auto cfg = event.contains("config") ? HgsConfig::from_json(event["config"]) : HgsConfig{};
            cfg.validate();
            if (!event.contains("config") || !event["config"].contains("guidance"))
                throw HttpError(422, "edit needs config.guidance");
            auto job = std::make_shared<EditJob>();
            job->guard.emplace(s);
            s->set_status(SessionState::Editing);
            job->worker = std::thread([s, event, job] { run_edit(*s, event, *job); });

            // Wait for the first report so early failures get a real status code.
            std::unique_lock lock(job->mutex);
            job->cv.wait(lock, [&] { return !job->lines.empty() || job->finished; });
            if (job->finished && job->lines.empty()) {
                lock.unlock();
                job->worker.join();
                if (job->error_status) {
                    send_json(res, {{"error", job->error}}, job->error_status);
                } else {
                    res.set_content(job->tail.dump() + "\n", "application/x-ndjson");
                }
                return;
            }
            lock.unlock();
            res.set_chunked_content_provider(
                "application/x-ndjson",
                [job](std::size_t, httplib::DataSink& sink) {
                    for (;;) {
                        std::unique_lock lock(job->mutex);
                        job->cv.wait(lock, [&] { return !job->lines.empty() || job->finished; });
                        if (job->lines.empty()) break;
                        const std::string line = std::move(job->lines.front());
                        job->lines.pop_front();
                        lock.unlock();
                        if (!sink.write(line.data(), line.size())) {
                            std::lock_guard relock(job->mutex);
                            job->abandoned = true;
                            return false;
                        }
                    }
                    const std::string tail = job->tail.dump() + "\n";
                    sink.write(tail.data(), tail.size());
                    sink.done();
                    return true;
                },
                [job, s](bool) {
                    {
                        // A paused worker would otherwise never see the disconnect.
                        std::lock_guard lock(job->mutex);
                        job->abandoned = true;
                        if (!job->finished) {
                            std::lock_guard control(s->control_mutex);
                            s->cancel = true;
                        }
                    }
                    s->control_cv.notify_all();
                    if (job->worker.joinable()) job->worker.join();
                });
        });
    }

    struct EditJob {
        std::optional<BusyGuard> guard;
        std::thread worker;
        std::mutex mutex;
        std::condition_variable cv;
        std::deque<std::string> lines;
        bool finished = false;
        bool abandoned = false;
        int error_status = 0;
        std::string error;
        json tail;
    };

    static void run_edit(Session& s, const json& event, EditJob& job) {
        EventHooks hooks;
        hooks.on_scene = [&](const GaussianScene& scene) { s.publish(scene); };
        hooks.on_step = [&](const StepReport& r) {
            {
                std::lock_guard lock(job.mutex);
                job.lines.push_back(r.to_json().dump() + "\n");
                if (job.abandoned) return false;
            }
            job.cv.notify_all();
            std::unique_lock lock(s.control_mutex);
            s.control_cv.wait(lock, [&] { return !s.paused || s.cancel; });
            return !s.cancel;
        };
        json tail;
        int status = 0;
        std::string message;
        try {
            auto outcome = apply_event(s.state, event, hooks);
            s.log.append(outcome.event);
            s.publish(s.state.scene);
            if (outcome.failure) std::rethrow_exception(outcome.failure);
            tail = {{"done", true}, {"result", outcome.result}};
        } catch (...) {
            status = status_for(std::current_exception(), message);
            tail = {{"done", false}, {"status", status}, {"error", message}};
            spdlog::warn("session {} edit failed: {}", s.id, message);
        }
        {
            std::lock_guard lock(job.mutex);
            job.tail = tail;
            job.error_status = status;
            job.error = message;
            job.finished = true;
            job.guard.reset();
        }
        job.cv.notify_all();
    }

    static std::string read_file_text(const std::filesystem::path& path) {
        const auto bytes = read_file(path);
        return std::string(bytes.begin(), bytes.end());
    }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind() {
    if (impl_->port >= 0) return impl_->port;
    if (impl_->options.port == 0) {
        impl_->port = impl_->server.bind_to_any_port(impl_->options.host);
    } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
        impl_->port = impl_->options.port;
    }
    if (impl_->port <= 0) {
        impl_->port = -1;
        throw IoError("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
    }
    return impl_->port;
}

void Service::listen() {
    bind();
    spdlog::info("listening on http://{}:{}", impl_->options.host, impl_->port);
    impl_->server.listen_after_bind();
}

int Service::start() {
    const int p = bind();
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return p;
}

void Service::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->port; }

}  // namespace gsedit
