#pragma once

#include <filesystem>
#include <memory>
#include <string>

namespace gsedit {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    /// 0 binds an ephemeral port.
    int port = 8080;
    /// Event logs and default save paths go here.
    std::filesystem::path work_dir = ".";
};

/// HTTP front end for interactive editing sessions.
///
///   POST   /sessions                      {scene, cameras, base_dir?} -> {id, ...}
///   GET    /sessions/{id}                 status
///   DELETE /sessions/{id}
///   GET    /sessions/{id}/frame           ?camera=<id|camera json>&w=&h= -> PNG
///   GET    /sessions/{id}/frame/alpha     same query -> 8-bit gray PNG
///   GET    /sessions/{id}/frame/depth     same query -> PFM
///   POST   /sessions/{id}/prompt_points   {camera, points: [[u, v]]}
///   POST   /sessions/{id}/labels          trace event body
///   POST   /sessions/{id}/edit            edit event body -> JSONL step reports
///   POST   /sessions/{id}/pause | resume | cancel
///   POST   /sessions/{id}/remove | insert | depth_scale
///   POST   /sessions/{id}/save            {path?} -> {path, events}
///
/// Errors: 404 unknown session, 409 while another mutation runs, 422 invalid
/// input, 502 guidance transport failure.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the socket; returns the bound port.
    int bind();
    /// Serves until stop(). Binds first if needed.
    void listen();
    /// bind() and serve on a background thread.
    int start();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace gsedit
