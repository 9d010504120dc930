#pragma once

#include "geaudit/store.hpp"

#include <memory>
#include <string>

namespace geaudit::serve {

inline constexpr const char* kApiPrefix = "/api/v1";

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8787;  // 0 picks a free port
    std::string cors_origin = "*";
};

/// JSON API over a run store:
///   GET  /api/v1/health
///   GET  /api/v1/runs
///   GET  /api/v1/runs/{id}
///   GET  /api/v1/runs/{id}/report[?allow_pending=1]
///   GET  /api/v1/runs/{id}/bands[?allow_pending=1]
///   GET  /api/v1/runs/{id}/queue[?all=1]
///   GET  /api/v1/runs/{id}/snapshot?url=...
///   POST /api/v1/runs/{id}/decisions  {"host", "category", "adjudicator"} or {"decisions": [...]}
/// Errors are {"error": kind, "message": ...} with 400/404/409/500.
class Server {
public:
    Server(store::Store& store, ServeOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and returns the port. Throws NetworkError on bind failure.
    int bind();
    /// Serves until stop(). bind() must have succeeded.
    void listen();
    void stop();
    /// Blocks until listen() is accepting connections.
    void wait_until_ready();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace geaudit::serve
