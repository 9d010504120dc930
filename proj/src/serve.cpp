#include "geaudit/serve.hpp"

#include "geaudit/analytics.hpp"
#include "geaudit/classifier.hpp"
#include "geaudit/common.hpp"
#include "geaudit/pipeline.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace geaudit::serve {

using Json = nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                Json extra = Json::object()) {
    extra["error"] = kind;
    extra["message"] = message;
    send_json(res, status, extra.dump() + "\n");
}

bool flag(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return false;
    const auto v = req.get_param_value(name);
    return v.empty() || v == "1" || v == "true";
}

Json item_json(const classifier::AdjudicationItem& item) { return classifier::to_json(item); }

}  // namespace

struct Server::Impl {
    store::Store& store;
    ServeOptions options;
    httplib::Server http;
    int port = 0;

    Impl(store::Store& s, ServeOptions o) : store(s), options(std::move(o)) {}

    std::string run_param(const httplib::Request& req) {
        const auto id = req.matches[1].str();
        if (!store::valid_run_id(id) || !store.has_run(id)) throw NotFoundError("unknown run: " + id);
        return id;
    }

    // Maps library errors onto HTTP statuses.
    void guarded(httplib::Response& res, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const PendingError& e) {
            send_error(res, 409, "pending", e.what(), Json{{"pending_hosts", e.hosts()}});
        } catch (const ConflictError& e) {
            send_error(res, 409, "conflict", e.what());
        } catch (const StateError& e) {
            send_error(res, 409, "state", e.what());
        } catch (const NotFoundError& e) {
            send_error(res, 404, "not_found", e.what());
        } catch (const ParseError& e) {
            send_error(res, 400, "invalid", e.what());
        } catch (const ValidationError& e) {
            send_error(res, 400, "invalid", e.what());
        } catch (const Json::exception& e) {
            send_error(res, 400, "invalid", e.what());
        } catch (const std::exception& e) {
            spdlog::error("serve: {}", e.what());
            send_error(res, 500, "internal", e.what());
        }
    }

    Json run_json(const store::RunInfo& info) {
        return Json{{"id", info.id},
                    {"created_at", info.created_at},
                    {"config_digest", info.config_digest},
                    {"finalized", info.finalized}};
    }

    void routes() {
        const std::string p = kApiPrefix;
        http.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin}});
        http.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });

        http.Get(p + "/health", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, Json{{"status", "ok"}, {"report_version", analytics::kReportVersion}}.dump() + "\n");
        });

        http.Get(p + "/runs", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                Json runs = Json::array();
                for (const auto& r : store.list_runs()) runs.push_back(run_json(r));
                send_json(res, 200, Json{{"runs", runs}}.dump() + "\n");
            });
        });

        http.Get(p + R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                Json j = run_json(store.run_info(id));
                std::map<std::string, std::size_t> kinds;
                for (const auto& e : store.scan(id)) ++kinds[e.kind];
                j["ledger"] = kinds;
                const auto queue = pipeline::load_queue(store, id);
                j["pending"] = queue->pending().size();
                send_json(res, 200, j.dump() + "\n");
            });
        });

        http.Get(p + R"(/runs/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                const auto report = pipeline::current_report(store, id, flag(req, "allow_pending"));
                send_json(res, 200, analytics::dump_report(report));
            });
        });

        http.Get(p + R"(/runs/([^/]+)/bands)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                const auto report = pipeline::current_report(store, id, flag(req, "allow_pending"));
                send_json(res, 200,
                          Json{{"bands", report.at("bands")}, {"mosaic", report.at("chart_data").at("mosaic")}}.dump(2) +
                              "\n");
            });
        });

        http.Get(p + R"(/runs/([^/]+)/queue)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                const auto queue = pipeline::load_queue(store, id);
                Json items = Json::array();
                for (const auto& it : flag(req, "all") ? queue->items() : queue->pending()) items.push_back(item_json(it));
                send_json(res, 200, Json{{"run", id}, {"pending", queue->pending().size()}, {"items", items}}.dump() + "\n");
            });
        });

        http.Get(p + R"(/runs/([^/]+)/snapshot)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                if (!req.has_param("url")) throw ValidationError("missing url parameter");
                const auto url = req.get_param_value("url");
                Json found;
                for (const auto& e : store.scan(id, {"snapshot"}))
                    if (e.payload.value("url", "") == url) found = e.payload;
                if (found.is_null()) throw NotFoundError("no snapshot for " + url);
                send_json(res, 200, found.dump() + "\n");
            });
        });

        http.Post(p + R"(/runs/([^/]+)/decisions)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto id = run_param(req);
                const auto body = Json::parse(req.body);
                std::vector<classifier::Decision> decisions;
                auto one = [&](const Json& j) {
                    Json d = j;
                    if (!d.contains("adjudicator")) d["adjudicator"] = "anonymous";
                    if (!d.contains("timestamp")) d["timestamp"] = now_iso8601();
                    decisions.push_back(classifier::decision_from_json(d));
                };
                if (body.contains("decisions")) {
                    for (const auto& d : body.at("decisions")) one(d);
                } else {
                    one(body);
                }
                try {
                    const auto verdicts = pipeline::apply_decisions(store, id, decisions, "api", true);
                    Json applied = Json::array();
                    for (const auto& v : verdicts) applied.push_back(classifier::to_json(v));
                    const auto queue = pipeline::load_queue(store, id);
                    send_json(res, 200, Json{{"applied", applied}, {"pending", queue->pending().size()}}.dump() + "\n");
                } catch (const ConflictError& e) {
                    // Report the winning resolution so clients can reconcile.
                    Json winners = Json::array();
                    const auto queue = pipeline::load_queue(store, id);
                    for (const auto& d : decisions)
                        if (auto it = queue->find(d.host); it && it->resolved) winners.push_back(item_json(*it));
                    send_error(res, 409, "conflict", e.what(), Json{{"resolved", winners}});
                }
            });
        });
    }
};

Server::Server(store::Store& store, ServeOptions options) : impl_(std::make_unique<Impl>(store, std::move(options))) {
    impl_->routes();
}

Server::~Server() { stop(); }

int Server::bind() {
    if (impl_->options.port == 0) {
        impl_->port = impl_->http.bind_to_any_port(impl_->options.host);
        if (impl_->port < 0) throw NetworkError("cannot bind " + impl_->options.host);
    } else {
        if (!impl_->http.bind_to_port(impl_->options.host, impl_->options.port))
            throw NetworkError("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
        impl_->port = impl_->options.port;
    }
    return impl_->port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void Server::wait_until_ready() { impl_->http.wait_until_ready(); }

}  // namespace geaudit::serve
