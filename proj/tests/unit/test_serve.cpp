#include "golden.hpp"
#include "testutil.hpp"

#include "geaudit/analytics.hpp"
#include "geaudit/pipeline.hpp"
#include "geaudit/serve.hpp"

#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <thread>

using namespace geaudit;
using Json = nlohmann::json;

namespace {

// Server on an ephemeral port, stopped on scope exit.
struct Running {
    serve::Server server;
    int port;
    std::thread thread;

    explicit Running(store::Store& store) : server(store, {"127.0.0.1", 0, "*"}), port(server.bind()) {
        thread = std::thread([this] { server.listen(); });
        server.wait_until_ready();
    }
    ~Running() {
        server.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30, 0);
        return c;
    }
};

std::string api(const std::string& path) { return std::string(serve::kApiPrefix) + path; }

httplib::Result post_json(httplib::Client& c, const std::string& path, const Json& body) {
    return c.Post(api(path), body.dump(), "application/json");
}

}  // namespace

TEST_CASE("review API over a queued run") {
    testutil::TempDir tmp;
    store::Store store(tmp / "store");
    testutil::golden_until_queue(store, "golden");
    Running srv(store);
    auto c = srv.client();

    auto health = c.Get(api("/health"));
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    auto runs = c.Get(api("/runs"));
    REQUIRE(runs);
    CHECK(Json::parse(runs->body).at("runs").at(0).at("id") == "golden");
    CHECK(c.Get(api("/runs/nope"))->status == 404);
    CHECK(c.Get(api("/runs/nope/queue"))->status == 404);

    auto queue = c.Get(api("/runs/golden/queue"));
    REQUIRE(queue);
    REQUIRE(queue->status == 200);
    const auto q = Json::parse(queue->body);
    CHECK(q.at("pending") == 4);
    REQUIRE(q.at("items").size() == 4);
    for (const auto& item : q.at("items")) {
        CHECK_FALSE(item.at("host").get<std::string>().empty());
        CHECK(item.contains("votes"));
        CHECK(item.contains("reason"));
    }

    // Report is blocked while hosts are pending.
    auto blocked = c.Get(api("/runs/golden/report"));
    REQUIRE(blocked);
    CHECK(blocked->status == 409);
    CHECK(Json::parse(blocked->body).at("pending_hosts").size() == 4);

    auto preflight = c.Options(api("/runs/golden/decisions"));
    REQUIRE(preflight);
    CHECK(preflight->status == 204);
    CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

    SUBCASE("decision lifecycle") {
        auto ok = post_json(c, "/runs/golden/decisions", {{"host", "brookings.edu"}, {"category", "academia"}, {"adjudicator", "ann"}});
        REQUIRE(ok);
        CHECK(ok->status == 200);
        const auto body = Json::parse(ok->body);
        CHECK(body.at("applied").size() == 1);
        CHECK(body.at("pending") == 3);

        // Any later decision for a resolved host conflicts, even a matching one.
        auto again = post_json(c, "/runs/golden/decisions", {{"host", "brookings.edu"}, {"category", "academia"}});
        CHECK(again->status == 409);
        CHECK(Json::parse(again->body).at("resolved").at(0).at("resolution").at("category") == "academia");

        auto conflict = post_json(c, "/runs/golden/decisions", {{"host", "brookings.edu"}, {"category", "media"}});
        REQUIRE(conflict);
        CHECK(conflict->status == 409);
        const auto cj = Json::parse(conflict->body);
        CHECK(cj.at("error") == "conflict");
        REQUIRE(cj.at("resolved").size() == 1);
        CHECK(cj.at("resolved").at(0).at("host") == "brookings.edu");

        CHECK(post_json(c, "/runs/golden/decisions", {{"host", "nowhere.example"}, {"category", "media"}})->status == 404);
        CHECK(post_json(c, "/runs/golden/decisions", {{"host", "nippon.com"}, {"category", "gossip"}})->status == 400);
        CHECK(c.Post(api("/runs/golden/decisions"), "{not json", "application/json")->status == 400);
        CHECK(post_json(c, "/runs/golden/decisions", {{"category", "media"}})->status == 400);

        // Batch form resolves the rest; the report becomes available.
        Json batch = {{"decisions",
                       {{{"host", "nippon.com"}, {"category", "media"}},
                        {{"host", "ballotpedia.org"}, {"category", "media"}},
                        {{"host", "democratsabroad.org"}, {"category", "party"}}}}};
        auto rest = post_json(c, "/runs/golden/decisions", batch);
        REQUIRE(rest);
        CHECK(rest->status == 200);
        CHECK(Json::parse(rest->body).at("pending") == 0);

        pipeline::Services services;
        pipeline::classify(store, "golden", services);
        pipeline::reflect(store, "golden", services);
        pipeline::webstruct(store, "golden", services);

        auto report = c.Get(api("/runs/golden/report"));
        REQUIRE(report);
        CHECK(report->status == 200);
        CHECK(report->body == analytics::dump_report(pipeline::current_report(store, "golden")));
        // Decisions here match the fixture file apart from their source, so
        // everything but provenance matches the committed report.
        auto got = Json::parse(report->body);
        auto want = Json::parse(read_file(testutil::golden_report_path()));
        got.erase("provenance");
        want.erase("provenance");
        CHECK(got == want);

        auto bands = c.Get(api("/runs/golden/bands"));
        REQUIRE(bands);
        const auto bj = Json::parse(bands->body);
        CHECK(bj.at("bands") == want.at("bands"));
        CHECK(bj.at("mosaic") == want.at("chart_data").at("mosaic"));

        const auto info = Json::parse(c.Get(api("/runs/golden"))->body);
        CHECK(info.at("pending") == 0);
        CHECK(info.at("ledger").at("decision") == 4);

        const auto url = want.at("citations").at(0).at("url").get<std::string>();
        auto snap = c.Get(api("/runs/golden/snapshot?url=") + httplib::detail::encode_query_param(url));
        REQUIRE(snap);
        CHECK(snap->status == 200);
        CHECK(Json::parse(snap->body).at("url") == url);
        CHECK(c.Get(api("/runs/golden/snapshot?url=https%3A%2F%2Fnone.example%2F"))->status == 404);
        CHECK(c.Get(api("/runs/golden/snapshot"))->status == 400);
    }

    SUBCASE("concurrent conflicting decisions: first writer wins") {
        const std::vector<std::string> cats{"media", "academia", "government", "platform", "party", "owned", "media", "academia"};
        std::vector<int> status(cats.size());
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < cats.size(); ++i)
            threads.emplace_back([&, i] {
                auto ci = srv.client();
                auto r = post_json(ci, "/runs/golden/decisions", {{"host", "nippon.com"}, {"category", cats[i]}});
                status[i] = r ? r->status : -1;
            });
        for (auto& t : threads) t.join();

        const auto decisions = store.scan("golden", {"decision"});
        REQUIRE(decisions.size() == 1);
        const auto winner = decisions[0].payload.at("category").get<std::string>();
        CHECK(std::count(status.begin(), status.end(), 200) == 1);
        CHECK(std::count(status.begin(), status.end(), 409) == static_cast<long>(cats.size()) - 1);
        const auto i = std::find(status.begin(), status.end(), 200) - status.begin();
        CHECK(cats[static_cast<std::size_t>(i)] == winner);
    }
}
