#include "geaudit/common.hpp"
#include "geaudit/harvest.hpp"

#include "testutil.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <fstream>
#include <thread>

using namespace geaudit;
using namespace geaudit::harvest;

namespace {

std::filesystem::path html_dir() { return testutil::source_dir() / "tests" / "fixtures" / "html"; }

/// Counts nodes named `tag` by walking start tags only (independent of the
/// extractor): skips comments and the bodies of script/style/template/noscript.
std::size_t count_start_tags(const std::string& html, const std::string& tag) {
    std::size_t n = 0;
    std::string lower = text::to_lower_ascii(html);
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (lower.compare(i, 4, "<!--") == 0) {
            i = lower.find("-->", i);
            if (i == std::string::npos) break;
            continue;
        }
        bool skipped = false;
        for (const char* hidden : {"script", "style", "template", "noscript"}) {
            const std::string open = std::string("<") + hidden;
            if (lower.compare(i, open.size(), open) == 0) {
                i = lower.find(std::string("</") + hidden, i);
                if (i == std::string::npos) i = lower.size();
                skipped = true;
                break;
            }
        }
        if (skipped) continue;
        const std::string open = "<" + tag;
        if (lower.compare(i, open.size(), open) != 0) continue;
        const std::size_t after = i + open.size();
        if (after >= lower.size()) continue;  // truncated at EOF
        const char c = lower[after];
        if (c == '>' || c == ' ' || c == '/' || c == '\t' || c == '\n') ++n;
    }
    return n;
}

struct LocalServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    std::atomic<int> hits{0};

    LocalServer() {
        server.set_pre_routing_handler([this](const httplib::Request&, httplib::Response&) {
            ++hits;
            return httplib::Server::HandlerResponse::Unhandled;
        });
    }
    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

FetchConfig quick_config() {
    FetchConfig c;
    c.politeness = std::chrono::milliseconds(0);
    c.timeout_ms = 2000;
    return c;
}

}  // namespace

TEST_CASE("extract_text basics") {
    CHECK(extract_text("<p>A&amp;B</p><script>x()</script>") == "A&B");
    CHECK(extract_text("<div>one</div><div>two</div>") == "one\ntwo");
    CHECK(extract_text("") == "");
    CHECK(extract_text("<p>line\nwrapped</p>") == "line wrapped");
    CHECK(extract_text("<STYLE>p{}</STYLE>ok") == "ok");
    CHECK(extract_text("a<br>b") == "a\nb");
}

TEST_CASE("crafted pages match hand counts") {
    const auto expected = nlohmann::json::parse(read_file(html_dir() / "expected.json"));
    REQUIRE(expected.size() == 12);
    for (const auto& [name, want] : expected.items()) {
        CAPTURE(name);
        const auto html = read_file(html_dir() / name);
        const auto f = extract_features(html);
        CHECK(f.link_count == want["link_count"].get<std::size_t>());
        CHECK(f.ul_count == want["ul_count"].get<std::size_t>());
        CHECK(f.heading_count == want["heading_count"].get<std::size_t>());
        CHECK(f.text_length == want["text_length"].get<std::size_t>());
        CHECK(f.text_density == doctest::Approx(want["text_density"].get<double>()).epsilon(1e-12));
        CHECK(f.density_clamped == (f.heading_count == 0));
        if (want.contains("text")) CHECK(extract_text(html) == want["text"].get<std::string>());
        // Same extraction feeds both operations.
        CHECK(f.text_length == text::utf8_length(extract_text(html)));
        const double h = static_cast<double>(std::max<std::size_t>(1, f.heading_count));
        CHECK(f.text_density == static_cast<double>(f.text_length) / h);
        CHECK(f.text_density * h == doctest::Approx(static_cast<double>(f.text_length)).epsilon(1e-15));
        CHECK(extract_features(html) == f);
    }
}

TEST_CASE("tag counts agree with an independent start-tag walk") {
    for (const auto& entry : std::filesystem::directory_iterator(html_dir())) {
        if (entry.path().extension() != ".html") continue;
        CAPTURE(entry.path().filename().string());
        const auto html = read_file(entry.path());
        const auto f = extract_features(html);
        CHECK(f.ul_count == count_start_tags(html, "ul"));
        CHECK(f.link_count == count_start_tags(html, "a"));
        std::size_t h = 0;
        for (int k = 2; k <= 6; ++k) h += count_start_tags(html, "h" + std::to_string(k));
        CHECK(f.heading_count == h);
    }
}

TEST_CASE("nested lists count every ul node") {
    std::string html;
    for (int depth = 1; depth <= 6; ++depth) {
        html = "<ul><li>x" + html + "</li></ul>";
        CHECK(extract_features(html).ul_count == static_cast<std::size_t>(depth));
    }
}

TEST_CASE("robots rules") {
    const auto txt = "User-agent: *\nDisallow: /private\nAllow: /private/open\n\nUser-agent: other\nDisallow: /\n";
    const auto r = RobotsRules::parse(txt, "geaudit/1.0");
    CHECK(r.allowed("/"));
    CHECK_FALSE(r.allowed("/private/x"));
    CHECK(r.allowed("/private/open/page"));
    const auto specific = RobotsRules::parse("User-agent: geaudit\nDisallow: /a\nUser-agent: *\nDisallow: /\n", "geaudit/1.0");
    CHECK(specific.allowed("/b"));
    CHECK_FALSE(specific.allowed("/a/b"));
    CHECK(RobotsRules::parse("User-agent: *\nDisallow:\n", "x").allowed("/anything"));
}

TEST_CASE("fetcher against a local server") {
    LocalServer srv;
    srv.server.Get("/robots.txt", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("User-agent: *\nDisallow: /secret\n", "text/plain");
    });
    srv.server.Get("/page", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("<h2>Hi</h2><p>there</p>", "text/html; charset=utf-8");
    });
    srv.server.Get("/missing", [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
    srv.server.Get("/secret", [](const httplib::Request&, httplib::Response& res) { res.set_content("x", "text/html"); });
    srv.server.Get("/big", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(4096, 'a'), "text/html");
    });
    srv.server.Get("/pdf", [](const httplib::Request&, httplib::Response& res) { res.set_content("%PDF", "application/pdf"); });
    srv.server.Get(R"(/loop/(\d+))", [](const httplib::Request& req, httplib::Response& res) {
        const int n = std::stoi(req.matches[1]);
        res.status = 302;
        res.set_header("Location", "/loop/" + std::to_string(n + 1));
    });
    srv.server.Get("/hop", [](const httplib::Request&, httplib::Response& res) {
        res.status = 301;
        res.set_header("Location", "/page");
    });
    srv.start();

    testutil::TempDir tmp;
    auto cfg = quick_config();
    cfg.cache_dir = tmp / "pages";
    cfg.max_bytes = 1024;
    Fetcher f(cfg);

    const auto ok = f.fetch(srv.url("/page"));
    CHECK(ok.status == FetchStatus::Ok);
    CHECK(ok.http_code == 200);
    CHECK(ok.extracted_text == "Hi\nthere");
    CHECK_FALSE(ok.from_cache);

    const auto before = f.network_requests();
    const auto again = f.fetch(srv.url("/page"));
    CHECK(again.from_cache);
    CHECK(again.extracted_text == ok.extracted_text);
    CHECK(f.network_requests() == before);

    const auto forced = f.fetch(srv.url("/page"), true);
    CHECK_FALSE(forced.from_cache);
    CHECK(f.network_requests() == before + 1);

    const auto missing = f.fetch(srv.url("/missing"));
    CHECK(missing.status == FetchStatus::HttpError);
    CHECK(missing.http_code == 404);
    CHECK(missing.extracted_text.empty());

    CHECK(f.fetch(srv.url("/secret")).status == FetchStatus::RobotsDenied);
    CHECK(f.fetch(srv.url("/big")).status == FetchStatus::TooLarge);
    CHECK(f.fetch(srv.url("/pdf")).status == FetchStatus::UnsupportedType);

    const auto loop = f.fetch(srv.url("/loop/0"));
    CHECK(loop.status == FetchStatus::HttpError);
    CHECK(loop.final_url == srv.url("/loop/5"));

    const auto hop = f.fetch(srv.url("/hop"));
    CHECK(hop.status == FetchStatus::Ok);
    CHECK(hop.final_url == srv.url("/page"));

    // A fresh fetcher over the same cache directory needs no network.
    Fetcher g(cfg);
    CHECK(g.fetch(srv.url("/page")).from_cache);
    CHECK(g.network_requests() == 0);
}

TEST_CASE("fetcher reports unreachable hosts without throwing") {
    LocalServer srv;
    srv.start();
    const auto url = srv.url("/x");
    srv.server.stop();
    srv.thread.join();
    auto cfg = quick_config();
    cfg.respect_robots = false;
    Fetcher f(cfg);
    const auto s = f.fetch(url);
    CHECK((s.status == FetchStatus::NetworkError || s.status == FetchStatus::Timeout));
    CHECK(f.fetch("ftp://example.com/").status == FetchStatus::NetworkError);
}

TEST_CASE("concurrent fetches of one URL share a single request") {
    LocalServer srv;
    srv.server.Get("/slow", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        res.set_content("<p>slow</p>", "text/html");
    });
    srv.start();
    auto cfg = quick_config();
    cfg.respect_robots = false;
    Fetcher f(cfg);
    const std::vector<std::string> urls(8, srv.url("/slow"));
    const auto out = fetch_all(f, urls, 8);
    for (const auto& s : out) CHECK(s.extracted_text == "slow");
    CHECK(f.network_requests() == 1);
    CHECK(srv.hits.load() == 1);
}

TEST_CASE("fixture pages") {
    testutil::TempDir tmp;
    const auto path = tmp / "pages.jsonl";
    write_file_atomic(path, R"({"url":"https://a.org/","status":"ok","code":200,"html":"<p>A</p>"})" "\n"
                            R"({"url":"https://b.org/","status":"http_error","code":404,"html":""})" "\n");
    FixturePages pages(path);
    CHECK(pages.size() == 2);
    CHECK(pages.fetch("https://a.org/").extracted_text == "A");
    CHECK(pages.fetch("https://b.org/").http_code == 404);
    CHECK(pages.fetch("https://c.org/").status == FetchStatus::NetworkError);
    write_file_atomic(path, "{\"url\":\n");
    CHECK_THROWS_AS(FixturePages{path}, ParseError);
}
