#include "geaudit/common.hpp"
#include "geaudit/ge_client.hpp"
#include "geaudit/parallel.hpp"

#include "testutil.hpp"

#include <doctest.h>

#include <cstdlib>
#include <deque>
#include <fstream>
#include <thread>

using namespace geaudit;
using namespace geaudit::ge;

namespace {

RawExchange exchange(const std::string& provider, const std::string& body, const std::string& lang = "en") {
    RawExchange x;
    x.provider = provider;
    x.question_id = "q01.dp";
    x.party_id = "dp";
    x.language = lang;
    x.repeat_index = 0;
    x.http_status = 200;
    x.response = body;
    x.timestamp = "2025-01-01T00:00:00Z";
    return x;
}

corpus::Question question() { return {"q01.dp", "q01", "dp", "en", "What does the Democratic Party say?"}; }

class FakeTransport final : public Transport {
public:
    std::deque<http::Response> script;
    std::vector<http::Request> seen;
    std::mutex mu;

    http::Response send(const http::Request& r) override {
        std::lock_guard lock(mu);
        seen.push_back(r);
        if (script.empty()) return ok_response();
        auto res = script.front();
        script.pop_front();
        return res;
    }

    static http::Response ok_response() {
        http::Response r;
        r.status = 200;
        r.body = R"({"model":"m","output":[{"type":"message","content":[{"type":"output_text","text":"One. Two.","annotations":[]}]}]})";
        return r;
    }
    static http::Response status(int code, std::string retry_after = {}) {
        http::Response r;
        r.status = code;
        if (!retry_after.empty()) r.headers["retry-after"] = retry_after;
        return r;
    }
};

struct EnvGuard {
    explicit EnvGuard(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
    ~EnvGuard() { ::unsetenv(name_); }
    const char* name_;
};

}  // namespace

TEST_CASE("openai: annotations map code-point offsets onto sentences") {
    // "日本。" is 3 code points but 9 bytes; the annotation covers the second sentence.
    const std::string body = R"({"model":"gpt-x","output":[
      {"type":"web_search_call","action":{"type":"search","sources":[{"type":"url","url":"https://a.example.com/x"}]}},
      {"type":"message","content":[{"type":"output_text","text":"日本。Beta is here. Gamma.",
        "annotations":[{"type":"url_citation","url":"https://www.news.example.co.uk/p?q=1","start_index":3,"end_index":17}]}]}]})";
    const auto ex = extract_citations(exchange("openai", body, "ja"));
    CHECK(ex.model == "gpt-x");
    CHECK(ex.answer_text == "日本。Beta is here. Gamma.");
    REQUIRE(ex.citations.size() == 1);
    CHECK(ex.citations[0].host == "www.news.example.co.uk");
    CHECK(ex.citations[0].normalized_domain == "example.co.uk");
    CHECK(ex.citations[0].sentence_indices == std::vector<std::size_t>{1});
    REQUIRE(ex.visited_sources);
    // The cited URL was not among the search sources, so it is appended.
    CHECK(*ex.visited_sources == std::vector<std::string>{"https://a.example.com/x", "https://www.news.example.co.uk/p?q=1"});
}

TEST_CASE("openai: no web_search_call means visited sources are unknown") {
    const auto ex = extract_citations(exchange("openai", FakeTransport::ok_response().body));
    CHECK_FALSE(ex.visited_sources.has_value());
    CHECK(ex.citations.empty());
}

TEST_CASE("anthropic: citations attach to their text block") {
    const std::string body = R"({"model":"claude-x","content":[
      {"type":"server_tool_use","id":"t","name":"web_search","input":{"query":"x"}},
      {"type":"web_search_tool_result","tool_use_id":"t","content":[
        {"type":"web_search_result","url":"https://gop.com/a","title":"A"},
        {"type":"web_search_result","url":"https://lp.org/b","title":"B"}]},
      {"type":"text","text":"Intro sentence. "},
      {"type":"text","text":"The party backs tax cuts.","citations":[{"type":"web_search_result_location","url":"https://gop.com/a","cited_text":"..."}]}]})";
    const auto ex = extract_citations(exchange("anthropic", body));
    CHECK(ex.answer_text == "Intro sentence. The party backs tax cuts.");
    REQUIRE(ex.citations.size() == 1);
    CHECK(ex.citations[0].host == "gop.com");
    CHECK(ex.citations[0].sentence_indices == std::vector<std::size_t>{1});
    REQUIRE(ex.visited_sources);
    CHECK(ex.visited_sources->size() == 2);
}

TEST_CASE("gemini: supports use byte offsets and unused chunks stay answer-level") {
    const std::string body = R"({"modelVersion":"gemini-x","candidates":[{"content":{"parts":[{"text":"First claim. Second claim."}]},
      "groundingMetadata":{"groundingChunks":[{"web":{"uri":"https://democrats.org/x","title":"d"}},{"web":{"uri":"https://example.edu/y","title":"e"}}],
      "groundingSupports":[{"segment":{"startIndex":0,"endIndex":12},"groundingChunkIndices":[0]}]}}]})";
    const auto ex = extract_citations(exchange("gemini", body));
    CHECK(ex.model == "gemini-x");
    REQUIRE(ex.citations.size() == 2);
    CHECK(ex.citations[0].sentence_indices == std::vector<std::size_t>{0});
    CHECK(ex.citations[1].host == "example.edu");
    CHECK(ex.citations[1].sentence_indices.empty());
    CHECK_FALSE(ex.visited_sources.has_value());
}

TEST_CASE("schema mismatches name the missing field") {
    try {
        extract_citations(exchange("openai", R"({"model":"m"})"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("output") != std::string::npos);
    }
    CHECK_THROWS_AS(extract_citations(exchange("gemini", R"({"candidates":[]})")), ParseError);
    CHECK_THROWS_AS(extract_citations(exchange("anthropic", "not json")), ParseError);
    CHECK_THROWS_AS(extract_citations(exchange("nope", "{}")), NotFoundError);
}

TEST_CASE("record JSON round-trips") {
    const auto ex = extract_citations(exchange("openai", R"({"model":"m","output":[{"type":"web_search_call","action":{"sources":[]}},
      {"type":"message","content":[{"type":"output_text","text":"A. B.","annotations":[{"type":"url_citation","url":"https://x.org/","start_index":0,"end_index":2}]}]}]})"));
    const auto rec = make_record(exchange("openai", "{}"), ex);
    CHECK(answer_from_json(to_json(rec)) == rec);
}

TEST_CASE("client retries rate limits with backoff and honors Retry-After") {
    EnvGuard env("GEAUDIT_TEST_KEY", "secret");
    FakeTransport t;
    t.script = {FakeTransport::status(429, "3"), FakeTransport::status(503), FakeTransport::ok_response()};
    ProviderConfig cfg{"openai", "", "http://fake", "m", "GEAUDIT_TEST_KEY"};
    cfg.backoff_base_ms = 100;
    Client c(cfg, t);
    std::vector<long> sleeps;
    c.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
    std::vector<RawExchange> sunk;
    const auto res = c.ask(question(), 1, [&](const RawExchange& x) { sunk.push_back(x); });
    CHECK(res.errors.empty());
    REQUIRE(res.records.size() == 1);
    CHECK(sunk.size() == 1);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0] >= 1500);  // 3 s Retry-After times jitter in [0.5, 1)
    CHECK(sleeps[0] < 3000);
    CHECK(sleeps[1] >= 100);
    CHECK(sleeps[1] < 200);
    CHECK(t.seen.size() == 3);
    // The key travels in a header and never in the recorded request.
    CHECK(sunk[0].request.dump().find("secret") == std::string::npos);
}

TEST_CASE("client gives up after max attempts and reports per repeat") {
    EnvGuard env("GEAUDIT_TEST_KEY", "k");
    FakeTransport t;
    for (int i = 0; i < 10; ++i) t.script.push_back(FakeTransport::status(429));
    ProviderConfig cfg{"openai", "", "http://fake", "m", "GEAUDIT_TEST_KEY"};
    cfg.max_attempts = 3;
    Client c(cfg, t);
    c.set_sleeper([](auto) {});
    const auto res = c.ask(question(), 2, [](const RawExchange&) {});
    REQUIRE(res.errors.size() == 2);
    CHECK(res.errors[0].kind == "rate_limit");
    CHECK(res.errors[1].repeat_index == 1);
    CHECK(t.seen.size() == 6);
}

TEST_CASE("auth failures are not retried") {
    EnvGuard env("GEAUDIT_TEST_KEY", "k");
    FakeTransport t;
    t.script = {FakeTransport::status(401)};
    Client c(ProviderConfig{"openai", "", "http://fake", "m", "GEAUDIT_TEST_KEY"}, t);
    c.set_sleeper([](auto) { FAIL("should not sleep"); });
    const auto res = c.ask(question(), 1, [](const RawExchange&) {});
    REQUIRE(res.errors.size() == 1);
    CHECK(res.errors[0].kind == "auth");
    CHECK(t.seen.size() == 1);
}

TEST_CASE("missing credential fails every repeat without network") {
    ::unsetenv("GEAUDIT_TEST_MISSING");
    FakeTransport t;
    Client c(ProviderConfig{"openai", "", "http://fake", "m", "GEAUDIT_TEST_MISSING"}, t);
    const auto res = c.ask(question(), 5, [](const RawExchange&) {});
    CHECK(res.errors.size() == 5);
    CHECK(res.errors[4].kind == "auth");
    CHECK(t.seen.empty());
}

TEST_CASE("malformed bodies are persisted before the parse failure is reported") {
    EnvGuard env("GEAUDIT_TEST_KEY", "k");
    FakeTransport t;
    http::Response bad;
    bad.status = 200;
    bad.body = R"({"unexpected":true})";
    t.script = {bad};
    Client c(ProviderConfig{"openai", "", "http://fake", "m", "GEAUDIT_TEST_KEY"}, t);
    int sunk = 0;
    const auto res = c.ask(question(), 1, [&](const RawExchange&) { ++sunk; });
    CHECK(sunk == 1);
    REQUIRE(res.errors.size() == 1);
    CHECK(res.errors[0].kind == "malformed");
}

TEST_CASE("limiter bounds in-flight requests") {
    ProviderLimiter lim(2, 0);
    std::atomic<int> now{0}, peak{0};
    parallel_for(16, 8, [&](std::size_t) {
        auto p = lim.acquire();
        const int v = ++now;
        int prev = peak.load();
        while (v > prev && !peak.compare_exchange_weak(prev, v)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        --now;
    });
    CHECK(peak.load() <= 2);
    CHECK(lim.peak_in_flight() == 2);
}

TEST_CASE("fixtures round-trip, including non-UTF-8 bodies") {
    testutil::TempDir tmp;
    const auto path = tmp / "f.jsonl";
    auto a = exchange("openai", FakeTransport::ok_response().body);
    auto b = exchange("openai", std::string("\xff\xfe binary", 9));
    b.repeat_index = 1;
    {
        FixtureWriter w(path);
        CHECK(w.record(a) == "openai/q01.dp/0");
        w.record(b);
    }
    const auto back = read_fixture(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].response == a.response);
    CHECK(back[1].response == b.response);

    const auto r = replay(path);
    CHECK(r.records.size() == 1);
    REQUIRE(r.skipped.size() == 1);
    CHECK(r.skipped[0].rfind("openai/q01.dp/1", 0) == 0);
}

TEST_CASE("truncated fixture lines report their line number") {
    testutil::TempDir tmp;
    const auto path = tmp / "f.jsonl";
    {
        FixtureWriter w(path);
        w.record(exchange("openai", "{}"));
        w.record(exchange("openai", "{}"));
    }
    {
        std::ofstream out(path, std::ios::app);
        out << R"({"provider":"openai","question_)";
    }
    try {
        read_fixture(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.line());
        CHECK(*e.line() == 4);
    }
}

TEST_CASE("fixture version mismatch is rejected on line 1") {
    testutil::TempDir tmp;
    const auto path = tmp / "f.jsonl";
    write_file_atomic(path, R"({"format":"geaudit-fixture","version":2})" "\n");
    try {
        read_fixture(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == std::optional<std::size_t>(1));
    }
}
