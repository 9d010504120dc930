#pragma once

#include "geaudit/parallel.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::harvest {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Extraction

/// Visible text: script/style/template/noscript/title and comments removed,
/// block boundaries as newlines, entities decoded, whitespace collapsed.
std::string extract_text(std::string_view html);

struct StructFeatures {
    std::size_t link_count = 0;     // <a> start tags
    double text_density = 0.0;      // text_length / max(1, heading_count)
    std::size_t text_length = 0;    // Unicode scalar values of extract_text(html)
    std::size_t ul_count = 0;       // <ul> start tags
    std::size_t heading_count = 0;  // <h2>..<h6> start tags
    bool density_clamped = false;   // heading_count == 0

    bool operator==(const StructFeatures&) const = default;
};

StructFeatures extract_features(std::string_view html);

Json to_json(const StructFeatures& f);
StructFeatures features_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Fetching

enum class FetchStatus { Ok, HttpError, Timeout, RobotsDenied, TooLarge, NetworkError, UnsupportedType };

std::string_view to_string(FetchStatus s);
FetchStatus parse_fetch_status(std::string_view s);

struct PageSnapshot {
    std::string url;
    std::string final_url;
    FetchStatus status = FetchStatus::NetworkError;
    int http_code = 0;
    std::string html;            // up to the size cap
    std::string extracted_text;  // present iff status == Ok
    std::string fetched_at;
    std::string detail;
    bool from_cache = false;

    bool ok() const { return status == FetchStatus::Ok; }
};

/// Ledger form: metadata plus text digest, never the HTML itself.
Json snapshot_meta(const PageSnapshot& s);

class PageSource {
public:
    virtual ~PageSource() = default;
    /// Never throws for remote failures; they are encoded in the status.
    virtual PageSnapshot fetch(const std::string& url, bool force = false) = 0;
    virtual std::string id() const = 0;
};

struct FetchConfig {
    std::string user_agent = "geaudit/1.0 (+citation audit)";
    int timeout_ms = 20000;
    std::size_t max_bytes = 5 * 1024 * 1024;
    int max_redirects = 5;
    std::chrono::seconds ttl{7 * 24 * 3600};
    std::chrono::milliseconds politeness{1000};  // per-host gap between requests
    int max_concurrency = 4;
    bool respect_robots = true;
    std::optional<std::filesystem::path> cache_dir;
};

/// robots.txt rules for one user agent (longest match wins, Allow on ties).
class RobotsRules {
public:
    static RobotsRules parse(std::string_view text, std::string_view user_agent);
    static RobotsRules allow_all() { return {}; }
    bool allowed(std::string_view path) const;

private:
    std::vector<std::pair<std::string, bool>> rules_;
};

class Fetcher final : public PageSource {
public:
    explicit Fetcher(FetchConfig config);
    PageSnapshot fetch(const std::string& url, bool force = false) override;
    std::string id() const override { return "http"; }

    /// HTTP requests actually sent, robots.txt included.
    std::size_t network_requests() const { return requests_.load(); }

private:
    struct HostState {
        std::mutex mu;  // one request at a time per host
        std::chrono::steady_clock::time_point last{};
        std::optional<RobotsRules> robots;
    };

    PageSnapshot fetch_uncached(const std::string& url);
    std::optional<PageSnapshot> cache_get(const std::string& url) const;
    void cache_put(const PageSnapshot& s) const;
    HostState& host_state(const std::string& origin);
    bool robots_allowed(HostState& hs, const std::string& origin, const std::string& path);
    struct Hop;
    Hop polite_get(HostState& hs, const std::string& url);

    FetchConfig config_;
    std::atomic<std::size_t> requests_{0};
    std::mutex hosts_mu_;
    std::map<std::string, std::unique_ptr<HostState>> hosts_;
    SingleFlight<std::string, PageSnapshot> flights_;
    std::mutex slots_mu_;
    std::condition_variable slots_cv_;
    int slots_used_ = 0;
};

/// Offline page source backed by a JSONL file of
///   {"url": ..., "status": "ok"|"http_error"|..., "code": 200, "html": ...}
/// URLs missing from the file come back as network_error.
class FixturePages final : public PageSource {
public:
    explicit FixturePages(const std::filesystem::path& path);
    PageSnapshot fetch(const std::string& url, bool force = false) override;
    std::string id() const override { return id_; }
    std::size_t size() const { return pages_.size(); }

private:
    std::string id_;
    std::map<std::string, PageSnapshot> pages_;
};

/// Fetches every URL with at most `concurrency` calls in flight. Output
/// order follows input order.
std::vector<PageSnapshot> fetch_all(PageSource& source, const std::vector<std::string>& urls, int concurrency);

}  // namespace geaudit::harvest
