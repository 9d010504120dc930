#pragma once

#include "geaudit/parallel.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace geaudit::classifier {

struct WhoisRecord {
    std::string domain;
    std::string raw_text;  // verbatim; empty on failure
    std::string fetched_at;
    std::vector<std::string> server_chain;
    std::string status = "ok";  // ok | timeout | connect_failed | lookup_failed
    std::string error;

    bool ok() const { return status == "ok"; }
};

nlohmann::json to_json(const WhoisRecord& r);
WhoisRecord whois_from_json(const nlohmann::json& j);

/// First lines of the record that are neither comments nor blank.
std::string whois_excerpt(const WhoisRecord& r, std::size_t max_lines = 20);

class WhoisSource {
public:
    virtual ~WhoisSource() = default;
    /// Never throws for remote failures; they are encoded in the status.
    virtual WhoisRecord lookup(const std::string& domain) = 0;
};

struct WhoisConfig {
    std::string server = "whois.iana.org";
    int port = 43;
    int timeout_ms = 10000;
    int max_referrals = 1;
    std::size_t max_bytes = 1 << 20;
    std::chrono::seconds ttl{30 * 24 * 3600};
    std::optional<std::filesystem::path> cache_dir;
};

/// Reserved names (RFC 2606 / 6761) that never reach the network.
bool reserved_tld(const std::string& domain);

/// Port-43 client: query the root server, follow a "refer:" or
/// "Registrar WHOIS Server:" referral, cache the final text with a TTL.
/// Concurrent lookups of one domain share a single query.
class WhoisClient final : public WhoisSource {
public:
    explicit WhoisClient(WhoisConfig config);
    WhoisRecord lookup(const std::string& domain) override;

    std::size_t network_queries() const { return queries_.load(); }

private:
    struct Cached {
        WhoisRecord record;
        std::chrono::system_clock::time_point at;
    };
    WhoisRecord lookup_uncached(const std::string& domain);
    std::optional<WhoisRecord> cache_get(const std::string& domain);
    void cache_put(const WhoisRecord& r);

    WhoisConfig config_;
    std::atomic<std::size_t> queries_{0};
    std::mutex mu_;
    std::map<std::string, Cached> memory_;
    SingleFlight<std::string, WhoisRecord> flights_;
};

/// Offline source: JSONL lines {"domain": ..., "text": ..., "status": "ok"}.
/// Unknown domains come back as lookup_failed.
class FixtureWhois final : public WhoisSource {
public:
    explicit FixtureWhois(const std::filesystem::path& path);
    WhoisRecord lookup(const std::string& domain) override;

private:
    std::map<std::string, WhoisRecord> records_;
};

/// One raw port-43 exchange: sends "query\r\n" and reads until close.
/// Throws NetworkError (message "timeout" for timeouts).
std::string whois_query(const std::string& server, int port, const std::string& query, int timeout_ms,
                        std::size_t max_bytes);

/// Referral server named in a response, if any.
std::optional<std::string> whois_referral(const std::string& response);

}  // namespace geaudit::classifier
