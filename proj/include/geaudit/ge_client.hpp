#pragma once

#include "geaudit/corpus.hpp"
#include "geaudit/http.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::ge {

using Json = nlohmann::json;

struct CitationRef {
    std::string url;
    std::string host;               // full lowercase host
    std::string normalized_domain;  // registrable domain
    std::vector<std::size_t> sentence_indices;

    bool operator==(const CitationRef&) const = default;
};

struct AnswerRecord {
    std::string question_id;
    std::string party_id;
    std::string language;
    std::string provider;
    int repeat_index = 0;
    std::string model;
    std::string answer_text;
    std::vector<CitationRef> citations;
    std::optional<std::vector<std::string>> visited_sources;
    std::string collected_at;

    bool operator==(const AnswerRecord&) const = default;
};

struct RawExchange {
    std::string provider;
    std::string question_id;
    std::string party_id;
    std::string language;
    int repeat_index = 0;
    Json request;          // what was sent (credentials never included)
    int http_status = 0;
    std::string response;  // verbatim body bytes
    std::string timestamp;
};

Json to_json(const CitationRef& c);
Json to_json(const AnswerRecord& r);
Json to_json(const RawExchange& x);
CitationRef citation_from_json(const Json& j);
AnswerRecord answer_from_json(const Json& j);
RawExchange exchange_from_json(const Json& j);

struct Extraction {
    std::string model;
    std::string answer_text;
    std::vector<CitationRef> citations;
    std::optional<std::vector<std::string>> visited_sources;
};

struct ProviderConfig {
    std::string id;        // provider id used in reports, e.g. "openai"
    std::string adapter;   // adapter key; defaults to id
    std::string endpoint;  // base URL
    std::string model;
    std::string credential_env;
    int max_in_flight = 2;
    int min_interval_ms = 0;
    int max_attempts = 4;
    int backoff_base_ms = 1000;
    int backoff_max_ms = 60000;
    int timeout_ms = 180000;
};

/// Maps one provider API onto CitationRef. Adapters must never invent
/// sentence alignment: indices come only from offsets the API reports.
class Adapter {
public:
    virtual ~Adapter() = default;
    virtual std::string id() const = 0;
    virtual http::Request build_request(const ProviderConfig& config, const corpus::Question& question,
                                        const std::string& api_key) const = 0;
    /// Throws ParseError naming the missing field on schema mismatch.
    virtual Extraction extract(std::string_view response_body, std::string_view language) const = 0;
};

void register_adapter(std::shared_ptr<const Adapter> adapter);
const Adapter& adapter(std::string_view id);  // NotFoundError
std::vector<std::string> adapter_ids();

/// Parses a recorded exchange with its provider's adapter. Citation URLs
/// missing from the visited-source list are appended to it.
Extraction extract_citations(const RawExchange& raw, std::string_view adapter_id = {});

/// Builds the AnswerRecord for a successfully parsed exchange.
AnswerRecord make_record(const RawExchange& raw, Extraction extraction);

class Transport {
public:
    virtual ~Transport() = default;
    virtual http::Response send(const http::Request& request) = 0;
};

class HttpTransport final : public Transport {
public:
    http::Response send(const http::Request& request) override { return http::send(request); }
};

/// Bounds in-flight requests per provider and spaces request starts.
class ProviderLimiter {
public:
    ProviderLimiter(int max_in_flight, int min_interval_ms);

    class Permit {
    public:
        explicit Permit(ProviderLimiter& l) : l_(&l) {}
        Permit(Permit&& o) noexcept : l_(o.l_) { o.l_ = nullptr; }
        ~Permit();
    private:
        ProviderLimiter* l_;
    };
    Permit acquire();
    int peak_in_flight() const;

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    int max_;
    int in_flight_ = 0;
    int peak_ = 0;
    std::chrono::milliseconds interval_;
    std::chrono::steady_clock::time_point next_start_{};
};

struct RepeatError {
    int repeat_index = 0;
    std::string kind;  // auth | rate_limit | http | network | malformed | config
    std::string message;
};

struct AskResult {
    std::vector<AnswerRecord> records;
    std::vector<RepeatError> errors;
};

/// Persists an exchange before it is parsed. Must throw if it cannot persist.
using ExchangeSink = std::function<void(const RawExchange&)>;

class Client {
public:
    Client(ProviderConfig config, Transport& transport, std::shared_ptr<ProviderLimiter> limiter = nullptr);

    /// Repeats `first_repeat .. first_repeat + repeat_count - 1`. Rate limits
    /// and transient failures retry with jittered exponential backoff; what
    /// still fails is reported per repeat and the rest is returned.
    AskResult ask(const corpus::Question& question, int repeat_count, const ExchangeSink& sink, int first_repeat = 0);

    /// Replaces the sleep used between retries (tests).
    void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleep_ = std::move(sleeper); }
    const ProviderConfig& config() const { return config_; }

private:
    ProviderConfig config_;
    Transport& transport_;
    std::shared_ptr<ProviderLimiter> limiter_;
    std::function<void(std::chrono::milliseconds)> sleep_;
};

// ---------------------------------------------------------------------------
// Fixtures: line-delimited JSON. Line 1 is the header
//   {"format":"geaudit-fixture","version":1}
// and every following line is one RawExchange.

inline constexpr int kFixtureVersion = 1;

class FixtureWriter {
public:
    /// Creates the file with a header, or appends to an existing fixture.
    explicit FixtureWriter(const std::filesystem::path& path);
    /// Returns the fixture id "<provider>/<question>/<repeat>".
    std::string record(const RawExchange& exchange);

private:
    std::mutex mu_;
    std::ofstream out_;
};

std::string fixture_id(const RawExchange& exchange);

/// ParseError carrying the offending line number on corruption or version mismatch.
std::vector<RawExchange> read_fixture(const std::filesystem::path& path);

struct ReplayResult {
    std::vector<RawExchange> exchanges;
    std::vector<AnswerRecord> records;   // one per parseable exchange, in file order
    std::vector<std::string> skipped;    // fixture ids whose response failed to parse
};

/// Network-free and side-effect-free.
ReplayResult replay(const std::filesystem::path& path);

/// Maps byte ranges of the answer onto indices of split_sentences(text, language).
std::vector<std::size_t> sentences_for_range(std::string_view text, std::string_view language, std::size_t begin,
                                             std::size_t end);

}  // namespace geaudit::ge
