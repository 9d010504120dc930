#pragma once

#include "geaudit/corpus.hpp"
#include "geaudit/ge_client.hpp"
#include "geaudit/parallel.hpp"
#include "geaudit/whois.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::classifier {

using Json = nlohmann::json;

enum class Category { Party, Media, Platform, Owned, Academia, NonMediaIndustry, Government };
enum class Barrier { Primary, Opponent, Low, Medium, High };
enum class Origin { ManifestPrimary, ManifestOpponent, JudgeConsensus, Human };

std::string_view to_string(Category c);  // party, media, platform, owned, academia, non-media-industry, government
std::string_view to_string(Barrier b);   // primary, opponent, low, medium, high
std::string_view to_string(Origin o);    // manifest_primary, manifest_opponent, judge_consensus, human
Category parse_category(std::string_view s);  // ParseError outside the enum
Barrier parse_barrier(std::string_view s);
Origin parse_origin(std::string_view s);
const std::vector<Category>& all_categories();
const std::vector<Barrier>& all_barriers();

struct JudgeVote {
    std::string judge;
    std::optional<Category> category;  // absent on judge_failure
    std::string raw_reply;
    std::string failure;

    bool operator==(const JudgeVote&) const = default;
};

struct PublisherVerdict {
    std::string host;
    std::string party_id;  // target party for manifest verdicts; empty for host-level verdicts
    std::string matched_party;
    Category category = Category::Party;
    Origin origin = Origin::JudgeConsensus;
    std::vector<JudgeVote> votes;
    std::string adjudicator;
    std::string decided_at;

    bool operator==(const PublisherVerdict&) const = default;
};

struct Resolution {
    Category category = Category::Party;
    std::string adjudicator;
    std::string timestamp;
};

struct AdjudicationItem {
    std::string host;
    std::string url;
    std::string whois_excerpt;
    std::vector<JudgeVote> votes;
    std::string reason;  // disagreement | judge_failure | party_without_manifest
    bool resolved = false;
    std::optional<Resolution> resolution;
};

struct Decision {
    std::string host;
    Category category = Category::Party;
    std::string adjudicator;
    std::string timestamp;
};

Json to_json(const JudgeVote& v);
Json to_json(const PublisherVerdict& v);
Json to_json(const AdjudicationItem& i);
Json to_json(const Decision& d);
JudgeVote vote_from_json(const Json& j);
PublisherVerdict verdict_from_json(const Json& j);
AdjudicationItem item_from_json(const Json& j);
Decision decision_from_json(const Json& j);  // ParseError on unknown category

/// JSONL decisions file: {"host", "category", "adjudicator", "timestamp"} per line.
std::vector<Decision> read_decisions(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest rules

/// Host equals, or is a subdomain of, an entry of the party's manifest.
bool identify_primary(std::string_view host, const corpus::Party& party);

/// Another party of the target's country whose manifest matches the host.
std::optional<corpus::Party> identify_opponent(std::string_view host, const corpus::Party& target,
                                               const std::vector<corpus::Party>& all_parties);

/// Any party, in any country, whose manifest matches the host.
const corpus::Party* manifest_owner(std::string_view host, const std::vector<corpus::Party>& all_parties);

/// Category grouping: Platform/Owned -> Low; Media/NonMediaIndustry/Party -> Medium;
/// Academia/Government -> High.
Barrier category_barrier(Category c);

/// Manifest origins map to Primary/Opponent, everything else via category_barrier.
Barrier to_barrier(const PublisherVerdict& v);

// ---------------------------------------------------------------------------
// Judges

struct JudgeReply {
    bool ok = false;
    std::string text;
    std::string error;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string id() const = 0;
    /// `host` lets recorded judges find their reply; live judges ignore it.
    virtual JudgeReply complete(const std::string& prompt, const std::string& host) = 0;
};

struct HttpJudgeConfig {
    std::string id;
    std::string endpoint;  // OpenAI-compatible chat completions base URL
    std::string model;
    std::string credential_env;
    int timeout_ms = 60000;
};

class HttpJudge final : public Judge {
public:
    explicit HttpJudge(HttpJudgeConfig config) : config_(std::move(config)) {}
    std::string id() const override { return config_.id; }
    JudgeReply complete(const std::string& prompt, const std::string& host) override;

private:
    HttpJudgeConfig config_;
};

/// Replays recorded replies: JSONL {"judge": id, "host": h, "replies": [..]}
/// (or a single "reply"). Successive calls for one host walk the list.
class ReplayJudge final : public Judge {
public:
    ReplayJudge(std::string id, const std::filesystem::path& path);
    std::string id() const override { return id_; }
    JudgeReply complete(const std::string& prompt, const std::string& host) override;

private:
    std::string id_;
    std::mutex mu_;
    std::map<std::string, std::vector<std::string>> replies_;
    std::map<std::string, std::size_t> cursor_;
};

/// Tolerant parse of a bare label: case-insensitive, surrounding quotes,
/// markdown emphasis, list numbering and trailing punctuation are ignored.
/// Anything more than a label yields nullopt.
std::optional<Category> parse_label(std::string_view reply);

/// Substitutes {url} and {whois}. WHOIS text is cut to `max_whois_bytes`.
std::string render_prompt(std::string_view prompt_template, std::string_view url, std::string_view whois_text,
                          std::size_t max_whois_bytes = 6000);

/// One judge's vote; an unparseable reply or endpoint error is retried once.
JudgeVote judge_classify(const std::string& host, const std::string& url, const WhoisRecord& whois, Judge& judge,
                         std::string_view prompt_template);

// ---------------------------------------------------------------------------
// Classification

/// Either a verdict or a queue entry for human adjudication.
struct Outcome {
    std::optional<PublisherVerdict> verdict;
    std::optional<AdjudicationItem> item;
    std::optional<WhoisRecord> whois;  // set when judges were consulted
};

class Classifier {
public:
    /// Requires two judges with distinct ids.
    Classifier(std::vector<corpus::Party> parties, std::vector<std::shared_ptr<Judge>> judges,
               std::shared_ptr<WhoisSource> whois, std::string prompt_template);

    /// Manifest primary > manifest opponent > judge consensus > human queue.
    /// Secondary outcomes are computed once per host (single-flight) and cached.
    Outcome classify(const ge::CitationRef& citation, const corpus::Party& target);

    /// The host-level secondary outcome (judges), ignoring manifests.
    Outcome classify_secondary(const std::string& host, const std::string& url);

    /// Seeds the host cache with a prior outcome (e.g. from the run ledger).
    void remember(const std::string& host, Outcome outcome);

    std::size_t judge_invocations() const { return judge_calls_.load(); }
    const std::vector<corpus::Party>& parties() const { return parties_; }

private:
    Outcome compute_secondary(const std::string& host, const std::string& url);

    std::vector<corpus::Party> parties_;
    std::vector<std::shared_ptr<Judge>> judges_;
    std::shared_ptr<WhoisSource> whois_;
    std::string prompt_;
    std::atomic<std::size_t> judge_calls_{0};
    std::mutex cache_mu_;
    std::map<std::string, Outcome> cache_;
    SingleFlight<std::string, Outcome> flights_;
};

/// Pending and resolved adjudication items, keyed by host. Reads may run
/// concurrently; resolutions are serialized and first-writer-wins.
class AdjudicationQueue {
public:
    /// Adds a pending item; a host already queued is left unchanged.
    void enqueue(AdjudicationItem item);

    std::vector<AdjudicationItem> pending() const;
    std::vector<AdjudicationItem> items() const;
    std::optional<AdjudicationItem> find(const std::string& host) const;
    bool empty_pending() const;

    /// Resolves one item. Re-applying the same category is a no-op that
    /// returns nullopt; a different category for a resolved item throws
    /// ConflictError; an unknown host throws NotFoundError listing pending hosts.
    std::optional<PublisherVerdict> resolve(const Decision& decision);

    /// Validates every decision first, then resolves them in order.
    std::vector<PublisherVerdict> apply(const std::vector<Decision>& decisions);

private:
    void check(const Decision& d) const;

    mutable std::shared_mutex mu_;
    std::map<std::string, AdjudicationItem> items_;
};

/// The verdict emitted for a human resolution of `item`.
PublisherVerdict human_verdict(const AdjudicationItem& item, const Decision& decision);

}  // namespace geaudit::classifier
