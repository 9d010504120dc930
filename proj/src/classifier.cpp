#include "geaudit/classifier.hpp"

#include "geaudit/common.hpp"
#include "geaudit/domain.hpp"
#include "geaudit/http.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>

namespace geaudit::classifier {

namespace {

constexpr std::array<std::pair<Category, std::string_view>, 7> kCategoryNames{{
    {Category::Party, "party"},
    {Category::Media, "media"},
    {Category::Platform, "platform"},
    {Category::Owned, "owned"},
    {Category::Academia, "academia"},
    {Category::NonMediaIndustry, "non-media-industry"},
    {Category::Government, "government"},
}};

constexpr std::array<std::pair<Barrier, std::string_view>, 5> kBarrierNames{{
    {Barrier::Primary, "primary"},
    {Barrier::Opponent, "opponent"},
    {Barrier::Low, "low"},
    {Barrier::Medium, "medium"},
    {Barrier::High, "high"},
}};

constexpr std::array<std::pair<Origin, std::string_view>, 4> kOriginNames{{
    {Origin::ManifestPrimary, "manifest_primary"},
    {Origin::ManifestOpponent, "manifest_opponent"},
    {Origin::JudgeConsensus, "judge_consensus"},
    {Origin::Human, "human"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
    for (const auto& [k, v] : table)
        if (k == e) return v;
    return "?";
}

template <typename E, std::size_t N>
E parse_of(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s, const char* what) {
    for (const auto& [k, v] : table)
        if (v == s) return k;
    throw ParseError(std::string("unknown ") + what + ": \"" + std::string(s) + "\"");
}

}  // namespace

std::string_view to_string(Category c) { return name_of(kCategoryNames, c); }
std::string_view to_string(Barrier b) { return name_of(kBarrierNames, b); }
std::string_view to_string(Origin o) { return name_of(kOriginNames, o); }
Category parse_category(std::string_view s) { return parse_of(kCategoryNames, s, "category"); }
Barrier parse_barrier(std::string_view s) { return parse_of(kBarrierNames, s, "barrier"); }
Origin parse_origin(std::string_view s) { return parse_of(kOriginNames, s, "origin"); }

const std::vector<Category>& all_categories() {
    static const std::vector<Category> v{Category::Party,    Category::Media,
                                         Category::Platform, Category::Owned,
                                         Category::Academia, Category::NonMediaIndustry,
                                         Category::Government};
    return v;
}

const std::vector<Barrier>& all_barriers() {
    static const std::vector<Barrier> v{Barrier::Primary, Barrier::Opponent, Barrier::Low, Barrier::Medium,
                                        Barrier::High};
    return v;
}

// ---------------------------------------------------------------------------
// JSON

Json to_json(const JudgeVote& v) {
    Json j{{"judge", v.judge}, {"raw_reply", v.raw_reply}, {"failure", v.failure}};
    j["category"] = v.category ? Json(std::string(to_string(*v.category))) : Json(nullptr);
    return j;
}

JudgeVote vote_from_json(const Json& j) {
    JudgeVote v;
    v.judge = j.at("judge").get<std::string>();
    if (j.contains("category") && !j.at("category").is_null())
        v.category = parse_category(j.at("category").get<std::string>());
    v.raw_reply = j.value("raw_reply", "");
    v.failure = j.value("failure", "");
    return v;
}

namespace {

Json votes_json(const std::vector<JudgeVote>& votes) {
    Json a = Json::array();
    for (const auto& v : votes) a.push_back(to_json(v));
    return a;
}

std::vector<JudgeVote> votes_from(const Json& j, const char* key) {
    std::vector<JudgeVote> out;
    if (j.contains(key))
        for (const auto& v : j.at(key)) out.push_back(vote_from_json(v));
    return out;
}

}  // namespace

Json to_json(const PublisherVerdict& v) {
    return Json{{"host", v.host},
                {"party_id", v.party_id},
                {"matched_party", v.matched_party},
                {"category", to_string(v.category)},
                {"origin", to_string(v.origin)},
                {"votes", votes_json(v.votes)},
                {"adjudicator", v.adjudicator},
                {"decided_at", v.decided_at}};
}

PublisherVerdict verdict_from_json(const Json& j) {
    PublisherVerdict v;
    v.host = j.at("host").get<std::string>();
    v.party_id = j.value("party_id", "");
    v.matched_party = j.value("matched_party", "");
    v.category = parse_category(j.at("category").get<std::string>());
    v.origin = parse_origin(j.at("origin").get<std::string>());
    v.votes = votes_from(j, "votes");
    v.adjudicator = j.value("adjudicator", "");
    v.decided_at = j.value("decided_at", "");
    return v;
}

Json to_json(const AdjudicationItem& i) {
    Json j{{"host", i.host},
           {"url", i.url},
           {"whois_excerpt", i.whois_excerpt},
           {"votes", votes_json(i.votes)},
           {"reason", i.reason},
           {"status", i.resolved ? "resolved" : "pending"}};
    if (i.resolution) {
        j["resolution"] = Json{{"category", to_string(i.resolution->category)},
                               {"adjudicator", i.resolution->adjudicator},
                               {"timestamp", i.resolution->timestamp}};
    } else {
        j["resolution"] = nullptr;
    }
    return j;
}

AdjudicationItem item_from_json(const Json& j) {
    AdjudicationItem i;
    i.host = j.at("host").get<std::string>();
    i.url = j.value("url", "");
    i.whois_excerpt = j.value("whois_excerpt", "");
    i.votes = votes_from(j, "votes");
    i.reason = j.value("reason", "");
    i.resolved = j.value("status", "pending") == "resolved";
    if (j.contains("resolution") && !j.at("resolution").is_null()) {
        const auto& r = j.at("resolution");
        i.resolution = Resolution{parse_category(r.at("category").get<std::string>()), r.value("adjudicator", ""),
                                  r.value("timestamp", "")};
    }
    if (i.resolved && !i.resolution) throw ParseError("resolved item without resolution: " + i.host);
    return i;
}

Json to_json(const Decision& d) {
    return Json{{"host", d.host},
                {"category", to_string(d.category)},
                {"adjudicator", d.adjudicator},
                {"timestamp", d.timestamp}};
}

Decision decision_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("decision must be an object");
    Decision d;
    try {
        d.host = text::to_lower_ascii(text::trim(j.at("host").get<std::string>()));
        d.category = parse_category(text::to_lower_ascii(text::trim(j.at("category").get<std::string>())));
        d.adjudicator = j.value("adjudicator", "");
        d.timestamp = j.value("timestamp", "");
    } catch (const Json::exception& e) {
        throw ParseError(std::string("decision: ") + e.what());
    }
    if (d.host.empty()) throw ParseError("decision: empty host");
    if (d.adjudicator.empty()) throw ParseError("decision for " + d.host + ": missing adjudicator");
    if (d.timestamp.empty()) d.timestamp = now_iso8601();
    return d;
}

std::vector<Decision> read_decisions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("decisions file not found: " + path.string());
    std::vector<Decision> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(decision_from_json(Json::parse(line)));
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        } catch (const ParseError& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest rules

bool identify_primary(std::string_view host, const corpus::Party& party) {
    return std::any_of(party.domain_manifest.begin(), party.domain_manifest.end(),
                       [&](const std::string& d) { return host_matches(host, d); });
}

std::optional<corpus::Party> identify_opponent(std::string_view host, const corpus::Party& target,
                                               const std::vector<corpus::Party>& all_parties) {
    for (const auto& p : all_parties) {
        if (p.id == target.id || p.country != target.country) continue;
        if (identify_primary(host, p)) return p;
    }
    return std::nullopt;
}

const corpus::Party* manifest_owner(std::string_view host, const std::vector<corpus::Party>& all_parties) {
    for (const auto& p : all_parties)
        if (identify_primary(host, p)) return &p;
    return nullptr;
}

Barrier category_barrier(Category c) {
    switch (c) {
        case Category::Platform:
        case Category::Owned:
            return Barrier::Low;
        case Category::Media:
        case Category::NonMediaIndustry:
        case Category::Party:
            return Barrier::Medium;
        case Category::Academia:
        case Category::Government:
            return Barrier::High;
    }
    return Barrier::Medium;
}

Barrier to_barrier(const PublisherVerdict& v) {
    if (v.origin == Origin::ManifestPrimary) return Barrier::Primary;
    if (v.origin == Origin::ManifestOpponent) return Barrier::Opponent;
    return category_barrier(v.category);
}

// ---------------------------------------------------------------------------
// Judges

JudgeReply HttpJudge::complete(const std::string& prompt, const std::string&) {
    JudgeReply out;
    const char* key = config_.credential_env.empty() ? nullptr : std::getenv(config_.credential_env.c_str());
    if (!config_.credential_env.empty() && (!key || !*key)) {
        out.error = "credential variable " + config_.credential_env + " is not set";
        return out;
    }
    http::Request req;
    req.method = "POST";
    auto base = config_.endpoint;
    while (!base.empty() && base.back() == '/') base.pop_back();
    req.url = base + "/v1/chat/completions";
    req.timeout_ms = config_.timeout_ms;
    req.body = Json{{"model", config_.model},
                    {"temperature", 0},
                    {"messages", Json::array({Json{{"role", "user"}, {"content", prompt}}})}}
                   .dump();
    if (key && *key) req.headers.emplace_back("Authorization", std::string("Bearer ") + key);
    const auto res = http::send(req);
    if (!res.ok()) {
        out.error = res.status == 0 ? "network: " + res.error : "http " + std::to_string(res.status);
        return out;
    }
    try {
        const auto j = Json::parse(res.body);
        out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        out.ok = true;
    } catch (const Json::exception& e) {
        out.error = std::string("malformed response: ") + e.what();
    }
    return out;
}

ReplayJudge::ReplayJudge(std::string id, const std::filesystem::path& path) : id_(std::move(id)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("judge fixture not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = Json::parse(line);
            if (j.at("judge").get<std::string>() != id_) continue;
            auto& list = replies_[text::to_lower_ascii(j.at("host").get<std::string>())];
            if (j.contains("replies")) {
                for (const auto& r : j.at("replies")) list.push_back(r.get<std::string>());
            } else {
                list.push_back(j.at("reply").get<std::string>());
            }
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        }
    }
}

JudgeReply ReplayJudge::complete(const std::string&, const std::string& host) {
    std::lock_guard lock(mu_);
    JudgeReply out;
    auto it = replies_.find(host);
    if (it == replies_.end() || it->second.empty()) {
        out.error = "no recorded reply for " + host;
        return out;
    }
    auto& i = cursor_[host];
    // The last reply repeats once the list is exhausted.
    out.text = it->second[std::min(i, it->second.size() - 1)];
    ++i;
    out.ok = true;
    return out;
}

std::optional<Category> parse_label(std::string_view reply) {
    std::string s(text::trim(reply));
    auto strip = [&](std::string_view chars) {
        bool changed = true;
        while (changed && !s.empty()) {
            changed = false;
            if (chars.find(s.front()) != std::string_view::npos) {
                s.erase(0, 1);
                changed = true;
            }
            if (!s.empty() && chars.find(s.back()) != std::string_view::npos) {
                s.pop_back();
                changed = true;
            }
            s = std::string(text::trim(s));
        }
    };
    strip("\"'`*_");
    // "3. platform" or "3) platform"
    std::size_t digits = 0;
    while (digits < s.size() && s[digits] >= '0' && s[digits] <= '9') ++digits;
    if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
        s = std::string(text::trim(std::string_view(s).substr(digits + 1)));
    }
    if (text::starts_with_icase(s, "label:")) s = std::string(text::trim(std::string_view(s).substr(6)));
    strip("\"'`*_.,;:!");
    s = text::to_lower_ascii(s);
    for (auto& c : s)
        if (c == '_' || c == ' ') c = '-';
    if (s == "nonmedia-industry" || s == "non-media" || s == "nonmediaindustry" || s == "non-media-industries")
        s = "non-media-industry";
    for (const auto& [k, v] : kCategoryNames)
        if (v == s) return k;
    return std::nullopt;
}

std::string render_prompt(std::string_view prompt_template, std::string_view url, std::string_view whois_text,
                          std::size_t max_whois_bytes) {
    std::string whois(whois_text.substr(0, std::min(whois_text.size(), max_whois_bytes)));
    // Do not cut a UTF-8 sequence in half.
    while (!whois.empty() && !text::is_valid_utf8(whois)) whois.pop_back();
    std::string out;
    out.reserve(prompt_template.size() + url.size() + whois.size());
    for (std::size_t i = 0; i < prompt_template.size();) {
        if (prompt_template.compare(i, 5, "{url}") == 0) {
            out += url;
            i += 5;
        } else if (prompt_template.compare(i, 7, "{whois}") == 0) {
            out += whois;
            i += 7;
        } else {
            out += prompt_template[i++];
        }
    }
    return out;
}

JudgeVote judge_classify(const std::string& host, const std::string& url, const WhoisRecord& whois, Judge& judge,
                         std::string_view prompt_template) {
    JudgeVote vote;
    vote.judge = judge.id();
    const auto prompt = render_prompt(prompt_template, url, whois.raw_text);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = judge.complete(prompt, host);
        if (!reply.ok) {
            vote.failure = reply.error;
            continue;
        }
        vote.raw_reply = reply.text;
        if (auto c = parse_label(reply.text)) {
            vote.category = c;
            vote.failure.clear();
            return vote;
        }
        vote.failure = "unparseable label";
    }
    return vote;
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(std::vector<corpus::Party> parties, std::vector<std::shared_ptr<Judge>> judges,
                       std::shared_ptr<WhoisSource> whois, std::string prompt_template)
    : parties_(std::move(parties)),
      judges_(std::move(judges)),
      whois_(std::move(whois)),
      prompt_(std::move(prompt_template)) {
    if (judges_.size() != 2 || !judges_[0] || !judges_[1]) throw ConfigError("classification needs exactly two judges");
    if (judges_[0]->id() == judges_[1]->id()) throw ConfigError("the two judges must have distinct ids");
    if (!whois_) throw ConfigError("classification needs a WHOIS source");
}

Outcome Classifier::classify(const ge::CitationRef& citation, const corpus::Party& target) {
    const auto host = citation.host.empty() ? url_host(citation.url) : citation.host;
    if (identify_primary(host, target)) {
        PublisherVerdict v;
        v.host = host;
        v.party_id = target.id;
        v.matched_party = target.id;
        v.category = Category::Party;
        v.origin = Origin::ManifestPrimary;
        return Outcome{v, std::nullopt, std::nullopt};
    }
    if (auto opp = identify_opponent(host, target, parties_)) {
        PublisherVerdict v;
        v.host = host;
        v.party_id = target.id;
        v.matched_party = opp->id;
        v.category = Category::Party;
        v.origin = Origin::ManifestOpponent;
        return Outcome{v, std::nullopt, std::nullopt};
    }
    return classify_secondary(host, citation.url);
}

Outcome Classifier::classify_secondary(const std::string& host, const std::string& url) {
    {
        std::lock_guard lock(cache_mu_);
        if (auto it = cache_.find(host); it != cache_.end()) return it->second;
    }
    return flights_.run(host, [&] {
        {
            std::lock_guard lock(cache_mu_);
            if (auto it = cache_.find(host); it != cache_.end()) return it->second;
        }
        auto out = compute_secondary(host, url);
        std::lock_guard lock(cache_mu_);
        return cache_.emplace(host, std::move(out)).first->second;
    });
}

void Classifier::remember(const std::string& host, Outcome outcome) {
    std::lock_guard lock(cache_mu_);
    cache_[host] = std::move(outcome);
}

Outcome Classifier::compute_secondary(const std::string& host, const std::string& url) {
    std::string registrable = host;
    try {
        registrable = PublicSuffixList::builtin().registrable_domain(host);
    } catch (const std::exception&) {
    }
    auto whois = whois_->lookup(registrable);

    std::vector<JudgeVote> votes;
    for (auto& judge : judges_) {
        ++judge_calls_;
        votes.push_back(judge_classify(host, url, whois, *judge, prompt_));
    }

    Outcome out;
    out.whois = whois;
    const bool agree = votes[0].category && votes[1].category && *votes[0].category == *votes[1].category;
    std::string reason;
    if (!votes[0].category || !votes[1].category) {
        reason = "judge_failure";
    } else if (!agree) {
        reason = "disagreement";
    } else if (*votes[0].category == Category::Party && !manifest_owner(host, parties_)) {
        // A party site missing from every manifest needs a human to say whose it is.
        reason = "party_without_manifest";
    }

    if (reason.empty()) {
        PublisherVerdict v;
        v.host = host;
        v.category = *votes[0].category;
        v.origin = Origin::JudgeConsensus;
        if (const auto* owner = manifest_owner(host, parties_)) v.matched_party = owner->id;
        v.votes = std::move(votes);
        v.decided_at = now_iso8601();
        out.verdict = std::move(v);
        return out;
    }
    AdjudicationItem item;
    item.host = host;
    item.url = url;
    item.whois_excerpt = whois_excerpt(whois);
    item.votes = std::move(votes);
    item.reason = std::move(reason);
    out.item = std::move(item);
    return out;
}

// ---------------------------------------------------------------------------
// Adjudication

PublisherVerdict human_verdict(const AdjudicationItem& item, const Decision& decision) {
    PublisherVerdict v;
    v.host = item.host;
    v.category = decision.category;
    v.origin = Origin::Human;
    v.votes = item.votes;
    v.adjudicator = decision.adjudicator;
    v.decided_at = decision.timestamp;
    return v;
}

void AdjudicationQueue::enqueue(AdjudicationItem item) {
    std::unique_lock lock(mu_);
    const auto host = item.host;
    items_.emplace(host, std::move(item));
}

std::vector<AdjudicationItem> AdjudicationQueue::pending() const {
    std::shared_lock lock(mu_);
    std::vector<AdjudicationItem> out;
    for (const auto& [h, i] : items_)
        if (!i.resolved) out.push_back(i);
    return out;
}

std::vector<AdjudicationItem> AdjudicationQueue::items() const {
    std::shared_lock lock(mu_);
    std::vector<AdjudicationItem> out;
    for (const auto& [h, i] : items_) out.push_back(i);
    return out;
}

std::optional<AdjudicationItem> AdjudicationQueue::find(const std::string& host) const {
    std::shared_lock lock(mu_);
    auto it = items_.find(host);
    if (it == items_.end()) return std::nullopt;
    return it->second;
}

bool AdjudicationQueue::empty_pending() const {
    std::shared_lock lock(mu_);
    return std::none_of(items_.begin(), items_.end(), [](const auto& kv) { return !kv.second.resolved; });
}

void AdjudicationQueue::check(const Decision& d) const {
    auto it = items_.find(d.host);
    if (it == items_.end()) {
        std::vector<std::string> pending;
        for (const auto& [h, i] : items_)
            if (!i.resolved) pending.push_back(h);
        throw NotFoundError("no adjudication item for " + d.host + "; pending: " +
                            (pending.empty() ? std::string("(none)") : text::join(pending, ", ")));
    }
    const auto& item = it->second;
    if (item.resolved && item.resolution->category != d.category) {
        throw ConflictError(d.host + " already resolved as " + std::string(to_string(item.resolution->category)) +
                            " by " + item.resolution->adjudicator);
    }
}

std::optional<PublisherVerdict> AdjudicationQueue::resolve(const Decision& decision) {
    std::unique_lock lock(mu_);
    check(decision);
    auto& item = items_.at(decision.host);
    if (item.resolved) return std::nullopt;
    item.resolved = true;
    item.resolution = Resolution{decision.category, decision.adjudicator, decision.timestamp};
    return human_verdict(item, decision);
}

std::vector<PublisherVerdict> AdjudicationQueue::apply(const std::vector<Decision>& decisions) {
    std::unique_lock lock(mu_);
    // Validate the whole batch against current state plus earlier batch entries.
    std::map<std::string, Category> batch;
    for (const auto& d : decisions) {
        check(d);
        auto [it, inserted] = batch.emplace(d.host, d.category);
        if (!inserted && it->second != d.category)
            throw ConflictError("conflicting decisions for " + d.host + " in one batch");
    }
    std::vector<PublisherVerdict> out;
    for (const auto& d : decisions) {
        auto& item = items_.at(d.host);
        if (item.resolved) continue;
        item.resolved = true;
        item.resolution = Resolution{d.category, d.adjudicator, d.timestamp};
        out.push_back(human_verdict(item, d));
    }
    return out;
}

}  // namespace geaudit::classifier
