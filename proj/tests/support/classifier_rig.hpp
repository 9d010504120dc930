// Scripted judges and the randomized precedence scenarios for the classifier.
#pragma once

#include "geaudit/classifier.hpp"
#include "geaudit/corpus.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace rig {

using namespace geaudit::classifier;
namespace corpus = geaudit::corpus;
namespace ge = geaudit::ge;

inline corpus::Party party(std::string id, std::string country, std::vector<std::string> domains) {
    corpus::Party p;
    p.id = std::move(id);
    p.country = std::move(country);
    p.domain_manifest = std::move(domains);
    p.display_name_by_language["en"] = p.id;
    return p;
}

inline ge::CitationRef cite(const std::string& host, const std::string& path = "/") {
    ge::CitationRef c;
    c.host = host;
    c.url = "https://" + host + path;
    c.normalized_domain = host;
    return c;
}

/// Replies from a host -> reply table; counts calls.
class ScriptedJudge final : public Judge {
public:
    explicit ScriptedJudge(std::string id) : id_(std::move(id)) {}
    std::string id() const override { return id_; }
    JudgeReply complete(const std::string& prompt, const std::string& host) override {
        ++calls;
        last_prompt = prompt;
        auto it = replies.find(host);
        if (it == replies.end()) return {false, "", "unreachable"};
        return {true, it->second, ""};
    }
    std::map<std::string, std::string> replies;
    std::atomic<int> calls{0};
    std::string last_prompt;

private:
    std::string id_;
};

class StaticWhois final : public WhoisSource {
public:
    WhoisRecord lookup(const std::string& domain) override {
        ++calls;
        WhoisRecord r;
        r.domain = domain;
        r.raw_text = "Registrant Organization: Owner of " + domain;
        return r;
    }
    std::atomic<int> calls{0};
};

inline const std::vector<corpus::Party> kParties = {
    party("dp", "us", {"democrats.org"}),
    party("gop", "us", {"gop.com"}),
    party("ldp", "jp", {"jimin.jp"}),
};

inline const std::string kPrompt = "URL={url}\nWHOIS={whois}";

struct Rig {
    std::shared_ptr<ScriptedJudge> a = std::make_shared<ScriptedJudge>("judge-a");
    std::shared_ptr<ScriptedJudge> b = std::make_shared<ScriptedJudge>("judge-b");
    std::shared_ptr<StaticWhois> whois = std::make_shared<StaticWhois>();
    Classifier make(std::vector<corpus::Party> parties = kParties) { return Classifier(parties, {a, b}, whois, kPrompt); }
    void vote(const std::string& host, const std::string& va, const std::string& vb) {
        a->replies[host] = va;
        b->replies[host] = vb;
    }
};

struct ScenarioTally {
    int manifest_hits = 0;
    int queued = 0;
    int consensus = 0;
    std::vector<std::string> violations;
};

/// Random manifests, citation hosts and judge votes. Checks that manifest hits
/// never reach a judge, that every disagreement is queued, and that every
/// citation has a verdict once the queue is adjudicated.
inline ScenarioTally precedence_scenarios(std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    const std::vector<std::string> labels = {"party", "media", "platform", "owned", "academia",
                                             "non-media-industry", "government", "garbage reply"};
    ScenarioTally tally;
    for (int scenario = 0; scenario < count; ++scenario) {
        auto expect = [&](bool ok, const std::string& what) {
            if (!ok) tally.violations.push_back("scenario " + std::to_string(scenario) + ": " + what);
        };
        std::vector<corpus::Party> parties;
        for (const char* country : {"us", "jp"}) {
            const int n = 2 + static_cast<int>(rng() % 3);
            for (int k = 0; k < n; ++k) {
                const auto id = std::string(country) + std::to_string(k);
                std::vector<std::string> doms = {id + "-party.org"};
                if (rng() % 2) doms.push_back(id + ".example." + country);
                parties.push_back(party(id, country, doms));
            }
        }
        const auto& target = parties[rng() % parties.size()];

        // Citation hosts: manifest hosts, subdomains of them, look-alikes and strangers.
        std::vector<std::string> hosts;
        for (int h = 0; h < 6; ++h) {
            const auto& p = parties[rng() % parties.size()];
            const auto& d = p.domain_manifest[rng() % p.domain_manifest.size()];
            switch (rng() % 4) {
                case 0: hosts.push_back(d); break;
                case 1: hosts.push_back("www." + d); break;
                case 2: hosts.push_back("x" + d); break;
                default: hosts.push_back("site" + std::to_string(rng() % 5) + ".org"); break;
            }
        }

        Rig rig;
        for (const auto& h : hosts) rig.vote(h, labels[rng() % labels.size()], labels[rng() % labels.size()]);
        auto c = rig.make(parties);

        // Oracle on whole labels: host == d or host ends with "." + d.
        auto owns = [](const corpus::Party& p, const std::string& host) {
            for (const auto& d : p.domain_manifest)
                if (host == d || (host.size() > d.size() && host.compare(host.size() - d.size() - 1, d.size() + 1, "." + d) == 0))
                    return true;
            return false;
        };

        std::map<std::string, PublisherVerdict> verdict_by_host;
        std::set<std::string> pending_hosts;
        std::vector<std::pair<std::string, std::optional<PublisherVerdict>>> per_citation;
        for (const auto& h : hosts) {
            const auto before = c.judge_invocations();
            const auto out = c.classify(cite(h), target);
            const bool primary = owns(target, h);
            const corpus::Party* opponent = nullptr;
            for (const auto& p : parties)
                if (p.id != target.id && p.country == target.country && owns(p, h)) opponent = &p;
            if (primary || opponent) {
                ++tally.manifest_hits;
                expect(c.judge_invocations() == before, h + ": judge invoked on a manifest hit");
                expect(out.verdict.has_value(), h + ": manifest hit without verdict");
                if (!out.verdict) continue;
                expect(out.verdict->origin == (primary ? Origin::ManifestPrimary : Origin::ManifestOpponent),
                       h + ": wrong manifest origin");
                if (opponent) expect(out.verdict->matched_party == opponent->id, h + ": wrong opponent");
                per_citation.emplace_back(h, out.verdict);
                continue;
            }
            const auto va = parse_label(rig.a->replies[h]);
            const auto vb = parse_label(rig.b->replies[h]);
            bool any_owner = false;
            for (const auto& p : parties) any_owner = any_owner || owns(p, h);
            const bool should_queue = !va || !vb || *va != *vb || (*va == Category::Party && !any_owner);
            if (should_queue) {
                ++tally.queued;
                expect(out.item.has_value() && !out.verdict, h + ": disagreement not queued");
                pending_hosts.insert(h);
                per_citation.emplace_back(h, std::nullopt);
            } else {
                ++tally.consensus;
                expect(out.verdict && out.verdict->origin == Origin::JudgeConsensus && out.verdict->category == *va,
                       h + ": consensus not recorded");
                per_citation.emplace_back(h, out.verdict);
            }
        }

        // Human adjudication of everything queued, then totality.
        AdjudicationQueue q;
        for (const auto& h : hosts) {
            const auto o = c.classify_secondary(h, "https://" + h + "/");
            if (o.item && pending_hosts.count(h)) q.enqueue(*o.item);
        }
        expect(q.pending().size() == pending_hosts.size(), "queue size");
        std::vector<Decision> ds;
        for (const auto& h : pending_hosts)
            ds.push_back(Decision{h, all_categories()[rng() % all_categories().size()], "tester", "t"});
        for (const auto& v : q.apply(ds)) verdict_by_host[v.host] = v;
        expect(q.empty_pending(), "queue not drained");
        for (const auto& [h, v] : per_citation)
            expect(v.has_value() || verdict_by_host.count(h) == 1, h + ": no verdict after adjudication");
    }
    return tally;
}

}  // namespace rig
