#include "geaudit/pipeline.hpp"

#include "geaudit/common.hpp"
#include "geaudit/domain.hpp"
#include "geaudit/parallel.hpp"
#include "geaudit/whois.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <tuple>

namespace geaudit::pipeline {

namespace {

constexpr int kStudyVersion = 1;

std::string file_digest(const std::filesystem::path& p) {
    try {
        return sha256_hex(read_file(p));
    } catch (const Error&) {
        throw ConfigError("study: cannot read " + p.string());
    }
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return j.at(key).get<T>();
}

ge::ProviderConfig provider_from_json(const Json& j) {
    ge::ProviderConfig p;
    p.id = j.at("id").get<std::string>();
    p.adapter = get_or<std::string>(j, "adapter", p.id);
    p.endpoint = get_or<std::string>(j, "endpoint", "");
    p.model = get_or<std::string>(j, "model", "");
    p.credential_env = get_or<std::string>(j, "credential_env", "");
    p.max_in_flight = get_or(j, "max_in_flight", p.max_in_flight);
    p.min_interval_ms = get_or(j, "min_interval_ms", p.min_interval_ms);
    p.max_attempts = get_or(j, "max_attempts", p.max_attempts);
    p.backoff_base_ms = get_or(j, "backoff_base_ms", p.backoff_base_ms);
    p.backoff_max_ms = get_or(j, "backoff_max_ms", p.backoff_max_ms);
    p.timeout_ms = get_or(j, "timeout_ms", p.timeout_ms);
    return p;
}

std::string latest_stage_digest(const std::vector<store::LedgerEntry>& stages, const std::string& stage) {
    std::string digest;
    for (const auto& e : stages)
        if (e.payload.value("stage", "") == stage) digest = e.payload.value("input_digest", "");
    return digest;
}

/// Serializes appends from worker threads.
class Ledger {
public:
    Ledger(store::Store& store, const std::string& run_id) : writer_(store.open_writer(run_id)) {}
    std::uint64_t append(std::string_view kind, const Json& payload) {
        std::lock_guard lock(mu_);
        ++appended_;
        return writer_->append(kind, payload);
    }
    std::size_t appended() const { return appended_; }
    bool finalized() const { return writer_->finalized(); }

private:
    std::unique_ptr<store::RunWriter> writer_;
    std::mutex mu_;
    std::size_t appended_ = 0;
};

std::vector<ge::AnswerRecord> load_answers(const store::Store& store, const std::string& run_id) {
    std::map<std::string, ge::AnswerRecord> by_id;
    for (const auto& e : store.scan(run_id, {"answer"})) {
        auto r = ge::answer_from_json(e.payload.at("record"));
        by_id.emplace(answer_id(r), std::move(r));
    }
    std::vector<ge::AnswerRecord> out;
    for (auto& [id, r] : by_id) out.push_back(std::move(r));
    return out;
}

std::string verdict_key(const std::string& host, const std::string& party) { return host + "\n" + party; }

void ensure_judges(const Study& study, Services& s) {
    if (!s.judges.empty()) return;
    for (const auto& j : study.judges) {
        if (j.kind == "replay") s.judges.push_back(std::make_shared<classifier::ReplayJudge>(j.id, j.path));
        else s.judges.push_back(std::make_shared<classifier::HttpJudge>(j.http));
    }
}

void ensure_whois(const Study& study, const store::Store& store, Services& s) {
    if (s.whois) return;
    const auto kind = get_or<std::string>(study.whois, "kind", "live");
    if (kind == "replay") {
        s.whois = std::make_shared<classifier::FixtureWhois>(study.resolve(study.whois.at("path").get<std::string>()));
        return;
    }
    classifier::WhoisConfig c;
    c.server = get_or(study.whois, "server", c.server);
    c.port = get_or(study.whois, "port", c.port);
    c.timeout_ms = get_or(study.whois, "timeout_ms", c.timeout_ms);
    c.cache_dir = store.cache_dir("whois");
    s.whois = std::make_shared<classifier::WhoisClient>(c);
}

void ensure_pages(const Study& study, const store::Store& store, Services& s) {
    if (s.pages) return;
    const auto kind = get_or<std::string>(study.harvest, "kind", "live");
    if (kind == "replay") {
        s.pages = std::make_shared<harvest::FixturePages>(study.resolve(study.harvest.at("path").get<std::string>()));
        return;
    }
    harvest::FetchConfig c;
    c.user_agent = get_or(study.harvest, "user_agent", c.user_agent);
    c.timeout_ms = get_or(study.harvest, "timeout_ms", c.timeout_ms);
    c.max_bytes = get_or(study.harvest, "max_bytes", c.max_bytes);
    c.max_redirects = get_or(study.harvest, "max_redirects", c.max_redirects);
    c.ttl = std::chrono::seconds(get_or<long>(study.harvest, "ttl_seconds", c.ttl.count()));
    c.politeness = std::chrono::milliseconds(get_or<long>(study.harvest, "politeness_ms", c.politeness.count()));
    c.max_concurrency = get_or(study.harvest, "max_concurrency", c.max_concurrency);
    c.respect_robots = get_or(study.harvest, "respect_robots", c.respect_robots);
    c.cache_dir = store.cache_dir("pages");
    s.pages = std::make_shared<harvest::Fetcher>(c);
}

void ensure_embedding(const Study& study, Services& s) {
    if (s.embedding) return;
    const auto kind = get_or<std::string>(study.embedding, "kind", "pseudo");
    if (kind == "pseudo") {
        s.embedding = std::make_shared<reflection::PseudoEmbeddingBackend>(get_or<std::size_t>(study.embedding, "dim", 256));
        return;
    }
    reflection::HttpEmbeddingConfig c;
    c.endpoint = study.embedding.at("endpoint").get<std::string>();
    c.model = study.embedding.at("model").get<std::string>();
    c.dim = study.embedding.at("dim").get<std::size_t>();
    c.batch_size = get_or<std::size_t>(study.embedding, "batch_size", c.batch_size);
    c.timeout_ms = get_or(study.embedding, "timeout_ms", c.timeout_ms);
    if (const auto env = get_or<std::string>(study.embedding, "credential_env", ""); !env.empty()) {
        if (const char* v = std::getenv(env.c_str())) c.api_key = v;
    }
    s.embedding = std::make_shared<reflection::HttpEmbeddingBackend>(c);
}

Json snapshot_entry(const harvest::PageSnapshot& s) {
    Json j = harvest::snapshot_meta(s);
    if (s.ok()) j["features"] = harvest::to_json(harvest::extract_features(s.html));
    return j;
}

std::set<std::string> recorded_snapshots(const store::Store& store, const std::string& run_id) {
    std::set<std::string> out;
    for (const auto& e : store.scan(run_id, {"snapshot"})) out.insert(e.payload.at("url").get<std::string>());
    return out;
}

stats::Method parse_method(const std::string& s) {
    for (auto m : {stats::Method::MwExact, stats::Method::MwNormalApprox, stats::Method::KsAsymptotic})
        if (stats::to_string(m) == s) return m;
    throw ParseError("unknown test method: " + s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Study

std::filesystem::path Study::resolve(const std::string& relative) const {
    const std::filesystem::path p(relative);
    return p.is_absolute() ? p : (base_dir / p).lexically_normal();
}

std::vector<corpus::Party> Study::study_parties() const {
    std::vector<corpus::Party> out;
    const std::set<std::string> selected(config.parties.begin(), config.parties.end());
    for (const auto& p : manifest.parties) {
        if (std::find(config.countries.begin(), config.countries.end(), p.country) == config.countries.end()) continue;
        if (!selected.empty() && !selected.count(p.id)) continue;
        out.push_back(p);
    }
    return out;
}

std::vector<corpus::Question> Study::questions() const {
    return corpus::render_questions(templates, manifest.parties, config);
}

Study load_study(const std::filesystem::path& path) {
    Study s;
    s.path = std::filesystem::absolute(path).lexically_normal();
    s.base_dir = s.path.parent_path();
    try {
        s.raw = Json::parse(read_file(s.path));
    } catch (const Json::exception& e) {
        throw ConfigError("study " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError("study " + path.string() + ": " + e.what());
    }
    const auto& j = s.raw;
    try {
        if (get_or(j, "version", kStudyVersion) != kStudyVersion) throw ConfigError("study: unsupported version");
        Json files = Json::object();
        auto need = [&](const char* key) {
            if (!j.contains(key)) throw ConfigError(std::string("study: missing \"") + key + "\"");
            const auto p = s.resolve(j.at(key).get<std::string>());
            files[key] = file_digest(p);
            return p;
        };
        s.manifest = corpus::load_manifest_file(need("manifest"));
        s.templates = corpus::load_templates(need("templates"));
        s.judge_prompt = read_file(need("judge_prompt"));

        s.config.countries = j.at("countries").get<std::vector<std::string>>();
        s.config.parties = get_or<std::vector<std::string>>(j, "parties", {});
        s.config.repeats = get_or(j, "repeats", 5);
        s.config.language_by_country = j.at("languages").get<std::map<std::string, std::string>>();
        corpus::validate_study(s.config, s.manifest.parties);

        for (const auto& p : j.at("providers")) s.providers.push_back(provider_from_json(p));
        if (s.providers.empty()) throw ConfigError("study: no providers");

        std::set<std::string> judge_ids;
        for (const auto& jj : j.at("judges")) {
            JudgeSpec js;
            js.id = jj.at("id").get<std::string>();
            js.kind = get_or<std::string>(jj, "kind", "http");
            if (js.kind == "replay") {
                js.path = s.resolve(jj.at("path").get<std::string>());
                files["judge:" + js.id] = file_digest(js.path);
            } else if (js.kind == "http") {
                js.http.id = js.id;
                js.http.endpoint = jj.at("endpoint").get<std::string>();
                js.http.model = jj.at("model").get<std::string>();
                js.http.credential_env = get_or<std::string>(jj, "credential_env", "");
                js.http.timeout_ms = get_or(jj, "timeout_ms", js.http.timeout_ms);
            } else {
                throw ConfigError("study: judge kind must be http or replay, got " + js.kind);
            }
            judge_ids.insert(js.id);
            s.judges.push_back(std::move(js));
        }
        if (s.judges.size() != 2 || judge_ids.size() != 2) throw ConfigError("study: exactly two distinct judges required");

        s.whois = get_or<Json>(j, "whois", Json{{"kind", "live"}});
        s.harvest = get_or<Json>(j, "harvest", Json{{"kind", "live"}});
        s.embedding = get_or<Json>(j, "embedding", Json{{"kind", "pseudo"}});
        for (auto* src : {&s.whois, &s.harvest}) {
            const auto kind = get_or<std::string>(*src, "kind", "live");
            if (kind != "live" && kind != "replay") throw ConfigError("study: source kind must be live or replay");
            if (kind == "replay") files[src == &s.whois ? "whois" : "harvest"] = file_digest(s.resolve(src->at("path").get<std::string>()));
        }
        const auto ek = get_or<std::string>(s.embedding, "kind", "pseudo");
        if (ek != "pseudo" && ek != "http") throw ConfigError("study: embedding kind must be pseudo or http");
        s.seed = get_or<std::uint64_t>(j, "seed", 0);
        s.workers = std::max(1, get_or(j, "workers", 4));
        s.digest = store::json_digest(Json{{"study", j}, {"files", files}});
    } catch (const Json::exception& e) {
        throw ConfigError("study " + path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    } catch (const NotFoundError& e) {
        throw ConfigError(e.what());
    }
    return s;
}

store::RunInfo init_run(store::Store& store, const std::filesystem::path& study_path, std::optional<std::string> run_id) {
    const auto study = load_study(study_path);
    auto info = store.create_run(study.digest, std::move(run_id));
    auto w = store.open_writer(info.id);
    w->append("config", Json{{"study_path", study.path.string()}, {"study_digest", study.digest}, {"study", study.raw}});
    return info;
}

Study run_study(const store::Store& store, const std::string& run_id) {
    const auto entries = store.scan(run_id, {"config"});
    if (entries.empty()) throw StateError("run " + run_id + " has no config entry");
    const auto& c = entries.front().payload;
    auto study = load_study(c.at("study_path").get<std::string>());
    if (study.digest != c.at("study_digest").get<std::string>())
        throw ConfigError("study files changed since run " + run_id + " was created: " + study.path.string());
    return study;
}

std::string answer_id(const ge::AnswerRecord& r) {
    return r.provider + "/" + r.question_id + "/" + std::to_string(r.repeat_index);
}

// ---------------------------------------------------------------------------
// Collection

StageResult replay_fixtures(store::Store& store, const std::string& run_id,
                            const std::vector<std::filesystem::path>& fixtures) {
    const auto study = run_study(store, run_id);
    StageResult res;
    res.stage = "replay";
    Json files = Json::array();
    for (const auto& f : fixtures) files.push_back(Json{{"file", f.filename().string()}, {"sha256", file_digest(f)}});
    const auto digest = store::json_digest(files);
    if (latest_stage_digest(store.scan(run_id, {"stage"}), "replay") == digest) {
        res.noop = true;
        return res;
    }

    std::set<std::string> have;
    for (const auto& e : store.scan(run_id, {"answer"})) have.insert(e.payload.at("answer_id").get<std::string>());

    Ledger ledger(store, run_id);
    std::size_t i = 0;
    for (const auto& f : fixtures) {
        const auto exchanges = ge::read_fixture(f);
        for (const auto& x : exchanges) {
            const auto id = ge::fixture_id(x);
            if (have.count(id)) {
                ++res.skipped;
                continue;
            }
            if (!study.manifest.find(x.party_id)) throw ValidationError("fixture " + id + ": unknown party " + x.party_id);
            ledger.append("exchange", Json{{"answer_id", id}, {"exchange", ge::to_json(x)}});
            try {
                const auto rec = ge::make_record(x, ge::extract_citations(x));
                ledger.append("answer", Json{{"answer_id", id}, {"record", ge::to_json(rec)}});
                have.insert(id);
            } catch (const ParseError& e) {
                ledger.append("answer_error", Json{{"answer_id", id}, {"kind", "malformed"}, {"message", e.what()}});
                res.notes.push_back(id + ": " + e.what());
            }
        }
        files[i]["exchanges"] = exchanges.size();
        files[i]["fixture_ids"] = Json::array();
        for (const auto& x : exchanges) files[i]["fixture_ids"].push_back(ge::fixture_id(x));
        ++i;
    }
    ledger.append("stage", Json{{"stage", "replay"}, {"input_digest", digest}, {"fixtures", files}});
    res.appended = ledger.appended();
    return res;
}

StageResult collect(store::Store& store, const std::string& run_id, Services& services,
                    const std::optional<std::filesystem::path>& record_to) {
    const auto study = run_study(store, run_id);
    StageResult res;
    res.stage = "collect";
    if (!services.transport) services.transport = std::make_shared<ge::HttpTransport>();

    std::set<std::string> have;
    for (const auto& e : store.scan(run_id, {"answer"})) have.insert(e.payload.at("answer_id").get<std::string>());

    std::unique_ptr<ge::FixtureWriter> recorder;
    if (record_to) recorder = std::make_unique<ge::FixtureWriter>(*record_to);

    struct Job {
        const ge::ProviderConfig* provider;
        corpus::Question question;
        int repeat;
    };
    const auto questions = study.questions();
    std::vector<Job> jobs;
    for (const auto& p : study.providers)
        for (const auto& q : questions)
            for (int r = 0; r < study.config.repeats; ++r) {
                if (have.count(p.id + "/" + q.id + "/" + std::to_string(r))) ++res.skipped;
                else jobs.push_back({&p, q, r});
            }

    std::map<std::string, std::shared_ptr<ge::ProviderLimiter>> limiters;
    for (const auto& p : study.providers)
        limiters[p.id] = std::make_shared<ge::ProviderLimiter>(p.max_in_flight, p.min_interval_ms);

    Ledger ledger(store, run_id);
    std::mutex notes_mu;
    int workers = 0;
    for (const auto& p : study.providers) workers += std::max(1, p.max_in_flight);
    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const auto& job = jobs[i];
        ge::Client client(*job.provider, *services.transport, limiters.at(job.provider->id));
        const auto result = client.ask(job.question, 1, [&](const ge::RawExchange& x) {
            ledger.append("exchange", Json{{"answer_id", ge::fixture_id(x)}, {"exchange", ge::to_json(x)}});
            if (recorder) recorder->record(x);
        }, job.repeat);
        for (const auto& r : result.records)
            ledger.append("answer", Json{{"answer_id", answer_id(r)}, {"record", ge::to_json(r)}});
        for (const auto& e : result.errors) {
            const auto id = job.provider->id + "/" + job.question.id + "/" + std::to_string(e.repeat_index);
            ledger.append("answer_error", Json{{"answer_id", id}, {"kind", e.kind}, {"message", e.message}});
            std::lock_guard lock(notes_mu);
            res.notes.push_back(id + ": " + e.kind + ": " + e.message);
        }
    });
    std::sort(res.notes.begin(), res.notes.end());
    Json models = Json::object();
    for (const auto& p : study.providers) models[p.id] = p.model;
    ledger.append("stage", Json{{"stage", "collect"}, {"input_digest", study.digest}, {"models", models},
                                {"questions", questions.size()}, {"attempted", jobs.size()}});
    res.appended = ledger.appended();
    return res;
}

// ---------------------------------------------------------------------------
// Classification

ClassifyResult classify(store::Store& store, const std::string& run_id, Services& services) {
    const auto study = run_study(store, run_id);
    ClassifyResult out;
    out.stage.stage = "classify";
    const auto answers = load_answers(store, run_id);

    Json ids = Json::array();
    for (const auto& a : answers) ids.push_back(answer_id(a));
    const auto digest = store::json_digest(Json{{"study", study.digest}, {"answers", ids}});
    const auto stages = store.scan(run_id, {"stage"});
    if (latest_stage_digest(stages, "classify") == digest) {
        out.stage.noop = true;
        for (const auto& item : load_queue(store, run_id)->pending()) out.pending_hosts.push_back(item.host);
        return out;
    }

    std::set<std::string> decided;  // verdict keys already recorded
    std::set<std::string> queued;
    for (const auto& e : store.scan(run_id, {"verdict", "adjudication"})) {
        if (e.kind == "verdict") decided.insert(verdict_key(e.payload.at("host"), e.payload.value("party_id", "")));
        else queued.insert(e.payload.at("host").get<std::string>());
    }

    const auto& parties = study.manifest.parties;
    std::vector<classifier::PublisherVerdict> manifest_verdicts;
    std::map<std::string, std::string> need_judges;  // host -> first URL seen
    for (const auto& a : answers) {
        const auto* target = study.manifest.find(a.party_id);
        if (!target) throw ValidationError("answer " + answer_id(a) + ": unknown party " + a.party_id);
        for (const auto& c : a.citations) {
            if (c.host.empty()) continue;
            classifier::PublisherVerdict v;
            v.host = c.host;
            v.party_id = target->id;
            if (classifier::identify_primary(c.host, *target)) {
                v.origin = classifier::Origin::ManifestPrimary;
                v.matched_party = target->id;
            } else if (auto opp = classifier::identify_opponent(c.host, *target, parties)) {
                v.origin = classifier::Origin::ManifestOpponent;
                v.matched_party = opp->id;
            } else {
                if (!decided.count(verdict_key(c.host, "")) && !queued.count(c.host)) need_judges.emplace(c.host, c.url);
                continue;
            }
            v.category = classifier::Category::Party;
            if (decided.insert(verdict_key(v.host, v.party_id)).second) manifest_verdicts.push_back(std::move(v));
            else ++out.stage.skipped;
        }
    }

    std::vector<std::pair<std::string, std::string>> hosts(need_judges.begin(), need_judges.end());
    std::vector<classifier::Outcome> outcomes(hosts.size());
    if (!hosts.empty()) {
        ensure_judges(study, services);
        ensure_whois(study, store, services);
        classifier::Classifier cls(parties, services.judges, services.whois, study.judge_prompt);
        parallel_for(hosts.size(), study.workers,
                     [&](std::size_t i) { outcomes[i] = cls.classify_secondary(hosts[i].first, hosts[i].second); });
    }

    Ledger ledger(store, run_id);
    for (const auto& v : manifest_verdicts) ledger.append("verdict", classifier::to_json(v));
    for (std::size_t i = 0; i < hosts.size(); ++i) {
        const auto& o = outcomes[i];
        if (o.whois) {
            ledger.append("whois", Json{{"host", hosts[i].first}, {"record", classifier::to_json(*o.whois)}});
        }
        const auto& votes = o.verdict ? o.verdict->votes : o.item->votes;
        for (const auto& v : votes) ledger.append("judge_vote", Json{{"host", hosts[i].first}, {"vote", classifier::to_json(v)}});
        if (o.verdict) ledger.append("verdict", classifier::to_json(*o.verdict));
        else ledger.append("adjudication", classifier::to_json(*o.item));
    }
    Json stage{{"stage", "classify"}, {"input_digest", digest}, {"judged_hosts", hosts.size()},
               {"judge_prompt_sha256", sha256_hex(study.judge_prompt)}, {"judges", Json::array()}};
    for (const auto& j : study.judges) stage["judges"].push_back(Json{{"id", j.id}, {"kind", j.kind}});
    ledger.append("stage", stage);
    out.stage.appended = ledger.appended();

    for (const auto& item : load_queue(store, run_id)->pending()) out.pending_hosts.push_back(item.host);
    return out;
}

std::unique_ptr<classifier::AdjudicationQueue> load_queue(const store::Store& store, const std::string& run_id) {
    auto q = std::make_unique<classifier::AdjudicationQueue>();
    for (const auto& e : store.scan(run_id, {"adjudication", "decision"})) {
        if (e.kind == "adjudication") q->enqueue(classifier::item_from_json(e.payload));
        else q->resolve(classifier::decision_from_json(e.payload));
    }
    return q;
}

std::vector<classifier::PublisherVerdict> apply_decisions(store::Store& store, const std::string& run_id,
                                                          const std::vector<classifier::Decision>& decisions,
                                                          const std::string& source, bool reject_resolved) {
    // Holding the writer lock while reading makes check-then-append atomic
    // across processes: the first writer wins, later ones see its decision.
    Ledger ledger(store, run_id);
    if (ledger.finalized()) throw StateError("run " + run_id + " is finalized");
    auto queue = load_queue(store, run_id);
    if (reject_resolved)
        for (const auto& d : decisions)
            if (auto it = queue->find(d.host); it && it->resolved) throw ConflictError(d.host + " is already resolved");
    const auto verdicts = queue->apply(decisions);
    for (const auto& v : verdicts) {
        const auto d = std::find_if(decisions.begin(), decisions.end(), [&](const auto& x) { return x.host == v.host; });
        auto dj = classifier::to_json(*d);
        dj["source"] = source;
        ledger.append("decision", dj);
        ledger.append("verdict", classifier::to_json(v));
    }
    return verdicts;
}

// ---------------------------------------------------------------------------
// Reflection

StageResult reflect(store::Store& store, const std::string& run_id, Services& services) {
    const auto study = run_study(store, run_id);
    StageResult res;
    res.stage = "reflect";
    const auto answers = load_answers(store, run_id);

    std::set<std::pair<std::string, std::string>> done;
    for (const auto& e : store.scan(run_id, {"reflection"}))
        done.insert({e.payload.at("answer_id").get<std::string>(), e.payload.at("url").get<std::string>()});

    struct Pair {
        const ge::AnswerRecord* answer;
        std::string id;
        std::string url;
    };
    std::vector<Pair> todo;
    std::set<std::string> urls;
    for (const auto& a : answers) {
        std::set<std::string> seen;
        for (const auto& c : a.citations) {
            const auto url = canonical_url(c.url);
            if (!seen.insert(url).second) continue;
            if (done.count({answer_id(a), url})) {
                ++res.skipped;
                continue;
            }
            todo.push_back({&a, answer_id(a), url});
            urls.insert(url);
        }
    }

    ensure_embedding(study, services);
    const auto digest = store::json_digest(Json{{"study", study.digest}, {"backend", services.embedding->id()},
                                                {"pairs", todo.size()}, {"done", done.size()}});
    if (todo.empty() && latest_stage_digest(store.scan(run_id, {"stage"}), "reflect") != "") {
        res.noop = true;
        return res;
    }
    ensure_pages(study, store, services);

    const std::vector<std::string> url_list(urls.begin(), urls.end());
    const auto snaps = harvest::fetch_all(*services.pages, url_list, study.workers);
    std::map<std::string, const harvest::PageSnapshot*> by_url;
    for (std::size_t i = 0; i < url_list.size(); ++i) by_url[url_list[i]] = &snaps[i];

    reflection::EmbeddingCache cache(store.cache_dir("embeddings"));
    reflection::Embedder embedder(*services.embedding, cache);
    std::vector<Json> rows(todo.size());
    parallel_for(todo.size(), study.workers, [&](std::size_t i) {
        const auto& p = todo[i];
        Json row{{"answer_id", p.id}, {"url", p.url}};
        const auto* snap = by_url.at(p.url);
        if (!snap->ok()) {
            row["unavailable"] = "fetch_" + std::string(harvest::to_string(snap->status));
            rows[i] = std::move(row);
            return;
        }
        const auto sentences = reflection::split_sentences(p.answer->answer_text, p.answer->language);
        const auto outcome = reflection::reflect(p.url, sentences, snap->extracted_text, embedder);
        if (!outcome.reflection) {
            row["unavailable"] = outcome.unavailable_reason;
        } else {
            const auto& r = *outcome.reflection;
            const auto csent = reflection::split_sentences(snap->extracted_text, reflection::detect_language(snap->extracted_text));
            row["sim_max"] = r.sim_max;
            row["band"] = std::string(reflection::to_string(r.band));
            row["answer_index"] = r.answer_index;
            row["citation_index"] = r.citation_index;
            row["cross_language"] = r.cross_language;
            row["answer_sentence"] = sentences.at(r.answer_index).text;
            row["citation_sentence"] = csent.at(r.citation_index).text;
        }
        rows[i] = std::move(row);
    });

    Ledger ledger(store, run_id);
    const auto recorded = recorded_snapshots(store, run_id);
    for (std::size_t i = 0; i < url_list.size(); ++i)
        if (!recorded.count(url_list[i])) ledger.append("snapshot", snapshot_entry(snaps[i]));
    for (const auto& row : rows) ledger.append("reflection", row);
    ledger.append("stage", Json{{"stage", "reflect"},
                                {"input_digest", digest},
                                {"embedding_backend", services.embedding->id()},
                                {"page_source", services.pages->id()},
                                {"pairs", rows.size()}});
    res.appended = ledger.appended();
    return res;
}

// ---------------------------------------------------------------------------
// Web structure

Json to_json(const stats::TestResult& t) {
    return Json{{"statistic", t.statistic}, {"p_value", t.p_value}, {"method", std::string(stats::to_string(t.method))},
                {"n1", t.n1},               {"n2", t.n2},           {"degenerate", t.degenerate}};
}

stats::TestResult test_result_from_json(const Json& j) {
    stats::TestResult t;
    t.statistic = j.at("statistic").get<double>();
    t.p_value = j.at("p_value").get<double>();
    t.method = parse_method(j.at("method").get<std::string>());
    t.n1 = j.at("n1").get<std::size_t>();
    t.n2 = j.at("n2").get<std::size_t>();
    t.degenerate = j.at("degenerate").get<bool>();
    return t;
}

Json to_json(const analytics::WebstructResult& r) {
    Json metrics = Json::array();
    for (const auto& m : r.metrics) metrics.push_back(Json{{"metric", m.metric}, {"mw", to_json(m.mw)}, {"ks", to_json(m.ks)}});
    return Json{{"country", r.country},     {"provider", r.provider},   {"skipped", r.skipped},
                {"reason", r.reason},       {"seed", r.seed},           {"n_cited", r.n_cited},
                {"n_sources", r.n_sources}, {"n_balanced", r.n_balanced}, {"metrics", metrics}};
}

analytics::WebstructResult webstruct_from_json(const Json& j) {
    analytics::WebstructResult r;
    r.country = j.at("country").get<std::string>();
    r.provider = j.at("provider").get<std::string>();
    r.skipped = j.at("skipped").get<bool>();
    r.reason = j.at("reason").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_cited = j.at("n_cited").get<std::size_t>();
    r.n_sources = j.at("n_sources").get<std::size_t>();
    r.n_balanced = j.at("n_balanced").get<std::size_t>();
    for (const auto& m : j.at("metrics"))
        r.metrics.push_back({m.at("metric").get<std::string>(), test_result_from_json(m.at("mw")), test_result_from_json(m.at("ks"))});
    return r;
}

StageResult webstruct(store::Store& store, const std::string& run_id, Services& services,
                      std::optional<std::uint64_t> seed) {
    const auto study = run_study(store, run_id);
    const auto use_seed = seed.value_or(study.seed);
    StageResult res;
    res.stage = "webstruct";
    const auto answers = load_answers(store, run_id);

    struct Pools {
        bool exposes_sources = false;
        std::set<std::string> cited;
        std::set<std::string> visited;
    };
    std::map<std::pair<std::string, std::string>, Pools> groups;
    for (const auto& a : answers) {
        const auto* party = study.manifest.find(a.party_id);
        if (!party) throw ValidationError("answer " + answer_id(a) + ": unknown party " + a.party_id);
        auto& g = groups[{party->country, a.provider}];
        for (const auto& c : a.citations) g.cited.insert(canonical_url(c.url));
        if (a.visited_sources) {
            g.exposes_sources = true;
            for (const auto& u : *a.visited_sources) g.visited.insert(canonical_url(u));
        }
    }

    std::map<std::pair<std::string, std::string>, std::string> existing;  // group -> input digest
    for (const auto& e : store.scan(run_id, {"webstruct"}))
        existing[{e.payload.at("result").at("country"), e.payload.at("result").at("provider")}] =
            e.payload.at("input_digest").get<std::string>();

    struct Work {
        std::string country, provider, digest;
        std::vector<std::string> cited, sources;
        bool exposes = false;
    };
    std::vector<Work> work;
    std::set<std::string> urls;
    for (const auto& [key, g] : groups) {
        Work w;
        w.country = key.first;
        w.provider = key.second;
        w.exposes = g.exposes_sources;
        w.cited.assign(g.cited.begin(), g.cited.end());
        for (const auto& u : g.visited)
            if (!g.cited.count(u)) w.sources.push_back(u);
        w.digest = store::json_digest(Json{{"seed", use_seed}, {"cited", w.cited}, {"sources", w.sources}, {"exposes", w.exposes}});
        if (auto it = existing.find(key); it != existing.end() && it->second == w.digest) {
            ++res.skipped;
            continue;
        }
        if (w.exposes) {
            urls.insert(w.cited.begin(), w.cited.end());
            urls.insert(w.sources.begin(), w.sources.end());
        }
        work.push_back(std::move(w));
    }
    if (work.empty()) {
        res.noop = true;
        return res;
    }

    std::map<std::string, harvest::PageSnapshot> snaps;
    if (!urls.empty()) {
        ensure_pages(study, store, services);
        const std::vector<std::string> list(urls.begin(), urls.end());
        auto fetched = harvest::fetch_all(*services.pages, list, study.workers);
        for (std::size_t i = 0; i < list.size(); ++i) snaps[list[i]] = std::move(fetched[i]);
    }

    Ledger ledger(store, run_id);
    const auto recorded = recorded_snapshots(store, run_id);
    for (const auto& [url, s] : snaps)
        if (!recorded.count(url)) ledger.append("snapshot", snapshot_entry(s));

    auto features = [&](const std::vector<std::string>& list) {
        std::vector<harvest::StructFeatures> out;
        for (const auto& u : list)
            if (const auto& s = snaps.at(u); s.ok()) out.push_back(harvest::extract_features(s.html));
        return out;
    };
    for (const auto& w : work) {
        analytics::WebstructResult r;
        if (!w.exposes) {
            r.skipped = true;
            r.seed = use_seed;
            r.reason = "provider does not expose visited sources";
        } else {
            r = analytics::webstruct_analysis(features(w.cited), features(w.sources), use_seed);
        }
        r.country = w.country;
        r.provider = w.provider;
        ledger.append("webstruct", Json{{"input_digest", w.digest}, {"result", to_json(r)}});
    }
    ledger.append("stage", Json{{"stage", "webstruct"}, {"input_digest", study.digest}, {"seed", use_seed}});
    res.appended = ledger.appended();
    return res;
}

// ---------------------------------------------------------------------------
// Analysis

analytics::ReportInputs gather(const store::Store& store, const std::string& run_id) {
    const auto study = run_study(store, run_id);
    analytics::ReportInputs in;
    in.run_id = run_id;
    const auto answers = load_answers(store, run_id);

    std::map<std::string, classifier::PublisherVerdict> verdicts;
    struct Refl {
        std::optional<reflection::CitationReflection> r;
        std::string unavailable, answer_sentence, citation_sentence;
    };
    std::map<std::pair<std::string, std::string>, Refl> refl;
    std::map<std::pair<std::string, std::string>, analytics::WebstructResult> ws;
    Json fixtures = Json::array(), decisions = Json::object(), backends = Json::object(), seeds = Json::object();
    std::size_t decision_count = 0;

    for (const auto& e : store.scan(run_id)) {
        const auto& p = e.payload;
        if (e.kind == "verdict") {
            auto v = classifier::verdict_from_json(p);
            verdicts[verdict_key(v.host, v.party_id)] = std::move(v);
        } else if (e.kind == "reflection") {
            Refl r;
            if (p.contains("sim_max")) {
                reflection::CitationReflection c;
                c.url = p.at("url").get<std::string>();
                c.sim_max = p.at("sim_max").get<double>();
                c.band = reflection::band(c.sim_max);
                c.answer_index = p.at("answer_index").get<std::size_t>();
                c.citation_index = p.at("citation_index").get<std::size_t>();
                c.cross_language = p.at("cross_language").get<bool>();
                r.r = c;
                r.answer_sentence = p.value("answer_sentence", "");
                r.citation_sentence = p.value("citation_sentence", "");
            } else {
                r.unavailable = p.at("unavailable").get<std::string>();
            }
            refl[{p.at("answer_id").get<std::string>(), p.at("url").get<std::string>()}] = std::move(r);
        } else if (e.kind == "webstruct") {
            auto r = webstruct_from_json(p.at("result"));
            ws[{r.country, r.provider}] = std::move(r);
        } else if (e.kind == "decision") {
            ++decision_count;
            const auto src = p.value("source", "");
            decisions[src] = decisions.value(src, 0) + 1;
        } else if (e.kind == "stage") {
            const auto stage = p.value("stage", "");
            if (stage == "replay") {
                for (const auto& f : p.at("fixtures")) fixtures.push_back(f);
            } else if (stage == "reflect") {
                backends["embedding"] = p.at("embedding_backend");
                backends["pages"] = p.at("page_source");
            } else if (stage == "classify") {
                backends["judges"] = p.at("judges");
                backends["judge_prompt_sha256"] = p.at("judge_prompt_sha256");
            } else if (stage == "webstruct") {
                seeds["webstruct"] = p.at("seed");
            } else if (stage == "collect") {
                backends["providers"] = p.at("models");
            }
        }
    }

    for (const auto& a : answers) {
        const auto* party = study.manifest.find(a.party_id);
        if (!party) throw ValidationError("answer " + answer_id(a) + ": unknown party " + a.party_id);
        const auto id = answer_id(a);
        analytics::AnswerFact af;
        af.answer_id = id;
        af.country = party->country;
        af.party_id = a.party_id;
        af.provider = a.provider;
        af.sentences = reflection::split_sentences(a.answer_text, a.language).size();
        af.citations_total = a.citations.size();
        std::set<std::string> unique;
        for (std::size_t i = 0; i < a.citations.size(); ++i) {
            const auto& c = a.citations[i];
            const auto url = canonical_url(c.url);
            unique.insert(url);
            analytics::CitationFact f;
            f.answer_id = id;
            f.country = party->country;
            f.party_id = a.party_id;
            f.provider = a.provider;
            f.position = i;
            f.url = url;
            f.host = c.host;
            if (auto it = verdicts.find(verdict_key(c.host, a.party_id)); it != verdicts.end()) f.verdict = it->second;
            else if (auto jt = verdicts.find(verdict_key(c.host, "")); jt != verdicts.end()) f.verdict = jt->second;
            if (auto rt = refl.find({id, url}); rt != refl.end()) {
                f.reflection = rt->second.r;
                f.reflection_unavailable = rt->second.unavailable;
                f.answer_sentence = rt->second.answer_sentence;
                f.citation_sentence = rt->second.citation_sentence;
            }
            in.citations.push_back(std::move(f));
        }
        af.citations_unique = unique.size();
        in.answers.push_back(std::move(af));
    }
    for (auto& [key, r] : ws) in.webstruct.push_back(std::move(r));

    in.provenance = Json{{"study_digest", study.digest},
                         {"fixtures", fixtures},
                         {"backends", backends},
                         {"seeds", seeds},
                         {"decisions", Json{{"count", decision_count}, {"by_source", decisions}}},
                         {"answers", answers.size()}};
    return in;
}

Json current_report(const store::Store& store, const std::string& run_id, bool allow_pending) {
    return analytics::build_report(gather(store, run_id), allow_pending);
}

Json analyze(store::Store& store, const std::string& run_id, bool allow_pending) {
    auto report = current_report(store, run_id, allow_pending);
    const auto digest = sha256_hex(analytics::dump_report(report));
    std::string last;
    for (const auto& e : store.scan(run_id, {"report"})) last = e.payload.value("sha256", "");
    if (last != digest) {
        auto w = store.open_writer(run_id);
        w->append("report", Json{{"sha256", digest}, {"allow_pending", allow_pending},
                                 {"pending_hosts", report.at("pending_hosts")}});
    }
    return report;
}

}  // namespace geaudit::pipeline
