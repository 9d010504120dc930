#include "geaudit/ge_client.hpp"

#include "geaudit/common.hpp"
#include "geaudit/domain.hpp"
#include "geaudit/reflection.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <set>
#include <thread>

namespace geaudit::ge {

// ---------------------------------------------------------------------------
// JSON mapping

Json to_json(const CitationRef& c) {
    return Json{{"url", c.url},
                {"host", c.host},
                {"domain", c.normalized_domain},
                {"sentence_indices", c.sentence_indices}};
}

CitationRef citation_from_json(const Json& j) {
    CitationRef c;
    c.url = j.at("url").get<std::string>();
    c.host = j.at("host").get<std::string>();
    c.normalized_domain = j.at("domain").get<std::string>();
    c.sentence_indices = j.value("sentence_indices", std::vector<std::size_t>{});
    return c;
}

Json to_json(const AnswerRecord& r) {
    Json cites = Json::array();
    for (const auto& c : r.citations) cites.push_back(to_json(c));
    Json j{{"question_id", r.question_id},
           {"party_id", r.party_id},
           {"language", r.language},
           {"provider", r.provider},
           {"repeat_index", r.repeat_index},
           {"model", r.model},
           {"answer_text", r.answer_text},
           {"citations", cites},
           {"collected_at", r.collected_at}};
    j["visited_sources"] = r.visited_sources ? Json(*r.visited_sources) : Json(nullptr);
    return j;
}

AnswerRecord answer_from_json(const Json& j) {
    AnswerRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.party_id = j.at("party_id").get<std::string>();
    r.language = j.at("language").get<std::string>();
    r.provider = j.at("provider").get<std::string>();
    r.repeat_index = j.at("repeat_index").get<int>();
    r.model = j.value("model", "");
    r.answer_text = j.at("answer_text").get<std::string>();
    for (const auto& c : j.at("citations")) r.citations.push_back(citation_from_json(c));
    if (j.contains("visited_sources") && !j["visited_sources"].is_null()) {
        r.visited_sources = j["visited_sources"].get<std::vector<std::string>>();
    }
    r.collected_at = j.value("collected_at", "");
    return r;
}

Json to_json(const RawExchange& x) {
    Json j{{"provider", x.provider},
           {"question_id", x.question_id},
           {"party_id", x.party_id},
           {"language", x.language},
           {"repeat_index", x.repeat_index},
           {"request", x.request},
           {"http_status", x.http_status},
           {"timestamp", x.timestamp}};
    // Bodies that are not UTF-8 are kept losslessly as base64.
    if (text::is_valid_utf8(x.response)) {
        j["response"] = x.response;
    } else {
        static const char* b64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        std::string out;
        const auto& s = x.response;
        for (std::size_t i = 0; i < s.size(); i += 3) {
            std::uint32_t n = static_cast<unsigned char>(s[i]) << 16;
            if (i + 1 < s.size()) n |= static_cast<unsigned char>(s[i + 1]) << 8;
            if (i + 2 < s.size()) n |= static_cast<unsigned char>(s[i + 2]);
            out += b64[(n >> 18) & 63];
            out += b64[(n >> 12) & 63];
            out += i + 1 < s.size() ? b64[(n >> 6) & 63] : '=';
            out += i + 2 < s.size() ? b64[n & 63] : '=';
        }
        j["response_b64"] = out;
    }
    return j;
}

namespace {

std::string base64_decode(std::string_view in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    std::uint32_t buf = 0;
    int bits = 0;
    for (char c : in) {
        const int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((buf >> bits) & 0xFF);
        }
    }
    return out;
}

}  // namespace

RawExchange exchange_from_json(const Json& j) {
    RawExchange x;
    x.provider = j.at("provider").get<std::string>();
    x.question_id = j.at("question_id").get<std::string>();
    x.party_id = j.at("party_id").get<std::string>();
    x.language = j.at("language").get<std::string>();
    x.repeat_index = j.at("repeat_index").get<int>();
    x.request = j.value("request", Json::object());
    x.http_status = j.value("http_status", 200);
    x.timestamp = j.value("timestamp", "");
    if (j.contains("response")) {
        x.response = j["response"].get<std::string>();
    } else if (j.contains("response_b64")) {
        x.response = base64_decode(j["response_b64"].get<std::string>());
    } else {
        throw ParseError("exchange has neither response nor response_b64");
    }
    return x;
}

// ---------------------------------------------------------------------------
// Sentence alignment

namespace {

struct Aligner {
    std::vector<reflection::Sentence> sentences;

    Aligner(std::string_view text, std::string_view language)
        : sentences(reflection::split_sentences(text, language)) {}

    std::vector<std::size_t> range(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> out;
        for (const auto& s : sentences) {
            const bool hit = begin == end ? (s.begin <= begin && begin < s.end) : (s.begin < end && begin < s.end);
            if (hit) out.push_back(s.index);
        }
        return out;
    }
};

// Converts a code point offset into a byte offset, clamped to the text.
std::size_t byte_offset(std::string_view text, std::size_t code_points) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < code_points && pos < text.size(); ++i) text::utf8_next(text, pos);
    return pos;
}

CitationRef make_citation(const std::string& url, std::vector<std::size_t> indices, const std::string& where) {
    CitationRef c;
    c.url = url;
    try {
        const auto d = normalize_domain(url);
        c.host = d.host;
        c.normalized_domain = d.registrable;
    } catch (const ValidationError& e) {
        throw ParseError(where + ": citation URL is not absolute: " + url);
    }
    c.sentence_indices = std::move(indices);
    return c;
}

const Json& need(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ParseError("missing field " + where + "." + key);
    return j[key];
}

std::string need_string(const Json& j, const char* key, const std::string& where) {
    const auto& v = need(j, key, where);
    if (!v.is_string()) throw ParseError("field " + where + "." + key + " is not a string");
    return v.get<std::string>();
}

Json parse_body(std::string_view body) {
    try {
        return Json::parse(body);
    } catch (const Json::exception& e) {
        throw ParseError(std::string("response is not JSON: ") + e.what());
    }
}

// OpenAI Responses API with the web_search tool.
class OpenAiAdapter final : public Adapter {
public:
    std::string id() const override { return "openai"; }

    http::Request build_request(const ProviderConfig& cfg, const corpus::Question& q,
                                const std::string& key) const override {
        Json body{{"model", cfg.model},
                  {"tools", Json::array({Json{{"type", "web_search"}}})},
                  {"include", Json::array({"web_search_call.action.sources"})},
                  {"input", q.rendered_text}};
        http::Request r;
        r.method = "POST";
        r.url = cfg.endpoint + "/v1/responses";
        r.body = body.dump();
        r.headers.emplace_back("Authorization", "Bearer " + key);
        r.timeout_ms = cfg.timeout_ms;
        return r;
    }

    Extraction extract(std::string_view body, std::string_view language) const override {
        const Json j = parse_body(body);
        Extraction ex;
        ex.model = j.value("model", "");
        const auto& output = need(j, "output", "response");
        if (!output.is_array()) throw ParseError("field response.output is not an array");

        struct Pending {
            std::string url;
            std::size_t begin, end;
            std::string where;
        };
        std::vector<Pending> pending;
        bool saw_sources = false;
        std::vector<std::string> visited;
        for (std::size_t i = 0; i < output.size(); ++i) {
            const auto& item = output[i];
            const std::string where = "output[" + std::to_string(i) + "]";
            const std::string type = need_string(item, "type", where);
            if (type == "web_search_call") {
                if (item.contains("action") && item["action"].contains("sources")) {
                    saw_sources = true;
                    for (const auto& s : item["action"]["sources"]) {
                        if (s.contains("url")) visited.push_back(s["url"].get<std::string>());
                    }
                }
            } else if (type == "message") {
                const auto& content = need(item, "content", where);
                for (std::size_t k = 0; k < content.size(); ++k) {
                    const auto& part = content[k];
                    const std::string pw = where + ".content[" + std::to_string(k) + "]";
                    if (need_string(part, "type", pw) != "output_text") continue;
                    if (!ex.answer_text.empty()) ex.answer_text += "\n\n";
                    const std::string text = need_string(part, "text", pw);
                    const std::size_t base = ex.answer_text.size();
                    ex.answer_text += text;
                    if (!part.contains("annotations")) continue;
                    const auto& anns = part["annotations"];
                    for (std::size_t a = 0; a < anns.size(); ++a) {
                        const std::string aw = pw + ".annotations[" + std::to_string(a) + "]";
                        if (need_string(anns[a], "type", aw) != "url_citation") continue;
                        const auto url = need_string(anns[a], "url", aw);
                        const auto s = anns[a].value("start_index", std::size_t{0});
                        const auto e = anns[a].value("end_index", s);
                        pending.push_back({url, base + byte_offset(text, s), base + byte_offset(text, e), aw});
                    }
                }
            }
        }
        const Aligner aligner(ex.answer_text, language);
        for (const auto& p : pending) ex.citations.push_back(make_citation(p.url, aligner.range(p.begin, p.end), p.where));
        if (saw_sources) ex.visited_sources = std::move(visited);
        return ex;
    }
};

// Anthropic Messages API with the server-side web_search tool.
class AnthropicAdapter final : public Adapter {
public:
    std::string id() const override { return "anthropic"; }

    http::Request build_request(const ProviderConfig& cfg, const corpus::Question& q,
                                const std::string& key) const override {
        Json body{{"model", cfg.model},
                  {"max_tokens", 2048},
                  {"messages", Json::array({Json{{"role", "user"}, {"content", q.rendered_text}}})},
                  {"tools", Json::array({Json{{"type", "web_search_20250305"}, {"name", "web_search"}, {"max_uses", 5}}})}};
        http::Request r;
        r.method = "POST";
        r.url = cfg.endpoint + "/v1/messages";
        r.body = body.dump();
        r.headers.emplace_back("x-api-key", key);
        r.headers.emplace_back("anthropic-version", "2023-06-01");
        r.timeout_ms = cfg.timeout_ms;
        return r;
    }

    Extraction extract(std::string_view body, std::string_view language) const override {
        const Json j = parse_body(body);
        Extraction ex;
        ex.model = j.value("model", "");
        const auto& content = need(j, "content", "response");
        if (!content.is_array()) throw ParseError("field response.content is not an array");
        struct Pending {
            std::string url;
            std::size_t begin, end;
            std::string where;
        };
        std::vector<Pending> pending;
        bool saw_results = false;
        std::vector<std::string> visited;
        for (std::size_t i = 0; i < content.size(); ++i) {
            const auto& block = content[i];
            const std::string where = "content[" + std::to_string(i) + "]";
            const std::string type = need_string(block, "type", where);
            if (type == "web_search_tool_result") {
                saw_results = true;
                const auto& results = need(block, "content", where);
                if (!results.is_array()) continue;  // tool error object
                for (const auto& r : results) {
                    if (r.value("type", "") == "web_search_result" && r.contains("url")) {
                        visited.push_back(r["url"].get<std::string>());
                    }
                }
            } else if (type == "text") {
                const std::string text = need_string(block, "text", where);
                const std::size_t begin = ex.answer_text.size();
                ex.answer_text += text;
                if (!block.contains("citations") || block["citations"].is_null()) continue;
                const auto& cites = block["citations"];
                for (std::size_t k = 0; k < cites.size(); ++k) {
                    const std::string cw = where + ".citations[" + std::to_string(k) + "]";
                    pending.push_back({need_string(cites[k], "url", cw), begin, ex.answer_text.size(), cw});
                }
            }
        }
        const Aligner aligner(ex.answer_text, language);
        for (const auto& p : pending) ex.citations.push_back(make_citation(p.url, aligner.range(p.begin, p.end), p.where));
        if (saw_results) ex.visited_sources = std::move(visited);
        return ex;
    }
};

// Gemini generateContent with google_search grounding. Segment offsets are bytes.
class GeminiAdapter final : public Adapter {
public:
    std::string id() const override { return "gemini"; }

    http::Request build_request(const ProviderConfig& cfg, const corpus::Question& q,
                                const std::string& key) const override {
        Json body{{"contents", Json::array({Json{{"parts", Json::array({Json{{"text", q.rendered_text}}})}}})},
                  {"tools", Json::array({Json{{"google_search", Json::object()}}})}};
        http::Request r;
        r.method = "POST";
        r.url = cfg.endpoint + "/v1beta/models/" + cfg.model + ":generateContent";
        r.body = body.dump();
        r.headers.emplace_back("x-goog-api-key", key);
        r.timeout_ms = cfg.timeout_ms;
        return r;
    }

    Extraction extract(std::string_view body, std::string_view language) const override {
        const Json j = parse_body(body);
        Extraction ex;
        ex.model = j.value("modelVersion", "");
        const auto& cands = need(j, "candidates", "response");
        if (!cands.is_array() || cands.empty()) throw ParseError("missing field response.candidates[0]");
        const auto& cand = cands[0];
        const auto& parts = need(need(cand, "content", "candidates[0]"), "parts", "candidates[0].content");
        for (const auto& p : parts) {
            if (p.contains("text")) ex.answer_text += p["text"].get<std::string>();
        }
        if (!cand.contains("groundingMetadata")) return ex;
        const auto& gm = cand["groundingMetadata"];
        std::vector<std::string> chunk_urls;
        if (gm.contains("groundingChunks")) {
            const auto& chunks = gm["groundingChunks"];
            for (std::size_t i = 0; i < chunks.size(); ++i) {
                const std::string w = "groundingChunks[" + std::to_string(i) + "]";
                chunk_urls.push_back(need_string(need(chunks[i], "web", w), "uri", w + ".web"));
            }
        }
        const Aligner aligner(ex.answer_text, language);
        std::vector<bool> used(chunk_urls.size(), false);
        if (gm.contains("groundingSupports")) {
            const auto& supports = gm["groundingSupports"];
            for (std::size_t s = 0; s < supports.size(); ++s) {
                const std::string w = "groundingSupports[" + std::to_string(s) + "]";
                const auto& seg = need(supports[s], "segment", w);
                const auto b = std::min<std::size_t>(seg.value("startIndex", std::size_t{0}), ex.answer_text.size());
                const auto e = std::min<std::size_t>(seg.value("endIndex", b), ex.answer_text.size());
                for (const auto& idx : need(supports[s], "groundingChunkIndices", w)) {
                    const auto k = idx.get<std::size_t>();
                    if (k >= chunk_urls.size()) throw ParseError(w + ": chunk index out of range");
                    used[k] = true;
                    ex.citations.push_back(make_citation(chunk_urls[k], aligner.range(b, e), w));
                }
            }
        }
        // Chunks no support refers to are still answer-level citations.
        for (std::size_t k = 0; k < chunk_urls.size(); ++k) {
            if (!used[k]) ex.citations.push_back(make_citation(chunk_urls[k], {}, "groundingChunks"));
        }
        return ex;
    }
};

struct Registry {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<const Adapter>, std::less<>> adapters;

    Registry() {
        for (std::shared_ptr<const Adapter> a : {std::shared_ptr<const Adapter>(std::make_shared<OpenAiAdapter>()),
                                                 std::shared_ptr<const Adapter>(std::make_shared<AnthropicAdapter>()),
                                                 std::shared_ptr<const Adapter>(std::make_shared<GeminiAdapter>())}) {
            adapters[a->id()] = a;
        }
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

std::vector<std::size_t> sentences_for_range(std::string_view text, std::string_view language, std::size_t begin,
                                             std::size_t end) {
    return Aligner(text, language).range(begin, end);
}

void register_adapter(std::shared_ptr<const Adapter> a) {
    std::lock_guard lock(registry().mu);
    registry().adapters[a->id()] = std::move(a);
}

const Adapter& adapter(std::string_view id) {
    std::lock_guard lock(registry().mu);
    auto it = registry().adapters.find(id);
    if (it == registry().adapters.end()) throw NotFoundError("no adapter registered for provider '" + std::string(id) + "'");
    return *it->second;
}

std::vector<std::string> adapter_ids() {
    std::lock_guard lock(registry().mu);
    std::vector<std::string> out;
    for (const auto& [k, v] : registry().adapters) out.push_back(k);
    return out;
}

Extraction extract_citations(const RawExchange& raw, std::string_view adapter_id) {
    auto ex = adapter(adapter_id.empty() ? std::string_view(raw.provider) : adapter_id).extract(raw.response, raw.language);
    if (ex.visited_sources) {
        std::set<std::string> seen;
        for (const auto& u : *ex.visited_sources) {
            try {
                seen.insert(canonical_url(u));
            } catch (const ValidationError&) {
            }
        }
        for (const auto& c : ex.citations) {
            if (seen.insert(canonical_url(c.url)).second) ex.visited_sources->push_back(c.url);
        }
    }
    return ex;
}

AnswerRecord make_record(const RawExchange& raw, Extraction ex) {
    AnswerRecord r;
    r.question_id = raw.question_id;
    r.party_id = raw.party_id;
    r.language = raw.language;
    r.provider = raw.provider;
    r.repeat_index = raw.repeat_index;
    r.model = std::move(ex.model);
    r.answer_text = std::move(ex.answer_text);
    r.citations = std::move(ex.citations);
    r.visited_sources = std::move(ex.visited_sources);
    r.collected_at = raw.timestamp;
    return r;
}

// ---------------------------------------------------------------------------
// Limiter and client

ProviderLimiter::ProviderLimiter(int max_in_flight, int min_interval_ms)
    : max_(std::max(1, max_in_flight)), interval_(std::max(0, min_interval_ms)) {}

ProviderLimiter::Permit ProviderLimiter::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_; });
    ++in_flight_;
    peak_ = std::max(peak_, in_flight_);
    const auto now = std::chrono::steady_clock::now();
    const auto start = std::max(now, next_start_);
    next_start_ = start + interval_;
    lock.unlock();
    std::this_thread::sleep_until(start);
    return Permit(*this);
}

ProviderLimiter::Permit::~Permit() {
    if (!l_) return;
    {
        std::lock_guard lock(l_->mu_);
        --l_->in_flight_;
    }
    l_->cv_.notify_one();
}

int ProviderLimiter::peak_in_flight() const {
    std::lock_guard lock(mu_);
    return peak_;
}

Client::Client(ProviderConfig config, Transport& transport, std::shared_ptr<ProviderLimiter> limiter)
    : config_(std::move(config)),
      transport_(transport),
      limiter_(limiter ? std::move(limiter)
                       : std::make_shared<ProviderLimiter>(config_.max_in_flight, config_.min_interval_ms)),
      sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (config_.adapter.empty()) config_.adapter = config_.id;
}

AskResult Client::ask(const corpus::Question& question, int repeat_count, const ExchangeSink& sink, int first_repeat) {
    AskResult result;
    if (repeat_count <= 0) return result;
    const Adapter& ad = adapter(config_.adapter);

    std::string key;
    if (!config_.credential_env.empty()) {
        if (const char* v = std::getenv(config_.credential_env.c_str())) key = v;
    }
    if (key.empty()) {
        for (int r = first_repeat; r < first_repeat + repeat_count; ++r) {
            result.errors.push_back({r, "auth", "credential variable " + config_.credential_env + " is not set"});
        }
        return result;
    }

    thread_local std::mt19937_64 rng{std::random_device{}()};
    for (int r = first_repeat; r < first_repeat + repeat_count; ++r) {
        const http::Request req = ad.build_request(config_, question, key);
        http::Response resp;
        std::string failure_kind;
        for (int attempt = 0; attempt < std::max(1, config_.max_attempts); ++attempt) {
            {
                auto permit = limiter_->acquire();
                resp = transport_.send(req);
            }
            const bool retriable = resp.status == 429 || resp.status >= 500 || resp.status == 0;
            if (!retriable) break;
            failure_kind = resp.status == 429 ? "rate_limit" : (resp.status == 0 ? "network" : "http");
            if (attempt + 1 >= config_.max_attempts) break;
            double wait = config_.backoff_base_ms * std::pow(2.0, attempt);
            if (const auto ra = resp.header("retry-after"); !ra.empty()) {
                try {
                    wait = std::max(wait, std::stod(ra) * 1000.0);
                } catch (const std::exception&) {
                }
            }
            wait = std::min<double>(wait, config_.backoff_max_ms);
            std::uniform_real_distribution<double> jitter(0.5, 1.0);
            spdlog::debug("{} {}#{}: status {}, retrying", config_.id, question.id, r, resp.status);
            sleep_(std::chrono::milliseconds(static_cast<long>(wait * jitter(rng))));
        }

        if (resp.status == 401 || resp.status == 403) {
            result.errors.push_back({r, "auth", "provider rejected credentials (HTTP " + std::to_string(resp.status) + ")"});
            continue;
        }
        if (!resp.ok()) {
            const auto kind = failure_kind.empty() ? std::string("http") : failure_kind;
            result.errors.push_back({r, kind, resp.status ? "HTTP " + std::to_string(resp.status) : resp.error});
            continue;
        }

        RawExchange raw;
        raw.provider = config_.id;
        raw.question_id = question.id;
        raw.party_id = question.party_id;
        raw.language = question.language;
        raw.repeat_index = r;
        raw.request = Json::parse(req.body, nullptr, false);
        raw.request["_url"] = req.url;
        raw.http_status = resp.status;
        raw.response = resp.body;
        raw.timestamp = now_iso8601();
        sink(raw);  // raw before parse

        try {
            result.records.push_back(make_record(raw, extract_citations(raw, config_.adapter)));
        } catch (const ParseError& e) {
            result.errors.push_back({r, "malformed", e.what()});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Fixtures

std::string fixture_id(const RawExchange& x) {
    return x.provider + "/" + x.question_id + "/" + std::to_string(x.repeat_index);
}

FixtureWriter::FixtureWriter(const std::filesystem::path& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw Error("cannot open fixture for writing: " + path.string());
    if (fresh) {
        out_ << Json{{"format", "geaudit-fixture"}, {"version", kFixtureVersion}}.dump() << '\n';
        out_.flush();
    }
}

std::string FixtureWriter::record(const RawExchange& x) {
    std::lock_guard lock(mu_);
    out_ << to_json(x).dump() << '\n';
    out_.flush();
    if (!out_) throw Error("fixture write failed");
    return fixture_id(x);
}

std::vector<RawExchange> read_fixture(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    std::vector<RawExchange> out;
    std::size_t pos = 0, line_no = 0;
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        const bool last = nl == std::string::npos;
        if (last) nl = data.size();
        const std::string_view line(data.data() + pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (text::trim(line).empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": unparseable record", line_no);
        }
        if (line_no == 1) {
            if (j.value("format", "") != "geaudit-fixture") throw ParseError("not a fixture file", line_no);
            if (j.value("version", 0) != kFixtureVersion) {
                throw ParseError("fixture version " + std::to_string(j.value("version", 0)) + " is not supported",
                                 line_no);
            }
            continue;
        }
        try {
            out.push_back(exchange_from_json(j));
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        } catch (const ParseError& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        }
    }
    if (line_no == 0) throw ParseError("empty fixture file", 1);
    return out;
}

ReplayResult replay(const std::filesystem::path& path) {
    ReplayResult r;
    r.exchanges = read_fixture(path);
    for (const auto& x : r.exchanges) {
        try {
            r.records.push_back(make_record(x, extract_citations(x)));
        } catch (const ParseError& e) {
            r.skipped.push_back(fixture_id(x) + ": " + e.what());
        }
    }
    return r;
}

}  // namespace geaudit::ge
