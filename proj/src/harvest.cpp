#include "geaudit/harvest.hpp"

#include "geaudit/common.hpp"
#include "geaudit/http.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <thread>

namespace geaudit::harvest {

namespace {

bool ieq(std::string_view a, std::string_view b) {
    return a.size() == b.size() && text::to_lower_ascii(a) == text::to_lower_ascii(b);
}

const std::set<std::string, std::less<>>& block_tags() {
    static const std::set<std::string, std::less<>> s = {
        "address", "article", "aside", "blockquote", "br", "caption", "dd", "details", "dialog", "div", "dl",
        "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6",
        "header", "hr", "li", "main", "nav", "ol", "option", "p", "pre", "section", "summary", "table",
        "tbody", "td", "tfoot", "th", "thead", "tr", "ul"};
    return s;
}

const std::set<std::string, std::less<>>& hidden_tags() {
    static const std::set<std::string, std::less<>> s = {"script", "style", "template", "noscript", "title"};
    return s;
}

const std::map<std::string, char32_t, std::less<>>& named_entities() {
    static const std::map<std::string, char32_t, std::less<>> m = {
        {"amp", U'&'},     {"lt", U'<'},       {"gt", U'>'},       {"quot", U'"'},     {"apos", U'\''},
        {"nbsp", 0xA0},    {"copy", 0xA9},     {"reg", 0xAE},      {"trade", 0x2122},  {"hellip", 0x2026},
        {"mdash", 0x2014}, {"ndash", 0x2013},  {"lsquo", 0x2018},  {"rsquo", 0x2019},  {"ldquo", 0x201C},
        {"rdquo", 0x201D}, {"laquo", 0xAB},    {"raquo", 0xBB},    {"middot", 0xB7},   {"bull", 0x2022},
        {"euro", 0x20AC},  {"yen", 0xA5},      {"pound", 0xA3},    {"times", 0xD7},    {"deg", 0xB0},
        {"shy", 0xAD},     {"zwnj", 0x200C},   {"zwj", 0x200D},    {"eacute", 0xE9},   {"uuml", 0xFC}};
    return m;
}

// Decodes the entity starting at html[pos] == '&'. Advances pos on success.
bool decode_entity(std::string_view html, std::size_t& pos, std::string& out) {
    const auto semi = html.find(';', pos + 1);
    if (semi == std::string_view::npos || semi - pos > 32) return false;
    const std::string_view body = html.substr(pos + 1, semi - pos - 1);
    if (body.empty()) return false;
    char32_t cp = 0;
    if (body[0] == '#') {
        const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
        const auto digits = body.substr(hex ? 2 : 1);
        if (digits.empty()) return false;
        unsigned long v = 0;
        for (char c : digits) {
            int d;
            if (c >= '0' && c <= '9') d = c - '0';
            else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
            else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
            else return false;
            v = v * (hex ? 16 : 10) + static_cast<unsigned long>(d);
            if (v > 0x10FFFF) v = 0x110000;
        }
        cp = (v == 0 || v > 0x10FFFF || (v >= 0xD800 && v <= 0xDFFF)) ? 0xFFFD : static_cast<char32_t>(v);
    } else {
        const auto& m = named_entities();
        auto it = m.find(body);
        if (it == m.end()) return false;
        cp = it->second;
    }
    text::utf8_append(out, cp);
    pos = semi + 1;
    return true;
}

struct Parsed {
    std::string raw_text;  // '\n' marks block boundaries
    std::size_t links = 0;
    std::size_t lists = 0;
    std::size_t headings = 0;
};

std::size_t find_icase(std::string_view hay, std::string_view needle, std::size_t from) {
    if (needle.size() > hay.size()) return std::string_view::npos;
    for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
        if (ieq(hay.substr(i, needle.size()), needle)) return i;
    }
    return std::string_view::npos;
}

// Position just past the '>' that closes a tag opened at `pos`, honoring
// quotes; npos when the document ends inside the tag.
std::size_t tag_end(std::string_view html, std::size_t pos) {
    char quote = 0;
    for (std::size_t i = pos; i < html.size(); ++i) {
        const char c = html[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '>') {
            return i + 1;
        }
    }
    return std::string_view::npos;
}

Parsed parse(std::string_view html) {
    Parsed p;
    std::size_t i = 0;
    auto is_alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
    auto is_name = [&](char c) { return is_alpha(c) || (c >= '0' && c <= '9') || c == '-' || c == ':'; };
    while (i < html.size()) {
        const char c = html[i];
        if (c == '&') {
            if (!decode_entity(html, i, p.raw_text)) {
                p.raw_text += '&';
                ++i;
            }
            continue;
        }
        if (c != '<' || i + 1 >= html.size()) {
            // Source line breaks are ordinary whitespace; only tags make blocks.
            p.raw_text += c == '\n' ? ' ' : c;
            ++i;
            continue;
        }
        const char n = html[i + 1];
        if (html.substr(i, 4) == "<!--") {
            const auto end = html.find("-->", i + 4);
            i = end == std::string_view::npos ? html.size() : end + 3;
            continue;
        }
        if (n == '!' || n == '?') {
            i = std::min(tag_end(html, i + 2), html.size());
            continue;
        }
        const bool closing = n == '/';
        const std::size_t name_start = i + (closing ? 2 : 1);
        if (name_start >= html.size() || !is_alpha(html[name_start])) {
            p.raw_text += c;
            ++i;
            continue;
        }
        std::size_t name_end = name_start;
        while (name_end < html.size() && is_name(html[name_end])) ++name_end;
        const std::string name = text::to_lower_ascii(html.substr(name_start, name_end - name_start));
        const std::size_t after = tag_end(html, name_end);
        if (after == std::string_view::npos) break;  // truncated tag at EOF
        const bool self_closing = after >= 2 && html[after - 2] == '/';
        i = after;

        if (block_tags().count(name)) p.raw_text += '\n';
        if (closing) continue;

        if (name == "a") ++p.links;
        else if (name == "ul") ++p.lists;
        else if (name.size() == 2 && name[0] == 'h' && name[1] >= '2' && name[1] <= '6') ++p.headings;

        if (hidden_tags().count(name) && !self_closing) {
            const auto close = find_icase(html, "</" + name, i);
            i = close == std::string_view::npos ? html.size()
                                                : std::min(tag_end(html, close + 2 + name.size()), html.size());
        }
    }
    return p;
}

bool is_space_cp(char32_t cp) { return cp == U' ' || cp == U'\t' || cp == U'\r' || cp == U'\f' || cp == U'\v' || cp == 0xA0; }

std::string normalize_whitespace(std::string_view raw) {
    std::string out;
    for (const auto& line : text::split(raw, '\n')) {
        std::string collapsed;
        bool pending_space = false;
        std::size_t pos = 0;
        while (pos < line.size()) {
            const std::size_t start = pos;
            const char32_t cp = text::utf8_next(line, pos);
            if (is_space_cp(cp)) {
                pending_space = !collapsed.empty();
                continue;
            }
            if (pending_space) collapsed += ' ';
            pending_space = false;
            collapsed.append(line, start, pos - start);
        }
        if (collapsed.empty()) continue;
        if (!out.empty()) out += '\n';
        out += collapsed;
    }
    return out;
}

struct SplitUrl {
    std::string origin;
    std::string path;
};

std::optional<SplitUrl> split(const std::string& url) {
    const auto se = url.find("://");
    if (se == std::string::npos) return std::nullopt;
    const auto scheme = text::to_lower_ascii(std::string_view(url).substr(0, se));
    if (scheme != "http" && scheme != "https") return std::nullopt;
    const auto ps = url.find_first_of("/?#", se + 3);
    SplitUrl s{text::to_lower_ascii(url.substr(0, ps)), ps == std::string::npos ? "/" : url.substr(ps)};
    if (s.path[0] != '/') s.path = "/" + s.path;
    if (s.origin.size() <= se + 3) return std::nullopt;
    return s;
}

}  // namespace

std::string extract_text(std::string_view html) { return normalize_whitespace(parse(html).raw_text); }

StructFeatures extract_features(std::string_view html) {
    const Parsed p = parse(html);
    StructFeatures f;
    f.link_count = p.links;
    f.ul_count = p.lists;
    f.heading_count = p.headings;
    f.text_length = text::utf8_length(normalize_whitespace(p.raw_text));
    f.density_clamped = p.headings == 0;
    f.text_density = static_cast<double>(f.text_length) / static_cast<double>(std::max<std::size_t>(1, p.headings));
    return f;
}

Json to_json(const StructFeatures& f) {
    return Json{{"link_count", f.link_count},       {"text_density", f.text_density},
                {"text_length", f.text_length},     {"ul_count", f.ul_count},
                {"heading_count", f.heading_count}, {"density_clamped", f.density_clamped}};
}

StructFeatures features_from_json(const Json& j) {
    StructFeatures f;
    f.link_count = j.at("link_count").get<std::size_t>();
    f.text_density = j.at("text_density").get<double>();
    f.text_length = j.at("text_length").get<std::size_t>();
    f.ul_count = j.at("ul_count").get<std::size_t>();
    f.heading_count = j.at("heading_count").get<std::size_t>();
    f.density_clamped = j.value("density_clamped", f.heading_count == 0);
    return f;
}

std::string_view to_string(FetchStatus s) {
    switch (s) {
        case FetchStatus::Ok: return "ok";
        case FetchStatus::HttpError: return "http_error";
        case FetchStatus::Timeout: return "timeout";
        case FetchStatus::RobotsDenied: return "robots_denied";
        case FetchStatus::TooLarge: return "too_large";
        case FetchStatus::NetworkError: return "network_error";
        case FetchStatus::UnsupportedType: return "unsupported_type";
    }
    return "network_error";
}

FetchStatus parse_fetch_status(std::string_view s) {
    for (auto st : {FetchStatus::Ok, FetchStatus::HttpError, FetchStatus::Timeout, FetchStatus::RobotsDenied,
                    FetchStatus::TooLarge, FetchStatus::NetworkError, FetchStatus::UnsupportedType}) {
        if (to_string(st) == s) return st;
    }
    throw ParseError("unknown fetch status: " + std::string(s));
}

Json snapshot_meta(const PageSnapshot& s) {
    Json j{{"url", s.url},
           {"final_url", s.final_url},
           {"status", to_string(s.status)},
           {"http_code", s.http_code},
           {"fetched_at", s.fetched_at},
           {"html_bytes", s.html.size()},
           {"detail", s.detail}};
    if (s.ok()) j["text_sha256"] = sha256_hex(s.extracted_text);
    return j;
}

// ---------------------------------------------------------------------------
// robots.txt

RobotsRules RobotsRules::parse(std::string_view body, std::string_view user_agent) {
    // Groups addressed to our product token win over "*".
    const std::string agent = text::to_lower_ascii(user_agent.substr(0, user_agent.find_first_of("/ ")));
    std::vector<std::pair<std::string, bool>> specific, wildcard;
    bool in_specific = false, in_wildcard = false, seen_rule = false, any_specific = false;
    for (const auto& raw_line : text::split(body, '\n')) {
        std::string_view line = raw_line;
        if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
        line = text::trim(line);
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        const auto key = text::to_lower_ascii(text::trim(line.substr(0, colon)));
        const auto value = std::string(text::trim(line.substr(colon + 1)));
        if (key == "user-agent") {
            if (seen_rule) in_specific = in_wildcard = false;
            seen_rule = false;
            const auto v = text::to_lower_ascii(value);
            if (v == "*") in_wildcard = true;
            else if (!agent.empty() && v.find(agent) != std::string::npos) in_specific = any_specific = true;
        } else if (key == "allow" || key == "disallow") {
            seen_rule = true;
            if (value.empty()) continue;  // "Disallow:" allows everything
            const bool allow = key == "allow";
            if (in_specific) specific.emplace_back(value, allow);
            if (in_wildcard) wildcard.emplace_back(value, allow);
        }
    }
    RobotsRules r;
    r.rules_ = any_specific ? specific : wildcard;
    return r;
}

bool RobotsRules::allowed(std::string_view path) const {
    std::size_t best_len = 0;
    bool verdict = true;
    for (const auto& [prefix, allow] : rules_) {
        std::string_view p = prefix;
        const bool anchored = !p.empty() && p.back() == '$';
        if (anchored) p.remove_suffix(1);
        const bool match = anchored ? path == p : path.substr(0, p.size()) == p;
        if (!match) continue;
        if (p.size() > best_len || (p.size() == best_len && allow)) {
            best_len = p.size();
            verdict = allow;
        }
    }
    return verdict;
}

// ---------------------------------------------------------------------------
// Fetcher

struct Fetcher::Hop {
    http::Response response;
};

Fetcher::Fetcher(FetchConfig config) : config_(std::move(config)) {
    if (config_.cache_dir) std::filesystem::create_directories(*config_.cache_dir);
}

Fetcher::HostState& Fetcher::host_state(const std::string& origin) {
    std::lock_guard lock(hosts_mu_);
    auto& slot = hosts_[origin];
    if (!slot) slot = std::make_unique<HostState>();
    return *slot;
}

Fetcher::Hop Fetcher::polite_get(HostState& hs, const std::string& url) {
    // Caller holds hs.mu.
    const auto now = std::chrono::steady_clock::now();
    if (hs.last.time_since_epoch().count() != 0 && now < hs.last + config_.politeness) {
        std::this_thread::sleep_until(hs.last + config_.politeness);
    }
    {
        std::unique_lock lock(slots_mu_);
        slots_cv_.wait(lock, [&] { return slots_used_ < std::max(1, config_.max_concurrency); });
        ++slots_used_;
    }
    http::Request req;
    req.url = url;
    req.user_agent = config_.user_agent;
    req.timeout_ms = config_.timeout_ms;
    req.max_bytes = config_.max_bytes;
    req.headers.emplace_back("Accept", "text/html,application/xhtml+xml;q=0.9,*/*;q=0.5");
    ++requests_;
    Hop hop{http::send(req)};
    {
        std::lock_guard lock(slots_mu_);
        --slots_used_;
    }
    slots_cv_.notify_one();
    hs.last = std::chrono::steady_clock::now();
    return hop;
}

bool Fetcher::robots_allowed(HostState& hs, const std::string& origin, const std::string& path) {
    if (!config_.respect_robots) return true;
    if (!hs.robots) {
        const auto hop = polite_get(hs, origin + "/robots.txt");
        hs.robots = hop.response.status == 200 && !hop.response.truncated
                        ? RobotsRules::parse(hop.response.body, config_.user_agent)
                        : RobotsRules::allow_all();
    }
    return hs.robots->allowed(path);
}

std::optional<PageSnapshot> Fetcher::cache_get(const std::string& url) const {
    if (!config_.cache_dir) return std::nullopt;
    const auto key = sha256_hex(url);
    const auto meta_path = *config_.cache_dir / (key + ".json");
    if (!std::filesystem::exists(meta_path)) return std::nullopt;
    try {
        const auto m = Json::parse(read_file(meta_path));
        const auto age = std::chrono::system_clock::now().time_since_epoch() -
                         std::chrono::seconds(m.at("fetched_epoch").get<std::int64_t>());
        if (age > config_.ttl) return std::nullopt;
        PageSnapshot s;
        s.url = m.at("url").get<std::string>();
        if (s.url != url) return std::nullopt;
        s.final_url = m.value("final_url", url);
        s.status = parse_fetch_status(m.at("status").get<std::string>());
        s.http_code = m.value("http_code", 0);
        s.fetched_at = m.value("fetched_at", "");
        s.detail = m.value("detail", "");
        const auto html_path = *config_.cache_dir / (key + ".html");
        if (std::filesystem::exists(html_path)) s.html = read_file(html_path);
        if (s.ok()) s.extracted_text = extract_text(s.html);
        s.from_cache = true;
        return s;
    } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable page cache entry for {}: {}", url, e.what());
        return std::nullopt;
    }
}

void Fetcher::cache_put(const PageSnapshot& s) const {
    // Transient failures are retried on the next run rather than cached.
    if (!config_.cache_dir || s.status == FetchStatus::Timeout || s.status == FetchStatus::NetworkError) return;
    const auto key = sha256_hex(s.url);
    write_file_atomic(*config_.cache_dir / (key + ".html"), s.html);
    Json m = snapshot_meta(s);
    m["fetched_epoch"] =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    write_file_atomic(*config_.cache_dir / (key + ".json"), m.dump(2));
}

PageSnapshot Fetcher::fetch(const std::string& url, bool force) {
    if (!force) {
        if (auto hit = cache_get(url)) return *hit;
    }
    return flights_.run(url, [&] {
        if (!force) {
            if (auto hit = cache_get(url)) return *hit;
        }
        auto s = fetch_uncached(url);
        cache_put(s);
        return s;
    });
}

PageSnapshot Fetcher::fetch_uncached(const std::string& url) {
    PageSnapshot s;
    s.url = url;
    s.final_url = url;
    s.fetched_at = now_iso8601();
    std::string current = url;
    for (int hop = 0;; ++hop) {
        const auto parts = split(current);
        if (!parts) {
            s.status = FetchStatus::NetworkError;
            s.detail = "not an http(s) URL: " + current;
            return s;
        }
        auto& hs = host_state(parts->origin);
        std::unique_lock host_lock(hs.mu);
        if (!robots_allowed(hs, parts->origin, parts->path)) {
            s.status = FetchStatus::RobotsDenied;
            s.final_url = current;
            return s;
        }
        auto r = polite_get(hs, current).response;
        host_lock.unlock();

        s.final_url = current;
        s.http_code = r.status;
        if (r.truncated) {
            s.status = FetchStatus::TooLarge;
            s.detail = "body exceeds " + std::to_string(config_.max_bytes) + " bytes";
            return s;
        }
        if (r.status == 0) {
            s.status = r.timed_out ? FetchStatus::Timeout : FetchStatus::NetworkError;
            s.detail = r.error;
            return s;
        }
        if (r.status >= 300 && r.status < 400 && !r.header("location").empty()) {
            if (hop >= config_.max_redirects) {
                s.status = FetchStatus::HttpError;
                s.detail = "more than " + std::to_string(config_.max_redirects) + " redirects";
                return s;
            }
            current = http::resolve_url(current, r.header("location"));
            continue;
        }
        if (!r.ok()) {
            s.status = FetchStatus::HttpError;
            return s;
        }
        const auto type = text::to_lower_ascii(r.header("content-type"));
        if (!type.empty() && type.find("html") == std::string::npos && type.find("xml") == std::string::npos) {
            s.status = FetchStatus::UnsupportedType;
            s.detail = type;
            return s;
        }
        s.status = FetchStatus::Ok;
        s.html = std::move(r.body);
        s.extracted_text = extract_text(s.html);
        return s;
    }
}

// ---------------------------------------------------------------------------
// Fixture pages

FixturePages::FixturePages(const std::filesystem::path& path) : id_("fixture:" + path.filename().string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("page fixture not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
            PageSnapshot s;
            s.url = j.at("url").get<std::string>();
            s.final_url = j.value("final_url", s.url);
            s.status = parse_fetch_status(j.value("status", "ok"));
            s.http_code = j.value("code", s.status == FetchStatus::Ok ? 200 : 0);
            s.html = j.value("html", "");
            if (s.ok()) s.extracted_text = extract_text(s.html);
            s.fetched_at = j.value("fetched_at", "");
            pages_[s.url] = std::move(s);
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        }
    }
}

PageSnapshot FixturePages::fetch(const std::string& url, bool) {
    auto it = pages_.find(url);
    if (it != pages_.end()) return it->second;
    PageSnapshot s;
    s.url = url;
    s.final_url = url;
    s.status = FetchStatus::NetworkError;
    s.detail = "not present in page fixture";
    return s;
}

std::vector<PageSnapshot> fetch_all(PageSource& source, const std::vector<std::string>& urls, int concurrency) {
    std::vector<PageSnapshot> out(urls.size());
    parallel_for(urls.size(), concurrency, [&](std::size_t i) { out[i] = source.fetch(urls[i]); });
    return out;
}

}  // namespace geaudit::harvest
