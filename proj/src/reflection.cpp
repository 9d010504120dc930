#include "geaudit/reflection.hpp"

#include "geaudit/common.hpp"
#include "geaudit/http.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

namespace geaudit::reflection {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Segmentation

const std::vector<std::string>& english_abbreviations() {
    static const std::vector<std::string> kAbbrev = {
        "Mr",   "Mrs",  "Ms",   "Dr",   "Prof", "Sr",   "Jr",   "St",   "Mt",   "Rev",  "Hon",  "Gen",
        "Gov",  "Sen",  "Rep",  "Pres", "Lt",   "Col",  "Capt", "Sgt",  "Adm",  "Maj",  "Inc",  "Ltd",
        "Co",   "Corp", "Bros", "vs",   "etc",  "e.g",  "i.e",  "cf",   "al",   "approx", "No",  "Nos",
        "Vol",  "pp",   "p",    "Fig",  "Jan",  "Feb",  "Mar",  "Apr",  "Jun",  "Jul",  "Aug",  "Sep",
        "Sept", "Oct",  "Nov",  "Dec",  "U.S",  "U.K",  "U.N",  "E.U",  "D.C",  "a.m",  "p.m",  "Ph.D",
        "Esq",  "Dept", "Univ", "Assn", "Ave",  "Blvd", "Rd"};
    return kAbbrev;
}

namespace {

bool is_space(char32_t c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v' || c == 0x3000 || c == 0xA0;
}

bool is_cjk(char32_t c) {
    return (c >= 0x3040 && c <= 0x30FF) ||  // hiragana, katakana
           (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0xF900 && c <= 0xFAFF) ||
           (c >= 0xFF66 && c <= 0xFF9F);  // half-width katakana
}

bool is_closing(char32_t c) {
    switch (c) {
        case '"': case '\'': case ')': case ']':
        case 0x201D: case 0x2019:                            // ” ’
        case 0x300D: case 0x300F: case 0xFF09: case 0x3011:  // 」 』 ） 】
        case 0x3015: case 0x3009: case 0x300B:               // 〕 〉 》
            return true;
        default:
            return false;
    }
}

bool is_opening_quote(char32_t c) {
    return c == '"' || c == '\'' || c == '(' || c == '[' || c == 0x201C || c == 0x2018 || c == 0x300C ||
           c == 0x300E;
}

bool is_latin_terminal(char32_t c) { return c == '.' || c == '!' || c == '?'; }

bool is_cjk_terminal(char32_t c) {
    return c == 0x3002 || c == 0xFF01 || c == 0xFF1F || c == 0xFF0E;  // 。！？．
}

// Word ending right before byte offset `dot` (the period), without leading
// opening punctuation.
std::string_view word_before(std::string_view text, std::size_t dot) {
    std::size_t start = dot;
    while (start > 0 && text[start - 1] != ' ' && text[start - 1] != '\t' && text[start - 1] != '\n') --start;
    auto w = text.substr(start, dot - start);
    while (!w.empty() && (w.front() == '(' || w.front() == '"' || w.front() == '\'' || w.front() == '[')) {
        w.remove_prefix(1);
    }
    return w;
}

bool is_abbreviation(std::string_view word) {
    const auto& list = english_abbreviations();
    return std::find(list.begin(), list.end(), word) != list.end();
}

}  // namespace

std::vector<Sentence> split_sentences(std::string_view text, std::string_view language) {
    const bool ja = language == "ja";
    std::vector<Sentence> out;
    std::size_t seg_start = 0;

    auto emit = [&](std::size_t end) {
        auto seg = text.substr(seg_start, end - seg_start);
        auto trimmed = text::trim(seg);
        // Also trim ideographic/no-break spaces.
        std::size_t lead = 0;
        while (lead < trimmed.size()) {
            std::size_t p = lead;
            if (!is_space(text::utf8_next(trimmed, p))) break;
            lead = p;
        }
        trimmed.remove_prefix(lead);
        if (!trimmed.empty()) {
            Sentence s;
            s.index = out.size();
            s.text = std::string(trimmed);
            s.language = std::string(language);
            s.begin = static_cast<std::size_t>(trimmed.data() - text.data());
            s.end = s.begin + trimmed.size();
            out.push_back(std::move(s));
        }
        seg_start = end;
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t cp_start = pos;
        const char32_t c = text::utf8_next(text, pos);
        if (c == '\n') {
            emit(cp_start);
            seg_start = pos;
            continue;
        }
        const bool cjk_term = is_cjk_terminal(c) || (ja && (c == '!' || c == '?'));
        if (!cjk_term && !is_latin_terminal(c)) continue;

        // Absorb runs of terminals and closing punctuation ("?!", ".\")", "。」").
        std::size_t after = pos;
        while (after < text.size()) {
            std::size_t p = after;
            const char32_t n = text::utf8_next(text, p);
            if (!is_closing(n) && !is_latin_terminal(n) && !is_cjk_terminal(n)) break;
            after = p;
        }

        if (cjk_term) {
            emit(after);
            pos = after;
            continue;
        }

        // Latin terminal: require whitespace, then a sentence opener.
        std::size_t look = after;
        bool saw_space = false;
        char32_t next = 0;
        while (look < text.size()) {
            std::size_t p = look;
            next = text::utf8_next(text, p);
            if (!is_space(next)) break;
            saw_space = true;
            look = p;
        }
        if (look >= text.size()) {
            emit(after);
            pos = after;
            continue;
        }
        const bool opener = (next >= 'A' && next <= 'Z') || (next >= '0' && next <= '9') || is_opening_quote(next) ||
                            (ja && is_cjk(next)) || next == '\n';
        if (!saw_space && next != '\n') continue;
        if (!opener) continue;
        if (c == '.' && is_abbreviation(word_before(text, cp_start))) continue;
        emit(after);
        pos = after;
    }
    emit(text.size());
    return out;
}

std::string detect_language(std::string_view text) {
    std::size_t letters = 0;
    std::size_t cjk = 0;
    for (std::size_t pos = 0; pos < text.size();) {
        const char32_t c = text::utf8_next(text, pos);
        if (is_cjk(c)) {
            ++cjk;
            ++letters;
        } else if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
            ++letters;
        }
    }
    return letters > 0 && cjk * 10 >= letters ? "ja" : "en";
}

// ---------------------------------------------------------------------------
// Embedding vectors and backends

EmbeddingVector EmbeddingVector::normalized(std::vector<double> raw) {
    if (raw.empty()) throw ValidationError("embedding: empty vector");
    double sq = 0.0;
    for (double x : raw) {
        if (!std::isfinite(x)) throw ValidationError("embedding: non-finite component");
        sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw ValidationError("embedding: zero vector");
    for (double& x : raw) x /= norm;
    EmbeddingVector v;
    v.values_ = std::move(raw);
    return v;
}

EmbeddingVector EmbeddingVector::from_unit(std::vector<double> values) {
    EmbeddingVector v;
    v.values_ = std::move(values);
    return v;
}

double EmbeddingVector::norm() const {
    double sq = 0.0;
    for (double x : values_) sq += x * x;
    return std::sqrt(sq);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::string> pseudo_tokens(std::string_view s) {
    std::vector<std::string> tokens;
    std::string word;
    std::vector<char32_t> cjk_run;
    auto flush_word = [&] {
        if (!word.empty()) tokens.push_back(text::to_lower_ascii(word));
        word.clear();
    };
    auto flush_cjk = [&] {
        if (cjk_run.size() == 1) {
            std::string t;
            text::utf8_append(t, cjk_run[0]);
            tokens.push_back(t);
        }
        for (std::size_t i = 0; i + 1 < cjk_run.size(); ++i) {
            std::string t;
            text::utf8_append(t, cjk_run[i]);
            text::utf8_append(t, cjk_run[i + 1]);
            tokens.push_back(t);
        }
        cjk_run.clear();
    };
    for (std::size_t pos = 0; pos < s.size();) {
        const char32_t c = text::utf8_next(s, pos);
        if (is_cjk(c)) {
            flush_word();
            cjk_run.push_back(c);
        } else if ((c < 0x80 && std::isalnum(static_cast<int>(c))) || (c >= 0xC0 && c < 0x2000 && !is_space(c))) {
            flush_cjk();
            text::utf8_append(word, c);
        } else {
            flush_word();
            flush_cjk();
        }
    }
    flush_word();
    flush_cjk();
    return tokens;
}

}  // namespace

PseudoEmbeddingBackend::PseudoEmbeddingBackend(std::size_t dim, std::size_t max_batch)
    : dim_(dim), max_batch_(max_batch) {
    if (dim_ == 0 || max_batch_ == 0) throw ConfigError("pseudo embedding: dim and batch must be positive");
}

std::string PseudoEmbeddingBackend::id() const { return "pseudo-v1-d" + std::to_string(dim_); }

std::vector<std::vector<double>> PseudoEmbeddingBackend::embed_batch(std::span<const std::string> sentences) {
    if (sentences.size() > max_batch_) throw ConfigError("pseudo embedding: batch exceeds limit");
    std::vector<std::vector<double>> out;
    out.reserve(sentences.size());
    for (const auto& sentence : sentences) {
        std::vector<double> acc(dim_, 0.0);
        auto tokens = pseudo_tokens(sentence);
        if (tokens.empty()) tokens.push_back("\x01" + sentence);
        for (const auto& tok : tokens) {
            std::uint64_t state = fnv1a(tok);
            for (std::size_t i = 0; i < dim_; ++i) {
                acc[i] += static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
            }
        }
        out.push_back(std::move(acc));
    }
    return out;
}

HttpEmbeddingBackend::HttpEmbeddingBackend(HttpEmbeddingConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty() || config_.model.empty() || config_.dim == 0 || config_.batch_size == 0) {
        throw ConfigError("http embedding: endpoint, model, dim and batch_size are required");
    }
}

std::string HttpEmbeddingBackend::id() const { return "http:" + config_.model + "-d" + std::to_string(config_.dim); }

std::vector<std::vector<double>> HttpEmbeddingBackend::embed_batch(std::span<const std::string> sentences) {
    http::Request req;
    req.method = "POST";
    req.url = config_.endpoint + "/v1/embeddings";
    req.timeout_ms = config_.timeout_ms;
    req.body = json{{"model", config_.model}, {"input", std::vector<std::string>(sentences.begin(), sentences.end())}}
                   .dump();
    if (!config_.api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + config_.api_key);
    const auto resp = http::send(req);
    if (!resp.ok()) {
        throw NetworkError("embedding backend: " + (resp.error.empty() ? "HTTP " + std::to_string(resp.status) : resp.error));
    }
    std::vector<std::vector<double>> out(sentences.size());
    try {
        const auto doc = json::parse(resp.body);
        for (const auto& item : doc.at("data")) {
            const auto idx = item.value("index", std::size_t{0});
            if (idx >= out.size()) throw ParseError("embedding backend: index out of range");
            out[idx] = item.at("embedding").get<std::vector<double>>();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("embedding backend: malformed response: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cache

EmbeddingCache::EmbeddingCache(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
}

std::filesystem::path EmbeddingCache::file_for(const std::string& backend_id) const {
    std::string safe;
    for (char c : backend_id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return *dir_ / (safe + ".jsonl");
}

void EmbeddingCache::load_backend(const std::string& backend_id) {
    if (loaded_[backend_id]) return;
    loaded_[backend_id] = true;
    if (!dir_) return;
    std::ifstream in(file_for(backend_id));
    std::string line;
    auto& bucket = entries_[backend_id];
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto rec = json::parse(line);
            bucket[rec.at("d").get<std::string>()] = EmbeddingVector::from_unit(rec.at("v").get<std::vector<double>>());
        } catch (const json::exception&) {
            // Torn trailing record from an interrupted write; skip it.
        }
    }
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& backend_id, const std::string& digest) {
    std::lock_guard lock(mu_);
    load_backend(backend_id);
    auto& bucket = entries_[backend_id];
    auto it = bucket.find(digest);
    if (it == bucket.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::put(const std::string& backend_id, const std::string& digest, const EmbeddingVector& v) {
    std::lock_guard lock(mu_);
    load_backend(backend_id);
    auto [it, inserted] = entries_[backend_id].emplace(digest, v);
    if (!inserted || !dir_) return;
    std::ofstream out(file_for(backend_id), std::ios::app);
    out << json{{"d", digest}, {"v", v.values()}}.dump() << '\n';
}

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, bucket] : entries_) n += bucket.size();
    return n;
}

std::vector<EmbeddingVector> Embedder::embed(std::span<const std::string> sentences) {
    const auto backend_id = backend_.id();
    std::vector<EmbeddingVector> out(sentences.size());
    std::vector<std::string> digests(sentences.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        digests[i] = sha256_hex(sentences[i]);
        if (auto hit = cache_.get(backend_id, digests[i])) {
            out[i] = std::move(*hit);
        } else {
            missing.push_back(i);
        }
    }
    // Unique misses only: a repeated sentence costs one backend slot.
    std::vector<std::size_t> unique_missing;
    std::set<std::string> seen;
    for (auto i : missing) {
        if (seen.insert(digests[i]).second) unique_missing.push_back(i);
    }

    const std::size_t batch = backend_.max_batch();
    for (std::size_t start = 0; start < unique_missing.size(); start += batch) {
        const std::size_t end = std::min(unique_missing.size(), start + batch);
        std::vector<std::string> texts;
        for (std::size_t k = start; k < end; ++k) texts.push_back(sentences[unique_missing[k]]);
        ++backend_calls_;
        auto raw = backend_.embed_batch(texts);
        if (raw.size() != texts.size()) throw ConfigError("embedding backend returned wrong batch size");
        for (std::size_t k = 0; k < raw.size(); ++k) {
            if (raw[k].size() != backend_.dim()) {
                throw ConfigError("embedding dimension mismatch: expected " + std::to_string(backend_.dim()) +
                                  ", got " + std::to_string(raw[k].size()));
            }
            cache_.put(backend_id, digests[unique_missing[start + k]], EmbeddingVector::normalized(std::move(raw[k])));
        }
    }
    for (auto i : missing) out[i] = *cache_.get(backend_id, digests[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Similarity

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.dim() != v.dim()) {
        throw ValidationError("cosine: dimension mismatch " + std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
    }
    const auto& a = u.values();
    const auto& b = v.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return std::clamp(dot, -1.0, 1.0);
}

std::string_view to_string(Band b) {
    switch (b) {
        case Band::Low: return "low";
        case Band::Mid: return "mid";
        case Band::High: return "high";
    }
    return "low";
}

Band parse_band(std::string_view s) {
    if (s == "low") return Band::Low;
    if (s == "mid") return Band::Mid;
    if (s == "high") return Band::High;
    throw ParseError("unknown band '" + std::string(s) + "'");
}

Band band(double score) {
    if (!(score >= -1.0 && score <= 1.0)) throw std::domain_error("similarity score outside [-1, 1]");
    if (score <= 0.8) return Band::Low;
    if (score <= 0.9) return Band::Mid;
    return Band::High;
}

CitationReflection sim_max(std::span<const EmbeddingVector> answer, std::span<const EmbeddingVector> citation) {
    if (answer.empty() || citation.empty()) throw ValidationError("sim_max: both sentence sets must be non-empty");
    CitationReflection r;
    r.sim_max = -2.0;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        for (std::size_t j = 0; j < citation.size(); ++j) {
            const double s = cosine(answer[i], citation[j]);
            if (s > r.sim_max) {
                r.sim_max = s;
                r.answer_index = i;
                r.citation_index = j;
            }
        }
    }
    r.band = band(r.sim_max);
    return r;
}

ReflectionOutcome reflect(std::string_view url, const std::vector<Sentence>& answer_sentences,
                          std::string_view citation_text, Embedder& embedder) {
    ReflectionOutcome out;
    if (answer_sentences.empty()) {
        out.unavailable_reason = "answer has no sentences";
        return out;
    }
    const auto citation_lang = detect_language(citation_text);
    const auto citation_sentences = split_sentences(citation_text, citation_lang);
    if (citation_sentences.empty()) {
        out.unavailable_reason = "citation text is empty";
        return out;
    }
    std::vector<std::string> a_text;
    for (const auto& s : answer_sentences) a_text.push_back(s.text);
    std::vector<std::string> c_text;
    for (const auto& s : citation_sentences) c_text.push_back(s.text);
    const auto a_vec = embedder.embed(a_text);
    const auto c_vec = embedder.embed(c_text);
    auto r = sim_max(a_vec, c_vec);
    r.url = std::string(url);
    r.cross_language = answer_sentences.front().language != citation_lang;
    out.reflection = std::move(r);
    return out;
}

}  // namespace geaudit::reflection
