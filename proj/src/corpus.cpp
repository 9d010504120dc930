#include "geaudit/corpus.hpp"

#include "geaudit/common.hpp"
#include "geaudit/domain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace geaudit::corpus {

using json = nlohmann::json;

namespace {

bool is_identifier(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
}

json parse_json(std::string_view text, std::string_view what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string(what) + ": " + e.what());
    }
}

template <typename T>
T required(const json& obj, const char* key, std::string_view context) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw ParseError(std::string(context) + ": missing field '" + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string(context) + ": field '" + key + "' has wrong type");
    }
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

std::string_view to_string(TemplateKind kind) {
    return kind == TemplateKind::Policy ? "policy" : "ideology";
}

const Party* Manifest::find(std::string_view party_id) const {
    for (const auto& p : parties) {
        if (p.id == party_id) return &p;
    }
    return nullptr;
}

std::vector<Party> Manifest::in_country(std::string_view country) const {
    std::vector<Party> out;
    std::copy_if(parties.begin(), parties.end(), std::back_inserter(out),
                 [&](const Party& p) { return p.country == country; });
    return out;
}

Manifest parse_manifest(std::string_view json_text) {
    const json doc = parse_json(json_text, "manifest");
    if (required<int>(doc, "version", "manifest") != 1) throw ParseError("manifest: unsupported version");

    Manifest m;
    m.countries = required<std::vector<std::string>>(doc, "countries", "manifest");
    const std::set<std::string> countries(m.countries.begin(), m.countries.end());
    if (!doc.contains("parties") || !doc["parties"].is_array()) throw ParseError("manifest: missing field 'parties'");

    std::set<std::string> seen_ids;
    for (const auto& entry : doc["parties"]) {
        Party p;
        p.id = required<std::string>(entry, "id", "manifest party");
        const std::string ctx = "manifest party '" + p.id + "'";
        p.country = text::to_lower_ascii(required<std::string>(entry, "country", ctx));
        p.display_name_by_language = required<std::map<std::string, std::string>>(entry, "names", ctx);
        if (entry.contains("aliases")) p.aliases = required<std::vector<std::string>>(entry, "aliases", ctx);

        if (!is_identifier(p.id)) throw ValidationError(ctx + ": id must match [a-z0-9_-]+");
        if (!seen_ids.insert(p.id).second) throw ValidationError("manifest: duplicate party id '" + p.id + "'");
        if (!countries.count(p.country)) throw ValidationError(ctx + ": country '" + p.country + "' is not configured");

        for (const auto& raw : required<std::vector<std::string>>(entry, "domains", ctx)) {
            std::string host = normalize_host(raw);
            if (std::find(p.domain_manifest.begin(), p.domain_manifest.end(), host) == p.domain_manifest.end()) {
                p.domain_manifest.push_back(std::move(host));
            }
        }
        if (p.domain_manifest.empty()) throw ValidationError(ctx + ": empty domain manifest");
        m.parties.push_back(std::move(p));
    }

    // A host may belong to at most one party; otherwise primary/opponent is ambiguous.
    for (std::size_t i = 0; i < m.parties.size(); ++i) {
        for (std::size_t j = i + 1; j < m.parties.size(); ++j) {
            for (const auto& a : m.parties[i].domain_manifest) {
                for (const auto& b : m.parties[j].domain_manifest) {
                    if (host_matches(a, b) || host_matches(b, a)) {
                        throw ValidationError("manifest: domain '" + a + "' of '" + m.parties[i].id +
                                              "' overlaps '" + b + "' of '" + m.parties[j].id + "'");
                    }
                }
            }
        }
    }
    return m;
}

Manifest load_manifest_file(const std::filesystem::path& path) {
    return parse_manifest(read_file(path));
}

std::vector<Party> load_manifest(const std::filesystem::path& path) {
    return load_manifest_file(path).parties;
}

std::vector<QuestionTemplate> parse_templates(std::string_view json_text) {
    const json doc = parse_json(json_text, "templates");
    if (required<int>(doc, "version", "templates") != 1) throw ParseError("templates: unsupported version");
    if (!doc.contains("templates") || !doc["templates"].is_array()) {
        throw ParseError("templates: missing field 'templates'");
    }
    std::vector<QuestionTemplate> out;
    std::set<std::string> seen;
    for (const auto& entry : doc["templates"]) {
        QuestionTemplate t;
        t.id = required<std::string>(entry, "id", "template");
        const std::string ctx = "template '" + t.id + "'";
        const auto kind = required<std::string>(entry, "kind", ctx);
        if (kind == "policy") {
            t.kind = TemplateKind::Policy;
        } else if (kind == "ideology") {
            t.kind = TemplateKind::Ideology;
        } else {
            throw ParseError(ctx + ": kind must be 'policy' or 'ideology'");
        }
        t.text_by_language = required<std::map<std::string, std::string>>(entry, "text", ctx);
        if (!is_identifier(t.id)) throw ValidationError(ctx + ": id must match [a-z0-9_-]+");
        if (!seen.insert(t.id).second) throw ValidationError("templates: duplicate id '" + t.id + "'");
        for (const auto& [lang, body] : t.text_by_language) {
            if (count_occurrences(body, kPartyPlaceholder) != 1) {
                throw ValidationError(ctx + " (" + lang + "): placeholder {PARTY} must occur exactly once");
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<QuestionTemplate> load_templates(const std::filesystem::path& path) {
    return parse_templates(read_file(path));
}

void validate_study(const StudyConfig& config, const std::vector<Party>& parties) {
    if (config.repeats < 1) throw ValidationError("study: repeats must be >= 1");
    const std::set<std::string> countries(config.countries.begin(), config.countries.end());
    for (const auto& c : config.countries) {
        if (!config.language_by_country.count(c)) throw ValidationError("study: no language for country '" + c + "'");
    }
    for (const auto& id : config.parties) {
        auto it = std::find_if(parties.begin(), parties.end(), [&](const Party& p) { return p.id == id; });
        if (it == parties.end()) throw ValidationError("study: unknown party '" + id + "'");
        if (!countries.count(it->country)) {
            throw ValidationError("study: party '" + id + "' belongs to unconfigured country '" + it->country + "'");
        }
    }
}

std::string question_id(std::string_view template_id, std::string_view party_id) {
    return std::string(template_id) + "." + std::string(party_id);
}

std::vector<Question> render_questions(const std::vector<QuestionTemplate>& templates,
                                       const std::vector<Party>& parties, const StudyConfig& config) {
    const std::set<std::string> countries(config.countries.begin(), config.countries.end());
    const std::set<std::string> selected(config.parties.begin(), config.parties.end());

    std::vector<const Party*> active;
    for (const auto& p : parties) {
        if (countries.count(p.country) && (selected.empty() || selected.count(p.id))) active.push_back(&p);
    }
    std::sort(active.begin(), active.end(), [](const Party* a, const Party* b) { return a->id < b->id; });

    std::vector<const QuestionTemplate*> ordered;
    for (const auto& t : templates) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(),
              [](const QuestionTemplate* a, const QuestionTemplate* b) { return a->id < b->id; });

    std::vector<Question> out;
    out.reserve(ordered.size() * active.size());
    for (const auto* t : ordered) {
        for (const auto* p : active) {
            const auto lang_it = config.language_by_country.find(p->country);
            if (lang_it == config.language_by_country.end()) {
                throw ValidationError("study: no language for country '" + p->country + "'");
            }
            const auto& lang = lang_it->second;
            const auto text_it = t->text_by_language.find(lang);
            if (text_it == t->text_by_language.end()) {
                throw ValidationError("template '" + t->id + "' has no '" + lang + "' rendering");
            }
            const auto name_it = p->display_name_by_language.find(lang);
            if (name_it == p->display_name_by_language.end()) {
                throw ValidationError("party '" + p->id + "' has no '" + lang + "' display name");
            }
            std::string body = text_it->second;
            body.replace(body.find(kPartyPlaceholder), kPartyPlaceholder.size(), name_it->second);
            out.push_back(Question{question_id(t->id, p->id), t->id, p->id, lang, std::move(body)});
        }
    }
    return out;
}

}  // namespace geaudit::corpus
