#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::corpus {

inline constexpr std::string_view kPartyPlaceholder = "{PARTY}";

enum class TemplateKind { Policy, Ideology };

std::string_view to_string(TemplateKind kind);

struct QuestionTemplate {
    std::string id;  // stable "q01".."q20"
    TemplateKind kind = TemplateKind::Policy;
    std::map<std::string, std::string> text_by_language;
};

struct Party {
    std::string id;
    std::map<std::string, std::string> display_name_by_language;
    std::string country;
    std::vector<std::string> domain_manifest;  // lowercase hosts, no scheme or path
    std::vector<std::string> aliases;
};

struct StudyConfig {
    std::vector<std::string> countries;
    std::vector<std::string> parties;  // empty means every party of a configured country
    std::vector<std::string> providers;
    int repeats = 5;
    std::map<std::string, std::string> language_by_country;
};

struct Question {
    std::string id;
    std::string template_id;
    std::string party_id;
    std::string language;
    std::string rendered_text;

    bool operator==(const Question&) const = default;
};

/// Parsed manifest document. `countries` lists the country codes parties may use.
struct Manifest {
    std::vector<std::string> countries;
    std::vector<Party> parties;

    const Party* find(std::string_view party_id) const;
    /// Parties sharing `country`, in manifest order.
    std::vector<Party> in_country(std::string_view country) const;
};

Manifest parse_manifest(std::string_view json_text);
Manifest load_manifest_file(const std::filesystem::path& path);

/// Validated parties of a manifest file. Throws ParseError on malformed
/// input and ValidationError on duplicate ids, empty domain sets, unknown
/// countries, or a host claimed by two parties.
std::vector<Party> load_manifest(const std::filesystem::path& path);

std::vector<QuestionTemplate> parse_templates(std::string_view json_text);
std::vector<QuestionTemplate> load_templates(const std::filesystem::path& path);

/// Checks repeats, party ids, and that every selected party's country is configured.
void validate_study(const StudyConfig& config, const std::vector<Party>& parties);

/// One question per (template, party) with the party's localized display
/// name substituted, ordered by template id then party id.
std::vector<Question> render_questions(const std::vector<QuestionTemplate>& templates,
                                       const std::vector<Party>& parties, const StudyConfig& config);

std::string question_id(std::string_view template_id, std::string_view party_id);

}  // namespace geaudit::corpus
