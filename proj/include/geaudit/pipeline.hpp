#pragma once

#include "geaudit/analytics.hpp"
#include "geaudit/classifier.hpp"
#include "geaudit/corpus.hpp"
#include "geaudit/ge_client.hpp"
#include "geaudit/harvest.hpp"
#include "geaudit/reflection.hpp"
#include "geaudit/store.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace geaudit::pipeline {

using Json = nlohmann::json;

struct JudgeSpec {
    std::string id;
    std::string kind;  // http | replay
    std::filesystem::path path;
    classifier::HttpJudgeConfig http;
};

/// A study file (JSON). Relative paths resolve against the file's directory.
struct Study {
    std::filesystem::path path;
    std::filesystem::path base_dir;
    Json raw;
    corpus::Manifest manifest;
    std::vector<corpus::QuestionTemplate> templates;
    corpus::StudyConfig config;
    std::vector<ge::ProviderConfig> providers;
    std::vector<JudgeSpec> judges;
    std::string judge_prompt;
    Json whois = Json::object();      // {"kind": "live"|"replay", ...}
    Json harvest = Json::object();    // {"kind": "live"|"replay", ...}
    Json embedding = Json::object();  // {"kind": "pseudo"|"http", ...}
    std::uint64_t seed = 0;
    int workers = 4;
    /// Digest over the study JSON and the contents of every file it names.
    std::string digest;

    std::filesystem::path resolve(const std::string& relative) const;
    std::vector<corpus::Party> study_parties() const;
    std::vector<corpus::Question> questions() const;
};

/// ConfigError on a missing or malformed study.
Study load_study(const std::filesystem::path& path);

/// Remote collaborators. Anything left null is built from the study on first use.
struct Services {
    std::vector<std::shared_ptr<classifier::Judge>> judges;
    std::shared_ptr<classifier::WhoisSource> whois;
    std::shared_ptr<harvest::PageSource> pages;
    std::shared_ptr<reflection::EmbeddingBackend> embedding;
    std::shared_ptr<ge::Transport> transport;
};

struct StageResult {
    std::string stage;
    bool noop = false;  // inputs unchanged since the last completed run of this stage
    std::size_t appended = 0;
    std::size_t skipped = 0;
    std::vector<std::string> notes;
};

/// Opens a run for `study_path`. Records the study (digest and content) as the
/// run's config entry.
store::RunInfo init_run(store::Store& store, const std::filesystem::path& study_path,
                        std::optional<std::string> run_id = std::nullopt);

/// The study recorded by init, reloaded. ConfigError if its files changed since.
Study run_study(const store::Store& store, const std::string& run_id);

/// Loads recorded exchanges; answers already in the run are skipped.
StageResult replay_fixtures(store::Store& store, const std::string& run_id,
                            const std::vector<std::filesystem::path>& fixtures);

/// Asks every provider every question `repeats` times, skipping answers already
/// in the run. Exchanges are also appended to `record_to` when given.
StageResult collect(store::Store& store, const std::string& run_id, Services& services,
                    const std::optional<std::filesystem::path>& record_to = std::nullopt);

struct ClassifyResult {
    StageResult stage;
    std::vector<std::string> pending_hosts;
};

/// Classifies every cited (host, target party). Hosts the judges cannot settle
/// are queued; the caller decides whether pending hosts block.
ClassifyResult classify(store::Store& store, const std::string& run_id, Services& services);

/// Queue state rebuilt from the ledger.
std::unique_ptr<classifier::AdjudicationQueue> load_queue(const store::Store& store, const std::string& run_id);

/// Validates the batch against the ledger under the run's writer lock, then
/// records decisions and Human verdicts. `source` is recorded with each
/// decision. ConflictError/NotFoundError as AdjudicationQueue::apply. With
/// `reject_resolved`, a decision for an already resolved host is a conflict
/// even when it repeats the recorded category.
std::vector<classifier::PublisherVerdict> apply_decisions(store::Store& store, const std::string& run_id,
                                                          const std::vector<classifier::Decision>& decisions,
                                                          const std::string& source, bool reject_resolved = false);

/// Fetches cited pages and computes sim_max per (answer, url).
StageResult reflect(store::Store& store, const std::string& run_id, Services& services);

/// Cited vs visited-but-uncited pages per (country, provider) for providers
/// that expose visited sources.
StageResult webstruct(store::Store& store, const std::string& run_id, Services& services,
                      std::optional<std::uint64_t> seed = std::nullopt);

/// Everything the report needs, read from the ledger.
analytics::ReportInputs gather(const store::Store& store, const std::string& run_id);

/// Builds the report and records its digest. PendingError unless allow_pending.
Json analyze(store::Store& store, const std::string& run_id, bool allow_pending = false);

/// The report as `analyze` would build it, without writing to the ledger.
Json current_report(const store::Store& store, const std::string& run_id, bool allow_pending = false);

// Ledger forms
Json to_json(const stats::TestResult& t);
stats::TestResult test_result_from_json(const Json& j);
Json to_json(const analytics::WebstructResult& r);
analytics::WebstructResult webstruct_from_json(const Json& j);

std::string answer_id(const ge::AnswerRecord& r);

}  // namespace geaudit::pipeline
