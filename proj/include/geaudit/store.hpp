#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit::store {

using Json = nlohmann::json;

inline constexpr int kLedgerVersion = 1;

struct LedgerEntry {
    std::uint64_t seq = 0;
    std::string kind;
    Json payload;
};

struct RunInfo {
    std::string id;
    std::string created_at;
    std::string config_digest;
    bool finalized = false;
};

class RunWriter;

/// Directory layout:
///   runs/<id>/meta.json, runs/<id>/ledger.jsonl
///   caches/{pages,whois,embeddings}/
class Store {
public:
    explicit Store(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path cache_dir(std::string_view name) const;
    std::filesystem::path run_dir(std::string_view run_id) const;

    /// Creates an empty run. A generated id is used when none is given.
    /// Throws ConflictError if the id exists.
    RunInfo create_run(const std::string& config_digest, std::optional<std::string> run_id = std::nullopt);

    bool has_run(std::string_view run_id) const;
    RunInfo run_info(std::string_view run_id) const;  // NotFoundError for unknown runs
    std::vector<RunInfo> list_runs() const;

    /// Complete entries in sequence order, optionally filtered by kind. A
    /// partially written trailing line is invisible to readers.
    std::vector<LedgerEntry> scan(std::string_view run_id, const std::vector<std::string>& kinds = {}) const;

    /// Exclusive writer (flock). Blocks while another process holds it.
    /// Repairs a torn trailing record left by an interrupted append.
    std::unique_ptr<RunWriter> open_writer(std::string_view run_id);

private:
    std::filesystem::path root_;
};

class RunWriter {
public:
    ~RunWriter();
    RunWriter(const RunWriter&) = delete;
    RunWriter& operator=(const RunWriter&) = delete;

    /// Appends and fsyncs. Returns the assigned sequence number.
    /// StateError once the run is finalized.
    std::uint64_t append(std::string_view kind, const Json& payload);
    void finalize();

    std::uint64_t last_seq() const { return last_seq_; }
    bool finalized() const { return finalized_; }
    const std::string& run_id() const { return run_id_; }

private:
    friend class Store;
    RunWriter(std::filesystem::path dir, std::string run_id);

    std::filesystem::path dir_;
    std::string run_id_;
    int fd_ = -1;
    int lock_fd_ = -1;
    std::uint64_t last_seq_ = 0;
    bool finalized_ = false;
};

/// Stable digest of a JSON value (sorted keys, compact dump).
std::string json_digest(const Json& value);

bool valid_run_id(std::string_view id);

}  // namespace geaudit::store
