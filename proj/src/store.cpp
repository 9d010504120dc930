#include "geaudit/store.hpp"

#include "geaudit/common.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>

namespace geaudit::store {

namespace fs = std::filesystem;

namespace {

constexpr const char* kLedgerFile = "ledger.jsonl";
constexpr const char* kMetaFile = "meta.json";
constexpr const char* kLockFile = "writer.lock";

std::string generated_run_id() {
    std::string stamp = now_iso8601();  // 2026-10-15T12:00:00Z
    stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char c) { return c == '-' || c == ':'; }),
                stamp.end());
    std::random_device rd;
    static const char* hex = "0123456789abcdef";
    std::string suffix;
    for (int i = 0; i < 6; ++i) suffix += hex[rd() % 16];
    return stamp + "-" + suffix;
}

Json read_meta(const fs::path& dir) {
    try {
        return Json::parse(read_file(dir / kMetaFile));
    } catch (const Json::exception& e) {
        throw ParseError("corrupt run metadata in " + dir.string() + ": " + e.what());
    }
}

RunInfo info_from_meta(const Json& m) {
    RunInfo info;
    info.id = m.at("id").get<std::string>();
    info.created_at = m.value("created_at", "");
    info.config_digest = m.value("config_digest", "");
    info.finalized = m.value("finalized", false);
    return info;
}

Json header_line(const std::string& run_id) {
    return Json{{"format", "geaudit-ledger"}, {"version", kLedgerVersion}, {"run", run_id}};
}

void write_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const auto n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("ledger write failed: ") + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

}  // namespace

bool valid_run_id(std::string_view id) {
    if (id.empty() || id.size() > 128 || id.front() == '.') return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

std::string json_digest(const Json& value) { return sha256_hex(value.dump()); }

Store::Store(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "runs");
    for (const char* c : {"pages", "whois", "embeddings"}) fs::create_directories(root_ / "caches" / c);
}

fs::path Store::cache_dir(std::string_view name) const {
    auto p = root_ / "caches" / std::string(name);
    fs::create_directories(p);
    return p;
}

fs::path Store::run_dir(std::string_view run_id) const {
    if (!valid_run_id(run_id)) throw ValidationError("invalid run id: " + std::string(run_id));
    return root_ / "runs" / std::string(run_id);
}

RunInfo Store::create_run(const std::string& config_digest, std::optional<std::string> run_id) {
    const std::string id = run_id ? *run_id : generated_run_id();
    const auto dir = run_dir(id);
    std::error_code ec;
    if (!fs::create_directory(dir, ec)) {
        if (fs::exists(dir)) throw ConflictError("run already exists: " + id);
        throw Error("cannot create run directory " + dir.string() + ": " + ec.message());
    }
    RunInfo info{id, now_iso8601(), config_digest, false};
    Json meta{{"version", kLedgerVersion},
              {"id", info.id},
              {"created_at", info.created_at},
              {"config_digest", config_digest},
              {"finalized", false}};
    write_file_atomic(dir / kMetaFile, meta.dump(2) + "\n");
    write_file_atomic(dir / kLedgerFile, header_line(id).dump() + "\n");
    return info;
}

bool Store::has_run(std::string_view run_id) const {
    return valid_run_id(run_id) && fs::exists(run_dir(run_id) / kMetaFile);
}

RunInfo Store::run_info(std::string_view run_id) const {
    if (!has_run(run_id)) throw NotFoundError("unknown run: " + std::string(run_id));
    return info_from_meta(read_meta(run_dir(run_id)));
}

std::vector<RunInfo> Store::list_runs() const {
    std::vector<RunInfo> out;
    for (const auto& e : fs::directory_iterator(root_ / "runs")) {
        if (e.is_directory() && fs::exists(e.path() / kMetaFile)) out.push_back(info_from_meta(read_meta(e.path())));
    }
    std::sort(out.begin(), out.end(), [](const RunInfo& a, const RunInfo& b) { return a.id < b.id; });
    return out;
}

std::vector<LedgerEntry> Store::scan(std::string_view run_id, const std::vector<std::string>& kinds) const {
    if (!has_run(run_id)) throw NotFoundError("unknown run: " + std::string(run_id));
    const std::string data = read_file(run_dir(run_id) / kLedgerFile);
    std::vector<LedgerEntry> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < data.size()) {
        const auto nl = data.find('\n', pos);
        if (nl == std::string::npos) break;  // in-flight or torn record
        const std::string_view line(data.data() + pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw ParseError(std::string("corrupt ledger record: ") + e.what(), line_no);
        }
        if (line_no == 1) {
            if (j.value("format", "") != "geaudit-ledger" || j.value("version", 0) != kLedgerVersion) {
                throw ParseError("unsupported ledger header", line_no);
            }
            continue;
        }
        LedgerEntry e;
        e.seq = j.at("seq").get<std::uint64_t>();
        e.kind = j.at("kind").get<std::string>();
        if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), e.kind) == kinds.end()) continue;
        e.payload = std::move(j.at("payload"));
        out.push_back(std::move(e));
    }
    return out;
}

std::unique_ptr<RunWriter> Store::open_writer(std::string_view run_id) {
    if (!has_run(run_id)) throw NotFoundError("unknown run: " + std::string(run_id));
    return std::unique_ptr<RunWriter>(new RunWriter(run_dir(run_id), std::string(run_id)));
}

RunWriter::RunWriter(fs::path dir, std::string run_id) : dir_(std::move(dir)), run_id_(std::move(run_id)) {
    lock_fd_ = ::open((dir_ / kLockFile).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (lock_fd_ < 0) throw Error("cannot open writer lock: " + std::string(std::strerror(errno)));
    while (::flock(lock_fd_, LOCK_EX) != 0) {
        if (errno != EINTR) {
            ::close(lock_fd_);
            throw Error("cannot lock run " + run_id_);
        }
    }

    // Drop a torn trailing record, then find the last sequence number.
    const auto ledger = dir_ / kLedgerFile;
    const std::string data = read_file(ledger);
    std::size_t keep = data.size();
    if (!data.empty() && data.back() != '\n') {
        const auto nl = data.rfind('\n');
        keep = nl == std::string::npos ? 0 : nl + 1;
    }
    fd_ = ::open(ledger.c_str(), O_RDWR | O_CLOEXEC);
    if (fd_ < 0) throw Error("cannot open ledger: " + std::string(std::strerror(errno)));
    if (keep != data.size()) {
        if (::ftruncate(fd_, static_cast<off_t>(keep)) != 0) throw Error("cannot repair torn ledger record");
        ::fsync(fd_);
    }
    ::lseek(fd_, 0, SEEK_END);

    if (keep > 0) {
        const auto prev = keep >= 2 ? data.rfind('\n', keep - 2) : std::string::npos;
        const std::size_t start = prev == std::string::npos ? 0 : prev + 1;
        const auto j = Json::parse(std::string_view(data.data() + start, keep - 1 - start), nullptr, false);
        if (j.is_discarded()) throw ParseError("corrupt ledger record at end of " + ledger.string());
        if (j.contains("seq")) last_seq_ = j["seq"].get<std::uint64_t>();
    }
    finalized_ = read_meta(dir_).value("finalized", false);
}

RunWriter::~RunWriter() {
    if (fd_ >= 0) ::close(fd_);
    if (lock_fd_ >= 0) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
    }
}

std::uint64_t RunWriter::append(std::string_view kind, const Json& payload) {
    if (finalized_) throw StateError("run " + run_id_ + " is finalized");
    const std::uint64_t seq = last_seq_ + 1;
    Json line{{"seq", seq}, {"kind", kind}, {"payload", payload}};
    std::string text = line.dump(-1, ' ', false, Json::error_handler_t::replace);
    text += '\n';
    write_all(fd_, text);
    if (::fsync(fd_) != 0) throw Error("ledger fsync failed");
    last_seq_ = seq;
    return seq;
}

void RunWriter::finalize() {
    if (finalized_) return;
    append("finalize", Json{{"at", now_iso8601()}});
    auto meta = read_meta(dir_);
    meta["finalized"] = true;
    write_file_atomic(dir_ / kMetaFile, meta.dump(2) + "\n");
    finalized_ = true;
}

}  // namespace geaudit::store
