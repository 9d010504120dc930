#include "geaudit/whois.hpp"

#include "geaudit/common.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <memory>

namespace geaudit::classifier {

using Json = nlohmann::json;

Json to_json(const WhoisRecord& r) {
    return Json{{"domain", r.domain},         {"raw_text", r.raw_text}, {"fetched_at", r.fetched_at},
                {"server_chain", r.server_chain}, {"status", r.status},     {"error", r.error}};
}

WhoisRecord whois_from_json(const Json& j) {
    WhoisRecord r;
    r.domain = j.at("domain").get<std::string>();
    r.raw_text = j.value("raw_text", "");
    r.fetched_at = j.value("fetched_at", "");
    r.server_chain = j.value("server_chain", std::vector<std::string>{});
    r.status = j.value("status", "ok");
    r.error = j.value("error", "");
    return r;
}

std::string whois_excerpt(const WhoisRecord& r, std::size_t max_lines) {
    std::string out;
    std::size_t n = 0;
    for (const auto& line : text::split(r.raw_text, '\n')) {
        const auto t = text::trim(line);
        if (t.empty() || t[0] == '%' || t[0] == '#' || t.rfind(">>>", 0) == 0) continue;
        if (!out.empty()) out += '\n';
        out += t;
        if (++n >= max_lines) break;
    }
    return out;
}

bool reserved_tld(const std::string& domain) {
    const auto d = text::to_lower_ascii(domain);
    const auto dot = d.rfind('.');
    const auto tld = dot == std::string::npos ? d : d.substr(dot + 1);
    return tld == "invalid" || tld == "test" || tld == "example" || tld == "localhost" || tld == "local";
}

namespace {

struct Fd {
    int fd = -1;
    ~Fd() {
        if (fd >= 0) ::close(fd);
    }
};

bool wait_fd(int fd, short events, int timeout_ms) {
    pollfd p{fd, events, 0};
    for (;;) {
        const int rc = ::poll(&p, 1, timeout_ms);
        if (rc < 0 && errno == EINTR) continue;
        return rc > 0;
    }
}

}  // namespace

std::string whois_query(const std::string& server, int port, const std::string& query, int timeout_ms,
                        std::size_t max_bytes) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port_s = std::to_string(port);
    if (const int rc = ::getaddrinfo(server.c_str(), port_s.c_str(), &hints, &res); rc != 0) {
        throw NetworkError("resolve " + server + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    auto remaining = [&] {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        return static_cast<int>(std::max<long>(0, left.count()));
    };

    Fd sock;
    std::string last_error = "no address";
    bool timed_out = false;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        Fd s{::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol)};
        if (s.fd < 0) continue;
        if (::connect(s.fd, ai->ai_addr, ai->ai_addrlen) != 0) {
            if (errno != EINPROGRESS) {
                last_error = std::strerror(errno);
                continue;
            }
            if (!wait_fd(s.fd, POLLOUT, remaining())) {
                timed_out = true;
                last_error = "timeout";
                continue;
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(s.fd, SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) {
                last_error = std::strerror(err);
                continue;
            }
        }
        std::swap(sock.fd, s.fd);
        break;
    }
    if (sock.fd < 0) throw NetworkError(timed_out ? "timeout" : "connect " + server + ": " + last_error);

    const std::string line = query + "\r\n";
    std::size_t sent = 0;
    while (sent < line.size()) {
        if (!wait_fd(sock.fd, POLLOUT, remaining())) throw NetworkError("timeout");
        const auto n = ::send(sock.fd, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EAGAIN || errno == EINTR) continue;
            throw NetworkError(std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }

    std::string out;
    char buf[4096];
    for (;;) {
        if (!wait_fd(sock.fd, POLLIN, remaining())) throw NetworkError("timeout");
        const auto n = ::recv(sock.fd, buf, sizeof buf, 0);
        if (n == 0) break;
        if (n < 0) {
            if (errno == EAGAIN || errno == EINTR) continue;
            throw NetworkError(std::string("recv: ") + std::strerror(errno));
        }
        out.append(buf, static_cast<std::size_t>(n));
        if (out.size() >= max_bytes) break;
    }
    return out;
}

std::optional<std::string> whois_referral(const std::string& response) {
    for (const auto& raw : text::split(response, '\n')) {
        const auto line = text::trim(raw);
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        const auto key = text::to_lower_ascii(text::trim(line.substr(0, colon)));
        if (key != "refer" && key != "whois" && key != "registrar whois server") continue;
        auto value = std::string(text::trim(line.substr(colon + 1)));
        if (auto p = value.find("://"); p != std::string::npos) value = value.substr(p + 3);
        if (auto p = value.find('/'); p != std::string::npos) value.resize(p);
        if (!value.empty()) return text::to_lower_ascii(value);
    }
    return std::nullopt;
}

WhoisClient::WhoisClient(WhoisConfig config) : config_(std::move(config)) {
    if (config_.cache_dir) std::filesystem::create_directories(*config_.cache_dir);
}

std::optional<WhoisRecord> WhoisClient::cache_get(const std::string& domain) {
    const auto now = std::chrono::system_clock::now();
    {
        std::lock_guard lock(mu_);
        auto it = memory_.find(domain);
        if (it != memory_.end() && now - it->second.at < config_.ttl) return it->second.record;
    }
    if (!config_.cache_dir) return std::nullopt;
    const auto path = *config_.cache_dir / (sha256_hex(domain) + ".json");
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        const auto j = Json::parse(read_file(path));
        const auto at = std::chrono::system_clock::time_point(std::chrono::seconds(j.at("cached_epoch").get<std::int64_t>()));
        if (now - at >= config_.ttl) return std::nullopt;
        auto rec = whois_from_json(j.at("record"));
        std::lock_guard lock(mu_);
        memory_[domain] = {rec, at};
        return rec;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void WhoisClient::cache_put(const WhoisRecord& r) {
    const auto now = std::chrono::system_clock::now();
    {
        std::lock_guard lock(mu_);
        memory_[r.domain] = {r, now};
    }
    // Failures stay in memory only so a later run retries them.
    if (!config_.cache_dir || !r.ok()) return;
    const Json j{{"cached_epoch", std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count()},
                 {"record", to_json(r)}};
    write_file_atomic(*config_.cache_dir / (sha256_hex(r.domain) + ".json"), j.dump(2));
}

WhoisRecord WhoisClient::lookup(const std::string& domain_in) {
    const auto domain = text::to_lower_ascii(domain_in);
    if (auto hit = cache_get(domain)) return *hit;
    return flights_.run(domain, [&] {
        if (auto hit = cache_get(domain)) return *hit;
        auto r = lookup_uncached(domain);
        cache_put(r);
        return r;
    });
}

WhoisRecord WhoisClient::lookup_uncached(const std::string& domain) {
    WhoisRecord r;
    r.domain = domain;
    r.fetched_at = now_iso8601();
    if (reserved_tld(domain)) {
        r.status = "lookup_failed";
        r.error = "reserved top-level domain";
        return r;
    }
    std::string server = config_.server;
    for (int hop = 0; hop <= config_.max_referrals; ++hop) {
        r.server_chain.push_back(server);
        std::string text;
        try {
            ++queries_;
            text = whois_query(server, config_.port, domain, config_.timeout_ms, config_.max_bytes);
        } catch (const NetworkError& e) {
            if (hop > 0 && !r.raw_text.empty()) {
                r.error = std::string("referral ") + server + " failed: " + e.what();
                break;  // keep the root answer
            }
            r.status = std::string(e.what()) == "timeout" ? "timeout" : "connect_failed";
            r.error = e.what();
            r.raw_text.clear();
            return r;
        }
        r.raw_text = std::move(text);
        const auto next = whois_referral(r.raw_text);
        if (!next || std::find(r.server_chain.begin(), r.server_chain.end(), *next) != r.server_chain.end()) break;
        server = *next;
    }
    return r;
}

FixtureWhois::FixtureWhois(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("whois fixture not found: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = Json::parse(line);
            WhoisRecord r;
            r.domain = text::to_lower_ascii(j.at("domain").get<std::string>());
            r.raw_text = j.value("text", "");
            r.status = j.value("status", "ok");
            r.server_chain = j.value("server_chain", std::vector<std::string>{"fixture"});
            r.fetched_at = j.value("fetched_at", "");
            records_[r.domain] = std::move(r);
        } catch (const Json::exception& e) {
            throw ParseError(path.filename().string() + ": " + e.what(), line_no);
        }
    }
}

WhoisRecord FixtureWhois::lookup(const std::string& domain) {
    auto it = records_.find(text::to_lower_ascii(domain));
    if (it != records_.end()) return it->second;
    WhoisRecord r;
    r.domain = domain;
    r.status = "lookup_failed";
    r.error = "not present in whois fixture";
    return r;
}

}  // namespace geaudit::classifier
