#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace geaudit::http {

struct Request {
    std::string method = "GET";
    std::string url;  // absolute http(s) URL
    std::string body;
    std::string content_type = "application/json";
    std::vector<std::pair<std::string, std::string>> headers;
    int timeout_ms = 30000;
    std::size_t max_bytes = 0;  // 0 = unlimited; otherwise the body is cut and `truncated` set
    std::string user_agent = "geaudit/1.0";
};

struct Response {
    int status = 0;  // 0 when no HTTP response was received
    std::string body;
    std::map<std::string, std::string> headers;  // lowercase names
    std::string error;                           // transport error description
    bool truncated = false;
    bool timed_out = false;

    bool ok() const { return status >= 200 && status < 300; }
    std::string header(const std::string& lower_name) const;
};

/// One request, redirects not followed. Never throws for remote failures;
/// they are reported through `status`, `error` and `timed_out`.
Response send(const Request& request);

/// Resolves a possibly relative Location header against `base`.
std::string resolve_url(const std::string& base, const std::string& location);

}  // namespace geaudit::http
