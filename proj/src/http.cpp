#include "geaudit/http.hpp"

#include "geaudit/common.hpp"

#include <httplib.h>

namespace geaudit::http {

std::string Response::header(const std::string& lower_name) const {
    auto it = headers.find(lower_name);
    return it == headers.end() ? std::string{} : it->second;
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path + query, at least "/"
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("not an absolute URL: " + url);
    const auto path_start = url.find_first_of("/?", scheme_end + 3);
    SplitUrl s;
    s.origin = url.substr(0, path_start);
    s.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (s.path.front() == '?') s.path = "/" + s.path;
    if (auto hash = s.path.find('#'); hash != std::string::npos) s.path.resize(hash);
    return s;
}

}  // namespace

Response send(const Request& request) {
    Response out;
    SplitUrl target;
    try {
        target = split_url(request.url);
    } catch (const ValidationError& e) {
        out.error = e.what();
        return out;
    }

    httplib::Client client(target.origin);
    if (!client.is_valid()) {
        out.error = "unsupported URL: " + request.url;
        return out;
    }
    const auto secs = request.timeout_ms / 1000;
    const auto usecs = (request.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_follow_location(false);

    httplib::Headers headers;
    headers.emplace("User-Agent", request.user_agent);
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);

    httplib::Result result{nullptr, httplib::Error::Unknown};
    if (request.method == "GET") {
        result = client.Get(
            target.path, headers,
            [&](const httplib::Response& head) {
                out.status = head.status;
                for (const auto& [k, v] : head.headers) out.headers[text::to_lower_ascii(k)] = v;
                return true;
            },
            [&](const char* data, std::size_t len) {
                out.body.append(data, len);
                if (request.max_bytes && out.body.size() > request.max_bytes) {
                    out.truncated = true;
                    return false;
                }
                return true;
            });
    } else if (request.method == "POST") {
        result = client.Post(target.path, headers, request.body, request.content_type);
    } else {
        out.error = "unsupported method " + request.method;
        return out;
    }

    if (!result) {
        const auto err = result.error();
        if (out.truncated && err == httplib::Error::Canceled) return out;
        out.error = httplib::to_string(err);
        out.timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        return out;
    }
    out.status = result->status;
    if (request.method != "GET") out.body = result->body;
    for (const auto& [k, v] : result->headers) out.headers[text::to_lower_ascii(k)] = v;
    return out;
}

std::string resolve_url(const std::string& base, const std::string& location) {
    if (location.find("://") != std::string::npos) return location;
    const auto split = split_url(base);
    if (location.rfind("//", 0) == 0) return base.substr(0, base.find("://") + 1) + location;
    if (!location.empty() && location.front() == '/') return split.origin + location;
    auto dir = split.path.substr(0, split.path.rfind('/') + 1);
    return split.origin + dir + location;
}

}  // namespace geaudit::http
