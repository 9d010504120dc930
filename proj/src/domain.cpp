#include "geaudit/domain.hpp"

#include "geaudit/common.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <vector>

namespace geaudit {
namespace {

// Multi-label public suffixes. Single-label TLDs fall out of the implicit "*"
// rule, so they are not listed.
constexpr std::string_view kBuiltinRules = R"(// ICANN
co.jp
or.jp
ne.jp
ac.jp
ad.jp
ed.jp
go.jp
gr.jp
lg.jp
tokyo.jp
osaka.jp
kyoto.jp
*.kawasaki.jp
!city.kawasaki.jp
co.uk
org.uk
ac.uk
gov.uk
ltd.uk
plc.uk
me.uk
net.uk
sch.uk
nhs.uk
police.uk
com.au
net.au
org.au
edu.au
gov.au
asn.au
id.au
co.nz
org.nz
govt.nz
ac.nz
com.br
gov.br
org.br
com.cn
gov.cn
edu.cn
org.cn
co.kr
or.kr
go.kr
ac.kr
co.in
gov.in
ac.in
org.in
com.tw
gov.tw
edu.tw
com.hk
gov.hk
com.sg
gov.sg
edu.sg
co.za
gov.za
com.mx
gob.mx
ca.us
ny.us
tx.us
va.us
dc.us
k12.ca.us
*.ck
!www.ck
// PRIVATE
blogspot.com
github.io
githubusercontent.com
appspot.com
herokuapp.com
cloudfront.net
netlify.app
vercel.app
pages.dev
web.app
firebaseapp.com
azurewebsites.net
s3.amazonaws.com
)";

bool is_ip_literal(std::string_view host) {
    if (!host.empty() && host.front() == '[') return true;
    if (host.empty()) return false;
    return std::all_of(host.begin(), host.end(), [](char c) { return (c >= '0' && c <= '9') || c == '.'; });
}

struct ParsedUrl {
    std::string scheme;
    std::string host;
    std::string port;
    std::string rest;  // path + query (fragment removed)
};

// Minimal RFC 3986 authority split. Returns nullopt for relative or
// authority-less URLs ("mailto:", "/path", "example.org/x").
std::optional<ParsedUrl> parse_url(std::string_view url) {
    url = text::trim(url);
    const auto colon = url.find(':');
    if (colon == std::string_view::npos || colon == 0) return std::nullopt;
    auto scheme = url.substr(0, colon);
    const bool scheme_ok = std::isalpha(static_cast<unsigned char>(scheme[0])) &&
                           std::all_of(scheme.begin(), scheme.end(), [](char c) {
                               return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
                           });
    if (!scheme_ok) return std::nullopt;
    auto after = url.substr(colon + 1);
    if (after.substr(0, 2) != "//") return std::nullopt;
    after.remove_prefix(2);
    const auto auth_end = after.find_first_of("/?#");
    auto authority = after.substr(0, auth_end);
    std::string_view rest = auth_end == std::string_view::npos ? std::string_view{} : after.substr(auth_end);
    if (const auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);

    if (const auto at = authority.rfind('@'); at != std::string_view::npos) authority.remove_prefix(at + 1);
    std::string_view host = authority;
    std::string_view port;
    if (!authority.empty() && authority.front() == '[') {
        const auto close = authority.find(']');
        if (close == std::string_view::npos) return std::nullopt;
        host = authority.substr(0, close + 1);
        if (close + 1 < authority.size() && authority[close + 1] == ':') port = authority.substr(close + 2);
    } else if (const auto pc = authority.rfind(':'); pc != std::string_view::npos) {
        host = authority.substr(0, pc);
        port = authority.substr(pc + 1);
    }
    std::string h = text::to_lower_ascii(host);
    while (!h.empty() && h.back() == '.') h.pop_back();
    if (h.empty()) return std::nullopt;
    for (char c : h) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && !std::isalnum(u) && c != '-' && c != '.' && c != '_' && c != '[' && c != ']' && c != ':')
            return std::nullopt;
    }
    return ParsedUrl{text::to_lower_ascii(scheme), std::move(h), std::string(port), std::string(rest)};
}

}  // namespace

PublicSuffixList PublicSuffixList::parse(std::string_view psl_text) {
    PublicSuffixList psl;
    std::size_t pos = 0;
    while (pos <= psl_text.size()) {
        auto eol = psl_text.find('\n', pos);
        if (eol == std::string_view::npos) eol = psl_text.size();
        auto line = text::trim(psl_text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty() || line.substr(0, 2) == "//") continue;
        // Rules end at the first whitespace.
        if (auto ws = line.find_first_of(" \t"); ws != std::string_view::npos) line = line.substr(0, ws);
        std::string rule = text::to_lower_ascii(line);
        if (rule.front() == '!') {
            psl.exceptions_.insert(rule.substr(1));
        } else if (rule.size() > 2 && rule.substr(0, 2) == "*.") {
            psl.wildcards_.insert(rule.substr(2));
        } else {
            psl.rules_.insert(std::move(rule));
        }
        if (eol == psl_text.size()) break;
    }
    return psl;
}

const PublicSuffixList& PublicSuffixList::builtin() {
    static const PublicSuffixList psl = parse(kBuiltinRules);
    return psl;
}

std::string PublicSuffixList::public_suffix(std::string_view host) const {
    const auto labels = text::split(host, '.');
    const std::size_t n = labels.size();
    auto tail = [&](std::size_t k) {  // last k labels joined
        std::vector<std::string> part(labels.end() - static_cast<std::ptrdiff_t>(k), labels.end());
        return text::join(part, ".");
    };
    // Exception rules win outright; the suffix is the rule minus its leftmost label.
    for (std::size_t k = n; k >= 1; --k) {
        if (exceptions_.count(tail(k))) return tail(k - 1);
    }
    std::size_t best = 1;  // implicit "*"
    for (std::size_t k = 1; k <= n; ++k) {
        const auto t = tail(k);
        if (rules_.count(t)) best = std::max(best, k);
        if (k < n && wildcards_.count(t)) best = std::max(best, k + 1);
    }
    return tail(std::min(best, n));
}

std::string PublicSuffixList::registrable_domain(std::string_view host) const {
    if (is_ip_literal(host)) return std::string(host);
    const auto suffix = public_suffix(host);
    if (suffix.size() >= host.size()) return std::string(host);
    const auto labels = text::split(host.substr(0, host.size() - suffix.size() - 1), '.');
    return labels.back() + "." + suffix;
}

DomainName normalize_domain(std::string_view url, const PublicSuffixList& psl) {
    auto parsed = parse_url(url);
    if (!parsed) throw ValidationError("not an absolute URL with a host: '" + std::string(url) + "'");
    DomainName d;
    d.host = parsed->host;
    d.registrable = psl.registrable_domain(d.host);
    return d;
}

std::string normalize_host(std::string_view host_or_url) {
    auto s = text::trim(host_or_url);
    if (s.find("://") != std::string_view::npos) {
        auto parsed = parse_url(s);
        if (!parsed) throw ValidationError("cannot parse host from '" + std::string(s) + "'");
        return parsed->host;
    }
    std::string synthetic = "http://" + std::string(s);
    auto parsed = parse_url(synthetic);
    if (!parsed) throw ValidationError("cannot parse host from '" + std::string(s) + "'");
    return parsed->host;
}

bool host_matches(std::string_view host, std::string_view domain) {
    if (domain.empty() || host.size() < domain.size()) return false;
    if (host == domain) return true;
    return host.substr(host.size() - domain.size()) == domain && host[host.size() - domain.size() - 1] == '.';
}

std::string url_host(std::string_view url) {
    auto parsed = parse_url(url);
    return parsed ? parsed->host : std::string{};
}

std::string canonical_url(std::string_view url) {
    auto parsed = parse_url(url);
    if (!parsed) return std::string(text::trim(url));
    std::string out = parsed->scheme + "://" + parsed->host;
    const bool default_port = parsed->port.empty() || (parsed->scheme == "http" && parsed->port == "80") ||
                              (parsed->scheme == "https" && parsed->port == "443");
    if (!default_port) out += ":" + parsed->port;
    out += parsed->rest.empty() ? "/" : parsed->rest;
    return out;
}

}  // namespace geaudit
