#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>

namespace geaudit {

/// Public Suffix List matcher (rules, wildcards, exceptions) over the
/// publicsuffix.org file format. The built-in list is a curated subset that
/// covers the multi-label suffixes seen in practice; load the full list with
/// `parse()` for production runs.
class PublicSuffixList {
public:
    static PublicSuffixList parse(std::string_view psl_text);
    static const PublicSuffixList& builtin();

    /// Public suffix of an already-lowercased host.
    std::string public_suffix(std::string_view host) const;

    /// Suffix plus one label. Returns `host` unchanged when the host is
    /// itself a public suffix or an IP literal.
    std::string registrable_domain(std::string_view host) const;

    std::size_t rule_count() const { return rules_.size() + wildcards_.size() + exceptions_.size(); }

private:
    std::unordered_set<std::string> rules_;
    std::unordered_set<std::string> wildcards_;   // stored without the leading "*."
    std::unordered_set<std::string> exceptions_;  // stored without the leading "!"
};

struct DomainName {
    std::string host;         ///< full lowercase host, e.g. "www.presidency.ucsb.edu"
    std::string registrable;  ///< e.g. "ucsb.edu"

    bool operator==(const DomainName&) const = default;
};

/// domain(c): strict form for citation URLs. Requires an absolute URL with an
/// authority component; throws ValidationError otherwise.
DomainName normalize_domain(std::string_view url, const PublicSuffixList& psl = PublicSuffixList::builtin());

/// Lenient form for manifest entries: accepts a bare host ("democrats.org")
/// or a URL ("HTTPS://Democrats.org/") and returns the lowercase host.
std::string normalize_host(std::string_view host_or_url);

/// True when `host` equals `domain` or is a subdomain of it on whole-label
/// boundaries ("vote.democrats.org" vs "democrats.org").
bool host_matches(std::string_view host, std::string_view domain);

/// Host of an absolute URL, or empty if none can be parsed.
std::string url_host(std::string_view url);

/// Canonical comparison form of a URL: lowercase scheme and host, default
/// port and fragment dropped. Path and query are kept verbatim.
std::string canonical_url(std::string_view url);

}  // namespace geaudit
