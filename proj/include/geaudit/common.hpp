#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geaudit {

// Error taxonomy shared by every module. Callers that need to map failures to
// exit codes (the CLI) switch on these types.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input. `line` is 1-based when the input is line-oriented.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, std::optional<std::size_t> line = std::nullopt)
        : Error(line ? what + " (line " + std::to_string(*line) + ")" : what), line_(line) {}
    std::optional<std::size_t> line() const { return line_; }

private:
    std::optional<std::size_t> line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// An operation was attempted in the wrong lifecycle state (e.g. append to a finalized run).
class StateError : public Error {
public:
    using Error::Error;
};

/// Analysis refused because adjudications are outstanding.
class PendingError : public Error {
public:
    explicit PendingError(std::vector<std::string> hosts);
    const std::vector<std::string>& hosts() const { return hosts_; }

private:
    std::vector<std::string> hosts_;
};

/// A second writer tried to resolve something already resolved differently.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Transport-level failure talking to a remote service.
class NetworkError : public Error {
public:
    using Error::Error;
};

namespace text {

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Number of Unicode scalar values in a UTF-8 string. Invalid bytes count as one each.
std::size_t utf8_length(std::string_view s);

/// Decodes one code point starting at `pos`, advancing it. Invalid sequences yield U+FFFD.
char32_t utf8_next(std::string_view s, std::size_t& pos);
void utf8_append(std::string& out, char32_t cp);
bool is_valid_utf8(std::string_view s);

}  // namespace text

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

/// UTC timestamp, ISO-8601 with second resolution ("2025-09-04T12:00:00Z").
std::string now_iso8601();

std::string read_file(const std::filesystem::path& path);

/// Write-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace geaudit
