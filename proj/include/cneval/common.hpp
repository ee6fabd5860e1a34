#pragma once

// Shared plumbing: error types, string helpers, hashing, line-oriented I/O.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cneval {

namespace fs = std::filesystem;

/// Malformed or inconsistent input data (bad rows, bad store lines, bad files).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (empty inputs, out-of-range arguments).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An upstream stage artifact that a later stage depends on is absent.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

/// Collapses runs of ASCII whitespace to a single space and trims the ends.
std::string collapse_spaces(std::string_view s);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const fs::path& path);

std::string read_file(const fs::path& path);

/// Writes `content` to `path` through a temporary sibling and a rename, so
/// readers never see a half-written file. Skips the write when the existing
/// bytes already match.
void write_file_atomic(const fs::path& path, std::string_view content);

/// Current UTC time as an ISO-8601 string with second precision.
std::string utc_timestamp();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Rounds value * scale half-up to an integer using exact integer arithmetic:
/// returns floor(num * scale / den + 1/2). Requires den > 0.
std::int64_t round_ratio_half_up(std::int64_t num, std::int64_t den, std::int64_t scale);

/// Formats a fixed-point integer (e.g. hundredths) as a decimal string.
std::string format_fixed(std::int64_t scaled, int decimals);

/// Formats a double with a fixed number of decimals, half-up.
std::string format_decimal(double value, int decimals);

}  // namespace cneval
