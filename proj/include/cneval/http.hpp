#pragma once

// Minimal JSON-over-HTTP transport with retry/backoff and a per-endpoint
// rate limiter. The only translation unit that includes cpp-httplib is
// src/http.cpp, so the rest of the library compiles against this surface.

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace cneval {

struct HttpResponse {
    int status = 0;  ///< 0 when no HTTP response was received
    std::string body;
    std::string transport_error;  ///< non-empty when the connection itself failed
};

/// Splits "http://host:port/prefix" into the origin and the path prefix.
struct Url {
    std::string origin;  ///< scheme://host[:port]
    std::string path;    ///< "" or "/v1" style prefix, never a trailing slash

    static Url parse(const std::string& url);
};

/// One POST with a JSON body. Never throws for transport failures; they are
/// reported through HttpResponse::transport_error.
HttpResponse http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& headers,
                            std::chrono::milliseconds timeout);

HttpResponse http_get(const std::string& base_url, const std::string& path, std::chrono::milliseconds timeout);

/// Transport failures, 408, 429 and 5xx are transient; everything else is final.
bool is_transient(const HttpResponse& r);

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::milliseconds max_backoff{8000};
    std::chrono::milliseconds timeout{60000};

    /// Delay before attempt `attempt` (1-based; attempt 1 has no delay).
    std::chrono::milliseconds backoff_before(int attempt) const;
};

/// Sliding-window limiter: at most ceil(rate) acquisitions in any window of
/// one second plus `guard`, and successive acquisitions spaced by 1/rate.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_second,
                         std::chrono::milliseconds guard = std::chrono::milliseconds(25));

    /// Blocks until a request may be issued and records it.
    void acquire();

    double rate() const { return rate_; }

private:
    using Clock = std::chrono::steady_clock;
    double rate_;
    std::size_t capacity_;
    Clock::duration window_;
    Clock::duration spacing_;
    std::mutex mu_;
    std::deque<Clock::time_point> recent_;
};

/// Shared limiters keyed by endpoint URL. When several callers register the
/// same endpoint with different rates, the lowest rate wins.
class RateLimiterRegistry {
public:
    std::shared_ptr<RateLimiter> for_endpoint(const std::string& endpoint, double rate);

private:
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<RateLimiter>> limiters_;
};

/// POSTs with retries on transient failures. `attempts` receives the number
/// of requests issued. Returns the last response received.
HttpResponse post_with_retry(const std::string& base_url, const std::string& path, const std::string& body,
                             const std::map<std::string, std::string>& headers, const RetryPolicy& policy,
                             RateLimiter* limiter, int& attempts);

/// Reads a bearer token from the named environment variable. Empty name or
/// unset variable yields no Authorization header.
std::map<std::string, std::string> bearer_headers(const std::string& env_var);

}  // namespace cneval
