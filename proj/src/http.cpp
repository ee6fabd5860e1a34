#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "cneval/http.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace cneval {

Url Url::parse(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint is not an absolute URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    Url u;
    if (path_start == std::string::npos) {
        u.origin = url;
    } else {
        u.origin = url.substr(0, path_start);
        u.path = url.substr(path_start);
        while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
    }
    return u;
}

namespace {

template <class Fn>
HttpResponse with_client(const std::string& base_url, std::chrono::milliseconds timeout, Fn&& fn) {
    HttpResponse out;
    Url url;
    try {
        url = Url::parse(base_url);
    } catch (const std::exception& e) {
        out.transport_error = e.what();
        return out;
    }
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto result = fn(client, url.path);
    if (!result) {
        out.transport_error = httplib::to_string(result.error());
        return out;
    }
    out.status = result->status;
    out.body = result->body;
    return out;
}

}  // namespace

HttpResponse http_post_json(const std::string& base_url, const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& headers,
                            std::chrono::milliseconds timeout) {
    return with_client(base_url, timeout, [&](httplib::Client& c, const std::string& prefix) {
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        return c.Post(prefix + path, h, body, "application/json");
    });
}

HttpResponse http_get(const std::string& base_url, const std::string& path, std::chrono::milliseconds timeout) {
    return with_client(base_url, timeout,
                       [&](httplib::Client& c, const std::string& prefix) { return c.Get(prefix + path); });
}

bool is_transient(const HttpResponse& r) {
    if (!r.transport_error.empty() || r.status == 0) return true;
    return r.status == 408 || r.status == 429 || r.status >= 500;
}

std::chrono::milliseconds RetryPolicy::backoff_before(int attempt) const {
    if (attempt <= 1) return std::chrono::milliseconds(0);
    auto delay = initial_backoff;
    for (int i = 2; i < attempt && delay < max_backoff; ++i) delay *= 2;
    return std::min(delay, max_backoff);
}

RateLimiter::RateLimiter(double requests_per_second, std::chrono::milliseconds guard) : rate_(requests_per_second) {
    if (!(requests_per_second > 0)) throw std::invalid_argument("rate limit must be positive");
    capacity_ = static_cast<std::size_t>(std::ceil(requests_per_second));
    window_ = std::chrono::seconds(1) + guard;
    spacing_ = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / requests_per_second));
}

void RateLimiter::acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = Clock::now();
        while (!recent_.empty() && now - recent_.front() >= window_) recent_.pop_front();
        Clock::time_point ready = now;
        if (recent_.size() >= capacity_) ready = std::max(ready, recent_.front() + window_);
        if (!recent_.empty()) ready = std::max(ready, recent_.back() + spacing_);
        if (ready <= now) {
            recent_.push_back(now);
            return;
        }
        // Sleeping with the lock held keeps waiters in FIFO-ish order.
        std::this_thread::sleep_until(ready);
    }
}

std::shared_ptr<RateLimiter> RateLimiterRegistry::for_endpoint(const std::string& endpoint, double rate) {
    std::lock_guard lock(mu_);
    auto& slot = limiters_[endpoint];
    if (!slot || rate < slot->rate()) slot = std::make_shared<RateLimiter>(rate);
    return slot;
}

HttpResponse post_with_retry(const std::string& base_url, const std::string& path, const std::string& body,
                             const std::map<std::string, std::string>& headers, const RetryPolicy& policy,
                             RateLimiter* limiter, int& attempts) {
    attempts = 0;
    HttpResponse last;
    const int cap = std::max(1, policy.max_attempts);
    for (int attempt = 1; attempt <= cap; ++attempt) {
        std::this_thread::sleep_for(policy.backoff_before(attempt));
        if (limiter) limiter->acquire();
        ++attempts;
        last = http_post_json(base_url, path, body, headers, policy.timeout);
        if (!is_transient(last)) break;
    }
    return last;
}

std::map<std::string, std::string> bearer_headers(const std::string& env_var) {
    std::map<std::string, std::string> h;
    if (env_var.empty()) return h;
    if (const char* token = std::getenv(env_var.c_str()); token && *token)
        h["Authorization"] = std::string("Bearer ") + token;
    return h;
}

}  // namespace cneval
