#pragma once

// In-process HTTP stub for the chat-completion and classifier endpoints.

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cneval::testing {

struct StubReply {
    int status = 200;
    std::string body;
};

struct Arrival {
    std::string path;
    std::chrono::steady_clock::time_point at;
    nlohmann::json request;
};

using StubHandler = std::function<StubReply(const nlohmann::json& request)>;

class StubServer {
public:
    StubServer();
    ~StubServer();
    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    std::string url() const;
    int port() const { return port_; }

    void on_chat(StubHandler h);
    void on_classify(StubHandler h);
    /// Delay applied before every reply.
    void set_delay(std::chrono::milliseconds d) { delay_ms_ = static_cast<int>(d.count()); }

    std::vector<Arrival> arrivals() const;
    std::size_t count(const std::string& path) const;
    void clear();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::atomic<int> delay_ms_{0};
    mutable std::mutex mu_;
    StubHandler chat_;
    StubHandler classify_;
    std::vector<Arrival> arrivals_;
    std::thread thread_;
};

/// Chat reply body carrying `content`.
std::string chat_body(const std::string& content);

/// Classifier reply with one {label, score} verdict per entry.
std::string classify_body(const std::vector<std::pair<std::string, double>>& verdicts);

/// Deterministic 64-bit FNV-1a hash, for stubs that derive answers from text.
std::uint64_t fnv1a(std::string_view s);

/// Default chat handler: a short deterministic counter-narrative for
/// generation requests and a well-formed label for judge requests.
StubReply default_chat(const nlohmann::json& request);

/// Default classifier handler: deterministic labels derived from text.
StubReply default_classify(const nlohmann::json& request);

}  // namespace cneval::testing
