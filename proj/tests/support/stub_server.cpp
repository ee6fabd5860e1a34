#include "stub_server.hpp"

#include "httplib.h"

#include "cneval/affect.hpp"

#include <stdexcept>

namespace cneval::testing {

using nlohmann::json;

struct StubServer::Impl {
    httplib::Server server;
};

StubServer::StubServer() : impl_(std::make_unique<Impl>()), chat_(default_chat), classify_(default_classify) {
    auto route = [this](const std::string& path, bool chat) {
        impl_->server.Post(path, [this, path, chat](const httplib::Request& req, httplib::Response& res) {
            json body = json::parse(req.body, nullptr, false);
            StubHandler h;
            {
                std::lock_guard lock(mu_);
                arrivals_.push_back({path, std::chrono::steady_clock::now(), body});
                h = chat ? chat_ : classify_;
            }
            if (int d = delay_ms_.load(); d > 0) std::this_thread::sleep_for(std::chrono::milliseconds(d));
            StubReply reply = body.is_discarded() ? StubReply{400, "{\"error\":\"bad json\"}"} : h(body);
            res.status = reply.status;
            res.set_content(reply.body, "application/json");
        });
    };
    route("/chat/completions", true);
    route("/v1/chat/completions", true);
    route("/classify", false);
    port_ = impl_->server.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw std::runtime_error("stub server could not bind");
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

StubServer::~StubServer() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::string StubServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void StubServer::on_chat(StubHandler h) {
    std::lock_guard lock(mu_);
    chat_ = std::move(h);
}

void StubServer::on_classify(StubHandler h) {
    std::lock_guard lock(mu_);
    classify_ = std::move(h);
}

std::vector<Arrival> StubServer::arrivals() const {
    std::lock_guard lock(mu_);
    return arrivals_;
}

std::size_t StubServer::count(const std::string& path) const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& a : arrivals_)
        if (a.path == path) ++n;
    return n;
}

void StubServer::clear() {
    std::lock_guard lock(mu_);
    arrivals_.clear();
}

std::string chat_body(const std::string& content) {
    json j;
    j["choices"] = json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}});
    return j.dump();
}

std::string classify_body(const std::vector<std::pair<std::string, double>>& verdicts) {
    json arr = json::array();
    for (const auto& [label, score] : verdicts) arr.push_back({{"label", label}, {"score", score}});
    return json{{"verdicts", arr}}.dump();
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

StubReply default_chat(const json& request) {
    const auto& messages = request.at("messages");
    const std::string last = messages.back().at("content").get<std::string>();
    const std::uint64_t h = fnv1a(last);
    if (last.find("sentiment:") != std::string::npos || last.find("Sentiment:") != std::string::npos) {
        const auto labels = all_sentiment_labels();
        return {200, chat_body("sentiment: " + std::string(to_string(labels[h % labels.size()])))};
    }
    if (last.find("emotion:") != std::string::npos || last.find("Emotion:") != std::string::npos) {
        const auto labels = all_emotion_labels();
        return {200, chat_body("emotion: " + std::string(to_string(labels[h % labels.size()])))};
    }
    static const char* kOpeners[] = {"Everyone deserves respect and dignity.",
                                     "Generalising about a whole group is unfair.",
                                     "People are individuals, not stereotypes.",
                                     "Hate does not solve anything; dialogue does."};
    std::string reply = kOpeners[h % 4];
    const std::size_t extra = h % 7;
    for (std::size_t i = 0; i < extra; ++i) reply += " Let us talk about facts instead of fears.";
    return {200, chat_body(reply)};
}

StubReply default_classify(const json& request) {
    const auto task = request.at("task").get<std::string>();
    std::vector<std::pair<std::string, double>> out;
    for (const auto& t : request.at("texts")) {
        const auto h = fnv1a(t.get<std::string>());
        const double score = 0.5 + static_cast<double>(h % 50) / 100.0;
        if (task == "sentiment") {
            const auto labels = all_sentiment_labels();
            out.emplace_back(std::string(to_string(labels[h % labels.size()])), score);
        } else if (task == "emotion") {
            const auto labels = all_emotion_labels();
            out.emplace_back(std::string(to_string(labels[(h >> 8) % labels.size()])), score);
        } else {
            out.emplace_back(h % 5 == 0 ? "hate" : "not_hate", score);
        }
    }
    return {200, classify_body(out)};
}

}  // namespace cneval::testing
