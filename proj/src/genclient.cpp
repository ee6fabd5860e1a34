#include "cneval/genclient.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>

namespace cneval {

using nlohmann::json;

std::string to_wire(const ChatRequest& req) {
    json j;
    j["model"] = req.model;
    j["messages"] = json::array();
    for (const auto& m : req.messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
    j["temperature"] = req.temperature;
    j["max_tokens"] = req.max_tokens;
    return j.dump();
}

std::string parse_chat_response(std::string_view body) {
    try {
        json j = json::parse(body);
        const auto& choices = j.at("choices");
        if (!choices.is_array() || choices.empty()) throw DataError("chat response has no choices");
        const auto& content = choices.at(0).at("message").at("content");
        if (content.is_null()) return {};
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed chat response: ") + e.what());
    }
}

std::vector<ChatMessage> chat_messages(const PromptBundle& bundle, SystemPlacement placement) {
    std::vector<ChatMessage> msgs;
    if (bundle.system_instruction && placement == SystemPlacement::SystemRole) {
        msgs.push_back({"system", *bundle.system_instruction});
        msgs.push_back({"user", bundle.user_message});
    } else if (bundle.system_instruction) {
        msgs.push_back({"user", *bundle.system_instruction + "\n\n" + bundle.user_message});
    } else {
        msgs.push_back({"user", bundle.user_message});
    }
    return msgs;
}

HttpChatClient::HttpChatClient(std::string endpoint, std::string api_key_env, RetryPolicy policy,
                               std::shared_ptr<RateLimiter> limiter)
    : endpoint_(std::move(endpoint)),
      api_key_env_(std::move(api_key_env)),
      policy_(policy),
      limiter_(std::move(limiter)) {}

ChatResult HttpChatClient::complete(const ChatRequest& req) {
    ChatResult out;
    HttpResponse resp = post_with_retry(endpoint_, "/chat/completions", to_wire(req), bearer_headers(api_key_env_),
                                        policy_, limiter_.get(), out.attempts);
    if (is_transient(resp)) {
        out.outcome = ChatOutcome::TransientExhausted;
        out.error = resp.transport_error.empty() ? "HTTP " + std::to_string(resp.status) : resp.transport_error;
        return out;
    }
    if (resp.status < 200 || resp.status >= 300) {
        out.outcome = ChatOutcome::PermanentError;
        out.error = "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
        return out;
    }
    try {
        out.content = parse_chat_response(resp.body);
    } catch (const DataError& e) {
        out.outcome = ChatOutcome::PermanentError;
        out.error = e.what();
        return out;
    }
    if (trim(out.content).empty()) {
        out.outcome = ChatOutcome::EmptyResponse;
        out.error = "empty response";
    }
    return out;
}

std::string_view to_string(GenerationStatus s) {
    return s == GenerationStatus::Completed ? "completed" : "failed";
}

std::string to_store_line(const GenerationRecord& g) {
    json j;
    j["cache_key"] = g.cache_key;
    j["record_id"] = g.record_id;
    j["dataset"] = to_string(g.dataset);
    j["model"] = g.model;
    j["strategy"] = to_string(g.strategy);
    j["status"] = to_string(g.status);
    j["response_text"] = g.response_text;
    j["failure"] = g.failure;
    j["error"] = g.error;
    j["attempt_count"] = g.attempt_count;
    j["created_at"] = g.created_at;
    return j.dump();
}

GenerationRecord generation_from_store_line(std::string_view line) {
    try {
        json j = json::parse(line);
        GenerationRecord g;
        g.cache_key = j.at("cache_key").get<std::string>();
        g.record_id = j.at("record_id").get<std::string>();
        g.dataset = parse_dataset(j.at("dataset").get<std::string>());
        g.model = j.at("model").get<std::string>();
        auto strategy = parse_strategy(j.at("strategy").get<std::string>());
        if (!strategy) throw DataError("unknown strategy in generation row");
        g.strategy = *strategy;
        const auto status = j.at("status").get<std::string>();
        if (status == "completed") {
            g.status = GenerationStatus::Completed;
        } else if (status == "failed") {
            g.status = GenerationStatus::Failed;
        } else {
            throw DataError("unknown status '" + status + "'");
        }
        g.response_text = j.at("response_text").get<std::string>();
        g.failure = j.value("failure", std::string());
        g.error = j.value("error", std::string());
        g.attempt_count = j.at("attempt_count").get<int>();
        g.created_at = j.value("created_at", std::string());
        return g;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad generation row: ") + e.what());
    }
}

std::string make_cache_key(Dataset dataset, std::string_view record_id, std::string_view model, Strategy strategy,
                           std::string_view prompt_checksum, double temperature) {
    json j = json::array({std::string(to_string(dataset)) + ":" + std::string(record_id), model,
                          to_string(strategy), prompt_checksum, format_decimal(temperature, 4)});
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Store

GenerationStore::GenerationStore(fs::path dir)
    : dir_(std::move(dir)), log_path_(dir_ / "generations.jsonl"), index_path_(dir_ / "generations.idx") {
    open();
}

void GenerationStore::open() {
    fs::create_directories(dir_);
    if (!fs::exists(log_path_)) std::ofstream(log_path_, std::ios::binary).flush();

    std::string content = read_file(log_path_);
    if (!content.empty() && content.back() != '\n') {
        // Interrupted append: drop the partial tail line.
        const auto keep = content.rfind('\n');
        content.resize(keep == std::string::npos ? 0 : keep + 1);
        fs::resize_file(log_path_, content.size());
    }
    log_bytes_ = content.size();

    std::vector<std::size_t> offsets;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        const auto nl = content.find('\n', pos);
        ++line_no;
        std::string_view line(content.data() + pos, nl - pos);
        if (!trim(line).empty()) {
            try {
                rows_.push_back(generation_from_store_line(line));
            } catch (const DataError& e) {
                throw DataError(log_path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
            offsets.push_back(pos);
            latest_[rows_.back().cache_key] = rows_.size() - 1;
        }
        pos = nl + 1;
    }

    bool index_ok = fs::exists(index_path_);
    if (index_ok) {
        const auto lines = split_lines(read_file(index_path_));
        index_ok = lines.size() == rows_.size();
        for (std::size_t i = 0; index_ok && i < lines.size(); ++i) {
            const std::string expected = rows_[i].cache_key + '\t' + std::to_string(offsets[i]) + '\t' +
                                         std::string(to_string(rows_[i].status));
            index_ok = lines[i] == expected;
        }
    }
    if (!index_ok) {
        std::string idx;
        for (std::size_t i = 0; i < rows_.size(); ++i)
            idx += rows_[i].cache_key + '\t' + std::to_string(offsets[i]) + '\t' +
                   std::string(to_string(rows_[i].status)) + '\n';
        write_file_atomic(index_path_, idx);
    }
}

std::optional<GenerationRecord> GenerationStore::find(const std::string& cache_key) const {
    std::lock_guard lock(mu_);
    auto it = latest_.find(cache_key);
    if (it == latest_.end()) return std::nullopt;
    return rows_[it->second];
}

void GenerationStore::append(const GenerationRecord& g) {
    std::lock_guard lock(mu_);
    const std::string line = to_store_line(g) + '\n';
    {
        std::ofstream log(log_path_, std::ios::binary | std::ios::app);
        if (!log) throw std::runtime_error("generation store not writable: " + log_path_.string());
        log.write(line.data(), static_cast<std::streamsize>(line.size()));
        log.flush();
        if (!log) throw std::runtime_error("append failed: " + log_path_.string());
    }
    {
        std::ofstream idx(index_path_, std::ios::binary | std::ios::app);
        if (!idx) throw std::runtime_error("generation index not writable: " + index_path_.string());
        idx << g.cache_key << '\t' << log_bytes_ << '\t' << to_string(g.status) << '\n';
    }
    log_bytes_ += line.size();
    rows_.push_back(g);
    latest_[g.cache_key] = rows_.size() - 1;
}

std::vector<GenerationRecord> GenerationStore::latest() const {
    std::lock_guard lock(mu_);
    std::vector<std::size_t> picks;
    picks.reserve(latest_.size());
    for (const auto& [key, idx] : latest_) picks.push_back(idx);
    std::sort(picks.begin(), picks.end());
    std::vector<GenerationRecord> out;
    out.reserve(picks.size());
    for (auto i : picks) out.push_back(rows_[i]);
    return out;
}

std::size_t GenerationStore::size() const {
    std::lock_guard lock(mu_);
    return rows_.size();
}

std::string GenerationStore::content_digest() const {
    std::lock_guard lock(mu_);
    std::string acc;
    for (const auto& [key, idx] : latest_) {
        const auto& g = rows_[idx];
        json j = json::array({key, to_string(g.status), g.failure, g.response_text, g.attempt_count});
        acc += j.dump();
        acc += '\n';
    }
    return sha256_hex(acc);
}

// ---------------------------------------------------------------------------
// Generation

namespace {

GenerationRecord make_row(const HateRecord& record, const ModelSpec& spec, Strategy strategy, std::string cache_key,
                          const ChatResult& result) {
    GenerationRecord g;
    g.record_id = record.id;
    g.dataset = record.dataset;
    g.model = spec.name;
    g.strategy = strategy;
    g.cache_key = std::move(cache_key);
    g.attempt_count = std::max(1, result.attempts);
    g.created_at = utc_timestamp();
    switch (result.outcome) {
        case ChatOutcome::Ok:
            g.status = GenerationStatus::Completed;
            g.response_text = result.content;
            break;
        case ChatOutcome::EmptyResponse:
            g.status = GenerationStatus::Failed;
            g.failure = "empty_response";
            g.error = result.error;
            break;
        case ChatOutcome::PermanentError:
            g.status = GenerationStatus::Failed;
            g.failure = "permanent";
            g.error = result.error;
            break;
        case ChatOutcome::TransientExhausted:
            g.status = GenerationStatus::Failed;
            g.failure = "transient_exhausted";
            g.error = result.error;
            break;
    }
    return g;
}

ChatRequest make_request(const PromptBundle& bundle, const ModelSpec& spec) {
    ChatRequest req;
    req.model = spec.name;
    req.messages = chat_messages(bundle, spec.system_placement);
    req.temperature = spec.temperature;
    req.max_tokens = spec.max_output_tokens;
    return req;
}

}  // namespace

std::string key_for(const PromptBundle& bundle, const ModelSpec& spec, const HateRecord& record) {
    return make_cache_key(record.dataset, record.id, spec.name, bundle.strategy, prompt_checksum(bundle),
                          spec.temperature);
}

GenerationRecord generate_one(const PromptBundle& bundle, const ModelSpec& spec, const HateRecord& record,
                              ChatClient& client, GenerationStore& store) {
    std::string key = key_for(bundle, spec, record);
    if (auto cached = store.find(key)) return *cached;
    GenerationRecord row = make_row(record, spec, bundle.strategy, std::move(key), client.complete(make_request(bundle, spec)));
    store.append(row);
    return row;
}

BatchSummary run_generation_batch(std::span<const HateRecord> records, std::span<const Strategy> strategies,
                                  std::span<const ModelSpec> specs, GenerationStore& store,
                                  const PromptAssets& assets, const ChatClientFactory& make_client,
                                  const BatchOptions& options) {
    struct Task {
        const HateRecord* record;
        PromptBundle bundle;
        std::string key;
    };

    BatchSummary summary;
    std::vector<std::pair<const ModelSpec*, std::vector<Task>>> work;
    std::size_t pending_total = 0;
    for (const auto& spec : specs) {
        std::vector<Task> pending;
        for (const auto& record : records) {
            for (Strategy strategy : strategies) {
                PromptBundle bundle = build_prompt(strategy, record, spec.family, assets, options.prompt);
                std::string key = key_for(bundle, spec, record);
                if (auto existing = store.find(key)) {
                    if (existing->status == GenerationStatus::Completed) {
                        ++summary.cached;
                        continue;
                    }
                    if (!options.retry_failed) {
                        ++summary.failed;
                        continue;
                    }
                }
                pending.push_back({&record, std::move(bundle), std::move(key)});
            }
        }
        pending_total += pending.size();
        work.emplace_back(&spec, std::move(pending));
    }
    if (options.offline && pending_total > 0)
        throw UsageError("offline mode: " + std::to_string(pending_total) +
                         " generation requests are not cached and network access is forbidden");

    for (auto& [spec, pending] : work) {
        if (pending.empty()) continue;
        auto client = make_client(*spec);
        std::atomic<std::size_t> completed{0};
        std::atomic<std::size_t> failed{0};
        parallel_for(pending.size(), spec->max_in_flight, [&](std::size_t i) {
            Task& t = pending[i];
            ChatResult result = client->complete(make_request(t.bundle, *spec));
            GenerationRecord row = make_row(*t.record, *spec, t.bundle.strategy, t.key, result);
            store.append(row);
            if (row.status == GenerationStatus::Completed) {
                ++completed;
            } else {
                ++failed;
            }
        });
        summary.completed += completed;
        summary.failed += failed;
    }
    return summary;
}

ChatClientFactory http_client_factory(RetryPolicy policy, std::shared_ptr<RateLimiterRegistry> limiters) {
    return [policy, limiters](const ModelSpec& spec) -> std::shared_ptr<ChatClient> {
        return std::make_shared<HttpChatClient>(spec.endpoint, spec.api_key_env, policy,
                                                limiters->for_endpoint(spec.endpoint, spec.rate_limit));
    };
}

}  // namespace cneval
