#pragma once

// Counter-narrative generation against chat-completion endpoints, with an
// append-only store that doubles as the request cache.

#include "cneval/common.hpp"
#include "cneval/corpus.hpp"
#include "cneval/http.hpp"
#include "cneval/prompting.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cneval {

/// Where a family's system instruction goes on the wire.
enum class SystemPlacement {
    SystemRole,  ///< separate {"role": "system"} message
    UserPrefix,  ///< prepended to the user turn, separated by a blank line
};

struct ModelSpec {
    std::string name;
    std::string endpoint;  ///< base URL; requests go to <endpoint>/chat/completions
    double temperature = 0.3;
    int max_output_tokens = 512;
    double rate_limit = 1.0;  ///< requests per second, > 0
    ModelFamily family = ModelFamily::Other;
    std::string api_key_env;  ///< environment variable holding the bearer token
    std::size_t max_in_flight = 1;
    SystemPlacement system_placement = SystemPlacement::SystemRole;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 512;
};

/// `std::string to_wire(req)` / `parse_chat_response(body)` implement the
/// de-facto chat-completion JSON format.
std::string to_wire(const ChatRequest& req);
/// Returns choices[0].message.content; throws DataError on malformed bodies.
std::string parse_chat_response(std::string_view body);

std::vector<ChatMessage> chat_messages(const PromptBundle& bundle, SystemPlacement placement);

enum class ChatOutcome { Ok, EmptyResponse, PermanentError, TransientExhausted };

struct ChatResult {
    ChatOutcome outcome = ChatOutcome::Ok;
    std::string content;
    std::string error;
    int attempts = 0;
};

/// A chat-completion backend. Implementations own retries and rate limits.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual ChatResult complete(const ChatRequest& req) = 0;
};

class HttpChatClient final : public ChatClient {
public:
    HttpChatClient(std::string endpoint, std::string api_key_env, RetryPolicy policy,
                   std::shared_ptr<RateLimiter> limiter);
    ChatResult complete(const ChatRequest& req) override;

private:
    std::string endpoint_;
    std::string api_key_env_;
    RetryPolicy policy_;
    std::shared_ptr<RateLimiter> limiter_;
};

enum class GenerationStatus { Completed, Failed };

std::string_view to_string(GenerationStatus s);

struct GenerationRecord {
    std::string record_id;
    Dataset dataset = Dataset::MtConan;
    std::string model;
    Strategy strategy = Strategy::Vanilla;
    GenerationStatus status = GenerationStatus::Completed;
    std::string response_text;  ///< verbatim, including any quotes the model emitted
    std::string failure;        ///< "", "permanent", "empty_response" or "transient_exhausted"
    std::string error;          ///< diagnostic detail for failed rows
    std::string created_at;
    std::string cache_key;
    int attempt_count = 1;

    bool operator==(const GenerationRecord&) const = default;
};

std::string to_store_line(const GenerationRecord& g);
GenerationRecord generation_from_store_line(std::string_view line);

/// Hash of (dataset-qualified record id, model, strategy, prompt checksum, temperature).
std::string make_cache_key(Dataset dataset, std::string_view record_id, std::string_view model, Strategy strategy,
                           std::string_view prompt_checksum, double temperature);

/// Cache key of one (record, strategy, model) request.
std::string key_for(const PromptBundle& bundle, const ModelSpec& spec, const HateRecord& record);

/// Append-only generation log plus a sidecar index (cache_key, offset, status).
/// The log is the source of truth; the index is rebuilt whenever it does not
/// agree with the log. A trailing partial line left by an interrupted writer
/// is dropped on open. Appends are serialized internally.
class GenerationStore {
public:
    explicit GenerationStore(fs::path dir);

    const fs::path& log_path() const { return log_path_; }
    const fs::path& index_path() const { return index_path_; }

    std::optional<GenerationRecord> find(const std::string& cache_key) const;
    void append(const GenerationRecord& g);
    /// Latest row per cache key, in first-appearance order.
    std::vector<GenerationRecord> latest() const;
    std::size_t size() const;

    /// Digest over the logical content (status, text, attempts per key),
    /// independent of row order and timestamps.
    std::string content_digest() const;

private:
    void open();
    void rebuild_index();

    fs::path dir_;
    fs::path log_path_;
    fs::path index_path_;
    mutable std::mutex mu_;
    std::vector<GenerationRecord> rows_;
    std::map<std::string, std::size_t> latest_;
    std::size_t log_bytes_ = 0;
};

/// Cached row when the key exists (no request made); otherwise issues the
/// request, persists the terminal row and returns it.
GenerationRecord generate_one(const PromptBundle& bundle, const ModelSpec& spec, const HateRecord& record,
                              ChatClient& client, GenerationStore& store);

struct BatchSummary {
    std::size_t completed = 0;  ///< newly completed in this run
    std::size_t failed = 0;     ///< triples whose terminal row is a failure
    std::size_t cached = 0;     ///< completed rows served from the store

    std::size_t total() const { return completed + failed + cached; }
};

struct BatchOptions {
    PromptOptions prompt;
    /// Re-attempt triples whose stored terminal row is a failure.
    bool retry_failed = false;
    /// When set, no requests are made and any uncached triple is an error.
    bool offline = false;
};

using ChatClientFactory = std::function<std::shared_ptr<ChatClient>(const ModelSpec&)>;

/// Runs every (record, strategy, spec) triple to a terminal row. Requests run
/// on up to spec.max_in_flight workers per model; store appends are serialized.
BatchSummary run_generation_batch(std::span<const HateRecord> records, std::span<const Strategy> strategies,
                                  std::span<const ModelSpec> specs, GenerationStore& store,
                                  const PromptAssets& assets, const ChatClientFactory& make_client,
                                  const BatchOptions& options = {});

/// Factory backed by HttpChatClient with shared per-endpoint rate limiters.
ChatClientFactory http_client_factory(RetryPolicy policy, std::shared_ptr<RateLimiterRegistry> limiters);

}  // namespace cneval
