#pragma once

// Sentiment and emotion verdicts from three backend kinds: transformer
// classifier endpoints, an LLM judge over chat completion, and canned files.

#include "cneval/common.hpp"
#include "cneval/genclient.hpp"
#include "cneval/http.hpp"
#include "cneval/prompting.hpp"

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cneval {

enum class SentimentLabel { VeryNegative, Negative, Neutral, Positive, VeryPositive };
inline constexpr std::size_t kSentimentLabelCount = 5;

/// The 28 GoEmotions categories, in the order the taxonomy is usually listed.
enum class EmotionLabel {
    Neutral, Admiration, Amusement, Anger, Annoyance, Approval, Caring, Confusion, Curiosity, Desire,
    Disappointment, Disapproval, Disgust, Embarrassment, Excitement, Fear, Gratitude, Grief, Joy, Love,
    Nervousness, Optimism, Pride, Realization, Relief, Remorse, Sadness, Surprise
};
inline constexpr std::size_t kEmotionLabelCount = 28;

std::string_view to_string(SentimentLabel l);
std::string_view to_string(EmotionLabel l);
std::optional<SentimentLabel> parse_sentiment_label(std::string_view s);
std::optional<EmotionLabel> parse_emotion_label(std::string_view s);
std::span<const SentimentLabel> all_sentiment_labels();
std::span<const EmotionLabel> all_emotion_labels();

enum class Task { Sentiment, Emotion, Hate };
std::string_view to_string(Task t);
std::optional<Task> parse_task(std::string_view s);

using Label = std::variant<SentimentLabel, EmotionLabel>;
std::string label_name(const Label& l);

enum class BackendKind { TransformerEndpoint, LlmJudge, Canned };
std::string_view to_string(BackendKind k);

enum class VerdictStatus {
    Resolved,    ///< label present
    Unresolved,  ///< judge never produced an allowed label
    Error,       ///< backend failure after retries, or missing canned entry
};
std::string_view to_string(VerdictStatus s);

/// How a judge verdict was reached.
enum class Resolution { Direct, Mapped };

struct Verdict {
    std::string subject_id;
    Task task = Task::Sentiment;
    VerdictStatus status = VerdictStatus::Resolved;
    std::optional<Label> label;
    std::optional<double> confidence;
    BackendKind backend = BackendKind::Canned;
    std::string raw_output;  ///< verbatim, for audit
    Resolution resolution = Resolution::Direct;
    int attempts = 1;
    std::string note;

    bool operator==(const Verdict&) const = default;
};

struct TextItem {
    std::string id;
    std::string text;
};

// ---------------------------------------------------------------------------
// Wire protocol shared with the classifier serving shim.
//   request:  {"task": "sentiment"|"emotion"|"hate", "texts": [string]}
//   response: {"verdicts": [{"label": string, "score": number,
//                            "scores": {label: number}?}]}   (order-aligned)

struct WireVerdict {
    std::string label;
    std::optional<double> score;
    std::map<std::string, double> scores;  ///< optional full class distribution
};

std::string make_classify_request(Task task, std::span<const std::string> texts);
/// Throws DataError for malformed bodies or a verdict count != expected.
std::vector<WireVerdict> parse_classify_response(std::string_view body, std::size_t expected);

/// Top-scoring class of a wire verdict: the `scores` argmax when present
/// (ties go to the lexicographically smaller label), otherwise label/score.
std::pair<std::string, std::optional<double>> top_class(const WireVerdict& v);

struct EndpointSpec {
    std::string url;  ///< base URL; requests go to <url>/classify
    std::string api_key_env;
    std::size_t batch_size = 32;
    std::size_t max_in_flight = 1;
    double rate_limit = 10.0;
    RetryPolicy retry;
};

/// Batched classifier client for the wire protocol.
class ClassifierEndpoint {
public:
    explicit ClassifierEndpoint(EndpointSpec spec, std::shared_ptr<RateLimiter> limiter = nullptr);

    /// One entry per text, order-aligned. A chunk that fails after retries
    /// yields error strings for its items instead of verdicts.
    std::vector<std::variant<WireVerdict, std::string>> classify(Task task, std::span<const std::string> texts);

private:
    EndpointSpec spec_;
    std::shared_ptr<RateLimiter> limiter_;
};

/// Pre-recorded verdicts, one tab-separated line per
/// (subject_id, task, label, score). Score may be empty or "-".
class CannedVerdicts {
public:
    struct Entry {
        std::string label;
        std::optional<double> score;
    };

    static CannedVerdicts parse(std::string_view content);
    static CannedVerdicts load(const fs::path& path);

    std::optional<Entry> find(const std::string& subject_id, Task task) const;
    std::size_t size() const { return entries_.size(); }
    std::string checksum() const { return checksum_; }

    static std::string format_line(const std::string& subject_id, Task task, const std::string& label,
                                   std::optional<double> score);

private:
    std::map<std::pair<std::string, Task>, Entry> entries_;
    std::string checksum_;
};

// ---------------------------------------------------------------------------
// Judge output parsing and off-list mapping

enum class ParseFailure { None, Empty, MultiLine, WrongPrefix, ListOutput, Punctuation, NotInLabelSet };
std::string_view to_string(ParseFailure f);

struct JudgeParse {
    std::optional<Label> label;
    ParseFailure failure = ParseFailure::None;
    /// The single candidate term after the prefix, lowercased, when the line
    /// had the right shape; feeds the off-list mapping stage.
    std::optional<std::string> term;

    bool ok() const { return label.has_value(); }
};

/// Accepts exactly one line "<task>: <label>" after trimming, case-insensitive,
/// no trailing punctuation, label from the task's allowed set.
JudgeParse parse_judge_line(std::string_view raw, Task task);

class EmotionMapping {
public:
    static const EmotionMapping& builtin();
    static EmotionMapping parse(std::string_view content);
    static EmotionMapping load(const fs::path& path);

    explicit EmotionMapping(std::map<std::string, EmotionLabel> table, std::string version = {});

    const std::map<std::string, EmotionLabel>& table() const { return table_; }
    std::string checksum() const;

private:
    std::map<std::string, EmotionLabel> table_;
    std::string version_;
};

/// Canonical labels map to themselves; declared off-list terms map per the
/// table; anything else is unmapped (nullopt).
std::optional<EmotionLabel> map_offlist_emotion(std::string_view term, const EmotionMapping& mapping);

// ---------------------------------------------------------------------------
// Backends

class AffectBackend {
public:
    virtual ~AffectBackend() = default;
    virtual BackendKind kind() const = 0;
    /// One verdict per item, order-aligned. Never throws for per-item failures.
    virtual std::vector<Verdict> classify(std::span<const TextItem> items, Task task) = 0;
};

class TransformerBackend final : public AffectBackend {
public:
    explicit TransformerBackend(std::shared_ptr<ClassifierEndpoint> endpoint);
    BackendKind kind() const override { return BackendKind::TransformerEndpoint; }
    std::vector<Verdict> classify(std::span<const TextItem> items, Task task) override;

private:
    std::shared_ptr<ClassifierEndpoint> endpoint_;
};

class CannedBackend final : public AffectBackend {
public:
    explicit CannedBackend(std::shared_ptr<const CannedVerdicts> verdicts);
    BackendKind kind() const override { return BackendKind::Canned; }
    std::vector<Verdict> classify(std::span<const TextItem> items, Task task) override;

private:
    std::shared_ptr<const CannedVerdicts> verdicts_;
};

struct JudgeOptions {
    std::string model;
    double temperature = 0.0;
    int max_tokens = 32;
    int retries = 3;  ///< re-asks after the first malformed answer
    std::size_t max_in_flight = 1;
};

/// LLM judge: prompts with the judge templates, parses strictly, re-asks
/// with a format reminder up to `retries` times, then tries the off-list
/// mapping on the collected answers, and finally marks the item unresolved.
class JudgeBackend final : public AffectBackend {
public:
    JudgeBackend(std::shared_ptr<ChatClient> client, JudgeOptions options,
                 const PromptAssets& assets = PromptAssets::builtin(),
                 const EmotionMapping& mapping = EmotionMapping::builtin());
    BackendKind kind() const override { return BackendKind::LlmJudge; }
    std::vector<Verdict> classify(std::span<const TextItem> items, Task task) override;

    Verdict judge_one(const TextItem& item, Task task);

private:
    std::shared_ptr<ChatClient> client_;
    JudgeOptions options_;
    PromptAssets assets_;
    EmotionMapping mapping_;
};

/// Message appended after a malformed judge answer.
std::string judge_steering_message(Task task);

std::vector<Verdict> classify_sentiment_batch(std::span<const TextItem> items, AffectBackend& backend);
std::vector<Verdict> classify_emotion_batch(std::span<const TextItem> items, AffectBackend& backend);

std::string to_store_line(const Verdict& v);
Verdict verdict_from_store_line(std::string_view line);

}  // namespace cneval
