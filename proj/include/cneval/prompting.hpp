#pragma once

// Prompt construction for counter-narrative generation and for the LLM judge.

#include "cneval/common.hpp"
#include "cneval/corpus.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace cneval {

enum class Strategy { Vanilla, NgoPersona, NgoEmotion };
inline constexpr std::array<Strategy, 3> kAllStrategies{Strategy::Vanilla, Strategy::NgoPersona,
                                                        Strategy::NgoEmotion};

std::string_view to_string(Strategy s);
/// Accepts "vanilla", "ngo_persona", "ngo-persona", "NGO-Emotion", ...
std::optional<Strategy> parse_strategy(std::string_view s);

enum class ModelFamily { Gpt, Llama, Cohere, Other };

std::string_view to_string(ModelFamily f);
std::optional<ModelFamily> parse_family(std::string_view s);

/// Placeholder that marks where the hate-speech text goes in a template.
inline constexpr std::string_view kEventSlot = "{event}";

struct StrategyAssets {
    std::string user_template;
    /// Families with a declared mapping. A declared family with no value
    /// receives no system instruction.
    std::map<ModelFamily, std::optional<std::string>> system_instruction;
};

/// Versioned prompt templates: one user template per strategy with the
/// per-family system instruction, plus the judge prompts.
struct PromptAssets {
    std::string version;
    std::map<Strategy, StrategyAssets> strategies;
    std::string judge_sentiment_template;
    std::string judge_emotion_template;

    static const PromptAssets& builtin();
    /// Parses a structured-text (JSON) assets file; validates that every
    /// template carries exactly one event slot.
    static PromptAssets parse(std::string_view content);
    static PromptAssets load(const fs::path& path);

    std::string to_json() const;
    std::string checksum() const;
};

struct PromptBundle {
    std::optional<std::string> system_instruction;
    std::string user_message;
    Strategy strategy = Strategy::Vanilla;
    ModelFamily family = ModelFamily::Gpt;

    bool operator==(const PromptBundle&) const = default;
};

struct PromptOptions {
    /// Doubles single quotes in the inserted text. Off by default: hate text
    /// is inserted verbatim.
    bool double_single_quotes = false;
};

/// Substitutes `text` for the single event slot of `tmpl`.
std::string fill_template(std::string_view tmpl, std::string_view text);

PromptBundle build_prompt(Strategy strategy, const HateRecord& record, ModelFamily family,
                          const PromptAssets& assets = PromptAssets::builtin(), PromptOptions options = {});

/// Stable digest of everything the model sees for one request.
std::string prompt_checksum(const PromptBundle& bundle);

}  // namespace cneval
