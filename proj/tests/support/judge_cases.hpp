#pragma once

// Judge output parsing table shared by the unit tests and the acceptance run.

#include "cneval/affect.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cneval::testing {

struct JudgeCase {
    std::string raw;
    Task task;
    std::optional<Label> label;  ///< expected label, or nullopt for a failure
    ParseFailure failure;
    std::optional<std::string> term;  ///< expected mapping term on failures
};

inline std::vector<JudgeCase> judge_cases() {
    using S = SentimentLabel;
    using E = EmotionLabel;
    using F = ParseFailure;
    const auto sen = Task::Sentiment;
    const auto emo = Task::Emotion;
    return {
        // well-formed
        {"sentiment: very negative", sen, S::VeryNegative, F::None, "very negative"},
        {"sentiment: negative", sen, S::Negative, F::None, "negative"},
        {"sentiment: neutral", sen, S::Neutral, F::None, "neutral"},
        {"sentiment: positive", sen, S::Positive, F::None, "positive"},
        {"sentiment: very positive", sen, S::VeryPositive, F::None, "very positive"},
        {"emotion: anger", emo, E::Anger, F::None, "anger"},
        {"emotion: disappointment", emo, E::Disappointment, F::None, "disappointment"},
        // case and whitespace variations
        {"Emotion: CARING", emo, E::Caring, F::None, "caring"},
        {"SENTIMENT: Very Positive", sen, S::VeryPositive, F::None, "very positive"},
        {"  emotion:   joy  ", emo, E::Joy, F::None, "joy"},
        {"sentiment :neutral", sen, S::Neutral, F::None, "neutral"},
        {"sentiment: very   negative", sen, S::VeryNegative, F::None, "very negative"},
        {"emotion: neutral\n", emo, E::Neutral, F::None, "neutral"},
        {"\temotion: Realization", emo, E::Realization, F::None, "realization"},
        // list outputs
        {"emotion: empathy, compassion", emo, std::nullopt, F::ListOutput, std::nullopt},
        {"emotion: anger and disgust", emo, std::nullopt, F::ListOutput, std::nullopt},
        {"emotion: fear/nervousness", emo, std::nullopt, F::ListOutput, std::nullopt},
        {"sentiment: positive or neutral", sen, std::nullopt, F::ListOutput, std::nullopt},
        {"emotion: sadness; grief", emo, std::nullopt, F::ListOutput, std::nullopt},
        // punctuation
        {"emotion: anger.", emo, std::nullopt, F::Punctuation, "anger"},
        {"sentiment: \"negative\"", sen, std::nullopt, F::Punctuation, "negative"},
        {"emotion: joy!", emo, std::nullopt, F::Punctuation, "joy"},
        // shape problems
        {"", emo, std::nullopt, F::Empty, std::nullopt},
        {"   \n  ", sen, std::nullopt, F::Empty, std::nullopt},
        {"emotion: anger\nexplanation: the text is hostile", emo, std::nullopt, F::MultiLine, std::nullopt},
        {"The dominant emotion is anger", emo, std::nullopt, F::WrongPrefix, std::nullopt},
        {"emotion: anger", sen, std::nullopt, F::WrongPrefix, std::nullopt},
        {"emotion anger", emo, std::nullopt, F::WrongPrefix, std::nullopt},
        // outside the label set
        {"emotion: empathy", emo, std::nullopt, F::NotInLabelSet, "empathy"},
        {"sentiment: mixed", sen, std::nullopt, F::NotInLabelSet, "mixed"},
    };
}

}  // namespace cneval::testing
