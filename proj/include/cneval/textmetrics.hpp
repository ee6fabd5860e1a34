#pragma once

// Verbosity, readability and refusal signals computed from raw text.

#include "cneval/common.hpp"

#include <cstddef>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cneval {

struct GenerationRecord;

struct TextStats {
    std::size_t words = 0;
    std::size_t sentences = 0;
    std::size_t syllables = 0;

    bool operator==(const TextStats&) const = default;
};

struct ReadabilityScores {
    double reading_ease = 0.0;
    double grade_level = 0.0;
};

/// Syllables in one whitespace-delimited token: non-letters are stripped,
/// maximal runs of a/e/i/o/u/y are counted, a final silent "e" is dropped
/// unless the word ends in consonant + "le", and the result floors at 1.
std::size_t count_syllables(std::string_view word);

/// words: whitespace-delimited tokens. sentences: maximal runs of '.', '!'
/// or '?', at least 1 for any text with a word. Empty text yields zeros.
TextStats text_stats(std::string_view text);

/// 206.835 - 1.015 (W/S) - 84.6 (Y/W). Throws UsageError for W = 0 or S = 0.
double flesch_reading_ease(const TextStats& stats);
/// 0.39 (W/S) + 11.8 (Y/W) - 15.59. Throws UsageError for W = 0 or S = 0.
double fk_grade_level(const TextStats& stats);
ReadabilityScores readability(const TextStats& stats);

class RefusalRuleSet {
public:
    /// The eleven shipped refusal patterns.
    static const RefusalRuleSet& builtin();
    /// One pattern per line; blank lines and '#' comments are skipped.
    static RefusalRuleSet parse(std::string_view content);
    static RefusalRuleSet load(const fs::path& path);

    explicit RefusalRuleSet(std::vector<std::string> patterns);

    std::span<const std::string> patterns() const { return patterns_; }
    std::size_t size() const { return patterns_.size(); }
    bool matches(std::size_t index, const std::string& text) const;
    std::string checksum() const;

private:
    std::vector<std::string> patterns_;
    std::vector<std::regex> compiled_;
};

struct RefusalMatch {
    bool refused = false;
    std::optional<std::size_t> matched_pattern;
};

/// Case-insensitive search for any pattern anywhere in text; reports the
/// first matching pattern in rule order.
RefusalMatch detect_refusal(std::string_view text, const RefusalRuleSet& rules);

/// 100 * refused / |records|. Failed generations count as attempted
/// responses that did not refuse. Throws UsageError on empty input.
double refusal_rate(std::span<const GenerationRecord> records, const RefusalRuleSet& rules);

}  // namespace cneval
