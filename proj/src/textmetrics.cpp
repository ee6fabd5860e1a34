#include "cneval/textmetrics.hpp"

#include "builtin_assets.hpp"
#include "cneval/genclient.hpp"

#include <algorithm>
#include <cctype>

namespace cneval {

namespace {

bool is_vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::size_t count_syllables(std::string_view word) {
    std::string letters;
    letters.reserve(word.size());
    for (char c : word) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::isalpha(u)) letters.push_back(static_cast<char>(std::tolower(u)));
    }
    std::size_t groups = 0;
    bool in_group = false;
    for (char c : letters) {
        const bool v = is_vowel(c);
        if (v && !in_group) ++groups;
        in_group = v;
    }
    const std::size_t n = letters.size();
    if (n > 0 && letters[n - 1] == 'e' && groups > 0) {
        const bool consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if (!consonant_le) --groups;
    }
    return std::max<std::size_t>(groups, 1);
}

TextStats text_stats(std::string_view text) {
    TextStats s;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_ws(text[i])) ++i;
        if (i >= text.size()) break;
        const std::size_t start = i;
        while (i < text.size() && !is_ws(text[i])) ++i;
        ++s.words;
        s.syllables += count_syllables(text.substr(start, i - start));
    }
    if (s.words == 0) return {};

    bool in_run = false;
    for (char c : text) {
        const bool t = is_terminator(c);
        if (t && !in_run) ++s.sentences;
        in_run = t;
    }
    s.sentences = std::max<std::size_t>(s.sentences, 1);
    return s;
}

namespace {

void require_defined(const TextStats& stats, const char* what) {
    if (stats.words == 0 || stats.sentences == 0)
        throw UsageError(std::string(what) + ": undefined for zero words or zero sentences");
}

}  // namespace

double flesch_reading_ease(const TextStats& stats) {
    require_defined(stats, "flesch_reading_ease");
    const double w = static_cast<double>(stats.words);
    return 206.835 - 1.015 * (w / static_cast<double>(stats.sentences)) -
           84.6 * (static_cast<double>(stats.syllables) / w);
}

double fk_grade_level(const TextStats& stats) {
    require_defined(stats, "fk_grade_level");
    const double w = static_cast<double>(stats.words);
    return 0.39 * (w / static_cast<double>(stats.sentences)) + 11.8 * (static_cast<double>(stats.syllables) / w) -
           15.59;
}

ReadabilityScores readability(const TextStats& stats) { return {flesch_reading_ease(stats), fk_grade_level(stats)}; }

// ---------------------------------------------------------------------------
// Refusals

RefusalRuleSet::RefusalRuleSet(std::vector<std::string> patterns) : patterns_(std::move(patterns)) {
    if (patterns_.empty()) throw UsageError("refusal rule set must not be empty");
    compiled_.reserve(patterns_.size());
    for (std::size_t i = 0; i < patterns_.size(); ++i) {
        try {
            compiled_.emplace_back(patterns_[i], std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
        } catch (const std::regex_error& e) {
            throw DataError("refusal pattern " + std::to_string(i) + " does not compile: " + e.what());
        }
    }
}

RefusalRuleSet RefusalRuleSet::parse(std::string_view content) {
    std::vector<std::string> patterns;
    for (const auto& line : split_lines(content)) {
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        patterns.emplace_back(t);
    }
    if (patterns.empty()) throw DataError("refusal rules: no patterns");
    return RefusalRuleSet(std::move(patterns));
}

const RefusalRuleSet& RefusalRuleSet::builtin() {
    static const RefusalRuleSet rules = parse(assets::kRefusalRules);
    return rules;
}

RefusalRuleSet RefusalRuleSet::load(const fs::path& path) {
    try {
        return parse(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

bool RefusalRuleSet::matches(std::size_t index, const std::string& text) const {
    return std::regex_search(text, compiled_.at(index));
}

std::string RefusalRuleSet::checksum() const {
    std::string joined;
    for (const auto& p : patterns_) {
        joined += p;
        joined += '\n';
    }
    return sha256_hex(joined);
}

RefusalMatch detect_refusal(std::string_view text, const RefusalRuleSet& rules) {
    const std::string owned(text);
    for (std::size_t i = 0; i < rules.size(); ++i)
        if (rules.matches(i, owned)) return {true, i};
    return {};
}

double refusal_rate(std::span<const GenerationRecord> records, const RefusalRuleSet& rules) {
    if (records.empty()) throw UsageError("refusal_rate: no records");
    std::size_t refused = 0;
    for (const auto& g : records)
        if (g.status == GenerationStatus::Completed && detect_refusal(g.response_text, rules).refused) ++refused;
    return 100.0 * static_cast<double>(refused) / static_cast<double>(records.size());
}

}  // namespace cneval
