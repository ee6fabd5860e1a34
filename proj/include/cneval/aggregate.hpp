#pragma once

// Deterministic reductions over the generation and verdict stores, and the
// report bundle that renders them.

#include "cneval/affect.hpp"
#include "cneval/corpus.hpp"
#include "cneval/genclient.hpp"
#include "cneval/hatescore.hpp"
#include "cneval/prompting.hpp"
#include "cneval/textmetrics.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cneval {

enum class Source { OriginalText, HumanCn, ModelResponse };
std::string_view to_string(Source s);

struct GroupKey {
    Dataset dataset = Dataset::MtConan;
    Source source = Source::OriginalText;
    std::optional<std::string> model;     ///< set iff source == ModelResponse
    std::optional<Strategy> strategy;     ///< set iff source == ModelResponse

    static GroupKey original(Dataset d) { return {d, Source::OriginalText, std::nullopt, std::nullopt}; }
    static GroupKey human_cn(Dataset d) { return {d, Source::HumanCn, std::nullopt, std::nullopt}; }
    static GroupKey response(Dataset d, std::string model, Strategy s) {
        return {d, Source::ModelResponse, std::move(model), s};
    }

    auto operator<=>(const GroupKey&) const = default;
    bool operator==(const GroupKey&) const = default;
};

/// A classifiable text with its group. Ids:
///   <dataset>/<record_id>/text, <dataset>/<record_id>/human_cn,
///   <dataset>/<record_id>/<model>/<strategy>
struct Subject {
    std::string id;
    GroupKey key;
    std::string record_id;
    std::string text;
};

std::string subject_id(Dataset d, std::string_view record_id, Source s);
std::string response_subject_id(Dataset d, std::string_view record_id, std::string_view model, Strategy s);

/// Original texts, human counter-narratives and completed responses, in
/// record order followed by generation order.
std::vector<Subject> collect_subjects(std::span<const HateRecord> records,
                                      std::span<const GenerationRecord> generations);

using KeyFn = std::function<std::optional<GroupKey>(const std::string& subject_id)>;
KeyFn key_lookup(std::span<const Subject> subjects);

// ---------------------------------------------------------------------------

struct VerbosityRow {
    GroupKey key;
    std::size_t n = 0;
    std::int64_t mean_words_tenths = 0;
};

/// Mean whitespace word count per group, half-up to one decimal. Groups
/// whose generations all failed are omitted and reported in `warnings`.
std::vector<VerbosityRow> verbosity_table(std::span<const GenerationRecord> generations,
                                          std::span<const HateRecord> originals,
                                          std::vector<std::string>* warnings = nullptr);

struct ReadabilityRow {
    GroupKey key;
    std::size_t n = 0;
    double mean_reading_ease = 0.0;
    double mean_grade_level = 0.0;
};

/// Per-text Flesch scores averaged per group. Texts without words are skipped.
std::vector<ReadabilityRow> readability_table(std::span<const Subject> subjects);

struct LabelShare {
    std::string label;
    std::size_t count = 0;
    std::int64_t share_hundredths = 0;
};

struct DistributionRow {
    GroupKey key;
    std::vector<LabelShare> shares;  ///< every label of the task, canonical order
    std::size_t n = 0;               ///< resolved verdicts (the share denominator)
    std::size_t unresolved = 0;
    std::size_t errors = 0;
};

/// Shares are 100 * count / resolved, half-up to two decimals. Throws
/// UsageError for empty input, mixed tasks, or a subject key_fn cannot place.
std::vector<DistributionRow> label_distribution(std::span<const Verdict> verdicts, const KeyFn& key_fn);

struct TopKRow {
    GroupKey key;
    std::vector<LabelShare> ranked;  ///< min(k, distinct labels) entries
};

/// Descending by share; ties go to the alphabetically smaller label.
std::vector<TopKRow> top_k_emotions(std::span<const Verdict> verdicts, const KeyFn& key_fn, std::size_t k);

struct FlowEdge {
    std::optional<EmotionLabel> source;  ///< nullopt is the "other" node
    std::optional<EmotionLabel> target;
    std::size_t count = 0;

    bool operator==(const FlowEdge&) const = default;
};

struct FlowTable {
    std::vector<FlowEdge> edges;
    std::size_t paired = 0;   ///< records with a resolved label on both sides
    std::size_t skipped = 0;  ///< records with an unresolved or error side
};

/// Pairs verdicts by subject_id. Labels outside the top_n most frequent on
/// each side collapse into "other"; top_n = 0 disables collapsing. Throws
/// DataError when an id appears on only one side or twice on one side.
FlowTable sankey_flows(std::span<const Verdict> hate_verdicts, std::span<const Verdict> response_verdicts,
                       std::size_t top_n);

struct HateRow {
    GroupKey key;
    std::size_t scored = 0;
    std::size_t hateful = 0;
    std::size_t errors = 0;
    std::int64_t rate_hundredths = 0;
};

std::vector<HateRow> hate_table(std::span<const HateVerdict> verdicts, const KeyFn& key_fn);

struct RefusalRow {
    GroupKey key;
    std::size_t attempted = 0;
    std::size_t refused = 0;
    std::size_t failed = 0;
    std::int64_t rate_hundredths = 0;
};

std::vector<RefusalRow> refusal_table(std::span<const GenerationRecord> generations, const RefusalRuleSet& rules);

// ---------------------------------------------------------------------------
// Report bundle

struct LabelTable {
    std::string backend;
    std::vector<DistributionRow> rows;
};

struct TopKTable {
    std::string backend;
    std::size_t k = 4;
    std::vector<TopKRow> rows;
};

struct FlowGroup {
    std::string backend;
    GroupKey key;  ///< the response group whose flows these are
    FlowTable flows;
};

struct ReportData {
    std::vector<VerbosityRow> verbosity;
    std::vector<ReadabilityRow> readability;
    std::vector<LabelTable> sentiment;
    std::vector<LabelTable> emotion;
    std::vector<TopKTable> emotion_topk;
    std::vector<HateRow> hate;
    std::optional<double> hate_threshold;
    std::vector<RefusalRow> refusal;
    std::vector<FlowGroup> flows;
    std::vector<std::string> warnings;
    /// Flat run facts (input checksums, seeds, thresholds, asset versions).
    std::map<std::string, std::string> run_info;
    std::string manifest_checksum;
};

/// Relative file name -> file bytes.
using ReportBundle = std::map<std::string, std::string>;

/// One .csv and one .json per table plus summary.json. Output depends only
/// on `data`: keys are sorted and numbers use fixed decimals.
ReportBundle render_bundle(const ReportData& data);

/// Writes every bundle file under `dir`. Throws std::runtime_error when the
/// directory cannot be created or written.
void emit_report(const ReportBundle& bundle, const fs::path& dir);

}  // namespace cneval
