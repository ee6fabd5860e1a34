#include "cneval/aggregate.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cneval {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Source s) {
    switch (s) {
        case Source::OriginalText: return "original_text";
        case Source::HumanCn: return "human_cn";
        case Source::ModelResponse: return "model_response";
    }
    return "unknown";
}

std::string subject_id(Dataset d, std::string_view record_id, Source s) {
    std::string id = std::string(to_string(d)) + "/" + std::string(record_id) + "/";
    switch (s) {
        case Source::OriginalText: return id + "text";
        case Source::HumanCn: return id + "human_cn";
        case Source::ModelResponse: break;
    }
    throw UsageError("subject_id: model responses need a model and strategy");
}

std::string response_subject_id(Dataset d, std::string_view record_id, std::string_view model, Strategy s) {
    return std::string(to_string(d)) + "/" + std::string(record_id) + "/" + std::string(model) + "/" +
           std::string(to_string(s));
}

std::vector<Subject> collect_subjects(std::span<const HateRecord> records,
                                      std::span<const GenerationRecord> generations) {
    std::vector<Subject> out;
    for (const auto& r : records)
        out.push_back({subject_id(r.dataset, r.id, Source::OriginalText), GroupKey::original(r.dataset), r.id, r.text});
    for (const auto& r : records)
        if (r.human_cn)
            out.push_back({subject_id(r.dataset, r.id, Source::HumanCn), GroupKey::human_cn(r.dataset), r.id,
                           *r.human_cn});
    for (const auto& g : generations)
        if (g.status == GenerationStatus::Completed)
            out.push_back({response_subject_id(g.dataset, g.record_id, g.model, g.strategy),
                           GroupKey::response(g.dataset, g.model, g.strategy), g.record_id, g.response_text});
    return out;
}

KeyFn key_lookup(std::span<const Subject> subjects) {
    auto table = std::make_shared<std::map<std::string, GroupKey>>();
    for (const auto& s : subjects) table->emplace(s.id, s.key);
    return [table](const std::string& id) -> std::optional<GroupKey> {
        auto it = table->find(id);
        if (it == table->end()) return std::nullopt;
        return it->second;
    };
}

namespace {

GroupKey place(const KeyFn& key_fn, const std::string& id) {
    auto key = key_fn(id);
    if (!key) throw UsageError("no group for subject '" + id + "'");
    return *key;
}

// Order-independent mean: sort first so the floating-point sum is fixed.
double stable_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

std::vector<std::string> task_labels(Task task) {
    std::vector<std::string> out;
    if (task == Task::Sentiment)
        for (auto l : all_sentiment_labels()) out.emplace_back(to_string(l));
    else
        for (auto l : all_emotion_labels()) out.emplace_back(to_string(l));
    return out;
}

}  // namespace

std::vector<VerbosityRow> verbosity_table(std::span<const GenerationRecord> generations,
                                          std::span<const HateRecord> originals, std::vector<std::string>* warnings) {
    std::map<GroupKey, std::pair<std::size_t, std::uint64_t>> acc;  // n, total words
    auto add = [&](const GroupKey& key, std::string_view text) {
        auto& [n, words] = acc[key];
        ++n;
        words += text_stats(text).words;
    };
    for (const auto& r : originals) {
        add(GroupKey::original(r.dataset), r.text);
        if (r.human_cn) add(GroupKey::human_cn(r.dataset), *r.human_cn);
    }
    std::set<GroupKey> seen;
    for (const auto& g : generations) {
        auto key = GroupKey::response(g.dataset, g.model, g.strategy);
        seen.insert(key);
        if (g.status == GenerationStatus::Completed) add(key, g.response_text);
    }
    for (const auto& key : seen) {
        if (acc.count(key) || !warnings) continue;
        warnings->push_back("verbosity: no completed responses for " + std::string(to_string(key.dataset)) + "/" +
                            *key.model + "/" + std::string(to_string(*key.strategy)) + "; row omitted");
    }
    std::vector<VerbosityRow> rows;
    for (const auto& [key, v] : acc)
        rows.push_back({key, v.first,
                        round_ratio_half_up(static_cast<std::int64_t>(v.second), static_cast<std::int64_t>(v.first), 10)});
    return rows;
}

std::vector<ReadabilityRow> readability_table(std::span<const Subject> subjects) {
    std::map<GroupKey, std::pair<std::vector<double>, std::vector<double>>> acc;
    for (const auto& s : subjects) {
        auto stats = text_stats(s.text);
        if (stats.words == 0) continue;
        auto scores = readability(stats);
        auto& [fre, fk] = acc[s.key];
        fre.push_back(scores.reading_ease);
        fk.push_back(scores.grade_level);
    }
    std::vector<ReadabilityRow> rows;
    for (auto& [key, v] : acc)
        rows.push_back({key, v.first.size(), stable_mean(std::move(v.first)), stable_mean(std::move(v.second))});
    return rows;
}

std::vector<DistributionRow> label_distribution(std::span<const Verdict> verdicts, const KeyFn& key_fn) {
    if (verdicts.empty()) throw UsageError("label_distribution: no verdicts");
    const Task task = verdicts.front().task;
    if (task == Task::Hate) throw UsageError("label_distribution: hate verdicts have no label set");
    const auto labels = task_labels(task);

    struct Acc {
        std::map<std::string, std::size_t> counts;
        std::size_t resolved = 0, unresolved = 0, errors = 0;
    };
    std::map<GroupKey, Acc> groups;
    for (const auto& v : verdicts) {
        if (v.task != task) throw UsageError("label_distribution: verdicts mix tasks");
        auto& a = groups[place(key_fn, v.subject_id)];
        if (v.status == VerdictStatus::Resolved && v.label) {
            ++a.resolved;
            ++a.counts[label_name(*v.label)];
        } else if (v.status == VerdictStatus::Unresolved) {
            ++a.unresolved;
        } else {
            ++a.errors;
        }
    }
    std::vector<DistributionRow> rows;
    for (const auto& [key, a] : groups) {
        DistributionRow row{key, {}, a.resolved, a.unresolved, a.errors};
        for (const auto& label : labels) {
            auto it = a.counts.find(label);
            const std::size_t c = it == a.counts.end() ? 0 : it->second;
            const std::int64_t share =
                a.resolved == 0 ? 0
                                : round_ratio_half_up(static_cast<std::int64_t>(c),
                                                      static_cast<std::int64_t>(a.resolved), 10000);
            row.shares.push_back({label, c, share});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<TopKRow> top_k_emotions(std::span<const Verdict> verdicts, const KeyFn& key_fn, std::size_t k) {
    if (k == 0) throw UsageError("top_k_emotions: k must be positive");
    if (verdicts.empty()) throw UsageError("top_k_emotions: no verdicts");
    for (const auto& v : verdicts)
        if (v.task != Task::Emotion) throw UsageError("top_k_emotions: verdicts must be emotion verdicts");
    std::vector<TopKRow> out;
    for (auto& row : label_distribution(verdicts, key_fn)) {
        std::vector<LabelShare> present;
        for (auto& s : row.shares)
            if (s.count > 0) present.push_back(s);
        std::sort(present.begin(), present.end(), [](const LabelShare& a, const LabelShare& b) {
            if (a.count != b.count) return a.count > b.count;
            return a.label < b.label;
        });
        if (present.size() > k) present.resize(k);
        out.push_back({row.key, std::move(present)});
    }
    return out;
}

namespace {

std::map<std::string, const Verdict*> index_by_id(std::span<const Verdict> verdicts, const char* side) {
    std::map<std::string, const Verdict*> out;
    for (const auto& v : verdicts) {
        if (v.task != Task::Emotion)
            throw UsageError(std::string("sankey_flows: ") + side + " verdicts must be emotion verdicts");
        if (!out.emplace(v.subject_id, &v).second)
            throw DataError(std::string("sankey_flows: duplicate ") + side + " verdict for id '" + v.subject_id + "'");
    }
    return out;
}

std::optional<EmotionLabel> emotion_of(const Verdict& v) {
    if (v.status != VerdictStatus::Resolved || !v.label) return std::nullopt;
    if (const auto* e = std::get_if<EmotionLabel>(&*v.label)) return *e;
    return std::nullopt;
}

std::set<EmotionLabel> top_labels(const std::map<EmotionLabel, std::size_t>& freq, std::size_t top_n) {
    std::vector<std::pair<EmotionLabel, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return to_string(a.first) < to_string(b.first);
    });
    std::set<EmotionLabel> keep;
    for (std::size_t i = 0; i < ranked.size() && (top_n == 0 || i < top_n); ++i) keep.insert(ranked[i].first);
    return keep;
}

// "other" sorts after every named label.
std::string node_sort_key(const std::optional<EmotionLabel>& l) {
    return l ? std::string(to_string(*l)) : std::string("\x7f");
}

}  // namespace

FlowTable sankey_flows(std::span<const Verdict> hate_verdicts, std::span<const Verdict> response_verdicts,
                       std::size_t top_n) {
    const auto hate = index_by_id(hate_verdicts, "hate-text");
    const auto resp = index_by_id(response_verdicts, "response");
    for (const auto& [id, v] : hate)
        if (!resp.count(id)) throw DataError("sankey_flows: id '" + id + "' has no response verdict");
    for (const auto& [id, v] : resp)
        if (!hate.count(id)) throw DataError("sankey_flows: id '" + id + "' has no hate-text verdict");

    FlowTable table;
    std::vector<std::pair<EmotionLabel, EmotionLabel>> pairs;
    std::map<EmotionLabel, std::size_t> src_freq, dst_freq;
    for (const auto& [id, hv] : hate) {
        auto s = emotion_of(*hv);
        auto t = emotion_of(*resp.at(id));
        if (!s || !t) {
            ++table.skipped;
            continue;
        }
        pairs.emplace_back(*s, *t);
        ++src_freq[*s];
        ++dst_freq[*t];
    }
    table.paired = pairs.size();

    const auto keep_src = top_labels(src_freq, top_n);
    const auto keep_dst = top_labels(dst_freq, top_n);
    std::map<std::pair<std::string, std::string>, FlowEdge> edges;
    for (const auto& [s, t] : pairs) {
        FlowEdge e;
        if (keep_src.count(s)) e.source = s;
        if (keep_dst.count(t)) e.target = t;
        auto& slot = edges[{node_sort_key(e.source), node_sort_key(e.target)}];
        slot.source = e.source;
        slot.target = e.target;
        ++slot.count;
    }
    for (auto& [k, e] : edges) table.edges.push_back(e);
    return table;
}

std::vector<HateRow> hate_table(std::span<const HateVerdict> verdicts, const KeyFn& key_fn) {
    std::map<GroupKey, HateRow> acc;
    for (const auto& v : verdicts) {
        auto key = place(key_fn, v.subject_id);
        auto& row = acc[key];
        row.key = key;
        if (!v.ok()) {
            ++row.errors;
            continue;
        }
        ++row.scored;
        if (v.is_hate) ++row.hateful;
    }
    std::vector<HateRow> rows;
    for (auto& [key, row] : acc) {
        if (row.scored > 0)
            row.rate_hundredths = round_ratio_half_up(static_cast<std::int64_t>(row.hateful),
                                                      static_cast<std::int64_t>(row.scored), 10000);
        rows.push_back(row);
    }
    return rows;
}

std::vector<RefusalRow> refusal_table(std::span<const GenerationRecord> generations, const RefusalRuleSet& rules) {
    std::map<GroupKey, RefusalRow> acc;
    for (const auto& g : generations) {
        auto key = GroupKey::response(g.dataset, g.model, g.strategy);
        auto& row = acc[key];
        row.key = key;
        ++row.attempted;
        if (g.status == GenerationStatus::Failed)
            ++row.failed;
        else if (detect_refusal(g.response_text, rules).refused)
            ++row.refused;
    }
    std::vector<RefusalRow> rows;
    for (auto& [key, row] : acc) {
        row.rate_hundredths = round_ratio_half_up(static_cast<std::int64_t>(row.refused),
                                                  static_cast<std::int64_t>(row.attempted), 10000);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::int64_t scale_double(double v, int decimals) {
    double f = 1.0;
    for (int i = 0; i < decimals; ++i) f *= 10.0;
    return static_cast<std::int64_t>(std::floor(v * f + 0.5 + 1e-9));
}

double as_number(std::int64_t scaled, int decimals) {
    // Parse the fixed string so JSON prints the shortest exact form.
    return std::stod(format_fixed(scaled, decimals));
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class Csv {
public:
    explicit Csv(std::vector<std::string> header) { row(header); }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ += ',';
            out_ += csv_field(fields[i]);
        }
        out_ += '\n';
    }
    const std::string& str() const { return out_; }

private:
    std::string out_;
};

const std::vector<std::string> kKeyColumns{"dataset", "source", "model", "strategy"};

std::vector<std::string> key_fields(const GroupKey& k) {
    return {std::string(to_string(k.dataset)), std::string(to_string(k.source)), k.model.value_or(""),
            k.strategy ? std::string(to_string(*k.strategy)) : std::string()};
}

std::vector<std::string> with_key(const GroupKey& k, std::vector<std::string> rest, const std::string* backend = nullptr) {
    std::vector<std::string> out;
    if (backend) out.push_back(*backend);
    auto kf = key_fields(k);
    out.insert(out.end(), kf.begin(), kf.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

std::vector<std::string> header(std::vector<std::string> rest, bool backend = false) {
    std::vector<std::string> out;
    if (backend) out.push_back("backend");
    out.insert(out.end(), kKeyColumns.begin(), kKeyColumns.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

ordered_json key_json(const GroupKey& k) {
    ordered_json j;
    j["dataset"] = to_string(k.dataset);
    j["source"] = to_string(k.source);
    j["model"] = k.model ? ordered_json(*k.model) : ordered_json(nullptr);
    j["strategy"] = k.strategy ? ordered_json(std::string(to_string(*k.strategy))) : ordered_json(nullptr);
    return j;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

std::string node_name(const std::optional<EmotionLabel>& l) { return l ? std::string(to_string(*l)) : "other"; }

void render_labels(const std::vector<LabelTable>& tables, const std::string& stem, ReportBundle& bundle) {
    std::vector<std::string> label_cols;
    if (!tables.empty() && !tables.front().rows.empty())
        for (const auto& s : tables.front().rows.front().shares) label_cols.push_back(s.label);
    std::vector<std::string> cols{"n", "unresolved", "errors"};
    cols.insert(cols.end(), label_cols.begin(), label_cols.end());
    Csv csv(header(cols, true));
    ordered_json arr = ordered_json::array();
    for (const auto& t : tables) {
        for (const auto& r : t.rows) {
            std::vector<std::string> f{std::to_string(r.n), std::to_string(r.unresolved), std::to_string(r.errors)};
            ordered_json shares = ordered_json::object();
            for (const auto& s : r.shares) {
                f.push_back(format_fixed(s.share_hundredths, 2));
                shares[s.label] = as_number(s.share_hundredths, 2);
            }
            csv.row(with_key(r.key, f, &t.backend));
            ordered_json j;
            j["backend"] = t.backend;
            j["key"] = key_json(r.key);
            j["n"] = r.n;
            j["unresolved"] = r.unresolved;
            j["errors"] = r.errors;
            j["shares"] = shares;
            arr.push_back(j);
        }
    }
    bundle[stem + ".csv"] = csv.str();
    bundle[stem + ".json"] = dump(arr);
}

}  // namespace

ReportBundle render_bundle(const ReportData& d) {
    ReportBundle bundle;

    {
        Csv csv(header({"n", "mean_words"}));
        ordered_json arr = ordered_json::array();
        for (const auto& r : d.verbosity) {
            csv.row(with_key(r.key, {std::to_string(r.n), format_fixed(r.mean_words_tenths, 1)}));
            arr.push_back({{"key", key_json(r.key)}, {"n", r.n}, {"mean_words", as_number(r.mean_words_tenths, 1)}});
        }
        bundle["verbosity.csv"] = csv.str();
        bundle["verbosity.json"] = dump(arr);
    }
    {
        Csv csv(header({"n", "reading_ease", "grade_level"}));
        ordered_json arr = ordered_json::array();
        for (const auto& r : d.readability) {
            const auto fre = scale_double(r.mean_reading_ease, 2);
            const auto fk = scale_double(r.mean_grade_level, 2);
            csv.row(with_key(r.key, {std::to_string(r.n), format_fixed(fre, 2), format_fixed(fk, 2)}));
            arr.push_back({{"key", key_json(r.key)},
                           {"n", r.n},
                           {"reading_ease", as_number(fre, 2)},
                           {"grade_level", as_number(fk, 2)}});
        }
        bundle["readability.csv"] = csv.str();
        bundle["readability.json"] = dump(arr);
    }
    render_labels(d.sentiment, "sentiment", bundle);
    render_labels(d.emotion, "emotion", bundle);
    {
        Csv csv(header({"k", "rank", "label", "share"}, true));
        ordered_json arr = ordered_json::array();
        for (const auto& t : d.emotion_topk) {
            for (const auto& r : t.rows) {
                ordered_json ranked = ordered_json::array();
                for (std::size_t i = 0; i < r.ranked.size(); ++i) {
                    const auto& s = r.ranked[i];
                    csv.row(with_key(r.key,
                                     {std::to_string(t.k), std::to_string(i + 1), s.label,
                                      format_fixed(s.share_hundredths, 2)},
                                     &t.backend));
                    ranked.push_back({{"label", s.label}, {"share", as_number(s.share_hundredths, 2)}});
                }
                arr.push_back({{"backend", t.backend}, {"key", key_json(r.key)}, {"k", t.k}, {"ranked", ranked}});
            }
        }
        bundle["emotion_topk.csv"] = csv.str();
        bundle["emotion_topk.json"] = dump(arr);
    }
    {
        Csv csv(header({"scored", "hateful", "errors", "rate"}));
        ordered_json arr = ordered_json::array();
        for (const auto& r : d.hate) {
            csv.row(with_key(r.key, {std::to_string(r.scored), std::to_string(r.hateful), std::to_string(r.errors),
                                     format_fixed(r.rate_hundredths, 2)}));
            arr.push_back({{"key", key_json(r.key)},
                           {"scored", r.scored},
                           {"hateful", r.hateful},
                           {"errors", r.errors},
                           {"rate", as_number(r.rate_hundredths, 2)}});
        }
        bundle["hate.csv"] = csv.str();
        bundle["hate.json"] = dump(arr);
    }
    {
        Csv csv(header({"attempted", "refused", "failed", "rate"}));
        ordered_json arr = ordered_json::array();
        for (const auto& r : d.refusal) {
            csv.row(with_key(r.key, {std::to_string(r.attempted), std::to_string(r.refused), std::to_string(r.failed),
                                     format_fixed(r.rate_hundredths, 2)}));
            arr.push_back({{"key", key_json(r.key)},
                           {"attempted", r.attempted},
                           {"refused", r.refused},
                           {"failed", r.failed},
                           {"rate", as_number(r.rate_hundredths, 2)}});
        }
        bundle["refusal.csv"] = csv.str();
        bundle["refusal.json"] = dump(arr);
    }
    {
        Csv csv(header({"source_emotion", "target_emotion", "count"}, true));
        ordered_json arr = ordered_json::array();
        for (const auto& g : d.flows) {
            ordered_json edges = ordered_json::array();
            for (const auto& e : g.flows.edges) {
                csv.row(with_key(g.key, {node_name(e.source), node_name(e.target), std::to_string(e.count)},
                                 &g.backend));
                edges.push_back({{"source", node_name(e.source)}, {"target", node_name(e.target)}, {"count", e.count}});
            }
            arr.push_back({{"backend", g.backend},
                           {"key", key_json(g.key)},
                           {"paired", g.flows.paired},
                           {"skipped", g.flows.skipped},
                           {"edges", edges}});
        }
        bundle["flows.csv"] = csv.str();
        bundle["flows.json"] = dump(arr);
    }

    json summary;  // sorted keys
    summary["manifest_checksum"] = d.manifest_checksum;
    summary["run"] = json::object();
    for (const auto& [k, v] : d.run_info) summary["run"][k] = v;
    summary["warnings"] = d.warnings;
    if (d.hate_threshold) summary["hate_threshold"] = format_decimal(*d.hate_threshold, 4);
    json counts = json::object();
    for (const auto& [stem, tables] : {std::pair{"sentiment", &d.sentiment}, std::pair{"emotion", &d.emotion}}) {
        for (const auto& t : *tables) {
            std::size_t unresolved = 0, errors = 0, resolved = 0;
            for (const auto& r : t.rows) {
                unresolved += r.unresolved;
                errors += r.errors;
                resolved += r.n;
            }
            counts[stem][t.backend] = {{"resolved", resolved}, {"unresolved", unresolved}, {"errors", errors}};
        }
    }
    {
        std::size_t attempted = 0, failed = 0, refused = 0;
        for (const auto& r : d.refusal) {
            attempted += r.attempted;
            failed += r.failed;
            refused += r.refused;
        }
        counts["generation"] = {{"attempted", attempted}, {"failed", failed}, {"refused", refused}};
        std::size_t scored = 0, errors = 0;
        for (const auto& r : d.hate) {
            scored += r.scored;
            errors += r.errors;
        }
        counts["hate"] = {{"scored", scored}, {"errors", errors}};
    }
    summary["counts"] = counts;
    json files = json::array();
    for (const auto& [name, bytes] : bundle) files.push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
    summary["files"] = files;
    bundle["summary.json"] = summary.dump(2) + "\n";
    return bundle;
}

void emit_report(const ReportBundle& bundle, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create report directory " + dir.string() + ": " + ec.message());
    for (const auto& [name, bytes] : bundle) write_file_atomic(dir / name, bytes);
}

}  // namespace cneval
