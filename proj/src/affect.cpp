#include "cneval/affect.hpp"

#include "builtin_assets.hpp"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

namespace cneval {

using nlohmann::json;

namespace {

constexpr std::array<SentimentLabel, kSentimentLabelCount> kSentiments{
    SentimentLabel::VeryNegative, SentimentLabel::Negative, SentimentLabel::Neutral, SentimentLabel::Positive,
    SentimentLabel::VeryPositive};

constexpr std::array<std::string_view, kSentimentLabelCount> kSentimentNames{
    "very negative", "negative", "neutral", "positive", "very positive"};

constexpr std::array<std::string_view, kEmotionLabelCount> kEmotionNames{
    "neutral",      "admiration",  "amusement", "anger",       "annoyance",  "approval", "caring",
    "confusion",    "curiosity",   "desire",    "disappointment", "disapproval", "disgust", "embarrassment",
    "excitement",   "fear",        "gratitude", "grief",       "joy",        "love",     "nervousness",
    "optimism",     "pride",       "realization", "relief",    "remorse",    "sadness",  "surprise"};

constexpr auto make_emotions() {
    std::array<EmotionLabel, kEmotionLabelCount> out{};
    for (std::size_t i = 0; i < kEmotionLabelCount; ++i) out[i] = static_cast<EmotionLabel>(i);
    return out;
}
constexpr auto kEmotions = make_emotions();

// Lowercase, '_' and '-' read as spaces, whitespace collapsed.
std::string normalize_label(std::string_view s) {
    std::string tmp;
    for (char c : s) tmp.push_back(c == '_' || c == '-' ? ' ' : c);
    return to_lower(collapse_spaces(tmp));
}

}  // namespace

std::string_view to_string(SentimentLabel l) { return kSentimentNames[static_cast<std::size_t>(l)]; }
std::string_view to_string(EmotionLabel l) { return kEmotionNames[static_cast<std::size_t>(l)]; }

std::optional<SentimentLabel> parse_sentiment_label(std::string_view s) {
    const std::string key = normalize_label(s);
    for (std::size_t i = 0; i < kSentimentNames.size(); ++i)
        if (key == kSentimentNames[i]) return kSentiments[i];
    return std::nullopt;
}

std::optional<EmotionLabel> parse_emotion_label(std::string_view s) {
    const std::string key = normalize_label(s);
    for (std::size_t i = 0; i < kEmotionNames.size(); ++i)
        if (key == kEmotionNames[i]) return kEmotions[i];
    return std::nullopt;
}

std::span<const SentimentLabel> all_sentiment_labels() { return kSentiments; }
std::span<const EmotionLabel> all_emotion_labels() { return kEmotions; }

std::string_view to_string(Task t) {
    switch (t) {
        case Task::Sentiment: return "sentiment";
        case Task::Emotion: return "emotion";
        case Task::Hate: return "hate";
    }
    return "unknown";
}

std::optional<Task> parse_task(std::string_view s) {
    const std::string key = to_lower(trim(s));
    for (Task t : {Task::Sentiment, Task::Emotion, Task::Hate})
        if (key == to_string(t)) return t;
    return std::nullopt;
}

std::string label_name(const Label& l) {
    return std::visit([](auto v) { return std::string(to_string(v)); }, l);
}

std::string_view to_string(BackendKind k) {
    switch (k) {
        case BackendKind::TransformerEndpoint: return "transformer";
        case BackendKind::LlmJudge: return "judge";
        case BackendKind::Canned: return "canned";
    }
    return "unknown";
}

std::string_view to_string(VerdictStatus s) {
    switch (s) {
        case VerdictStatus::Resolved: return "resolved";
        case VerdictStatus::Unresolved: return "unresolved";
        case VerdictStatus::Error: return "error";
    }
    return "unknown";
}

namespace {

std::optional<Label> parse_label_for(Task task, std::string_view s) {
    if (task == Task::Sentiment) {
        if (auto l = parse_sentiment_label(s)) return Label{*l};
    } else if (task == Task::Emotion) {
        if (auto l = parse_emotion_label(s)) return Label{*l};
    }
    return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Wire protocol

std::string make_classify_request(Task task, std::span<const std::string> texts) {
    json j;
    j["task"] = to_string(task);
    j["texts"] = json::array();
    for (const auto& t : texts) j["texts"].push_back(t);
    return j.dump();
}

std::vector<WireVerdict> parse_classify_response(std::string_view body, std::size_t expected) {
    std::vector<WireVerdict> out;
    try {
        json j = json::parse(body);
        const auto& verdicts = j.at("verdicts");
        if (!verdicts.is_array()) throw DataError("'verdicts' is not an array");
        for (const auto& v : verdicts) {
            WireVerdict w;
            if (v.contains("label")) w.label = v.at("label").get<std::string>();
            if (v.contains("score") && !v.at("score").is_null()) w.score = v.at("score").get<double>();
            if (v.contains("scores"))
                for (const auto& [k, p] : v.at("scores").items()) w.scores[k] = p.get<double>();
            if (w.label.empty() && w.scores.empty()) throw DataError("verdict has neither label nor scores");
            out.push_back(std::move(w));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed classifier response: ") + e.what());
    }
    if (out.size() != expected)
        throw DataError("classifier returned " + std::to_string(out.size()) + " verdicts for " +
                        std::to_string(expected) + " texts");
    return out;
}

std::pair<std::string, std::optional<double>> top_class(const WireVerdict& v) {
    if (v.scores.empty()) return {v.label, v.score};
    auto best = v.scores.begin();
    for (auto it = v.scores.begin(); it != v.scores.end(); ++it)
        if (it->second > best->second) best = it;
    return {best->first, best->second};
}

ClassifierEndpoint::ClassifierEndpoint(EndpointSpec spec, std::shared_ptr<RateLimiter> limiter)
    : spec_(std::move(spec)), limiter_(std::move(limiter)) {
    if (spec_.batch_size == 0) spec_.batch_size = 1;
}

std::vector<std::variant<WireVerdict, std::string>> ClassifierEndpoint::classify(
    Task task, std::span<const std::string> texts) {
    std::vector<std::variant<WireVerdict, std::string>> out(texts.size());
    const std::size_t chunks = (texts.size() + spec_.batch_size - 1) / spec_.batch_size;
    const auto headers = bearer_headers(spec_.api_key_env);
    parallel_for(chunks, spec_.max_in_flight, [&](std::size_t c) {
        const std::size_t begin = c * spec_.batch_size;
        const std::size_t end = std::min(texts.size(), begin + spec_.batch_size);
        auto chunk = texts.subspan(begin, end - begin);
        int attempts = 0;
        HttpResponse resp = post_with_retry(spec_.url, "/classify", make_classify_request(task, chunk), headers,
                                            spec_.retry, limiter_.get(), attempts);
        std::string error;
        if (!resp.transport_error.empty()) {
            error = resp.transport_error;
        } else if (resp.status < 200 || resp.status >= 300) {
            error = "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
        } else {
            try {
                auto verdicts = parse_classify_response(resp.body, chunk.size());
                for (std::size_t i = 0; i < verdicts.size(); ++i) out[begin + i] = std::move(verdicts[i]);
                return;
            } catch (const DataError& e) {
                error = e.what();
            }
        }
        for (std::size_t i = begin; i < end; ++i) out[i] = error;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Canned verdicts

CannedVerdicts CannedVerdicts::parse(std::string_view content) {
    CannedVerdicts cv;
    cv.checksum_ = sha256_hex(content);
    std::size_t line_no = 0;
    for (const auto& line : split_lines(content)) {
        ++line_no;
        if (trim(line).empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 3 || fields.size() > 4)
            throw DataError("canned verdicts line " + std::to_string(line_no) +
                            ": expected subject_id<TAB>task<TAB>label[<TAB>score]");
        auto task = parse_task(fields[1]);
        if (!task) throw DataError("canned verdicts line " + std::to_string(line_no) + ": unknown task '" + fields[1] + "'");
        Entry e;
        e.label = std::string(trim(fields[2]));
        if (fields.size() == 4) {
            auto s = trim(fields[3]);
            if (!s.empty() && s != "-") {
                char* end = nullptr;
                const std::string owned(s);
                double v = std::strtod(owned.c_str(), &end);
                if (end == owned.c_str() || *end != '\0' || v < 0.0 || v > 1.0)
                    throw DataError("canned verdicts line " + std::to_string(line_no) + ": bad score '" + owned + "'");
                e.score = v;
            }
        }
        auto key = std::make_pair(std::string(trim(fields[0])), *task);
        if (!cv.entries_.emplace(key, std::move(e)).second)
            throw DataError("canned verdicts line " + std::to_string(line_no) + ": duplicate entry for '" +
                            key.first + "'");
    }
    return cv;
}

CannedVerdicts CannedVerdicts::load(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("canned verdict file not found: " + path.string());
    try {
        return parse(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::optional<CannedVerdicts::Entry> CannedVerdicts::find(const std::string& subject_id, Task task) const {
    auto it = entries_.find({subject_id, task});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::string CannedVerdicts::format_line(const std::string& subject_id, Task task, const std::string& label,
                                        std::optional<double> score) {
    std::string line = subject_id + '\t' + std::string(to_string(task)) + '\t' + label + '\t';
    line += score ? format_decimal(*score, 6) : "-";
    return line;
}

// ---------------------------------------------------------------------------
// Judge parsing

std::string_view to_string(ParseFailure f) {
    switch (f) {
        case ParseFailure::None: return "none";
        case ParseFailure::Empty: return "empty";
        case ParseFailure::MultiLine: return "multi_line";
        case ParseFailure::WrongPrefix: return "wrong_prefix";
        case ParseFailure::ListOutput: return "list_output";
        case ParseFailure::Punctuation: return "punctuation";
        case ParseFailure::NotInLabelSet: return "not_in_label_set";
    }
    return "unknown";
}

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

bool looks_like_list(std::string_view s) {
    if (s.find_first_of(",;/|&") != std::string_view::npos) return true;
    const std::string padded = " " + std::string(s) + " ";
    return padded.find(" and ") != std::string::npos || padded.find(" or ") != std::string::npos;
}

}  // namespace

JudgeParse parse_judge_line(std::string_view raw, Task task) {
    JudgeParse out;
    const std::string_view t = trim(raw);
    if (t.empty()) {
        out.failure = ParseFailure::Empty;
        return out;
    }
    if (t.find_first_of("\r\n") != std::string_view::npos) {
        out.failure = ParseFailure::MultiLine;
        return out;
    }
    const std::string lower = to_lower(t);
    const std::string_view prefix = to_string(task);
    std::string_view rest(lower);
    if (!rest.starts_with(prefix)) {
        out.failure = ParseFailure::WrongPrefix;
        return out;
    }
    rest.remove_prefix(prefix.size());
    rest = trim(rest);
    if (!rest.starts_with(':')) {
        out.failure = ParseFailure::WrongPrefix;
        return out;
    }
    rest.remove_prefix(1);
    const std::string candidate = collapse_spaces(rest);
    if (candidate.empty()) {
        out.failure = ParseFailure::NotInLabelSet;
        return out;
    }
    // Strip enclosing punctuation only to extract a term for mapping.
    std::string_view core(candidate);
    while (!core.empty() && is_punct(core.front())) core.remove_prefix(1);
    while (!core.empty() && is_punct(core.back())) core.remove_suffix(1);
    const std::string term = collapse_spaces(core);

    if (looks_like_list(term)) {
        out.failure = ParseFailure::ListOutput;
        return out;
    }
    out.term = term;
    if (term.size() != candidate.size()) {
        out.failure = ParseFailure::Punctuation;
        return out;
    }
    for (char c : candidate) {
        if (c != ' ' && !std::isalpha(static_cast<unsigned char>(c))) {
            out.failure = ParseFailure::Punctuation;
            return out;
        }
    }
    // Only the canonical spelling is accepted, so compare against exact names.
    if (task == Task::Sentiment) {
        for (SentimentLabel l : all_sentiment_labels())
            if (candidate == to_string(l)) out.label = l;
    } else if (task == Task::Emotion) {
        for (EmotionLabel l : all_emotion_labels())
            if (candidate == to_string(l)) out.label = l;
    }
    if (!out.label) out.failure = ParseFailure::NotInLabelSet;
    return out;
}

// ---------------------------------------------------------------------------
// Off-list mapping

EmotionMapping::EmotionMapping(std::map<std::string, EmotionLabel> table, std::string version)
    : table_(std::move(table)), version_(std::move(version)) {
    for (const auto& [term, label] : table_) {
        if (term != to_lower(trim(term)) || term.empty())
            throw DataError("emotion mapping key '" + term + "' must be lowercase and trimmed");
        if (auto canonical = parse_emotion_label(term); canonical && *canonical != label)
            throw DataError("emotion mapping must not remap canonical label '" + term + "'");
    }
}

EmotionMapping EmotionMapping::parse(std::string_view content) {
    std::map<std::string, EmotionLabel> table;
    std::string version;
    try {
        json j = json::parse(content);
        for (const auto& [k, v] : j.items())
            if (k != "version" && k != "mapping") throw DataError("emotion mapping: unknown key '" + k + "'");
        version = j.value("version", std::string());
        for (const auto& [term, target] : j.at("mapping").items()) {
            auto label = parse_emotion_label(target.get<std::string>());
            if (!label)
                throw DataError("emotion mapping: '" + term + "' maps to unknown label '" + target.get<std::string>() + "'");
            table.emplace(term, *label);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("emotion mapping: ") + e.what());
    }
    return EmotionMapping(std::move(table), std::move(version));
}

const EmotionMapping& EmotionMapping::builtin() {
    static const EmotionMapping mapping = parse(assets::kEmotionMapping);
    return mapping;
}

EmotionMapping EmotionMapping::load(const fs::path& path) {
    try {
        return parse(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string EmotionMapping::checksum() const {
    json j;
    j["version"] = version_;
    for (const auto& [term, label] : table_) j["mapping"][term] = to_string(label);
    return sha256_hex(j.dump());
}

std::optional<EmotionLabel> map_offlist_emotion(std::string_view term, const EmotionMapping& mapping) {
    const std::string key = to_lower(collapse_spaces(term));
    for (EmotionLabel l : all_emotion_labels())
        if (key == to_string(l)) return l;
    auto it = mapping.table().find(key);
    if (it == mapping.table().end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Backends

TransformerBackend::TransformerBackend(std::shared_ptr<ClassifierEndpoint> endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<Verdict> TransformerBackend::classify(std::span<const TextItem> items, Task task) {
    std::vector<std::string> texts;
    texts.reserve(items.size());
    for (const auto& it : items) texts.push_back(it.text);
    auto results = endpoint_->classify(task, texts);

    std::vector<Verdict> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        Verdict v;
        v.subject_id = items[i].id;
        v.task = task;
        v.backend = BackendKind::TransformerEndpoint;
        if (const auto* err = std::get_if<std::string>(&results[i])) {
            v.status = VerdictStatus::Error;
            v.note = *err;
        } else {
            const auto& wire = std::get<WireVerdict>(results[i]);
            auto [label, score] = top_class(wire);
            v.raw_output = label;
            v.confidence = score;
            v.label = parse_label_for(task, label);
            if (!v.label) {
                v.status = VerdictStatus::Error;
                v.note = "label '" + label + "' is not in the " + std::string(to_string(task)) + " label set";
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

CannedBackend::CannedBackend(std::shared_ptr<const CannedVerdicts> verdicts) : verdicts_(std::move(verdicts)) {}

std::vector<Verdict> CannedBackend::classify(std::span<const TextItem> items, Task task) {
    std::vector<Verdict> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        Verdict v;
        v.subject_id = item.id;
        v.task = task;
        v.backend = BackendKind::Canned;
        auto entry = verdicts_->find(item.id, task);
        if (!entry) {
            v.status = VerdictStatus::Error;
            v.note = "no canned verdict";
        } else {
            v.raw_output = entry->label;
            v.confidence = entry->score;
            const std::string key = to_lower(entry->label);
            if (key == "unresolved") {
                v.status = VerdictStatus::Unresolved;
            } else if (key == "error") {
                v.status = VerdictStatus::Error;
            } else if (auto label = parse_label_for(task, entry->label)) {
                v.label = label;
            } else {
                v.status = VerdictStatus::Error;
                v.note = "label '" + entry->label + "' is not in the " + std::string(to_string(task)) + " label set";
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::string judge_steering_message(Task task) {
    const std::string name(to_string(task));
    return "Your previous reply did not follow the required format. Reply with exactly one line of the form '" +
           name + ": chosen " + name + "' using one " + name +
           " from the allowed list, lowercase, with no punctuation, no lists and nothing else.";
}

JudgeBackend::JudgeBackend(std::shared_ptr<ChatClient> client, JudgeOptions options, const PromptAssets& assets,
                           const EmotionMapping& mapping)
    : client_(std::move(client)), options_(std::move(options)), assets_(assets), mapping_(mapping) {
    if (options_.retries < 0) options_.retries = 0;
}

Verdict JudgeBackend::judge_one(const TextItem& item, Task task) {
    Verdict v;
    v.subject_id = item.id;
    v.task = task;
    v.backend = BackendKind::LlmJudge;
    v.attempts = 0;
    if (task == Task::Hate) {
        v.status = VerdictStatus::Error;
        v.note = "the judge does not score hatefulness";
        return v;
    }
    const std::string& tmpl =
        task == Task::Sentiment ? assets_.judge_sentiment_template : assets_.judge_emotion_template;

    ChatRequest req;
    req.model = options_.model;
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;
    req.messages.push_back({"user", fill_template(tmpl, item.text)});

    std::vector<std::string> answers;
    std::vector<std::string> failures;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        ChatResult r = client_->complete(req);
        ++v.attempts;
        if (r.outcome == ChatOutcome::PermanentError || r.outcome == ChatOutcome::TransientExhausted) {
            v.status = VerdictStatus::Error;
            v.note = r.error;
            return v;
        }
        JudgeParse parsed = parse_judge_line(r.content, task);
        if (parsed.ok()) {
            v.label = parsed.label;
            v.raw_output = r.content;
            return v;
        }
        answers.push_back(r.content);
        failures.emplace_back(to_string(parsed.failure));
        req.messages.push_back({"assistant", r.content});
        req.messages.push_back({"user", judge_steering_message(task)});
    }

    // Retries exhausted: try the off-list mapping on each answer in order.
    for (const auto& answer : answers) {
        JudgeParse parsed = parse_judge_line(answer, task);
        if (!parsed.term) continue;
        std::optional<Label> mapped;
        if (task == Task::Emotion) {
            if (auto m = map_offlist_emotion(*parsed.term, mapping_)) mapped = *m;
        } else if (auto s = parse_sentiment_label(*parsed.term)) {
            mapped = *s;
        }
        if (mapped) {
            v.label = mapped;
            v.raw_output = answer;
            v.resolution = Resolution::Mapped;
            return v;
        }
    }

    v.status = VerdictStatus::Unresolved;
    v.raw_output = answers.empty() ? std::string() : answers.back();
    std::string note = "parse failures:";
    for (const auto& f : failures) note += " " + f;
    v.note = note;
    return v;
}

std::vector<Verdict> JudgeBackend::classify(std::span<const TextItem> items, Task task) {
    std::vector<Verdict> out(items.size());
    parallel_for(items.size(), options_.max_in_flight, [&](std::size_t i) { out[i] = judge_one(items[i], task); });
    return out;
}

std::vector<Verdict> classify_sentiment_batch(std::span<const TextItem> items, AffectBackend& backend) {
    return backend.classify(items, Task::Sentiment);
}

std::vector<Verdict> classify_emotion_batch(std::span<const TextItem> items, AffectBackend& backend) {
    return backend.classify(items, Task::Emotion);
}

// ---------------------------------------------------------------------------
// Verdict store lines

std::string to_store_line(const Verdict& v) {
    json j;
    j["subject_id"] = v.subject_id;
    j["task"] = to_string(v.task);
    j["status"] = to_string(v.status);
    j["label"] = v.label ? json(label_name(*v.label)) : json(nullptr);
    j["confidence"] = v.confidence ? json(*v.confidence) : json(nullptr);
    j["backend"] = to_string(v.backend);
    j["raw_output"] = v.raw_output;
    j["resolution"] = v.resolution == Resolution::Mapped ? "mapped" : "direct";
    j["attempts"] = v.attempts;
    j["note"] = v.note;
    return j.dump();
}

Verdict verdict_from_store_line(std::string_view line) {
    try {
        json j = json::parse(line);
        Verdict v;
        v.subject_id = j.at("subject_id").get<std::string>();
        auto task = parse_task(j.at("task").get<std::string>());
        if (!task) throw DataError("unknown task");
        v.task = *task;
        const auto status = j.at("status").get<std::string>();
        if (status == "resolved") {
            v.status = VerdictStatus::Resolved;
        } else if (status == "unresolved") {
            v.status = VerdictStatus::Unresolved;
        } else if (status == "error") {
            v.status = VerdictStatus::Error;
        } else {
            throw DataError("unknown verdict status '" + status + "'");
        }
        if (!j.at("label").is_null()) {
            v.label = parse_label_for(v.task, j.at("label").get<std::string>());
            if (!v.label) throw DataError("label not valid for task");
        }
        if (!j.at("confidence").is_null()) v.confidence = j.at("confidence").get<double>();
        const auto backend = j.at("backend").get<std::string>();
        if (backend == "transformer") {
            v.backend = BackendKind::TransformerEndpoint;
        } else if (backend == "judge") {
            v.backend = BackendKind::LlmJudge;
        } else if (backend == "canned") {
            v.backend = BackendKind::Canned;
        } else {
            throw DataError("unknown backend '" + backend + "'");
        }
        v.raw_output = j.at("raw_output").get<std::string>();
        v.resolution = j.value("resolution", std::string("direct")) == "mapped" ? Resolution::Mapped : Resolution::Direct;
        v.attempts = j.value("attempts", 1);
        v.note = j.value("note", std::string());
        return v;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad verdict row: ") + e.what());
    }
}

}  // namespace cneval
