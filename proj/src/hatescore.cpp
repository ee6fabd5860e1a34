#include "cneval/hatescore.hpp"

#include "json.hpp"

namespace cneval {

using nlohmann::json;

namespace {

void check_threshold(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw UsageError("hate threshold must lie strictly between 0 and 1, got " + format_decimal(threshold, 6));
}

std::optional<double> probability_from(const std::string& label, std::optional<double> score) {
    if (!score) return std::nullopt;
    const std::string key = to_lower(trim(label));
    if (key == "hate" || key == "hateful") return *score;
    if (key == "not_hate" || key == "not hate" || key == "non_hate" || key == "nothate") return 1.0 - *score;
    return std::nullopt;
}

}  // namespace

std::optional<double> hate_probability(const WireVerdict& v) {
    if (auto it = v.scores.find("hate"); it != v.scores.end()) return it->second;
    return probability_from(v.label, v.score);
}

EndpointHateBackend::EndpointHateBackend(std::shared_ptr<ClassifierEndpoint> endpoint)
    : endpoint_(std::move(endpoint)) {}

std::vector<HateVerdict> EndpointHateBackend::score(std::span<const TextItem> items) {
    std::vector<std::string> texts;
    texts.reserve(items.size());
    for (const auto& it : items) texts.push_back(it.text);
    auto results = endpoint_->classify(Task::Hate, texts);

    std::vector<HateVerdict> out(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        out[i].subject_id = items[i].id;
        out[i].backend = BackendKind::TransformerEndpoint;
        if (const auto* err = std::get_if<std::string>(&results[i])) {
            out[i].error = *err;
            continue;
        }
        auto p = hate_probability(std::get<WireVerdict>(results[i]));
        if (!p || *p < 0.0 || *p > 1.0)
            out[i].error = "classifier verdict carries no usable hate probability";
        else
            out[i].probability = p;
    }
    return out;
}

CannedHateBackend::CannedHateBackend(std::shared_ptr<const CannedVerdicts> verdicts) : verdicts_(std::move(verdicts)) {}

std::vector<HateVerdict> CannedHateBackend::score(std::span<const TextItem> items) {
    std::vector<HateVerdict> out(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        out[i].subject_id = items[i].id;
        out[i].backend = BackendKind::Canned;
        auto entry = verdicts_->find(items[i].id, Task::Hate);
        if (!entry) {
            out[i].error = "no canned verdict";
            continue;
        }
        auto p = probability_from(entry->label, entry->score);
        if (!p)
            out[i].error = "canned hate verdict needs label hate/not_hate and a score";
        else
            out[i].probability = p;
    }
    return out;
}

std::vector<HateVerdict> classify_hate_batch(std::span<const TextItem> items, HateBackend& backend, double threshold) {
    check_threshold(threshold);
    auto verdicts = backend.score(items);
    if (verdicts.size() != items.size()) throw DataError("hate backend returned a misaligned batch");
    return rethreshold(verdicts, threshold);
}

std::vector<HateVerdict> rethreshold(std::span<const HateVerdict> verdicts, double threshold) {
    check_threshold(threshold);
    std::vector<HateVerdict> out(verdicts.begin(), verdicts.end());
    for (auto& v : out) v.is_hate = v.ok() && *v.probability >= threshold;
    return out;
}

double hatefulness_rate(std::span<const HateVerdict> verdicts) {
    std::size_t scored = 0;
    std::size_t hateful = 0;
    for (const auto& v : verdicts) {
        if (!v.ok()) continue;
        ++scored;
        if (v.is_hate) ++hateful;
    }
    if (scored == 0) throw UsageError("hatefulness_rate: no scored verdicts");
    return 100.0 * static_cast<double>(hateful) / static_cast<double>(scored);
}

std::string to_store_line(const HateVerdict& v) {
    json j;
    j["subject_id"] = v.subject_id;
    j["probability"] = v.probability ? json(*v.probability) : json(nullptr);
    j["is_hate"] = v.is_hate;
    j["backend"] = to_string(v.backend);
    j["error"] = v.error;
    return j.dump();
}

HateVerdict hate_verdict_from_store_line(std::string_view line) {
    try {
        json j = json::parse(line);
        HateVerdict v;
        v.subject_id = j.at("subject_id").get<std::string>();
        if (!j.at("probability").is_null()) v.probability = j.at("probability").get<double>();
        v.is_hate = j.at("is_hate").get<bool>();
        const auto backend = j.at("backend").get<std::string>();
        if (backend == "transformer") {
            v.backend = BackendKind::TransformerEndpoint;
        } else if (backend == "canned") {
            v.backend = BackendKind::Canned;
        } else {
            throw DataError("unknown hate backend '" + backend + "'");
        }
        v.error = j.value("error", std::string());
        return v;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad hate verdict row: ") + e.what());
    }
}

}  // namespace cneval
