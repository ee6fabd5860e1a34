#include "cneval/prompting.hpp"

#include "builtin_assets.hpp"
#include "json.hpp"

#include <set>

namespace cneval {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::Vanilla: return "vanilla";
        case Strategy::NgoPersona: return "ngo_persona";
        case Strategy::NgoEmotion: return "ngo_emotion";
    }
    return "unknown";
}

namespace {

std::string normalize_key(std::string_view s) {
    std::string out;
    for (char c : to_lower(trim(s))) out.push_back(c == '-' || c == ' ' ? '_' : c);
    return out;
}

}  // namespace

std::optional<Strategy> parse_strategy(std::string_view s) {
    const std::string key = normalize_key(s);
    for (Strategy st : kAllStrategies)
        if (key == to_string(st)) return st;
    return std::nullopt;
}

std::string_view to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::Gpt: return "gpt";
        case ModelFamily::Llama: return "llama";
        case ModelFamily::Cohere: return "cohere";
        case ModelFamily::Other: return "other";
    }
    return "unknown";
}

std::optional<ModelFamily> parse_family(std::string_view s) {
    const std::string key = normalize_key(s);
    for (ModelFamily f : {ModelFamily::Gpt, ModelFamily::Llama, ModelFamily::Cohere, ModelFamily::Other})
        if (key == to_string(f)) return f;
    return std::nullopt;
}

namespace {

std::size_t count_slots(std::string_view tmpl) {
    std::size_t n = 0;
    for (auto pos = tmpl.find(kEventSlot); pos != std::string_view::npos;
         pos = tmpl.find(kEventSlot, pos + kEventSlot.size()))
        ++n;
    return n;
}

void require_single_slot(std::string_view tmpl, const std::string& where) {
    if (count_slots(tmpl) != 1)
        throw DataError("prompt assets: " + where + " must contain exactly one " + std::string(kEventSlot) + " slot");
}

}  // namespace

PromptAssets PromptAssets::parse(std::string_view content) {
    json j;
    try {
        j = json::parse(content);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("prompt assets: ") + e.what());
    }
    PromptAssets a;
    try {
        for (const auto& [k, v] : j.items())
            if (k != "version" && k != "strategies" && k != "judge")
                throw DataError("prompt assets: unknown key '" + k + "'");
        a.version = j.at("version").get<std::string>();
        for (const auto& [name, entry] : j.at("strategies").items()) {
            auto strategy = parse_strategy(name);
            if (!strategy) throw DataError("prompt assets: unknown strategy '" + name + "'");
            StrategyAssets sa;
            sa.user_template = entry.at("template").get<std::string>();
            require_single_slot(sa.user_template, "template for " + name);
            for (const auto& [fam, instr] : entry.at("system").items()) {
                auto family = parse_family(fam);
                if (!family) throw DataError("prompt assets: unknown model family '" + fam + "'");
                sa.system_instruction[*family] =
                    instr.is_null() ? std::nullopt : std::optional<std::string>(instr.get<std::string>());
            }
            a.strategies[*strategy] = std::move(sa);
        }
        for (Strategy s : kAllStrategies)
            if (!a.strategies.contains(s))
                throw DataError("prompt assets: missing strategy '" + std::string(to_string(s)) + "'");
        a.judge_sentiment_template = j.at("judge").at("sentiment").get<std::string>();
        a.judge_emotion_template = j.at("judge").at("emotion").get<std::string>();
        require_single_slot(a.judge_sentiment_template, "judge sentiment prompt");
        require_single_slot(a.judge_emotion_template, "judge emotion prompt");
    } catch (const json::exception& e) {
        throw DataError(std::string("prompt assets: ") + e.what());
    }
    return a;
}

const PromptAssets& PromptAssets::builtin() {
    static const PromptAssets assets = parse(assets::kPrompts);
    return assets;
}

PromptAssets PromptAssets::load(const fs::path& path) {
    try {
        return parse(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string PromptAssets::to_json() const {
    ordered_json j;
    j["version"] = version;
    ordered_json strategies_json = ordered_json::object();
    for (const auto& [s, sa] : strategies) {
        ordered_json entry;
        entry["template"] = sa.user_template;
        ordered_json system = ordered_json::object();
        for (const auto& [fam, instr] : sa.system_instruction)
            system[std::string(cneval::to_string(fam))] = instr ? ordered_json(*instr) : ordered_json(nullptr);
        entry["system"] = system;
        strategies_json[std::string(cneval::to_string(s))] = entry;
    }
    j["strategies"] = strategies_json;
    j["judge"] = {{"sentiment", judge_sentiment_template}, {"emotion", judge_emotion_template}};
    return j.dump(2) + "\n";
}

std::string PromptAssets::checksum() const { return sha256_hex(to_json()); }

std::string fill_template(std::string_view tmpl, std::string_view text) {
    const auto pos = tmpl.find(kEventSlot);
    if (pos == std::string_view::npos) throw DataError("template has no event slot");
    std::string out;
    out.reserve(tmpl.size() + text.size());
    out.append(tmpl.substr(0, pos));
    out.append(text);
    out.append(tmpl.substr(pos + kEventSlot.size()));
    return out;
}

PromptBundle build_prompt(Strategy strategy, const HateRecord& record, ModelFamily family,
                          const PromptAssets& assets, PromptOptions options) {
    if (trim(record.text).empty()) throw UsageError("build_prompt: record '" + record.id + "' has empty text");
    const auto it = assets.strategies.find(strategy);
    if (it == assets.strategies.end())
        throw UsageError("build_prompt: no template for strategy " + std::string(to_string(strategy)));
    const auto fam = it->second.system_instruction.find(family);
    if (fam == it->second.system_instruction.end())
        throw UsageError("build_prompt: model family '" + std::string(to_string(family)) +
                         "' has no declared template mapping for " + std::string(to_string(strategy)));

    std::string text = record.text;
    if (options.double_single_quotes) {
        std::string doubled;
        for (char c : text) {
            doubled.push_back(c);
            if (c == '\'') doubled.push_back('\'');
        }
        text = std::move(doubled);
    }

    PromptBundle b;
    b.strategy = strategy;
    b.family = family;
    b.system_instruction = fam->second;
    b.user_message = fill_template(it->second.user_template, text);
    return b;
}

std::string prompt_checksum(const PromptBundle& bundle) {
    json j;
    j["system"] = bundle.system_instruction ? json(*bundle.system_instruction) : json(nullptr);
    j["user"] = bundle.user_message;
    return sha256_hex(j.dump());
}

}  // namespace cneval
