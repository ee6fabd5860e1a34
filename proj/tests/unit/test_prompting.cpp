#include "doctest.h"

#include "cneval/prompting.hpp"

#include <random>

using namespace cneval;

namespace {

HateRecord rec(std::string text) { return {"1", Dataset::MtConan, std::move(text), {}, {}}; }

std::string random_text(std::mt19937_64& gen) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABC'\"!?.,{}#@-_";
    std::string s(1 + gen() % 40, ' ');
    for (auto& c : s) c = alphabet[gen() % alphabet.size()];
    s[0] = 'x';
    return s;
}

}  // namespace

TEST_CASE("vanilla prompt for GPT") {
    auto b = build_prompt(Strategy::Vanilla, rec("Migrants steal our jobs"), ModelFamily::Gpt);
    CHECK(b.user_message.starts_with("Generate the CN to the following hateful comment 'Migrants steal our jobs'"));
    CHECK(b.user_message ==
          "Generate the CN to the following hateful comment 'Migrants steal our jobs'. omit explanations and only "
          "provide the CN.");
    REQUIRE(b.system_instruction.has_value());
    CHECK(*b.system_instruction == "You are a helpful assistant.");
    CHECK(b.strategy == Strategy::Vanilla);
    CHECK(b.family == ModelFamily::Gpt);
}

TEST_CASE("system instructions per strategy for GPT and Llama; none for Cohere") {
    const HateRecord r = rec("some text");
    for (auto family : {ModelFamily::Gpt, ModelFamily::Llama}) {
        CHECK(build_prompt(Strategy::NgoPersona, r, family).system_instruction ==
              "You are an NGO worker on a mission to mitigate hateful language online.");
        CHECK(build_prompt(Strategy::NgoEmotion, r, family).system_instruction ==
              "You are an NGO worker and expert in generating compassionate CNs.");
    }
    for (Strategy s : kAllStrategies) CHECK_FALSE(build_prompt(s, r, ModelFamily::Cohere).system_instruction);
}

TEST_CASE("NGO-Emotion for Cohere mentions compassion and has no system instruction") {
    auto b = build_prompt(Strategy::NgoEmotion, rec("any text"), ModelFamily::Cohere);
    CHECK_FALSE(b.system_instruction.has_value());
    CHECK(b.user_message.find("compassionate counter-narrative") != std::string::npos);
    CHECK(b.user_message.starts_with("Assume the role of an NGO professional"));
}

TEST_CASE("apostrophes are substituted byte for byte") {
    const std::string text = "They're not 'welcome' here";
    auto b = build_prompt(Strategy::Vanilla, rec(text), ModelFamily::Gpt);
    CHECK(b.user_message.find("'" + text + "'") != std::string::npos);

    PromptOptions doubled;
    doubled.double_single_quotes = true;
    auto d = build_prompt(Strategy::Vanilla, rec(text), ModelFamily::Gpt, PromptAssets::builtin(), doubled);
    CHECK(d.user_message.find("They''re not ''welcome'' here") != std::string::npos);
}

TEST_CASE("unknown families and empty text are rejected") {
    CHECK_THROWS_AS(build_prompt(Strategy::Vanilla, rec("x"), ModelFamily::Other), UsageError);
    CHECK_THROWS_AS(build_prompt(Strategy::Vanilla, rec("   "), ModelFamily::Gpt), UsageError);
}

TEST_CASE("property: template fidelity and injectivity") {
    std::mt19937_64 gen(77);
    const auto& assets = PromptAssets::builtin();
    for (int trial = 0; trial < 300; ++trial) {
        const std::string a = random_text(gen);
        std::string b = random_text(gen);
        if (b == a) b += "!";
        for (Strategy s : kAllStrategies) {
            for (auto family : {ModelFamily::Gpt, ModelFamily::Llama, ModelFamily::Cohere}) {
                const auto pa = build_prompt(s, rec(a), family);
                const std::string& tmpl = assets.strategies.at(s).user_template;
                const auto slot = tmpl.find(kEventSlot);
                REQUIRE(slot != std::string::npos);
                std::string recovered = pa.user_message;
                recovered.replace(slot, a.size(), kEventSlot);
                CHECK(recovered == tmpl);
                CHECK(pa.user_message != build_prompt(s, rec(b), family).user_message);
            }
        }
    }
}

TEST_CASE("prompt assets validation") {
    const std::string good = PromptAssets::builtin().to_json();
    CHECK(PromptAssets::parse(good).checksum() == PromptAssets::builtin().checksum());

    auto broken = good;
    broken.replace(broken.find("{event}"), 7, "{evnt}");
    CHECK_THROWS_AS(PromptAssets::parse(broken), DataError);
    CHECK_THROWS_AS(PromptAssets::parse("{\"version\": \"x\"}"), DataError);
}

TEST_CASE("template edits change the prompt checksum") {
    auto edited = PromptAssets::builtin();
    edited.strategies.at(Strategy::Vanilla).user_template += " Be brief.";
    auto a = build_prompt(Strategy::Vanilla, rec("t"), ModelFamily::Gpt);
    auto b = build_prompt(Strategy::Vanilla, rec("t"), ModelFamily::Gpt, edited);
    CHECK(prompt_checksum(a) != prompt_checksum(b));
    CHECK(prompt_checksum(a) == prompt_checksum(build_prompt(Strategy::Vanilla, rec("t"), ModelFamily::Gpt)));
    CHECK(edited.checksum() != PromptAssets::builtin().checksum());
}

TEST_CASE("strategy and family names") {
    CHECK(parse_strategy("NGO-Persona") == Strategy::NgoPersona);
    CHECK(parse_strategy("ngo emotion") == Strategy::NgoEmotion);
    CHECK_FALSE(parse_strategy("sarcastic"));
    CHECK(parse_family("LLAMA") == ModelFamily::Llama);
    CHECK(to_string(Strategy::Vanilla) == "vanilla");
}
