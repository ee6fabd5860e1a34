#include "doctest.h"

#include "cneval/hatescore.hpp"
#include "stub_server.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace cneval;
using namespace cneval::testing;
using nlohmann::json;

namespace {

HateVerdict scored(double p, double threshold = 0.5) {
    HateVerdict v;
    v.subject_id = "s";
    v.probability = p;
    v.is_hate = p >= threshold;
    return v;
}

std::vector<HateVerdict> with_count(std::size_t hateful, std::size_t total) {
    std::vector<HateVerdict> out;
    for (std::size_t i = 0; i < total; ++i) out.push_back(scored(i < hateful ? 0.9 : 0.1));
    return out;
}

std::shared_ptr<const CannedVerdicts> canned(const std::string& content) {
    return std::make_shared<const CannedVerdicts>(CannedVerdicts::parse(content));
}

}  // namespace

TEST_CASE("threshold examples") {
    const std::string cn =
        "The world is run by a diverse range of people, and the idea that any one group, including Jews, 'runs the "
        "world' is a harmful and baseless stereotype.";
    auto backend = CannedHateBackend(canned("cn1\thate\thate\t0.8904\nz\thate\tnot_hate\t1\nedge\thate\thate\t0.5\n"));
    std::vector<TextItem> items{{"cn1", cn}, {"z", "x"}, {"edge", "y"}};
    auto v = classify_hate_batch(items, backend, kDefaultHateThreshold);
    CHECK(*v[0].probability == doctest::Approx(0.8904));
    CHECK(v[0].is_hate);
    CHECK(*v[1].probability == 0.0);
    CHECK_FALSE(v[1].is_hate);
    CHECK(v[2].is_hate);
    CHECK(kDefaultHateThreshold == 0.5);
}

TEST_CASE("thresholds outside (0, 1) are rejected") {
    auto backend = CannedHateBackend(canned("a\thate\thate\t0.5\n"));
    std::vector<TextItem> items{{"a", "x"}};
    CHECK_THROWS_AS(classify_hate_batch(items, backend, 0.0), UsageError);
    CHECK_THROWS_AS(classify_hate_batch(items, backend, 1.0), UsageError);
}

TEST_CASE("hatefulness_rate examples") {
    CHECK(hatefulness_rate(with_count(0, 10)) == 0.0);
    // 281/5003 = 5.6166; no integer count over 5003 lands on 5.61 exactly, so
    // the published figure is matched to within one hundredth.
    CHECK(std::abs(hatefulness_rate(with_count(281, 5003)) - 5.61) <= 0.01);
    CHECK(hatefulness_rate(with_count(1, 8)) == 12.5);
    CHECK_THROWS_AS(hatefulness_rate(std::vector<HateVerdict>{}), UsageError);
}

TEST_CASE("errors are excluded from the denominator") {
    auto v = with_count(1, 4);
    HateVerdict err;
    err.subject_id = "e";
    err.error = "timeout";
    v.push_back(err);
    CHECK(hatefulness_rate(v) == 25.0);
    CHECK_THROWS_AS(hatefulness_rate(std::vector<HateVerdict>{err}), UsageError);
}

TEST_CASE("hate_probability reads the common label conventions") {
    WireVerdict a;
    a.label = "hate";
    a.score = 0.8;
    CHECK(hate_probability(a) == 0.8);
    WireVerdict b;
    b.label = "not_hate";
    b.score = 0.75;
    CHECK(hate_probability(b) == 0.25);
    WireVerdict c;
    c.label = "not_hate";
    c.scores = {{"hate", 0.3}, {"not_hate", 0.7}};
    CHECK(hate_probability(c) == 0.3);
    WireVerdict d;
    d.label = "toxic";
    d.score = 0.9;
    CHECK_FALSE(hate_probability(d));
}

TEST_CASE("endpoint backend over the wire protocol") {
    StubServer stub;
    stub.on_classify([](const json& req) {
        CHECK(req["task"] == "hate");
        json verdicts = json::array();
        for (const auto& t : req["texts"])
            verdicts.push_back({{"label", t.get<std::string>() == "bad" ? "hate" : "not_hate"}, {"score", 0.9}});
        return StubReply{200, json{{"verdicts", verdicts}}.dump()};
    });
    EndpointSpec spec;
    spec.url = stub.url();
    spec.rate_limit = 1000;
    EndpointHateBackend backend(std::make_shared<ClassifierEndpoint>(spec));
    std::vector<TextItem> items{{"1", "fine"}, {"2", "bad"}, {"3", "fine"}};
    auto v = classify_hate_batch(items, backend, 0.5);
    REQUIRE(v.size() == 3);
    CHECK_FALSE(v[0].is_hate);
    CHECK(v[1].is_hate);
    CHECK(*v[1].probability == 0.9);
    CHECK(*v[0].probability == doctest::Approx(0.1));
    CHECK(v[2].subject_id == "3");
    CHECK(v[1].backend == BackendKind::TransformerEndpoint);
}

TEST_CASE("canned backend reports missing entries as errors") {
    auto backend = CannedHateBackend(canned("a\thate\thate\t0.7\n"));
    std::vector<TextItem> items{{"a", "x"}, {"b", "y"}};
    auto v = classify_hate_batch(items, backend, 0.5);
    CHECK(v[0].ok());
    CHECK_FALSE(v[1].ok());
    CHECK_FALSE(v[1].is_hate);
}

TEST_CASE("property: raising the threshold never raises the rate") {
    std::mt19937_64 gen(55);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<HateVerdict> raw(1 + gen() % 50);
        for (auto& v : raw) v = scored(unit(gen));
        std::vector<double> thresholds(6);
        for (auto& t : thresholds) t = 0.001 + 0.998 * unit(gen);
        std::sort(thresholds.begin(), thresholds.end());
        double previous = 100.0;
        for (double t : thresholds) {
            const double rate = hatefulness_rate(rethreshold(raw, t));
            CHECK(rate <= previous);
            CHECK(rate >= 0.0);
            previous = rate;
        }
    }
}

TEST_CASE("property: the rate ignores order") {
    std::mt19937_64 gen(56);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<HateVerdict> v(1 + gen() % 40);
        for (auto& x : v) x = scored(unit(gen));
        const double before = hatefulness_rate(v);
        std::shuffle(v.begin(), v.end(), gen);
        CHECK(hatefulness_rate(v) == before);
    }
}

TEST_CASE("hate verdict store lines round-trip") {
    auto v = scored(0.123456789);
    v.backend = BackendKind::TransformerEndpoint;
    CHECK(hate_verdict_from_store_line(to_store_line(v)) == v);
    HateVerdict err;
    err.subject_id = "x";
    err.error = "boom";
    CHECK(hate_verdict_from_store_line(to_store_line(err)) == err);
}
