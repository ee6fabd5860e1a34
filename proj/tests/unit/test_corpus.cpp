#include "doctest.h"

#include "cneval/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

using namespace cneval;

namespace {

const fs::path kFixtures = CNEVAL_FIXTURES_DIR;

fs::path temp_file(const std::string& name, const std::string& content) {
    auto dir = fs::temp_directory_path() / "cneval_test_corpus";
    fs::create_directories(dir);
    auto p = dir / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
}

std::vector<HateRecord> numbered(std::size_t n) {
    std::vector<HateRecord> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({"r" + std::to_string(i), Dataset::HatEval, "text " + std::to_string(i), {}, {}});
    return out;
}

}  // namespace

TEST_CASE("parse_delimited handles quoting, escaped quotes and embedded newlines") {
    auto t = parse_delimited("a,b,c\n1,\"x, y\",\"say \"\"hi\"\"\"\n2,\"multi\nline\",z\n", ',', true);
    REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].fields[1] == "x, y");
    CHECK(t.rows[0].fields[2] == "say \"hi\"");
    CHECK(t.rows[1].fields[1] == "multi\nline");
    CHECK(t.rows[0].line == 2);
    CHECK(t.rows[1].line == 3);
}

TEST_CASE("parse_delimited strips a BOM, CRLF endings and blank lines") {
    auto t = parse_delimited("\xEF\xBB\xBFid\ttext\r\n1\thello\r\n\r\n2\tworld\r\n", '\t', false);
    CHECK(t.header == std::vector<std::string>{"id", "text"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1].fields[1] == "world");
    CHECK(t.rows[1].line == 4);
}

TEST_CASE("parse_delimited rejects an unterminated quote") {
    CHECK_THROWS_AS(parse_delimited("a,b\n1,\"open\n", ',', true), DataError);
}

TEST_CASE("unquoted mode keeps quote characters verbatim") {
    auto t = parse_delimited("id\ttext\n1\t\"quoted\" tweet\n", '\t', false);
    CHECK(t.rows[0].fields[1] == "\"quoted\" tweet");
}

TEST_CASE("load_mtconan on a 3-row fixture matches field by field") {
    auto r = load_mtconan(kFixtures / "mtconan_3.csv");
    REQUIRE(r.size() == 3);
    CHECK(r[0] == HateRecord{"1", Dataset::MtConan, "Migrants steal our jobs.", "MIGRANTS",
                             "Migrants fill labour gaps and pay taxes, which supports everyone."});
    CHECK(r[1].id == "2");
    CHECK(r[1].target_group == "WOMEN");
    CHECK(r[2].text == "They are all \"criminals\", every one of them.");
    CHECK(r[2].human_cn == "Judging a whole group by a few people's actions is unfair.\nMost people simply want a safe life.");
}

TEST_CASE("load_mtconan with a header only yields no records") {
    CHECK(load_mtconan(kFixtures / "mtconan_header_only.csv").empty());
}

TEST_CASE("load_mtconan errors") {
    CHECK_THROWS_AS(load_mtconan(kFixtures / "does_not_exist.csv"), DataError);
    try {
        load_mtconan(kFixtures / "mtconan_missing_cn.csv");
        FAIL("expected a missing-column error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("COUNTER_NARRATIVE") != std::string::npos);
    }
    try {
        load_mtconan(kFixtures / "mtconan_short_row.csv");
        FAIL("expected a malformed-row error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("load_hateval on 5 rows leaves human_cn absent") {
    auto r = load_hateval(kFixtures / "hateval_5.tsv");
    REQUIRE(r.size() == 5);
    for (const auto& rec : r) {
        CHECK(rec.dataset == Dataset::HatEval);
        CHECK_FALSE(rec.human_cn.has_value());
    }
    CHECK(r[0].id == "20000");
    CHECK(r[0].text.find("http://t.co/x0") != std::string::npos);
}

TEST_CASE("load_hateval row count equals line count minus header") {
    const std::string content = read_file(kFixtures / "hateval_100.tsv");
    const auto lines = static_cast<std::size_t>(std::count(content.begin(), content.end(), '\n'));
    CHECK(load_hateval(kFixtures / "hateval_100.tsv").size() == lines - 1);
    CHECK(lines - 1 == 100);
}

TEST_CASE("load_hateval rejects empty text and duplicate ids") {
    try {
        load_hateval(kFixtures / "hateval_empty_text.tsv");
        FAIL("expected an empty-text error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        load_hateval(kFixtures / "hateval_dup.tsv");
        FAIL("expected a duplicate-id error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("'7'") != std::string::npos);
    }
}

TEST_CASE("descriptor files remap column names") {
    auto desc_path = temp_file("desc.json", R"({"delimiter": ";", "quoted": false, "id_column": "key",
                                               "text_column": "tweet"})");
    auto data = temp_file("alt.csv", "key;tweet;extra\nk1;  padded text  ;x\n");
    auto r = load_hateval(data, DatasetDescriptor::load(desc_path));
    REQUIRE(r.size() == 1);
    CHECK(r[0].id == "k1");
    CHECK(r[0].text == "padded text");

    auto bad = temp_file("bad_desc.json", R"({"text_column": "t", "colour": "blue"})");
    CHECK_THROWS_AS(DatasetDescriptor::load(bad), DataError);
}

TEST_CASE("ids default to the row ordinal when the descriptor has no id column") {
    auto desc = DatasetDescriptor::builtin(Dataset::HatEval);
    desc.id_column.reset();
    auto data = temp_file("noid.tsv", "id\ttext\nx\tfirst\ny\tsecond\n");
    auto r = load_hateval(data, desc);
    CHECK(r[0].id == "1");
    CHECK(r[1].id == "2");
}

TEST_CASE("record store round-trips") {
    auto records = load_mtconan(kFixtures / "mtconan_3.csv");
    auto hateval = load_hateval(kFixtures / "hateval_5.tsv");
    records.insert(records.end(), hateval.begin(), hateval.end());
    auto p = fs::temp_directory_path() / "cneval_test_corpus" / "store.jsonl";
    write_record_store(p, records);
    CHECK(read_record_store(p) == records);
    CHECK_THROWS_AS(read_record_store(p.parent_path() / "missing.jsonl"), MissingArtifact);
}

TEST_CASE("sample_records golden value: n=3 of 10, seed 42") {
    // Frozen from tests/oracles/sample_oracle.py 10 3 42 -> [6, 0, 4].
    auto records = load_mtconan(kFixtures / "mtconan_10.csv");
    auto s = sample_records(records, {3, 42});
    REQUIRE(s.size() == 3);
    CHECK(s[0].id == "7");
    CHECK(s[1].id == "1");
    CHECK(s[2].id == "5");
}

TEST_CASE("sample_records golden value: n=5 of 100, seed 7") {
    // tests/oracles/sample_oracle.py 100 5 7 -> [15, 52, 94, 7, 65]
    auto s = sample_records(numbered(100), {5, 7});
    std::vector<std::string> ids;
    for (const auto& r : s) ids.push_back(r.id);
    CHECK(ids == std::vector<std::string>{"r15", "r52", "r94", "r7", "r65"});
}

TEST_CASE("sample_records contracts") {
    auto records = numbered(10);
    SUBCASE("exhaustive draw is a permutation") {
        auto s = sample_records(records, {10, 1});
        std::set<std::string> ids;
        for (const auto& r : s) ids.insert(r.id);
        CHECK(ids.size() == 10);
    }
    SUBCASE("same seed gives identical output") {
        CHECK(sample_records(records, {4, 99}) == sample_records(records, {4, 99}));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(sample_records(records, {11, 1}), UsageError);
        CHECK_THROWS_AS(sample_records(records, {0, 1}), UsageError);
    }
}

TEST_CASE("property: samples are duplicate-free subsets, deterministic per seed") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t size = 1 + gen() % 60;
        const std::size_t n = 1 + gen() % size;
        const std::uint64_t seed = gen();
        auto records = numbered(size);
        auto a = sample_records(records, {n, seed});
        CHECK(a.size() == n);
        std::set<std::string> ids;
        for (const auto& r : a) {
            ids.insert(r.id);
            CHECK(std::find(records.begin(), records.end(), r) != records.end());
        }
        CHECK(ids.size() == n);
        CHECK(a == sample_records(records, {n, seed}));
    }
}

TEST_CASE("sample manifests are byte-identical across runs") {
    auto records = load_mtconan(kFixtures / "mtconan_10.csv");
    auto make = [&] {
        SampleManifest m;
        m.dataset = Dataset::MtConan;
        m.source_sha256 = {sha256_file(kFixtures / "mtconan_10.csv")};
        m.total_records = records.size();
        m.sample = SampleSpec{3, 42};
        auto s = sample_records(records, *m.sample);
        m.n = s.size();
        m.content_hash = sha256_hex(serialize_records(s));
        return m.to_json();
    };
    CHECK(make() == make());
}

TEST_CASE("dataset names parse loosely") {
    CHECK(parse_dataset("MT-Conan") == Dataset::MtConan);
    CHECK(parse_dataset("hat_eval") == Dataset::HatEval);
    CHECK_THROWS(parse_dataset("reddit"));
}
