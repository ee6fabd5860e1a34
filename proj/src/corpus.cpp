#include "cneval/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

namespace cneval {

using nlohmann::json;

std::string_view to_string(Dataset d) {
    switch (d) {
        case Dataset::MtConan: return "mtconan";
        case Dataset::HatEval: return "hateval";
    }
    return "unknown";
}

Dataset parse_dataset(std::string_view s) {
    std::string key;
    for (char c : to_lower(s))
        if (c != '-' && c != '_') key.push_back(c);
    if (key == "mtconan" || key == "multitargetconan") return Dataset::MtConan;
    if (key == "hateval") return Dataset::HatEval;
    throw UsageError("unknown dataset '" + std::string(s) + "' (expected mtconan or hateval)");
}

// ---------------------------------------------------------------------------
// Descriptors

DatasetDescriptor DatasetDescriptor::builtin(Dataset d) {
    DatasetDescriptor desc;
    if (d == Dataset::MtConan) {
        desc.delimiter = ',';
        desc.quoted = true;
        desc.id_column = "INDEX";
        desc.text_column = "HATE_SPEECH";
        desc.counter_narrative_column = "COUNTER_NARRATIVE";
        desc.target_column = "TARGET";
    } else {
        desc.delimiter = '\t';
        desc.quoted = false;
        desc.id_column = "id";
        desc.text_column = "text";
    }
    return desc;
}

namespace {

json descriptor_json(const DatasetDescriptor& d) {
    json j;
    j["delimiter"] = std::string(1, d.delimiter);
    j["quoted"] = d.quoted;
    j["text_column"] = d.text_column;
    if (d.id_column) j["id_column"] = *d.id_column;
    if (d.counter_narrative_column) j["counter_narrative_column"] = *d.counter_narrative_column;
    if (d.target_column) j["target_column"] = *d.target_column;
    return j;
}

}  // namespace

DatasetDescriptor DatasetDescriptor::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(path.string() + ": descriptor must be an object");
    static const std::set<std::string> known{"delimiter", "quoted", "id_column", "text_column",
                                             "counter_narrative_column", "target_column"};
    for (const auto& [k, v] : j.items())
        if (!known.contains(k)) throw DataError(path.string() + ": unknown descriptor key '" + k + "'");
    DatasetDescriptor d;
    try {
        std::string delim = j.value("delimiter", std::string(","));
        if (delim == "\\t" || delim == "tab") delim = "\t";
        if (delim.size() != 1) throw DataError(path.string() + ": delimiter must be one character");
        d.delimiter = delim[0];
        d.quoted = j.value("quoted", d.delimiter == ',');
        if (!j.contains("text_column")) throw DataError(path.string() + ": text_column is required");
        d.text_column = j.at("text_column").get<std::string>();
        if (j.contains("id_column")) d.id_column = j.at("id_column").get<std::string>();
        if (j.contains("counter_narrative_column"))
            d.counter_narrative_column = j.at("counter_narrative_column").get<std::string>();
        if (j.contains("target_column")) d.target_column = j.at("target_column").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return d;
}

std::string DatasetDescriptor::checksum() const { return sha256_hex(descriptor_json(*this).dump()); }

// ---------------------------------------------------------------------------
// Delimited tables

DelimitedTable parse_delimited(std::string_view content, char delimiter, bool quoted) {
    if (content.starts_with("\xEF\xBB\xBF")) content.remove_prefix(3);

    std::vector<DelimitedTable::Row> rows;
    std::vector<std::string> fields;
    std::string field;
    std::size_t line = 1;
    std::size_t row_line = 1;
    bool in_quotes = false;
    bool row_has_content = false;

    auto end_row = [&] {
        fields.push_back(std::move(field));
        field.clear();
        if (row_has_content) rows.push_back({row_line, std::move(fields)});
        fields.clear();
        row_has_content = false;
    };

    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (quoted && c == '"' && field.empty()) {
            in_quotes = true;
            row_has_content = true;
        } else if (c == delimiter) {
            row_has_content = true;
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') {
            continue;
        } else if (c == '\n') {
            end_row();
            ++line;
            row_line = line;
        } else {
            row_has_content = true;
            field.push_back(c);
        }
    }
    if (in_quotes) throw DataError("unterminated quoted field starting on line " + std::to_string(row_line));
    if (row_has_content) end_row();

    DelimitedTable table;
    if (!rows.empty()) {
        for (auto& h : rows.front().fields) table.header.emplace_back(trim(h));
        rows.erase(rows.begin());
    }
    table.rows = std::move(rows);
    return table;
}

namespace {

std::optional<std::size_t> find_column(const std::vector<std::string>& header, const std::string& name) {
    const std::string want = to_lower(name);
    for (std::size_t i = 0; i < header.size(); ++i)
        if (to_lower(header[i]) == want) return i;
    return std::nullopt;
}

std::size_t require_column(const std::vector<std::string>& header, const std::string& name,
                           const fs::path& path) {
    auto idx = find_column(header, name);
    if (!idx) throw DataError(path.string() + ": missing required column '" + name + "'");
    return *idx;
}

std::string row_ref(const fs::path& path, const DelimitedTable::Row& row) {
    return path.string() + ": row at line " + std::to_string(row.line);
}

std::vector<HateRecord> load_table(const fs::path& path, const DatasetDescriptor& desc, Dataset dataset) {
    if (!fs::exists(path)) throw DataError("dataset file not found: " + path.string());
    DelimitedTable table = parse_delimited(read_file(path), desc.delimiter, desc.quoted);
    if (table.header.empty()) throw DataError(path.string() + ": empty file (no header)");

    const std::size_t text_col = require_column(table.header, desc.text_column, path);
    std::optional<std::size_t> id_col;
    if (desc.id_column) id_col = require_column(table.header, *desc.id_column, path);
    std::optional<std::size_t> cn_col;
    std::optional<std::size_t> target_col;
    if (dataset == Dataset::MtConan) {
        if (!desc.counter_narrative_column)
            throw DataError(path.string() + ": descriptor names no counter-narrative column");
        if (!desc.target_column) throw DataError(path.string() + ": descriptor names no target column");
        cn_col = require_column(table.header, *desc.counter_narrative_column, path);
        target_col = require_column(table.header, *desc.target_column, path);
    } else if (desc.target_column) {
        target_col = require_column(table.header, *desc.target_column, path);
    }

    std::vector<HateRecord> records;
    records.reserve(table.rows.size());
    std::size_t ordinal = 0;
    for (const auto& row : table.rows) {
        ++ordinal;
        if (row.fields.size() != table.header.size())
            throw DataError(row_ref(path, row) + ": expected " + std::to_string(table.header.size()) +
                            " fields, found " + std::to_string(row.fields.size()));
        HateRecord r;
        r.dataset = dataset;
        r.id = id_col ? std::string(trim(row.fields[*id_col])) : std::to_string(ordinal);
        if (r.id.empty()) throw DataError(row_ref(path, row) + ": empty id");
        r.text = std::string(trim(row.fields[text_col]));
        if (r.text.empty()) throw DataError(row_ref(path, row) + ": empty text");
        if (cn_col) {
            std::string cn(trim(row.fields[*cn_col]));
            if (cn.empty()) throw DataError(row_ref(path, row) + ": empty counter-narrative");
            r.human_cn = std::move(cn);
        }
        if (target_col) {
            std::string target(trim(row.fields[*target_col]));
            if (!target.empty()) r.target_group = std::move(target);
        }
        records.push_back(std::move(r));
    }
    check_unique_ids(records);
    return records;
}

}  // namespace

std::vector<HateRecord> load_mtconan(const fs::path& path) {
    return load_mtconan(path, DatasetDescriptor::builtin(Dataset::MtConan));
}

std::vector<HateRecord> load_mtconan(const fs::path& path, const DatasetDescriptor& desc) {
    return load_table(path, desc, Dataset::MtConan);
}

std::vector<HateRecord> load_hateval(const fs::path& path) {
    return load_hateval(path, DatasetDescriptor::builtin(Dataset::HatEval));
}

std::vector<HateRecord> load_hateval(const fs::path& path, const DatasetDescriptor& desc) {
    return load_table(path, desc, Dataset::HatEval);
}

void check_unique_ids(std::span<const HateRecord> records) {
    std::unordered_set<std::string> seen;
    seen.reserve(records.size());
    for (const auto& r : records)
        if (!seen.insert(r.id).second)
            throw DataError("duplicate id '" + r.id + "' in " + std::string(to_string(r.dataset)));
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

// Unbiased draw from [0, bound) by rejection; independent of the standard
// library's distribution implementations so samples are portable.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

}  // namespace

std::vector<HateRecord> sample_records(std::span<const HateRecord> records, SampleSpec spec) {
    if (spec.n == 0) throw UsageError("sample size must be positive");
    if (spec.n > records.size())
        throw UsageError("sample size " + std::to_string(spec.n) + " exceeds corpus size " +
                         std::to_string(records.size()));
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::vector<HateRecord> out;
    out.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, order.size() - i));
        std::swap(order[i], order[j]);
        out.push_back(records[order[i]]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record store

std::string to_store_line(const HateRecord& r) {
    json j = json::object();
    j["id"] = r.id;
    j["dataset"] = to_string(r.dataset);
    j["text"] = r.text;
    if (r.target_group) j["target_group"] = *r.target_group;
    if (r.human_cn) j["human_cn"] = *r.human_cn;
    return j.dump();
}

HateRecord from_store_line(std::string_view line) {
    try {
        json j = json::parse(line);
        HateRecord r;
        r.id = j.at("id").get<std::string>();
        r.dataset = parse_dataset(j.at("dataset").get<std::string>());
        r.text = j.at("text").get<std::string>();
        if (j.contains("target_group")) r.target_group = j.at("target_group").get<std::string>();
        if (j.contains("human_cn")) r.human_cn = j.at("human_cn").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad record line: ") + e.what());
    }
}

std::string serialize_records(std::span<const HateRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += to_store_line(r);
        out += '\n';
    }
    return out;
}

void write_record_store(const fs::path& path, std::span<const HateRecord> records) {
    write_file_atomic(path, serialize_records(records));
}

std::vector<HateRecord> read_record_store(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("record store not found: " + path.string());
    std::vector<HateRecord> out;
    std::size_t n = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            out.push_back(from_store_line(line));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string SampleManifest::to_json() const {
    json j;
    j["dataset"] = cneval::to_string(dataset);
    j["source_sha256"] = source_sha256;
    j["total_records"] = total_records;
    j["n"] = n;
    if (sample) {
        j["sample"] = {{"n", sample->n}, {"seed", sample->seed}};
    } else {
        j["sample"] = nullptr;
    }
    j["content_hash"] = content_hash;
    return j.dump(2) + "\n";
}

}  // namespace cneval
