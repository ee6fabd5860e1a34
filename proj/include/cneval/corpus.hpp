#pragma once

// Dataset ingestion: delimited-table readers for the two hate-speech corpora,
// a line-per-record store, and reproducible sampling.

#include "cneval/common.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cneval {

enum class Dataset { MtConan, HatEval };

std::string_view to_string(Dataset d);
/// Accepts "mtconan" / "hateval" (case-insensitive, '-' and '_' ignored).
Dataset parse_dataset(std::string_view s);

struct HateRecord {
    std::string id;
    Dataset dataset = Dataset::MtConan;
    std::string text;
    std::optional<std::string> target_group;
    std::optional<std::string> human_cn;

    bool operator==(const HateRecord&) const = default;
};

/// Column mapping for one delimited dataset file. Public mirrors disagree on
/// header spelling, so each dataset ships a descriptor instead of fixed names.
struct DatasetDescriptor {
    char delimiter = ',';
    bool quoted = true;  ///< RFC 4180 quoting; off for plain TSV
    std::optional<std::string> id_column;  ///< row number is used when absent
    std::string text_column;
    std::optional<std::string> counter_narrative_column;
    std::optional<std::string> target_column;

    static DatasetDescriptor builtin(Dataset d);
    /// Structured-text (JSON) descriptor file; unknown keys are rejected.
    static DatasetDescriptor load(const fs::path& path);
    std::string checksum() const;
};

/// A parsed delimited table: header plus rows, each tagged with the 1-based
/// physical line on which it starts.
struct DelimitedTable {
    std::vector<std::string> header;
    struct Row {
        std::size_t line = 0;
        std::vector<std::string> fields;
    };
    std::vector<Row> rows;
};

DelimitedTable parse_delimited(std::string_view content, char delimiter, bool quoted);

std::vector<HateRecord> load_mtconan(const fs::path& path);
std::vector<HateRecord> load_mtconan(const fs::path& path, const DatasetDescriptor& desc);
std::vector<HateRecord> load_hateval(const fs::path& path);
std::vector<HateRecord> load_hateval(const fs::path& path, const DatasetDescriptor& desc);

/// Throws DataError naming the first repeated id.
void check_unique_ids(std::span<const HateRecord> records);

struct SampleSpec {
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

/// Draws spec.n distinct records without replacement (partial Fisher-Yates
/// over a 64-bit Mersenne Twister). Output is in draw order.
std::vector<HateRecord> sample_records(std::span<const HateRecord> records, SampleSpec spec);

std::string to_store_line(const HateRecord& r);
HateRecord from_store_line(std::string_view line);
std::string serialize_records(std::span<const HateRecord> records);
void write_record_store(const fs::path& path, std::span<const HateRecord> records);
std::vector<HateRecord> read_record_store(const fs::path& path);

struct SampleManifest {
    Dataset dataset = Dataset::MtConan;
    std::vector<std::string> source_sha256;
    std::size_t total_records = 0;
    std::optional<SampleSpec> sample;
    std::size_t n = 0;
    std::string content_hash;  ///< sha256 of the serialized working set

    std::string to_json() const;
};

}  // namespace cneval
