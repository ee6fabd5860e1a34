#pragma once

// Run configuration, stage orchestration and the run manifest.

#include "cneval/affect.hpp"
#include "cneval/aggregate.hpp"
#include "cneval/corpus.hpp"
#include "cneval/genclient.hpp"
#include "cneval/hatescore.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cneval {

/// Field-level problems found while validating a config file.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

/// Another process holds the output directory lock.
class LockHeld : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    Dataset dataset = Dataset::MtConan;
    fs::path path;
    std::optional<fs::path> descriptor;
    std::optional<std::size_t> sample_n;
    std::optional<std::uint64_t> sample_seed;  ///< defaults to the run seed
};

struct JudgeEndpoint {
    std::string endpoint;
    std::string api_key_env;
    double rate_limit = 1.0;
    JudgeOptions options;
};

struct BackendConfig {
    std::string name;
    BackendKind kind = BackendKind::Canned;
    EndpointSpec transformer;  ///< kind == TransformerEndpoint
    JudgeEndpoint judge;       ///< kind == LlmJudge
    fs::path canned_path;      ///< kind == Canned

    /// Checksum of everything that determines this backend's verdicts.
    std::string fingerprint() const;
};

struct RunConfig {
    fs::path config_path;
    std::string config_sha256;  ///< over the config with output_dir removed

    fs::path output_dir;
    std::uint64_t seed = 0;
    std::vector<DatasetConfig> datasets;
    std::vector<Strategy> strategies;
    std::vector<ModelSpec> models;
    std::optional<fs::path> prompts_path;
    std::optional<fs::path> refusal_rules_path;
    std::optional<fs::path> emotion_mapping_path;
    RetryPolicy retry;
    bool retry_failed = false;
    bool double_single_quotes = false;
    std::vector<BackendConfig> sentiment;
    std::vector<BackendConfig> emotion;
    std::optional<BackendConfig> hate;
    double hate_threshold = kDefaultHateThreshold;
    std::size_t top_k = 4;
    std::size_t flow_top_n = 5;
    bool offline = false;
};

/// Parses and validates a config file. Relative paths resolve against the
/// config file's directory. Throws ConfigError with every diagnostic found,
/// or DataError/MissingArtifact when the file itself cannot be read.
RunConfig validate_config(const fs::path& path);

struct ConfigOverrides {
    std::optional<fs::path> output_dir;
    std::optional<std::uint64_t> seed;
    bool offline = false;
};

/// Applies CLI overrides; --offline additionally requires canned backends.
void apply_overrides(RunConfig& config, const ConfigOverrides& overrides);

enum class Stage { Ingest, Generate, Score, Aggregate };
std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

struct PipelineResult {
    int exit_code = 0;
    fs::path report_dir;
    std::vector<std::string> messages;
};

/// Runs the requested stages in pipeline order under an exclusive lock on
/// the output directory. Stage failures are reported in the result; the
/// exit code is non-zero when any stage failed.
PipelineResult run_pipeline(const RunConfig& config, std::vector<Stage> stages);

/// Checks that every report file matches the checksum recorded in
/// summary.json. Returns the problems found (empty when intact).
std::vector<std::string> verify_report(const fs::path& report_dir);

}  // namespace cneval
