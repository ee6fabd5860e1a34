#include "cneval/pipeline.hpp"

#include "cneval/prompting.hpp"
#include "cneval/textmetrics.hpp"
#include "json.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <regex>
#include <set>

namespace cneval {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error("invalid config:\n  " + join(diagnostics, "\n  ")), diagnostics_(std::move(diagnostics)) {}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

const std::regex kNamePattern("[A-Za-z0-9][A-Za-z0-9_.:-]*");

/// Typed accessors over one JSON object that record diagnostics under a
/// dotted field path instead of throwing.
class Fields {
public:
    Fields(const json& j, std::string path, std::vector<std::string>& diags, const fs::path& base,
           std::initializer_list<std::string_view> allowed)
        : j_(j), path_(std::move(path)), diags_(diags), base_(base) {
        if (!j_.is_object()) {
            error("", "expected an object");
            valid_ = false;
            return;
        }
        for (const auto& [key, value] : j_.items())
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
                error(key, "unknown key (allowed: " + join(std::vector<std::string>(allowed.begin(), allowed.end()), ", ") + ")");
    }

    bool valid() const { return valid_; }
    bool has(const char* key) const { return valid_ && j_.contains(key) && !j_.at(key).is_null(); }
    const json& at(const char* key) const { return j_.at(key); }
    std::string field(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

    void error(std::string_view key, const std::string& msg) const {
        diags_.push_back((key.empty() ? (path_.empty() ? std::string("<root>") : path_) : field(key)) + ": " + msg);
    }

    std::optional<std::string> str(const char* key, bool required = false) const {
        if (!has(key)) {
            if (required) error(key, "required");
            return std::nullopt;
        }
        if (!j_.at(key).is_string()) {
            error(key, "expected a string");
            return std::nullopt;
        }
        return j_.at(key).get<std::string>();
    }

    std::optional<double> number(const char* key, double lo, double hi, bool lo_open = false) const {
        if (!has(key)) return std::nullopt;
        const auto& v = j_.at(key);
        if (!v.is_number()) {
            error(key, "expected a number");
            return std::nullopt;
        }
        const double d = v.get<double>();
        if (d < lo || d > hi || (lo_open && d == lo)) {
            error(key, "out of range " + std::string(lo_open ? "(" : "[") + format_decimal(lo, 3) + ", " +
                           format_decimal(hi, 3) + "]");
            return std::nullopt;
        }
        return d;
    }

    std::optional<std::uint64_t> uint(const char* key, std::uint64_t lo = 0) const {
        if (!has(key)) return std::nullopt;
        const auto& v = j_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            error(key, "expected a non-negative integer");
            return std::nullopt;
        }
        const auto u = v.get<std::uint64_t>();
        if (u < lo) {
            error(key, "must be at least " + std::to_string(lo));
            return std::nullopt;
        }
        return u;
    }

    std::optional<bool> boolean(const char* key) const {
        if (!has(key)) return std::nullopt;
        if (!j_.at(key).is_boolean()) {
            error(key, "expected true or false");
            return std::nullopt;
        }
        return j_.at(key).get<bool>();
    }

    /// Resolved against the config directory; must exist.
    std::optional<fs::path> existing_path(const char* key, bool required = false) const {
        auto s = str(key, required);
        if (!s) return std::nullopt;
        fs::path p = fs::path(*s).is_absolute() ? fs::path(*s) : base_ / *s;
        p = p.lexically_normal();
        if (!fs::exists(p)) {
            error(key, "path does not exist: " + p.string());
            return std::nullopt;
        }
        return p;
    }

    std::optional<std::string> name(const char* key) const {
        auto s = str(key, true);
        if (s && !std::regex_match(*s, kNamePattern)) {
            error(key, "'" + *s + "' must match [A-Za-z0-9][A-Za-z0-9_.:-]*");
            return std::nullopt;
        }
        return s;
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string>& diags_;
    fs::path base_;
    bool valid_ = true;
};

std::string indexed(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

RetryPolicy parse_retry(const Fields& f) {
    RetryPolicy r;
    if (auto v = f.uint("max_attempts", 1)) r.max_attempts = static_cast<int>(*v);
    if (auto v = f.uint("initial_backoff_ms")) r.initial_backoff = std::chrono::milliseconds(*v);
    if (auto v = f.uint("max_backoff_ms")) r.max_backoff = std::chrono::milliseconds(*v);
    if (auto v = f.uint("timeout_ms", 1)) r.timeout = std::chrono::milliseconds(*v);
    return r;
}

std::optional<BackendConfig> parse_backend(const json& j, const std::string& path, std::vector<std::string>& diags,
                                           const fs::path& base, const RetryPolicy& retry, bool allow_judge) {
    Fields f(j, path, diags, base,
             {"name", "kind", "url", "endpoint", "model", "api_key_env", "batch_size", "rate_limit", "max_in_flight",
              "temperature", "max_tokens", "retries", "path"});
    if (!f.valid()) return std::nullopt;
    BackendConfig b;
    auto name = f.name("name");
    auto kind = f.str("kind", true);
    if (name) b.name = *name;
    if (!kind) return std::nullopt;

    auto reject = [&](std::initializer_list<const char*> keys) {
        for (const char* k : keys)
            if (f.has(k)) f.error(k, "not valid for kind '" + *kind + "'");
    };
    if (*kind == "transformer") {
        b.kind = BackendKind::TransformerEndpoint;
        reject({"endpoint", "model", "temperature", "max_tokens", "retries", "path"});
        if (auto url = f.str("url", true)) b.transformer.url = *url;
        b.transformer.api_key_env = f.str("api_key_env").value_or("");
        if (auto v = f.uint("batch_size", 1)) b.transformer.batch_size = *v;
        if (auto v = f.uint("max_in_flight", 1)) b.transformer.max_in_flight = *v;
        if (auto v = f.number("rate_limit", 0.0, 1e6, true)) b.transformer.rate_limit = *v;
        b.transformer.retry = retry;
    } else if (*kind == "judge") {
        if (!allow_judge) f.error("kind", "the judge backend cannot score hatefulness");
        b.kind = BackendKind::LlmJudge;
        reject({"url", "batch_size", "path"});
        if (auto e = f.str("endpoint", true)) b.judge.endpoint = *e;
        if (auto m = f.str("model", true)) b.judge.options.model = *m;
        b.judge.api_key_env = f.str("api_key_env").value_or("");
        if (auto v = f.number("temperature", 0.0, 2.0)) b.judge.options.temperature = *v;
        if (auto v = f.uint("max_tokens", 1)) b.judge.options.max_tokens = static_cast<int>(*v);
        if (auto v = f.uint("retries")) b.judge.options.retries = static_cast<int>(*v);
        if (auto v = f.uint("max_in_flight", 1)) b.judge.options.max_in_flight = *v;
        if (auto v = f.number("rate_limit", 0.0, 1e6, true)) b.judge.rate_limit = *v;
    } else if (*kind == "canned") {
        b.kind = BackendKind::Canned;
        reject({"url", "endpoint", "model", "api_key_env", "batch_size", "rate_limit", "max_in_flight", "temperature",
                "max_tokens", "retries"});
        if (auto p = f.existing_path("path", true)) b.canned_path = *p;
    } else {
        f.error("kind", "unknown backend kind '" + *kind + "' (allowed: transformer, judge, canned)");
        return std::nullopt;
    }
    return b;
}

std::optional<ModelSpec> parse_model(const json& j, const std::string& path, std::vector<std::string>& diags,
                                     const fs::path& base) {
    Fields f(j, path, diags, base,
             {"name", "family", "endpoint", "temperature", "max_output_tokens", "rate_limit", "api_key_env",
              "max_in_flight", "system_placement"});
    if (!f.valid()) return std::nullopt;
    ModelSpec m;
    if (auto n = f.name("name")) m.name = *n;
    if (auto e = f.str("endpoint", true)) m.endpoint = *e;
    if (auto fam = f.str("family")) {
        if (auto parsed = parse_family(*fam))
            m.family = *parsed;
        else
            f.error("family", "unknown family '" + *fam + "' (allowed: gpt, llama, cohere, other)");
    }
    if (auto v = f.number("temperature", 0.0, 2.0)) m.temperature = *v;
    if (auto v = f.uint("max_output_tokens", 1)) m.max_output_tokens = static_cast<int>(*v);
    if (auto v = f.number("rate_limit", 0.0, 1e6, true)) m.rate_limit = *v;
    m.api_key_env = f.str("api_key_env").value_or("");
    if (auto v = f.uint("max_in_flight", 1)) m.max_in_flight = *v;
    if (auto p = f.str("system_placement")) {
        if (*p == "system_role")
            m.system_placement = SystemPlacement::SystemRole;
        else if (*p == "user_prefix")
            m.system_placement = SystemPlacement::UserPrefix;
        else
            f.error("system_placement", "unknown placement '" + *p + "' (allowed: system_role, user_prefix)");
    }
    return m;
}

std::string strategy_names() {
    std::vector<std::string> names;
    for (Strategy s : kAllStrategies) names.emplace_back(to_string(s));
    return join(names, ", ");
}

}  // namespace

std::string BackendConfig::fingerprint() const {
    json j;
    j["kind"] = to_string(kind);
    switch (kind) {
        case BackendKind::TransformerEndpoint:
            j["url"] = transformer.url;
            j["batch_size"] = transformer.batch_size;
            break;
        case BackendKind::LlmJudge:
            j["endpoint"] = judge.endpoint;
            j["model"] = judge.options.model;
            j["temperature"] = format_decimal(judge.options.temperature, 4);
            j["max_tokens"] = judge.options.max_tokens;
            j["retries"] = judge.options.retries;
            break;
        case BackendKind::Canned:
            j["sha256"] = sha256_file(canned_path);
            break;
    }
    return sha256_hex(j.dump());
}

RunConfig validate_config(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("config file not found: " + path.string());
    json root;
    try {
        root = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError({std::string("<root>: not valid JSON: ") + e.what()});
    }

    std::vector<std::string> diags;
    RunConfig c;
    c.config_path = fs::absolute(path).lexically_normal();
    const fs::path base = c.config_path.parent_path();
    Fields f(root, "", diags, base,
             {"output_dir", "seed", "datasets", "strategies", "models", "assets", "retry", "retry_failed",
              "double_single_quotes", "backends", "hate_threshold", "top_k", "flow_top_n"});
    if (!f.valid()) throw ConfigError(std::move(diags));

    {
        json hashed = root;
        hashed.erase("output_dir");
        c.config_sha256 = sha256_hex(hashed.dump());
    }

    auto out = f.str("output_dir").value_or("out");
    c.output_dir = (fs::path(out).is_absolute() ? fs::path(out) : base / out).lexically_normal();
    c.seed = f.uint("seed").value_or(0);

    if (!f.has("datasets") || !f.at("datasets").is_array() || f.at("datasets").empty()) {
        f.error("datasets", "required: a non-empty array");
    } else {
        std::set<Dataset> seen;
        for (std::size_t i = 0; i < f.at("datasets").size(); ++i) {
            const std::string p = indexed("datasets", i);
            Fields d(f.at("datasets")[i], p, diags, base, {"name", "path", "descriptor", "sample"});
            if (!d.valid()) continue;
            DatasetConfig dc;
            if (auto n = d.str("name", true)) {
                try {
                    dc.dataset = parse_dataset(*n);
                } catch (const std::exception&) {
                    d.error("name", "unknown dataset '" + *n + "' (allowed: mtconan, hateval)");
                    continue;
                }
                if (!seen.insert(dc.dataset).second) d.error("name", "dataset listed twice");
            }
            if (auto p2 = d.existing_path("path", true)) dc.path = *p2;
            dc.descriptor = d.existing_path("descriptor");
            if (d.has("sample")) {
                Fields s(d.at("sample"), d.field("sample"), diags, base, {"n", "seed"});
                if (s.valid()) {
                    dc.sample_n = s.uint("n", 1);
                    if (!s.has("n")) s.error("n", "required");
                    dc.sample_seed = s.uint("seed");
                }
            }
            c.datasets.push_back(dc);
        }
    }

    if (f.has("strategies")) {
        if (!f.at("strategies").is_array() || f.at("strategies").empty()) {
            f.error("strategies", "expected a non-empty array");
        } else {
            for (std::size_t i = 0; i < f.at("strategies").size(); ++i) {
                const auto& v = f.at("strategies")[i];
                auto s = v.is_string() ? parse_strategy(v.get<std::string>()) : std::nullopt;
                if (!s) {
                    diags.push_back(indexed("strategies", i) + ": unknown strategy " + v.dump() +
                                    " (allowed: " + strategy_names() + ")");
                } else if (std::find(c.strategies.begin(), c.strategies.end(), *s) == c.strategies.end()) {
                    c.strategies.push_back(*s);
                }
            }
        }
    } else {
        c.strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
    }

    if (f.has("retry")) {
        Fields r(f.at("retry"), "retry", diags, base, {"max_attempts", "initial_backoff_ms", "max_backoff_ms", "timeout_ms"});
        if (r.valid()) c.retry = parse_retry(r);
    }

    if (f.has("models")) {
        if (!f.at("models").is_array()) {
            f.error("models", "expected an array");
        } else {
            std::set<std::string> names;
            for (std::size_t i = 0; i < f.at("models").size(); ++i) {
                auto m = parse_model(f.at("models")[i], indexed("models", i), diags, base);
                if (!m) continue;
                if (!m->name.empty() && !names.insert(m->name).second)
                    diags.push_back(indexed("models", i) + ".name: duplicate model name '" + m->name + "'");
                c.models.push_back(*m);
            }
        }
    }

    if (f.has("assets")) {
        Fields a(f.at("assets"), "assets", diags, base, {"prompts", "refusal_rules", "emotion_mapping"});
        if (a.valid()) {
            c.prompts_path = a.existing_path("prompts");
            c.refusal_rules_path = a.existing_path("refusal_rules");
            c.emotion_mapping_path = a.existing_path("emotion_mapping");
        }
    }

    c.retry_failed = f.boolean("retry_failed").value_or(false);
    c.double_single_quotes = f.boolean("double_single_quotes").value_or(false);
    c.hate_threshold = f.number("hate_threshold", 0.0, 1.0, true).value_or(kDefaultHateThreshold);
    if (c.hate_threshold >= 1.0) f.error("hate_threshold", "must be below 1");
    if (auto k = f.uint("top_k", 1)) c.top_k = *k;
    if (auto n = f.uint("flow_top_n")) c.flow_top_n = *n;

    if (f.has("backends")) {
        Fields b(f.at("backends"), "backends", diags, base, {"sentiment", "emotion", "hate"});
        if (b.valid()) {
            for (const char* task : {"sentiment", "emotion"}) {
                if (!b.has(task)) continue;
                if (!b.at(task).is_array()) {
                    b.error(task, "expected an array of backends");
                    continue;
                }
                auto& dest = std::string(task) == "sentiment" ? c.sentiment : c.emotion;
                std::set<std::string> names;
                for (std::size_t i = 0; i < b.at(task).size(); ++i) {
                    const std::string p = indexed(b.field(task), i);
                    auto be = parse_backend(b.at(task)[i], p, diags, base, c.retry, true);
                    if (!be) continue;
                    if (!be->name.empty() && !names.insert(be->name).second)
                        diags.push_back(p + ".name: duplicate backend name '" + be->name + "'");
                    dest.push_back(*be);
                }
            }
            if (b.has("hate")) c.hate = parse_backend(b.at("hate"), b.field("hate"), diags, base, c.retry, false);
        }
    }

    if (!diags.empty()) throw ConfigError(std::move(diags));
    return c;
}

void apply_overrides(RunConfig& config, const ConfigOverrides& o) {
    if (o.output_dir) config.output_dir = fs::absolute(*o.output_dir).lexically_normal();
    if (o.seed) {
        config.seed = *o.seed;
        for (auto& d : config.datasets) d.sample_seed.reset();
    }
    if (o.offline) {
        config.offline = true;
        std::vector<std::string> diags;
        auto check = [&](const BackendConfig& b, const std::string& where) {
            if (b.kind != BackendKind::Canned)
                diags.push_back(where + ": offline mode requires a canned backend, '" + b.name + "' is " +
                                std::string(to_string(b.kind)));
        };
        for (std::size_t i = 0; i < config.sentiment.size(); ++i)
            check(config.sentiment[i], indexed("backends.sentiment", i));
        for (std::size_t i = 0; i < config.emotion.size(); ++i) check(config.emotion[i], indexed("backends.emotion", i));
        if (config.hate) check(*config.hate, "backends.hate");
        if (!diags.empty()) throw ConfigError(std::move(diags));
    }
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::Ingest: return "ingest";
        case Stage::Generate: return "generate";
        case Stage::Score: return "score";
        case Stage::Aggregate: return "aggregate";
    }
    return "unknown";
}

std::optional<Stage> parse_stage(std::string_view s) {
    const std::string key = to_lower(trim(s));
    for (Stage st : {Stage::Ingest, Stage::Generate, Stage::Score, Stage::Aggregate})
        if (key == to_string(st)) return st;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        fs::create_directories(dir);
        const fs::path p = dir / ".lock";
        fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw std::runtime_error("cannot open lock file " + p.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw LockHeld("output directory " + dir.string() + " is locked by another run");
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

/// Append-only verdict log for one (task, backend). Latest row per subject wins.
class ScoreLog {
public:
    ScoreLog(fs::path dir, Task task, const BackendConfig& backend)
        : log_(dir / (std::string(to_string(task)) + "." + backend.name + ".jsonl")),
          meta_(dir / (std::string(to_string(task)) + "." + backend.name + ".meta.json")),
          fingerprint_(backend.fingerprint()) {}

    const fs::path& path() const { return log_; }
    bool exists() const { return fs::exists(log_); }

    /// Loads existing rows; a store built by a different backend is discarded.
    /// Returns false when the store was reset.
    bool open_for_append() {
        fs::create_directories(log_.parent_path());
        bool kept = true;
        if (fs::exists(meta_)) {
            json m = json::parse(read_file(meta_));
            if (m.value("fingerprint", "") != fingerprint_) {
                fs::remove(log_);
                kept = false;
            }
        } else if (fs::exists(log_)) {
            fs::remove(log_);
            kept = false;
        }
        write_file_atomic(meta_, json{{"fingerprint", fingerprint_}}.dump() + "\n");
        if (fs::exists(log_)) {
            std::string content = read_file(log_);
            if (!content.empty() && content.back() != '\n') {
                const auto keep = content.rfind('\n');
                content.resize(keep == std::string::npos ? 0 : keep + 1);
                fs::resize_file(log_, content.size());
            }
        }
        load();
        return kept;
    }

    void load() {
        latest_.clear();
        if (!fs::exists(log_)) return;
        std::size_t n = 0;
        for (const auto& line : split_lines(read_file(log_))) {
            ++n;
            if (trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception&) {
                // Only a torn final line is tolerated; open_for_append trims it.
                throw DataError(log_.string() + ":" + std::to_string(n) + ": unparseable row");
            }
            latest_[j.at("subject_id").get<std::string>()] = line;
        }
    }

    void append(const std::vector<std::string>& lines) {
        std::ofstream out(log_, std::ios::binary | std::ios::app);
        for (const auto& l : lines) out << l << '\n';
        out.flush();
        if (!out) throw std::runtime_error("cannot append to " + log_.string());
        for (const auto& l : lines) latest_[json::parse(l).at("subject_id").get<std::string>()] = l;
    }

    const std::map<std::string, std::string>& latest() const { return latest_; }

    /// Digest over the latest row of each listed subject, in id order.
    std::string digest() const {
        std::string all;
        for (const auto& [id, line] : latest_) all += line + "\n";
        return sha256_hex(all);
    }

private:
    fs::path log_;
    fs::path meta_;
    std::string fingerprint_;
    std::map<std::string, std::string> latest_;
};

constexpr std::size_t kScoreChunk = 64;

struct Context {
    const RunConfig& config;
    PromptAssets prompts;
    RefusalRuleSet rules;
    EmotionMapping mapping;
    std::shared_ptr<RateLimiterRegistry> limiters = std::make_shared<RateLimiterRegistry>();
    std::vector<std::string>& messages;

    fs::path data_dir() const { return config.output_dir / "data"; }
    fs::path generations_dir() const { return config.output_dir / "generations"; }
    fs::path scores_dir() const { return config.output_dir / "scores"; }
    fs::path report_dir() const { return config.output_dir / "report"; }
    fs::path records_path(Dataset d) const { return data_dir() / (std::string(to_string(d)) + ".records.jsonl"); }
    fs::path sample_path(Dataset d) const { return data_dir() / (std::string(to_string(d)) + ".sample.json"); }

    void log(Stage s, const std::string& msg) const {
        std::string line = "[" + std::string(to_string(s)) + "] " + msg;
        std::cerr << line << std::endl;
        messages.push_back(std::move(line));
    }
};

std::uint64_t sample_seed(const RunConfig& c, const DatasetConfig& d) { return d.sample_seed.value_or(c.seed); }

void stage_ingest(Context& ctx) {
    for (const auto& d : ctx.config.datasets) {
        const DatasetDescriptor desc = d.descriptor ? DatasetDescriptor::load(*d.descriptor) : DatasetDescriptor::builtin(d.dataset);
        auto records = d.dataset == Dataset::MtConan ? load_mtconan(d.path, desc) : load_hateval(d.path, desc);
        check_unique_ids(records);
        SampleManifest m;
        m.dataset = d.dataset;
        m.source_sha256 = {sha256_file(d.path)};
        m.total_records = records.size();
        if (d.sample_n) {
            SampleSpec spec{*d.sample_n, sample_seed(ctx.config, d)};
            records = sample_records(records, spec);
            m.sample = spec;
        }
        m.n = records.size();
        m.content_hash = sha256_hex(serialize_records(records));
        write_record_store(ctx.records_path(d.dataset), records);
        write_file_atomic(ctx.sample_path(d.dataset), m.to_json());
        ctx.log(Stage::Ingest, std::string(to_string(d.dataset)) + ": " + std::to_string(records.size()) + " of " +
                                   std::to_string(m.total_records) + " records");
    }
}

std::vector<HateRecord> load_records(const Context& ctx) {
    std::vector<HateRecord> all;
    for (const auto& d : ctx.config.datasets) {
        const auto p = ctx.records_path(d.dataset);
        if (!fs::exists(p))
            throw MissingArtifact("no ingested records for " + std::string(to_string(d.dataset)) + " at " + p.string() +
                                  "; run the ingest stage first");
        auto records = read_record_store(p);
        all.insert(all.end(), records.begin(), records.end());
    }
    return all;
}

PromptOptions prompt_options(const RunConfig& c) {
    PromptOptions o;
    o.double_single_quotes = c.double_single_quotes;
    return o;
}

void stage_generate(Context& ctx) {
    if (ctx.config.models.empty()) {
        ctx.log(Stage::Generate, "no models configured; nothing to generate");
        return;
    }
    const auto records = load_records(ctx);
    GenerationStore store(ctx.generations_dir());
    BatchOptions opts;
    opts.prompt = prompt_options(ctx.config);
    opts.retry_failed = ctx.config.retry_failed;
    opts.offline = ctx.config.offline;
    auto summary = run_generation_batch(records, ctx.config.strategies, ctx.config.models, store, ctx.prompts,
                                        http_client_factory(ctx.config.retry, ctx.limiters), opts);
    ctx.log(Stage::Generate, std::to_string(summary.completed) + " completed, " + std::to_string(summary.cached) +
                                 " cached, " + std::to_string(summary.failed) + " failed");
}

/// Terminal generation rows for the configured (record, strategy, model)
/// triples, in record, strategy, model order.
std::vector<GenerationRecord> current_generations(const Context& ctx, std::span<const HateRecord> records) {
    std::vector<GenerationRecord> out;
    if (ctx.config.models.empty()) return out;
    const fs::path dir = ctx.generations_dir();
    if (!fs::exists(dir / "generations.jsonl"))
        throw MissingArtifact("no generation store at " + dir.string() + "; run the generate stage first");
    GenerationStore store(dir);
    const auto opts = prompt_options(ctx.config);
    std::size_t missing = 0;
    for (const auto& r : records)
        for (Strategy s : ctx.config.strategies)
            for (const auto& m : ctx.config.models) {
                auto row = store.find(key_for(build_prompt(s, r, m.family, ctx.prompts, opts), m, r));
                if (row)
                    out.push_back(*row);
                else
                    ++missing;
            }
    if (missing > 0)
        throw MissingArtifact(std::to_string(missing) +
                              " configured generations are missing from the store; run the generate stage first");
    return out;
}

std::unique_ptr<AffectBackend> make_affect_backend(const Context& ctx, const BackendConfig& b) {
    switch (b.kind) {
        case BackendKind::TransformerEndpoint: {
            auto limiter = ctx.limiters->for_endpoint(b.transformer.url, b.transformer.rate_limit);
            return std::make_unique<TransformerBackend>(std::make_shared<ClassifierEndpoint>(b.transformer, limiter));
        }
        case BackendKind::LlmJudge: {
            auto limiter = ctx.limiters->for_endpoint(b.judge.endpoint, b.judge.rate_limit);
            auto client = std::make_shared<HttpChatClient>(b.judge.endpoint, b.judge.api_key_env, ctx.config.retry, limiter);
            return std::make_unique<JudgeBackend>(client, b.judge.options, ctx.prompts, ctx.mapping);
        }
        case BackendKind::Canned:
            return std::make_unique<CannedBackend>(std::make_shared<CannedVerdicts>(CannedVerdicts::load(b.canned_path)));
    }
    throw UsageError("unknown backend kind");
}

std::unique_ptr<HateBackend> make_hate_backend(const Context& ctx, const BackendConfig& b) {
    if (b.kind == BackendKind::TransformerEndpoint) {
        auto limiter = ctx.limiters->for_endpoint(b.transformer.url, b.transformer.rate_limit);
        return std::make_unique<EndpointHateBackend>(std::make_shared<ClassifierEndpoint>(b.transformer, limiter));
    }
    if (b.kind == BackendKind::Canned)
        return std::make_unique<CannedHateBackend>(std::make_shared<CannedVerdicts>(CannedVerdicts::load(b.canned_path)));
    throw UsageError("hate backend '" + b.name + "' must be a transformer endpoint or canned");
}

bool is_error_row(const std::string& line) {
    json j = json::parse(line);
    if (j.contains("status")) return j.at("status").get<std::string>() == "error";
    return !j.value("error", std::string()).empty();
}

template <class Classify>
void score_subjects(Context& ctx, Task task, const BackendConfig& b, std::span<const Subject> subjects, Classify&& classify) {
    ScoreLog log(ctx.scores_dir(), task, b);
    if (!log.open_for_append())
        ctx.log(Stage::Score, std::string(to_string(task)) + "/" + b.name + ": backend changed, store reset");
    std::vector<TextItem> pending;
    for (const auto& s : subjects) {
        auto it = log.latest().find(s.id);
        if (it == log.latest().end() || (ctx.config.retry_failed && is_error_row(it->second)))
            pending.push_back({s.id, s.text});
    }
    for (std::size_t start = 0; start < pending.size(); start += kScoreChunk) {
        std::span<const TextItem> chunk(pending.data() + start, std::min(kScoreChunk, pending.size() - start));
        log.append(classify(chunk));
    }
    ctx.log(Stage::Score, std::string(to_string(task)) + "/" + b.name + ": " + std::to_string(pending.size()) +
                              " scored, " + std::to_string(subjects.size() - pending.size()) + " cached");
}

void stage_score(Context& ctx) {
    const auto records = load_records(ctx);
    const auto generations = current_generations(ctx, records);
    const auto subjects = collect_subjects(records, generations);

    for (Task task : {Task::Sentiment, Task::Emotion}) {
        const auto& backends = task == Task::Sentiment ? ctx.config.sentiment : ctx.config.emotion;
        for (const auto& b : backends) {
            auto backend = make_affect_backend(ctx, b);
            score_subjects(ctx, task, b, subjects, [&](std::span<const TextItem> chunk) {
                std::vector<std::string> lines;
                for (const auto& v : backend->classify(chunk, task)) lines.push_back(to_store_line(v));
                return lines;
            });
        }
    }
    if (ctx.config.hate) {
        auto backend = make_hate_backend(ctx, *ctx.config.hate);
        score_subjects(ctx, Task::Hate, *ctx.config.hate, subjects, [&](std::span<const TextItem> chunk) {
            std::vector<std::string> lines;
            for (const auto& v : classify_hate_batch(chunk, *backend, ctx.config.hate_threshold))
                lines.push_back(to_store_line(v));
            return lines;
        });
    }
}

/// Stored rows for exactly these subjects; throws when any is unscored.
std::vector<std::string> scored_rows(const Context& ctx, Task task, const BackendConfig& b,
                                     std::span<const Subject> subjects) {
    ScoreLog log(ctx.scores_dir(), task, b);
    if (!log.exists())
        throw MissingArtifact("no " + std::string(to_string(task)) + " scores for backend '" + b.name +
                              "'; run the score stage first");
    log.load();
    std::vector<std::string> rows;
    std::size_t missing = 0;
    for (const auto& s : subjects) {
        auto it = log.latest().find(s.id);
        if (it == log.latest().end())
            ++missing;
        else
            rows.push_back(it->second);
    }
    if (missing > 0)
        throw MissingArtifact(std::to_string(missing) + " subjects lack " + std::string(to_string(task)) +
                              " scores from backend '" + b.name + "'; run the score stage first");
    return rows;
}

json manifest_inputs(const Context& ctx) {
    const auto& c = ctx.config;
    json in;
    in["config_sha256"] = c.config_sha256;
    in["seed"] = c.seed;
    json datasets = json::array();
    for (const auto& d : c.datasets) {
        json j;
        j["dataset"] = to_string(d.dataset);
        j["file"] = d.path.filename().string();
        j["sha256"] = sha256_file(d.path);
        j["descriptor_checksum"] =
            (d.descriptor ? DatasetDescriptor::load(*d.descriptor) : DatasetDescriptor::builtin(d.dataset)).checksum();
        if (d.sample_n) {
            j["sample_n"] = *d.sample_n;
            j["sample_seed"] = sample_seed(c, d);
        }
        datasets.push_back(j);
    }
    in["datasets"] = datasets;
    json strategies = json::array();
    for (Strategy s : c.strategies) strategies.push_back(to_string(s));
    in["strategies"] = strategies;
    json models = json::array();
    for (const auto& m : c.models)
        models.push_back({{"name", m.name},
                          {"family", to_string(m.family)},
                          {"endpoint", m.endpoint},
                          {"temperature", format_decimal(m.temperature, 4)},
                          {"max_output_tokens", m.max_output_tokens},
                          {"system_placement", m.system_placement == SystemPlacement::SystemRole ? "system_role" : "user_prefix"}});
    in["models"] = models;
    in["prompts"] = {{"version", ctx.prompts.version}, {"checksum", ctx.prompts.checksum()}};
    in["refusal_rules_checksum"] = ctx.rules.checksum();
    in["emotion_mapping_checksum"] = ctx.mapping.checksum();
    json backends = json::array();
    auto add = [&](Task t, const BackendConfig& b) {
        backends.push_back({{"task", to_string(t)}, {"name", b.name}, {"kind", to_string(b.kind)}, {"fingerprint", b.fingerprint()}});
    };
    for (const auto& b : c.sentiment) add(Task::Sentiment, b);
    for (const auto& b : c.emotion) add(Task::Emotion, b);
    if (c.hate) add(Task::Hate, *c.hate);
    in["backends"] = backends;
    in["hate_threshold"] = format_decimal(c.hate_threshold, 4);
    in["top_k"] = c.top_k;
    in["flow_top_n"] = c.flow_top_n;
    in["double_single_quotes"] = c.double_single_quotes;
    return in;
}

json manifest_stores(const Context& ctx) {
    json st = json::object();
    for (const auto& d : ctx.config.datasets) {
        const auto p = ctx.records_path(d.dataset);
        if (fs::exists(p)) st["records"][std::string(to_string(d.dataset))] = sha256_file(p);
    }
    if (fs::exists(ctx.generations_dir() / "generations.jsonl"))
        st["generations"] = GenerationStore(ctx.generations_dir()).content_digest();
    auto add = [&](Task t, const BackendConfig& b) {
        ScoreLog log(ctx.scores_dir(), t, b);
        if (!log.exists()) return;
        log.load();
        st["scores"][log.path().filename().string()] = log.digest();
    };
    for (const auto& b : ctx.config.sentiment) add(Task::Sentiment, b);
    for (const auto& b : ctx.config.emotion) add(Task::Emotion, b);
    if (ctx.config.hate) add(Task::Hate, *ctx.config.hate);
    return st;
}

std::string manifest_checksum(const json& inputs, const json& stores) {
    return sha256_hex(json{{"inputs", inputs}, {"stores", stores}}.dump());
}

void write_manifest(const Context& ctx) {
    json inputs = manifest_inputs(ctx);
    json stores = manifest_stores(ctx);
    json artifacts = json::array();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(ctx.config.output_dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), ctx.config.output_dir);
        const auto name = rel.filename().string();
        if (name == ".lock" || name == "manifest.json" || rel.extension() == ".tmp") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files)
        artifacts.push_back({{"path", rel.generic_string()}, {"sha256", sha256_file(ctx.config.output_dir / rel)}});
    json m;
    m["inputs"] = inputs;
    m["stores"] = stores;
    m["checksum"] = manifest_checksum(inputs, stores);
    m["artifacts"] = artifacts;
    write_file_atomic(ctx.config.output_dir / "manifest.json", m.dump(2) + "\n");
}

/// Re-keys verdicts to record ids for pairing.
std::vector<Verdict> rekey(std::vector<Verdict> verdicts, const std::map<std::string, std::string>& to_record) {
    for (auto& v : verdicts) v.subject_id = to_record.at(v.subject_id);
    return verdicts;
}

void stage_aggregate(Context& ctx, PipelineResult& result) {
    const auto& c = ctx.config;
    const auto records = load_records(ctx);
    const auto generations = current_generations(ctx, records);
    const auto subjects = collect_subjects(records, generations);
    const auto key_fn = key_lookup(subjects);

    ReportData data;
    data.verbosity = verbosity_table(generations, records, &data.warnings);
    data.readability = readability_table(subjects);

    for (Task task : {Task::Sentiment, Task::Emotion}) {
        const auto& backends = task == Task::Sentiment ? c.sentiment : c.emotion;
        for (const auto& b : backends) {
            std::vector<Verdict> verdicts;
            for (const auto& row : scored_rows(ctx, task, b, subjects)) verdicts.push_back(verdict_from_store_line(row));
            if (verdicts.empty()) continue;
            auto rows = label_distribution(verdicts, key_fn);
            std::size_t unresolved = 0;
            for (const auto& r : rows) unresolved += r.unresolved;
            if (unresolved > 0)
                data.warnings.push_back(std::string(to_string(task)) + "/" + b.name + ": " + std::to_string(unresolved) +
                                        " unresolved verdicts excluded from shares");
            if (task == Task::Sentiment) {
                data.sentiment.push_back({b.name, std::move(rows)});
                continue;
            }
            data.emotion.push_back({b.name, std::move(rows)});
            data.emotion_topk.push_back({b.name, c.top_k, top_k_emotions(verdicts, key_fn, c.top_k)});

            // Hate-text emotion -> response emotion, per response group.
            std::map<std::string, const Verdict*> by_id;
            for (const auto& v : verdicts) by_id[v.subject_id] = &v;
            std::map<GroupKey, std::pair<std::vector<Verdict>, std::vector<Verdict>>> groups;
            std::map<std::string, std::string> to_record;
            for (const auto& s : subjects) {
                if (s.key.source != Source::ModelResponse) continue;
                const auto text_id = subject_id(s.key.dataset, s.record_id, Source::OriginalText);
                auto& [hate_side, resp_side] = groups[s.key];
                hate_side.push_back(*by_id.at(text_id));
                resp_side.push_back(*by_id.at(s.id));
                to_record[text_id] = s.record_id;
                to_record[s.id] = s.record_id;
            }
            for (auto& [key, sides] : groups)
                data.flows.push_back({b.name, key,
                                      sankey_flows(rekey(sides.first, to_record), rekey(sides.second, to_record),
                                                   c.flow_top_n)});
        }
    }

    if (c.hate) {
        std::vector<HateVerdict> verdicts;
        for (const auto& row : scored_rows(ctx, Task::Hate, *c.hate, subjects))
            verdicts.push_back(hate_verdict_from_store_line(row));
        verdicts = rethreshold(verdicts, c.hate_threshold);
        data.hate = hate_table(verdicts, key_fn);
        data.hate_threshold = c.hate_threshold;
    }
    if (!generations.empty()) data.refusal = refusal_table(generations, ctx.rules);

    const json inputs = manifest_inputs(ctx);
    const json stores = manifest_stores(ctx);
    data.manifest_checksum = manifest_checksum(inputs, stores);
    auto& info = data.run_info;
    info["config_sha256"] = c.config_sha256;
    info["seed"] = std::to_string(c.seed);
    info["prompts.version"] = ctx.prompts.version;
    info["prompts.checksum"] = ctx.prompts.checksum();
    info["refusal_rules.checksum"] = ctx.rules.checksum();
    info["emotion_mapping.checksum"] = ctx.mapping.checksum();
    for (const auto& d : inputs.at("datasets")) {
        const std::string prefix = "dataset." + d.at("dataset").get<std::string>();
        info[prefix + ".sha256"] = d.at("sha256").get<std::string>();
        if (d.contains("sample_seed")) {
            info[prefix + ".sample_n"] = std::to_string(d.at("sample_n").get<std::size_t>());
            info[prefix + ".sample_seed"] = std::to_string(d.at("sample_seed").get<std::uint64_t>());
        }
    }
    for (const auto& b : inputs.at("backends"))
        info["backend." + b.at("task").get<std::string>() + "." + b.at("name").get<std::string>()] =
            b.at("kind").get<std::string>() + ":" + b.at("fingerprint").get<std::string>();
    for (const auto& m : c.models) info["model." + m.name + ".temperature"] = format_decimal(m.temperature, 4);

    for (const auto& w : data.warnings) ctx.log(Stage::Aggregate, "warning: " + w);
    emit_report(render_bundle(data), ctx.report_dir());
    result.report_dir = ctx.report_dir();
    ctx.log(Stage::Aggregate, "report written to " + ctx.report_dir().string());
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, std::vector<Stage> stages) {
    PipelineResult result;
    std::sort(stages.begin(), stages.end());
    stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

    DirLock lock(config.output_dir);
    Context ctx{config,
                config.prompts_path ? PromptAssets::load(*config.prompts_path) : PromptAssets::builtin(),
                config.refusal_rules_path ? RefusalRuleSet::load(*config.refusal_rules_path) : RefusalRuleSet::builtin(),
                config.emotion_mapping_path ? EmotionMapping::load(*config.emotion_mapping_path) : EmotionMapping::builtin(),
                std::make_shared<RateLimiterRegistry>(),
                result.messages};

    for (Stage s : stages) {
        try {
            switch (s) {
                case Stage::Ingest: stage_ingest(ctx); break;
                case Stage::Generate: stage_generate(ctx); break;
                case Stage::Score: stage_score(ctx); break;
                case Stage::Aggregate: stage_aggregate(ctx, result); break;
            }
            write_manifest(ctx);
        } catch (const MissingArtifact& e) {
            ctx.log(s, std::string("missing artifact: ") + e.what());
            result.exit_code = 3;
            break;
        } catch (const std::exception& e) {
            ctx.log(s, std::string("failed: ") + e.what());
            result.exit_code = 1;
            break;
        }
    }
    return result;
}

std::vector<std::string> verify_report(const fs::path& report_dir) {
    std::vector<std::string> problems;
    const auto summary_path = report_dir / "summary.json";
    if (!fs::exists(summary_path)) return {"no summary.json in " + report_dir.string()};
    json summary = json::parse(read_file(summary_path));
    for (const auto& f : summary.at("files")) {
        const auto name = f.at("file").get<std::string>();
        const auto p = report_dir / name;
        if (!fs::exists(p))
            problems.push_back(name + ": missing");
        else if (sha256_file(p) != f.at("sha256").get<std::string>())
            problems.push_back(name + ": checksum mismatch");
    }
    return problems;
}

}  // namespace cneval
