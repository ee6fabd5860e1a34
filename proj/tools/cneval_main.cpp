// cneval: batch evaluation of generated counter-narratives.

#include "cneval/pipeline.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>

namespace {

enum Exit { kOk = 0, kStageFailed = 1, kConfig = 2, kMissing = 3, kLocked = 4 };

void print_config(const cneval::RunConfig& c) {
    std::cout << "config:      " << c.config_path.string() << "\n"
              << "config hash: " << c.config_sha256 << "\n"
              << "output dir:  " << c.output_dir.string() << "\n"
              << "seed:        " << c.seed << "\n"
              << "datasets:   ";
    for (const auto& d : c.datasets) std::cout << " " << cneval::to_string(d.dataset);
    std::cout << "\nstrategies: ";
    for (auto s : c.strategies) std::cout << " " << cneval::to_string(s);
    std::cout << "\nmodels:     ";
    for (const auto& m : c.models)
        std::cout << " " << m.name << "(t=" << cneval::format_decimal(m.temperature, 2) << ")";
    std::cout << "\nbackends:    sentiment=" << c.sentiment.size() << " emotion=" << c.emotion.size()
              << " hate=" << (c.hate ? c.hate->name : "-") << "\n"
              << "threshold:   " << cneval::format_decimal(c.hate_threshold, 4) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evaluate generated counter-narratives: ingest, generate, score, aggregate."};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool offline = false;
    std::vector<std::string> stage_names;

    app.add_option("--config", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory (overrides config)");
    auto* seed_opt = app.add_option("--seed", seed, "Sampling seed (overrides config)");
    app.add_flag("--offline", offline, "Forbid network access; requires canned backends and cached generations");
    app.add_option("--stage", stage_names, "Stage to run: ingest, generate, score, aggregate (repeatable)")
        ->check(CLI::IsMember({"ingest", "generate", "score", "aggregate"}));

    auto* run = app.add_subcommand("run", "Run the selected stages (all by default)")->fallthrough();
    std::map<std::string, CLI::App*> single;
    for (const char* name : {"ingest", "generate", "score", "aggregate"})
        single[name] = app.add_subcommand(name, std::string("Run the ") + name + " stage")->fallthrough();
    auto* report = app.add_subcommand("report", "Verify the report bundle against its recorded checksums")->fallthrough();
    auto* validate = app.add_subcommand("validate", "Validate the configuration and print the resolved run")->fallthrough();

    CLI11_PARSE(app, argc, argv);

    cneval::RunConfig config;
    try {
        config = cneval::validate_config(config_path);
        cneval::ConfigOverrides o;
        if (!out_dir.empty()) o.output_dir = out_dir;
        if (*seed_opt) o.seed = seed;
        o.offline = offline;
        cneval::apply_overrides(config, o);
    } catch (const cneval::ConfigError& e) {
        std::cerr << "invalid config " << config_path << ":\n";
        for (const auto& d : e.diagnostics()) std::cerr << "  " << d << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }

    if (validate->parsed()) {
        print_config(config);
        return kOk;
    }
    if (report->parsed()) {
        const auto dir = config.output_dir / "report";
        auto problems = cneval::verify_report(dir);
        for (const auto& p : problems) std::cerr << "report: " << p << "\n";
        if (!problems.empty()) return std::filesystem::exists(dir / "summary.json") ? kStageFailed : kMissing;
        std::cout << (dir / "summary.json").string() << "\n";
        return kOk;
    }

    std::vector<cneval::Stage> stages;
    for (const auto& [name, sub] : single)
        if (sub->parsed()) stages.push_back(*cneval::parse_stage(name));
    if (stages.empty()) {
        for (const auto& n : stage_names) stages.push_back(*cneval::parse_stage(n));
        if (stages.empty())
            stages = {cneval::Stage::Ingest, cneval::Stage::Generate, cneval::Stage::Score, cneval::Stage::Aggregate};
    }
    (void)run;

    try {
        auto result = cneval::run_pipeline(config, stages);
        if (!result.report_dir.empty()) std::cout << result.report_dir.string() << "\n";
        return result.exit_code;
    } catch (const cneval::LockHeld& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kLocked;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kStageFailed;
    }
}
