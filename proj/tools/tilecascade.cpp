// Command-line front end. Exit codes: 0 success, 1 stage failure, 2 bad or
// incomplete configuration.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tilecascade/config.hpp"
#include "tilecascade/pipeline.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/synth.hpp"

namespace tc = tilecascade;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

int run(int argc, char** argv)
{
    CLI::App app{"Two-stage CNN cascade detector for multi-band rasters"};
    app.require_subcommand(0, 1);
    bool version = false;
    app.add_flag("--version", version, "Print supported file-format versions");

    std::string config;
    std::string out_dir;
    std::size_t count = 0;
    std::string scene;
    bool force = false;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", config, "Run config JSON")->required();
    synth->add_option("--out", out_dir, "Dataset directory")->required();
    synth->add_option("--count", count, "Number of scenes (default: config synth_count)");

    for (const auto& name : tc::stage_names()) {
        auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
        sub->add_option("--config", config, "Run config JSON")->required();
        if (name == "detect") {
            sub->add_option("--scene", scene, "Scene id (default: every test scene)");
        }
    }
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order, skipping up-to-date ones");
    pipeline->add_option("--config", config, "Run config JSON")->required();
    pipeline->add_flag("--force", force, "Rerun stages even when their outputs are current");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (version) {
        std::printf("tilecascade 1.0.0\nSCNR %u\nCNNC %u\n", tc::kScnrVersion, tc::nn::kCnncVersion);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return kExitConfig;
    }
    const auto* sub = app.get_subcommands().front();

    tc::RunConfig cfg;
    try {
        cfg = tc::load_run_config(config);
    } catch (const tc::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    tc::RunContext ctx(cfg, &std::cerr);

    try {
        if (sub->get_name() == "synth") {
            const std::size_t n = count ? count : cfg.synth_count;
            tc::write_synth_dataset(cfg.synth, n, out_dir);
            std::cerr << "[synth] wrote " << n << " scenes to " << out_dir << '\n';
        } else if (sub->get_name() == "pipeline") {
            tc::run_pipeline(ctx, force);
        } else if (sub->get_name() == "detect" && !scene.empty()) {
            try {
                tc::stage_detect(ctx, {scene});
            } catch (const tc::StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw tc::StageError("detect", e.what());
            }
        } else {
            tc::run_stage(ctx, sub->get_name());
        }
    } catch (const tc::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << sub->get_name() << ": " << e.what() << '\n';
        return kExitStage;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    return run(argc, argv);
}
