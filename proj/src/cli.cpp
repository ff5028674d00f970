#include "cotlab/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cotlab/pipeline.hpp"

namespace cotlab::cli {

namespace fs = std::filesystem;

namespace {

// one base reseeds every stage deterministically, so `--seed N` gives a
// fully independent rerun without editing the config
void override_seeds(pipeline::ExperimentConfig& cfg, std::uint64_t base) {
    cfg.data.seed = base * 1000 + 1;
    cfg.init_seed = base * 1000 + 2;
    cfg.train.seed = base * 1000 + 3;
    cfg.score.seed = base * 1000 + 4;
    cfg.probe.seed = base * 1000 + 5;
    cfg.probe.collect_seed = base * 1000 + 6;
}

fs::path artifact_root(const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    if (const char* env = std::getenv("COTLAB_ARTIFACTS"); env && *env) return env;
    return "artifacts";
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"synthetic chain-of-thought interpretability lab"};
    app.require_subcommand(1);
    app.fallthrough(true); // allow -c/-o/-s after the verb as well as before it

    std::string config_path = "experiment.ini";
    std::string out_flag;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("-c,--config", config_path, "experiment config file")
        ->capture_default_str();
    app.add_option("-o,--out", out_flag,
                   "artifact root (default $COTLAB_ARTIFACTS, else ./artifacts)");
    app.add_option("-s,--seed", seed, "override every stage seed, derived from this base")
        ->each([&seed_set](const std::string&) { seed_set = true; });

    const char* verbs[] = {"generate", "train", "score", "probe", "trace", "report", "all"};
    const char* verb_help[] = {"build the corpora and vocabulary",
                               "train the subject model",
                               "compute per-head score tables and the pruning sweep",
                               "train layer-wise probing classifiers",
                               "export a trace and run the circuit analyses",
                               "render the static report",
                               "run every stage listed in the config"};
    for (int i = 0; i < 7; ++i) app.add_subcommand(verbs[i], verb_help[i]);

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        auto cfg = pipeline::ExperimentConfig::load(config_path);
        if (seed_set) override_seeds(cfg, seed);
        const std::string verb = app.get_subcommands().front()->get_name();
        if (verb != "all") cfg.stages = {pipeline::parse_stage(verb)};

        const fs::path dir =
            artifact_root(out_flag) / (cfg.out_dir.empty() ? cfg.name : cfg.out_dir);
        std::printf("run directory: %s\n", dir.string().c_str());
        const auto artifacts = pipeline::run_experiment(
            cfg, dir, [](const std::string& m) { std::printf("  %s\n", m.c_str()); });
        for (const auto& t : artifacts.timings)
            std::printf("%-8s %8.1f s\n", t.stage.c_str(), t.seconds);
        std::printf("manifest: %s (%zu files)\n",
                    (dir / pipeline::kManifestFile).string().c_str(), artifacts.files.size());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

} // namespace cotlab::cli
