#include "app.hpp"

#include "gigp/checkpoint.hpp"
#include "gigp/selfcheck.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace gigp;

struct Globals {
    std::string config_path;
    std::vector<std::string> assignments;
    std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Globals& g) {
    RunConfig config = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    std::string text;
    for (const auto& a : g.assignments) text += a + "\n";
    return parse_config(text, config);
}

std::filesystem::path pick(const std::string& flag, const std::string& configured, const char* fallback) {
    if (!flag.empty()) return flag;
    if (!configured.empty()) return configured;
    return fallback;
}

}  // namespace

int main(int argc, char** argv) {
    gigp::app::tune_allocator();
    CLI::App cli{"Semi-supervised 3D segmentation with geometric moment priors"};
    cli.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    cli.add_option("--config", g.config_path, "key=value run configuration file")->check(CLI::ExistingFile);
    cli.add_option("--set", g.assignments, "override one config key (key=value); repeatable");
    auto* seed_opt = cli.add_option("--seed", seed_value, "seed for the command (data.seed for gen-data, train.seed for train)");

    auto* gen = cli.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    std::string gen_out;
    bool force = false;
    gen->add_option("--out", gen_out, "output directory (default: paths.data_dir, else ./data)");
    gen->add_flag("--force", force, "overwrite an existing dataset");

    auto* tr = cli.add_subcommand("train", "train student/teacher networks");
    std::string data_dir;
    std::string run_dir;
    bool no_gmam = false, no_ggpc = false, no_giim = false;
    tr->add_option("--data", data_dir, "dataset directory (default: paths.data_dir, else ./data)");
    tr->add_option("--run", run_dir, "run directory (default: paths.run_dir, else ./runs/default)");
    tr->add_flag("--no-gmam", no_gmam, "disable moment attention and moment consistency");
    tr->add_flag("--no-ggpc", no_ggpc, "disable the wave-warped teacher branch");
    tr->add_flag("--no-giim", no_giim, "bypass the interaction block");

    auto* ev = cli.add_subcommand("eval", "evaluate a checkpoint's teacher on a dataset split");
    app::EvalOptions eval_opts;
    std::string checkpoint, eval_data, csv;
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    ev->add_option("--data", eval_data, "dataset directory (default: paths.data_dir, else ./data)");
    ev->add_option("--split", eval_opts.split, "labeled, unlabeled, validation or test")
        ->check(CLI::IsMember({"labeled", "unlabeled", "validation", "test"}));
    ev->add_option("--csv", csv, "output CSV (default: eval_<split>.csv next to the checkpoint)");
    ev->add_flag("--ground-truth", eval_opts.ground_truth, "score the labels against themselves");

    auto* sc = cli.add_subcommand("selfcheck", "run the invariant, oracle and gradient suite");
    bool only_invariants = false, only_gradients = false;
    sc->add_flag("--invariants-only", only_invariants, "skip gradient checks");
    sc->add_flag("--gradients-only", only_gradients, "skip invariant checks");
    auto* list = sc->add_flag("--list", "print property names and exit");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.exit(e);
        return rc == 0 ? app::kOk : app::kValidationFailure;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (sc->parsed()) {
            if (*list) {
                for (auto group : {selfcheck::Group::invariants, selfcheck::Group::gradients}) {
                    for (const auto& n : selfcheck::property_names(group)) std::cout << n << "\n";
                }
                return app::kOk;
            }
            return app::cmd_selfcheck(g.seed.value_or(selfcheck::Options{}.seed), !only_gradients, !only_invariants,
                                      std::cout);
        }
        RunConfig config = resolve_config(g);
        if (gen->parsed()) {
            if (g.seed) config.data.seed = *g.seed;
            app::cmd_gen_data(config, pick(gen_out, config.paths.data_dir, "data"), force, std::cout);
        } else if (tr->parsed()) {
            if (g.seed) config.train.seed = *g.seed;
            if (no_gmam) config.train.ablation.gmam = false;
            if (no_ggpc) config.train.ablation.ggpc = false;
            if (no_giim) config.train.ablation.giim = false;
            config.paths.data_dir = pick(data_dir, config.paths.data_dir, "data").string();
            config.paths.run_dir = pick(run_dir, config.paths.run_dir, "runs/default").string();
            app::cmd_train(config, config.paths.data_dir, config.paths.run_dir, std::cout);
        } else if (ev->parsed()) {
            eval_opts.checkpoint = checkpoint;
            eval_opts.data_dir = pick(eval_data, config.paths.data_dir, "data");
            eval_opts.csv = csv;
            if (!g.config_path.empty() || !g.assignments.empty()) eval_opts.expected = &config;
            app::cmd_eval(eval_opts, std::cout);
        }
        return app::kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return app::kValidationFailure;
    } catch (const app::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return app::kValidationFailure;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return app::kValidationFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return app::kRuntimeFailure;
    }
}
